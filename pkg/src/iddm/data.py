"""Toy datasets, prior estimation and distribution-level metrics.

Fixture files are ASCII: a header line ``K L`` followed by one sample per
line as space-separated category indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import rng as rngmod
from .kernel import as_simplex, categorical_from_uniform

MAX_JOINT = 4096


class DatasetError(ValueError):
    pass


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class PointMass:
    point: tuple
    K: int

    @property
    def L(self):
        return len(self.point)

    def validate(self):
        if self.L < 1 or any(not (0 <= v < self.K) for v in self.point):
            raise DatasetError(f"point {self.point} invalid for K={self.K}")

    def draw(self, gen, n):
        return np.tile(np.asarray(self.point, dtype=np.int64), (n, 1))

    def joint_table(self):
        table = np.zeros(self.K ** self.L)
        table[np.ravel_multi_index(tuple(self.point), (self.K,) * self.L)] = 1.0
        return table


@dataclass(frozen=True)
class IID:
    probs: tuple
    L: int

    @property
    def K(self):
        return len(self.probs)

    def validate(self):
        as_simplex(self.probs)
        if self.L < 1:
            raise DatasetError("L must be >= 1")

    def draw(self, gen, n):
        return categorical_from_uniform(as_simplex(self.probs), gen.random((n, self.L)))

    def joint_table(self):
        p = as_simplex(self.probs)
        out = np.ones(1)
        for _ in range(self.L):
            out = np.outer(out, p).ravel()
        return out


@dataclass(frozen=True)
class MarkovChain:
    transition: tuple  # K x K, rows are next-token distributions
    initial: tuple
    L: int

    @property
    def K(self):
        return len(self.initial)

    def validate(self):
        P = np.asarray(self.transition, dtype=np.float64)
        if P.shape != (self.K, self.K):
            raise DatasetError(f"transition matrix must be {self.K}x{self.K}")
        as_simplex(P)
        as_simplex(self.initial)
        if self.L < 1:
            raise DatasetError("L must be >= 1")

    def draw(self, gen, n):
        P = as_simplex(np.asarray(self.transition, dtype=np.float64))
        out = np.empty((n, self.L), dtype=np.int64)
        u = gen.random((n, self.L))
        out[:, 0] = categorical_from_uniform(as_simplex(self.initial), u[:, 0])
        for l in range(1, self.L):
            out[:, l] = categorical_from_uniform(P[out[:, l - 1]], u[:, l])
        return out

    def joint_table(self):
        P = as_simplex(np.asarray(self.transition, dtype=np.float64))
        table = as_simplex(self.initial)
        for _ in range(1, self.L):
            # last token of prefix index i is i % K
            table = (table[:, None] * P[np.arange(table.size) % self.K]).ravel()
        return table


@dataclass(frozen=True)
class TinyGraph:
    """Graphs on a fixed node count, serialized as upper-triangular edge tokens.

    Token 0 means no edge; each pair carries an edge with probability
    edge_prob, its type uniform over 1..edge_types-1.
    """

    nodes: int
    edge_types: int
    edge_prob: float = 0.5

    @property
    def K(self):
        return self.edge_types

    @property
    def L(self):
        return self.nodes * (self.nodes - 1) // 2

    def edge_probs(self):
        p = np.full(self.K, self.edge_prob / (self.K - 1))
        p[0] = 1.0 - self.edge_prob
        return p

    def validate(self):
        if self.nodes < 2 or self.edge_types < 2 or not (0.0 <= self.edge_prob <= 1.0):
            raise DatasetError("TinyGraph needs >= 2 nodes, >= 2 edge types, edge_prob in [0, 1]")

    def draw(self, gen, n):
        return categorical_from_uniform(self.edge_probs(), gen.random((n, self.L)))

    def joint_table(self):
        return IID(tuple(self.edge_probs()), self.L).joint_table()

    @staticmethod
    def edge_pairs(nodes: int):
        return [(i, j) for i in range(nodes) for j in range(i + 1, nodes)]

    def adjacency(self, tokens):
        """Symmetric edge-type matrix for one flattened sample."""
        A = np.zeros((self.nodes, self.nodes), dtype=np.int64)
        for (i, j), v in zip(self.edge_pairs(self.nodes), tokens):
            A[i, j] = A[j, i] = v
        return A


DatasetSpec = Union[PointMass, IID, MarkovChain, TinyGraph]


@dataclass
class ToyDataset:
    K: int
    L: int
    samples: np.ndarray
    spec: Optional[DatasetSpec] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int64).reshape(-1, self.L)
        if np.any(self.samples < 0) or np.any(self.samples >= self.K):
            raise DatasetError(f"sample entries must lie in [0, {self.K})")

    def __len__(self):
        return len(self.samples)


def generate(spec: DatasetSpec, n: int, seed: int = 0) -> ToyDataset:
    if n < 1:
        raise DatasetError("n must be >= 1")
    spec.validate()
    gen = rngmod.substream(seed, rngmod.DATA)
    return ToyDataset(K=spec.K, L=spec.L, samples=spec.draw(gen, n), spec=spec)


PRIOR_KINDS = ("uniform", "marginal")


def estimate_prior(dataset: ToyDataset) -> np.ndarray:
    """Token frequencies with one pseudo-count per category: (c_k + 1) / (n + K)."""
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    counts = np.bincount(dataset.samples.ravel(), minlength=dataset.K).astype(np.float64)
    return (counts + 1.0) / (counts.sum() + dataset.K)


def make_prior(kind: str, dataset: ToyDataset) -> np.ndarray:
    if kind == "uniform":
        return np.full(dataset.K, 1.0 / dataset.K)
    if kind == "marginal":
        return estimate_prior(dataset)
    raise DatasetError(f"unknown prior kind {kind!r}; expected one of {PRIOR_KINDS}")


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"size mismatch: {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def empirical_joint(samples, K: int, L: int) -> np.ndarray:
    """Normalized histogram over the K^L joint states (mixed-radix, first position most significant)."""
    if K ** L > MAX_JOINT:
        raise CapacityError(f"K^L = {K ** L} exceeds {MAX_JOINT}")
    if isinstance(samples, ToyDataset):
        samples = samples.samples
    samples = np.asarray(samples, dtype=np.int64).reshape(-1, L)
    if len(samples) == 0:
        raise DatasetError("no samples")
    idx = np.ravel_multi_index(tuple(samples.T), (K,) * L)
    return np.bincount(idx, minlength=K ** L) / len(samples)


def write_fixture(path, samples, K: int, L: int) -> None:
    samples = np.asarray(samples, dtype=np.int64).reshape(-1, L)
    lines = [f"{K} {L}"] + [" ".join(str(int(v)) for v in row) for row in samples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_fixture(path) -> ToyDataset:
    lines = [ln for ln in Path(path).read_text(encoding="ascii").splitlines() if ln.strip()]
    if not lines:
        raise DatasetError(f"{path}: missing 'K L' header")
    try:
        K, L = (int(v) for v in lines[0].split())
        rows = [[int(v) for v in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise DatasetError(f"{path}: malformed fixture ({exc})") from None
    if any(len(r) != L for r in rows):
        raise DatasetError(f"{path}: every sample must have {L} tokens")
    return ToyDataset(K=K, L=L, samples=np.array(rows, dtype=np.int64).reshape(-1, L))
