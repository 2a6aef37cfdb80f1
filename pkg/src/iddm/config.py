"""Run configuration as flat ``dotted.key = value`` text.

One assignment per line, ``#`` starts a comment. Unknown keys are errors.
List values are comma-separated numbers; matrices are given row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import data as datamod
from .schedule import GAMMA_KINDS


class ConfigError(ValueError):
    pass


DEFAULT_TRANSITION = (
    0.7, 0.1, 0.1, 0.1,
    0.1, 0.7, 0.1, 0.1,
    0.1, 0.1, 0.7, 0.1,
    0.1, 0.1, 0.1, 0.7,
)


@dataclass(frozen=True)
class RunConfig:
    # dataset: markov | iid | point | graph | file
    data_kind: str = "markov"
    data_K: int = 4
    data_L: int = 3
    data_n: int = 5000
    data_seed: int = 0
    data_transition: tuple = DEFAULT_TRANSITION
    data_initial: tuple = (0.4, 0.3, 0.2, 0.1)
    data_probs: tuple = ()
    data_point: tuple = ()
    data_nodes: int = 3
    data_edge_prob: float = 0.5
    data_path: str = ""
    prior_kind: str = "uniform"
    schedule_gamma: str = "linear"
    schedule_lambda: float = 0.0
    sampler_rho: float = 4.0
    sampler_steps: int = 32
    train_optimizer: str = "adam"
    train_lr: float = 3e-3
    train_lr_decay: str = "linear"
    train_batch_size: int = 128
    train_steps: int = 2000
    train_seed: int = 0
    train_lambda: float = 0.0
    train_T: int = 32
    train_log_every: int = 100
    model_hidden: int = 64
    model_time_dim: int = 16

    def __post_init__(self):
        if self.data_kind not in ("markov", "iid", "point", "graph", "file"):
            raise ConfigError(f"unknown data.kind {self.data_kind!r}")
        if self.prior_kind not in datamod.PRIOR_KINDS:
            raise ConfigError(f"unknown prior.kind {self.prior_kind!r}")
        if self.schedule_gamma not in GAMMA_KINDS:
            raise ConfigError(f"unknown schedule.gamma {self.schedule_gamma!r}")
        if not (0.0 <= self.schedule_lambda <= 1.0 and 0.0 <= self.train_lambda <= 1.0):
            raise ConfigError("lambda values must lie in [0, 1]")
        if self.sampler_rho < 1.0:
            raise ConfigError("sampler.rho must be >= 1")
        for name in ("sampler_steps", "train_batch_size", "train_T", "model_hidden", "model_time_dim", "data_n"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{_key(name)} must be positive")
        if self.train_lr_decay not in ("linear", "none"):
            raise ConfigError(f"unknown train.lr_decay {self.train_lr_decay!r}")
        if self.model_time_dim % 2:
            raise ConfigError("model.time_dim must be even")
        if self.train_steps < 0 or self.train_lr < 0:
            raise ConfigError("train.steps and train.lr must be nonnegative")

    # ---- text round trip

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            name = key.replace(".", "_")
            if name not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[name] = _parse(value.strip('"').strip("'"), known[name].default, key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{_key(f.name)} = {v}")
        return "\n".join(lines) + "\n"

    def updated(self, assignments) -> "RunConfig":
        """Apply ``key=value`` overrides (as given on the command line)."""
        if not assignments:
            return self
        return RunConfig.from_text(self.to_text() + "\n".join(assignments) + "\n")

    # ---- dataset

    def dataset_spec(self):
        K, L = self.data_K, self.data_L
        if self.data_kind == "markov":
            P = np.asarray(self.data_transition, dtype=np.float64)
            if P.size != K * K or len(self.data_initial) != K:
                raise ConfigError("data.transition needs K*K entries and data.initial K entries")
            return datamod.MarkovChain(tuple(map(tuple, P.reshape(K, K))), tuple(self.data_initial), L)
        if self.data_kind == "iid":
            probs = self.data_probs or tuple([1.0 / K] * K)
            return datamod.IID(tuple(probs), L)
        if self.data_kind == "point":
            point = tuple(int(v) for v in self.data_point) or tuple([0] * L)
            return datamod.PointMass(point, K)
        if self.data_kind == "graph":
            return datamod.TinyGraph(self.data_nodes, K, self.data_edge_prob)
        return None

    def load_dataset(self) -> datamod.ToyDataset:
        if self.data_kind == "file":
            if not self.data_path:
                raise ConfigError("data.kind = file needs data.path")
            return datamod.read_fixture(self.data_path)
        return datamod.generate(self.dataset_spec(), self.data_n, self.data_seed)


def _key(name: str) -> str:
    head, _, tail = name.partition("_")
    return f"{head}.{tail}"


def _parse(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            parts = [p for p in value.replace(" ", "").split(",") if p]
            return tuple(float(p) if any(c in p for c in ".eE") else int(p) for p in parts)
        return value
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
