"""Generation with controllable resampling, and transition counting.

Chains are processed in fixed blocks of ``rng.BLOCK``; block b draws from
substream (seed, SAMPLE, b). Outputs are therefore identical for any thread
count, and chain c always sees the same randomness for a given n.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .kernel import as_simplex, categorical_from_uniform, parametrized_reverse, posterior_weights
from .schedule import GammaSchedule, LambdaLike, StepGrid, lambda_at


@dataclass(frozen=True)
class SamplerConfig:
    grid: StepGrid
    lam: LambdaLike
    prior: np.ndarray
    seed: int = 0
    sched: GammaSchedule = field(default_factory=GammaSchedule)

    def __post_init__(self):
        object.__setattr__(self, "prior", as_simplex(self.prior))
        lambda_at(self.lam, 1.0)


@dataclass
class TrajectoryStats:
    """Per-chain transition counts.

    transitions_per_step[c, k] counts positions of chain c that changed in
    generation step k (k = 0 is the step from t(T) to t(T-1)). states, when
    recorded, has shape (T+1, n, L) with states[0] the prior draw.
    """

    transitions_per_step: np.ndarray
    per_position: np.ndarray
    states: Optional[np.ndarray] = None

    @property
    def total_transitions(self) -> np.ndarray:
        return self.per_position.sum(axis=1)


def _run_block(config: SamplerConfig, denoiser, L: int, block: int, n: int, record: bool):
    gen = rngmod.substream(config.seed, rngmod.SAMPLE, block)
    prior = config.prior
    grid = config.grid
    x = categorical_from_uniform(prior, gen.random((n, L)))
    per_step = np.zeros((n, grid.T), dtype=np.int64)
    per_pos = np.zeros((n, L), dtype=np.int64)
    states = [x.copy()] if record else None
    for k, (s, t) in enumerate(grid.steps()):
        w = posterior_weights(config.sched(s), config.sched(t), lambda_at(config.lam, t))
        x_theta = denoiser(x, np.full(n, t))
        probs = parametrized_reverse(w, x, prior, x_theta)
        x_new = categorical_from_uniform(probs, gen.random((n, L)))
        changed = x_new != x
        per_step[:, k] = changed.sum(axis=1)
        per_pos += changed
        x = x_new
        if record:
            states.append(x.copy())
    return x, per_step, per_pos, (np.stack(states) if record else None)


def sample(config: SamplerConfig, denoiser, n: int = 1, L: Optional[int] = None,
           record: bool = False, threads: int = 1):
    """Draw n sequences; returns (samples of shape (n, L), TrajectoryStats)."""
    if L is None:
        L = getattr(denoiser, "L", None)
        if L is None:
            raise ValueError("sequence length unknown; pass L")
    blocks = list(rngmod.blocks(n))

    def run(b):
        idx, lo, hi = b
        return _run_block(config, denoiser, L, idx, hi - lo, record)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]

    T = config.grid.T
    if not parts:
        empty = np.zeros((0, L), dtype=np.int64)
        return empty, TrajectoryStats(np.zeros((0, T), dtype=np.int64), empty.copy(),
                                      np.zeros((T + 1, 0, L), dtype=np.int64) if record else None)
    samples = np.concatenate([p[0] for p in parts])
    stats = TrajectoryStats(
        transitions_per_step=np.concatenate([p[1] for p in parts]),
        per_position=np.concatenate([p[2] for p in parts]),
        states=np.concatenate([p[3] for p in parts], axis=1) if record else None,
    )
    return samples, stats


def count_transitions(trajectory):
    """Number of (step, position) pairs where the state changed.

    Accepts TrajectoryStats with recorded states, or a state array of shape
    (steps,), (steps, L) or (steps, n, L). Returns an int for a single chain
    and a per-chain array otherwise.
    """
    states = trajectory.states if isinstance(trajectory, TrajectoryStats) else trajectory
    if states is None:
        raise ValueError("trajectory was not recorded")
    states = np.asarray(states)
    if states.ndim == 1:
        states = states[:, None]
    changes = (states[1:] != states[:-1])
    if states.ndim == 2:
        return int(changes.sum())
    return changes.sum(axis=(0, 2))


def expected_transitions_exact(grid: StepGrid, lam: float, prior, x: int,
                               sched: GammaSchedule = GammaSchedule()) -> float:
    """Expected number of state changes of one token under the target-conditioned chain.

    Step k (t = t(k), s = t(k-1)) contributes
        P(change | x_t = x) m_t(x) + sum_{j != x} P(change | x_t = j) m_t(j)
    with P(change | x_t = x) = lam (1 - gamma_s)(1 - q(x)) and
    P(change | x_t = j) = 1 - (1 - lam) r - lam (1 - gamma_s) q(j), r = (1-gamma_s)/(1-gamma_t).
    The chain's time-t distribution is the marginal m_t, so the second branch
    is averaged over m_t restricted to j != x.
    """
    prior = as_simplex(prior)
    lam = float(lam)
    total = 0.0
    for s, t in grid.steps():
        g_s, g_t = sched(s), sched(t)
        r = (1.0 - g_s) / (1.0 - g_t)
        m_t = (1.0 - g_t) * prior
        m_t[x] += g_t
        hit = lam * (1.0 - g_s) * (1.0 - prior[x]) * m_t[x]
        others = np.delete(np.arange(len(prior)), x)
        miss = np.sum(m_t[others] * (1.0 - (1.0 - lam) * r - lam * (1.0 - g_s) * prior[others]))
        total += hit + miss
    return float(total)


def empirical_transition_curve(config: SamplerConfig, denoiser, lambdas, n_chains: int,
                               L: Optional[int] = None, threads: int = 1):
    """Rows (lambda, mean total transitions per chain, standard error)."""
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    rows = []
    for lam in lambdas:
        _, stats = sample(replace(config, lam=float(lam)), denoiser, n=n_chains, L=L, threads=threads)
        tot = stats.total_transitions.astype(np.float64)
        se = float(tot.std(ddof=1) / np.sqrt(n_chains)) if n_chains > 1 else float("nan")
        rows.append((float(lam), float(tot.mean()), se))
    return rows
