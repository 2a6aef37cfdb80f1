"""Exact enumeration of small chains, and the identity checks built on it.

Joint states of L tokens over K categories are mixed-radix integers with the
first position most significant (numpy's ravel_multi_index order). All checks
report the largest absolute deviation they saw instead of raising.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as rngmod
from .denoiser import PointDenoiser
from .kernel import (
    as_simplex,
    forward_kernel,
    marginal,
    one_hot,
    parametrized_reverse,
    posterior,
    posterior_weights,
)
from .objective import LOG_FLOOR, ElboReport, kl_categorical
from .sampler import expected_transitions_exact
from .schedule import GammaSchedule, StepGrid, build_grid, lambda_at

MAX_STATES = 4096
MAX_STEPS = 64
MAX_TRAJECTORIES = 1 << 20
TOL = 1e-12


class CapacityError(ValueError):
    pass


def joint_states(K: int, L: int) -> np.ndarray:
    """All K**L sequences as rows, in mixed-radix order."""
    if K ** L > MAX_STATES:
        raise CapacityError(f"K^L = {K ** L} exceeds {MAX_STATES}")
    return np.array(list(itertools.product(range(K), repeat=L)), dtype=np.int64).reshape(K ** L, L)


def state_index(x, K: int) -> int:
    x = np.atleast_1d(np.asarray(x))
    return int(np.ravel_multi_index(tuple(x), (K,) * len(x)))


def product_table(dists) -> np.ndarray:
    """Joint table of independent positions with the given per-position simplexes."""
    out = np.ones(1)
    for d in dists:
        out = np.outer(out, d).ravel()
    return out


@dataclass
class ChainDistribution:
    """tables[i] is the exact joint distribution at grid time times[i]; tables[0] is the output."""

    tables: np.ndarray
    times: tuple
    K: int
    L: int

    def __post_init__(self):
        sums = self.tables.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > TOL) or np.any(self.tables < -TOL):
            raise ValueError(f"chain table not normalized: max drift {np.max(np.abs(sums - 1.0))}")

    @property
    def final(self) -> np.ndarray:
        return self.tables[0]


def _propagate(dist, rows, chunk: int = 256) -> np.ndarray:
    """sum_x dist[x] * kron_l rows[x, l, :] without materializing the transition matrix."""
    N, L, K = rows.shape
    out = np.zeros(K ** L)
    for lo in range(0, N, chunk):
        hi = min(lo + chunk, N)
        acc = dist[lo:hi, None] * rows[lo:hi, 0, :]
        for l in range(1, L):
            acc = (acc[:, :, None] * rows[lo:hi, l, None, :]).reshape(hi - lo, -1)
        out += acc.sum(axis=0)
    return out


def step_rows(states, s, t, lam, prior, predictor, sched=GammaSchedule(), weights_fn=posterior_weights):
    """Per-position reverse-step distributions for every joint state, shape (N, L, K)."""
    w = weights_fn(sched(s), sched(t), lambda_at(lam, t))
    x_theta = predictor(states, np.full(len(states), t))
    return parametrized_reverse(w, states, prior, x_theta)


def enumerate_reverse(grid: StepGrid, lam, prior, predictor, K: int, L: int,
                      sched: GammaSchedule = GammaSchedule(), weights_fn=posterior_weights) -> ChainDistribution:
    """Exact joint distribution of the generative chain at every grid time."""
    if K ** L > MAX_STATES or grid.T > MAX_STEPS:
        raise CapacityError(f"enumeration limited to K^L <= {MAX_STATES}, T <= {MAX_STEPS}")
    prior = as_simplex(prior)
    states = joint_states(K, L)
    tables = np.zeros((grid.T + 1, K ** L))
    tables[grid.T] = product_table([prior] * L)
    for i in range(grid.T, 0, -1):
        s, t = grid.times[i - 1], grid.times[i]
        rows = step_rows(states, s, t, lam, prior, predictor, sched, weights_fn)
        tables[i - 1] = _propagate(tables[i], rows)
    return ChainDistribution(tables=tables, times=grid.times, K=K, L=L)


def exact_model_loglik(x, grid: StepGrid, lam, prior, denoiser, K: int,
                       sched: GammaSchedule = GammaSchedule()) -> float:
    """log p(x) under the generative chain, by full enumeration (floored at 1e-300)."""
    x = np.atleast_1d(np.asarray(x))
    chain = enumerate_reverse(grid, lam, prior, denoiser, K, len(x), sched)
    return float(np.log(max(chain.final[state_index(x, K)], LOG_FLOOR)))


def exact_elbo(x, grid: StepGrid, lam, prior, denoiser, K: int,
               sched: GammaSchedule = GammaSchedule()) -> ElboReport:
    """The ELBO with every expectation over x_t replaced by an exact sum."""
    x = np.atleast_1d(np.asarray(x))
    L = len(x)
    prior = as_simplex(prior)
    states = joint_states(K, L)
    recon, diff = 0.0, []
    for i in range(1, grid.T + 1):
        s, t = grid.times[i - 1], grid.times[i]
        weight = product_table(marginal(sched(t), prior, x))
        w = posterior_weights(sched(s), sched(t), lambda_at(lam, t))
        model = parametrized_reverse(w, states, prior, denoiser(states, np.full(len(states), t)))
        xs = np.broadcast_to(x, states.shape)
        if i == 1:
            picked = np.take_along_axis(model, xs[..., None], axis=-1)[..., 0]
            vals = np.log(np.maximum(picked, LOG_FLOOR)).sum(axis=1)
        else:
            vals = kl_categorical(posterior(w, states, prior, xs), model).sum(axis=1)
        live = weight > 0
        term = float(np.sum(weight[live] * vals[live]))
        if i == 1:
            recon = term
        else:
            diff.append(term)
    m1 = marginal(sched(1.0), prior, x)
    pkl = float(np.sum(kl_categorical(m1, np.broadcast_to(prior, m1.shape))))
    diff = np.array(diff)
    return ElboReport(recon, diff, pkl, recon - float(diff.sum()) - pkl, 0.0)


class BayesDenoiser:
    """Posterior mean of the clean sequence given x_t, per position.

    Computes p(x^l = k | x_t) under x ~ data_table and independent per-position
    marginals. For L = 1 this is the optimal predictor and the chain it drives
    ends exactly at the data distribution.
    """

    def __init__(self, data_table, K: int, L: int, prior, sched: GammaSchedule = GammaSchedule()):
        self.q0 = as_simplex(data_table)
        self.K, self.L = K, L
        self.prior = as_simplex(prior)
        self.sched = sched
        self.states = joint_states(K, L)
        if len(self.q0) != len(self.states):
            raise ValueError("data table size must be K^L")

    def __call__(self, x_t, t):
        x_t = np.atleast_2d(np.asarray(x_t))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x_t),))
        out = np.empty(x_t.shape + (self.K,))
        for tv in np.unique(t):
            rows = np.nonzero(t == tv)[0]
            g = self.sched(float(tv))
            # m[d, l, k] = p(x_t^l = k | x^l = d^l)
            m = marginal(g, self.prior, self.states)
            lik = np.ones((len(rows), len(self.states)))
            for l in range(self.L):
                lik *= m[:, l, :][:, x_t[rows, l]].T
            post = lik * self.q0[None, :]
            post /= post.sum(axis=1, keepdims=True)
            for l in range(self.L):
                out[rows, l, :] = post @ one_hot(self.states[:, l], self.K)
        return out


# ---------------------------------------------------------------- reports


@dataclass
class CheckReport:
    name: str
    max_deviation: float
    cases: int
    tolerance: float = TOL
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_deviation) and self.max_deviation < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}\t{self.max_deviation:.3e}\t{self.tolerance:.0e}\t{self.cases}\t{status}"


def _random_prior(gen, K):
    p = gen.dirichlet(np.ones(K))
    p = np.maximum(p, 1e-3)
    return p / p.sum()


def _random_times(gen, trial: int, need_positive_s: bool = False):
    """Random 0 <= s < t <= 1, with a deterministic share of boundary cases."""
    kind = trial % 8
    if kind == 0:
        t = 1.0 - 1e-9
        s = gen.uniform(1e-6 if need_positive_s else 0.0, t)
    elif kind == 1:
        t = gen.uniform(0.01, 1.0)
        s = t * (1.0 - 1e-9)
    elif kind == 2 and not need_positive_s:
        t, s = gen.uniform(1e-9, 1.0), 0.0
    elif kind == 3:
        t, s = 1.0, gen.uniform(1e-6, 1.0)
    else:
        a, b = gen.uniform(0.0, 1.0, size=2)
        s, t = min(a, b), max(a, b)
        if s == t or (need_positive_s and s == 0.0):
            s, t = 0.25, 0.5
    return float(s), float(t)


def _random_lambda(gen, trial):
    kind = trial % 5
    if kind == 0:
        return 0.0
    if kind == 1:
        return 1.0
    return float(gen.uniform())


def check_marginal_consistency(sched: GammaSchedule = GammaSchedule(), prior=None, K: Optional[int] = None,
                               trials: int = 10_000, seed: int = 0,
                               weights_fn: Callable = posterior_weights) -> CheckReport:
    """sum_{x_t} p(x_s | x_t, x) m_t(x_t) == m_s elementwise, over random tuples."""
    gen = rngmod.substream(seed, rngmod.VERIFY, 1)
    worst = 0.0
    for trial in range(trials):
        k = K if K is not None else int(gen.integers(2, 9))
        q1 = as_simplex(prior) if prior is not None else _random_prior(gen, k)
        k = len(q1)
        x = int(gen.integers(k))
        s, t = _random_times(gen, trial)
        lam = _random_lambda(gen, trial)
        w = weights_fn(sched(s), sched(t), lam)
        m_t = marginal(sched(t), q1, x)
        P = posterior(w, np.arange(k), q1, x)  # row j: p(. | x_t = j, x)
        dev = np.max(np.abs(m_t @ P - marginal(sched(s), q1, x)))
        worst = max(worst, float(dev))
    return CheckReport("marginal_consistency", worst, trials)


def check_bayes_forward(sched: GammaSchedule = GammaSchedule(), prior=None, K: Optional[int] = None,
                        trials: int = 10_000, seed: int = 0,
                        weights_fn: Callable = posterior_weights) -> CheckReport:
    """p(x_s=i | x_t=j, x) m_t(j) == p(x_t=j | x_s=i, x) m_s(i) with the Bayes-derived forward kernel.

    Also checks the two expressions for the resampling probability agree, the
    lambda = 0 closed form at i = x, and that lambda = 1 rows equal m_t.
    s = 0 is excluded: m_0 = e_x has zero entries and the kernel is undefined.
    """
    gen = rngmod.substream(seed, rngmod.VERIFY, 2)
    worst = 0.0
    for trial in range(trials):
        k = K if K is not None else int(gen.integers(2, 9))
        q1 = as_simplex(prior) if prior is not None else _random_prior(gen, k)
        k = len(q1)
        x = int(gen.integers(k))
        s, t = _random_times(gen, trial, need_positive_s=True)
        lam = _random_lambda(gen, trial)
        w = weights_fn(sched(s), sched(t), lam)
        m_t = marginal(sched(t), q1, x)
        m_s = marginal(sched(s), q1, x)
        P = posterior(w, np.arange(k), q1, x)  # P[j, i] = p(x_s=i | x_t=j)
        F = forward_kernel(w, q1, x, m_t, m_s)
        Fm = F.matrix()  # Fm[i, j] = p(x_t=j | x_s=i)
        lhs = P.T * m_t[None, :]
        rhs = Fm * m_s[:, None]
        devs = [np.max(np.abs(lhs - rhs))]
        D = w.w_prior * q1 + w.w_flip * one_hot(x, k)
        devs.append(np.max(np.abs(F.alpha - D / (w.w_stay * m_t + D))))
        if lam == 0.0:
            r = (1.0 - sched(s)) / (1.0 - sched(t))
            closed = (1.0 - r) / ((1.0 - r) + r * m_t[x])
            devs.append(abs(F.alpha[x] - closed))
            devs.append(np.max(np.abs(np.delete(F.alpha, x))))
        if lam == 1.0:
            devs.append(np.max(np.abs(Fm - m_t[None, :])))
        worst = max(worst, float(max(devs)))
    return CheckReport("bayes_forward", worst, trials)


def check_weight_constraints(trials: int = 10_000, seed: int = 0,
                             weights_fn: Callable = posterior_weights) -> CheckReport:
    """Both linear constraints, the sum-to-one property and remainder == closed-form flip weight."""
    gen = rngmod.substream(seed, rngmod.VERIFY, 3)
    worst = 0.0
    for trial in range(trials):
        a, b = np.sort(gen.uniform(size=2))
        g_t, g_s = float(a), float(b)
        if g_s == g_t:
            continue
        lam = _random_lambda(gen, trial)
        w = weights_fn(g_s, g_t, lam)
        r = (1.0 - g_s) / (1.0 - g_t)
        closed_flip = (1.0 - lam) * (1.0 - r) + lam * g_s
        worst = max(worst,
                    abs(w.w_stay * (1.0 - g_t) + w.w_prior - (1.0 - g_s)),
                    abs(w.w_stay * g_t + w.w_flip - g_s),
                    abs(w.w_stay + w.w_prior + w.w_flip - 1.0),
                    abs(w.w_flip - closed_flip))
    return CheckReport("weight_constraints", float(worst), trials)


def trajectory_transitions(grid: StepGrid, lam, prior, x: int, sched: GammaSchedule = GammaSchedule(),
                           weights_fn: Callable = posterior_weights):
    """Every trajectory of one token under the target-conditioned chain.

    Returns (probabilities, transition counts, initial states), one entry per
    trajectory, K^(T+1) in total.
    """
    prior = as_simplex(prior)
    K, T = len(prior), grid.T
    if K ** (T + 1) > MAX_TRAJECTORIES:
        raise CapacityError(f"{K}^{T + 1} trajectories exceed {MAX_TRAJECTORIES}")
    paths = np.indices((K,) * (T + 1)).reshape(T + 1, -1).T  # column k = state after k steps
    prob = prior[paths[:, 0]].copy()
    for k, (s, t) in enumerate(grid.steps()):
        w = weights_fn(sched(s), sched(t), lambda_at(lam, t))
        P = posterior(w, np.arange(K), prior, x)
        prob *= P[paths[:, k], paths[:, k + 1]]
    counts = np.sum(paths[:, 1:] != paths[:, :-1], axis=1)
    return prob, counts, paths[:, 0]


def expected_transitions_enumerated(grid: StepGrid, lam, prior, x: int,
                                    sched: GammaSchedule = GammaSchedule(),
                                    weights_fn: Callable = posterior_weights) -> float:
    prob, counts, _ = trajectory_transitions(grid, lam, prior, x, sched, weights_fn)
    return float(np.sum(prob * counts))


def check_transition_linearity(seed: int = 0, weights_fn: Callable = posterior_weights) -> CheckReport:
    """Closed-form expected transitions: affine in lambda and equal to trajectory enumeration."""
    gen = rngmod.substream(seed, rngmod.VERIFY, 4)
    sched = GammaSchedule()
    worst, cases = 0.0, 0
    for K in (2, 4):
        skewed = _random_prior(gen, K)
        skewed = np.sort(skewed)[::-1]
        for prior in (np.full(K, 1.0 / K), skewed):
            for T in (2, 8):
                for rho in (1.0, 4.0):
                    grid = build_grid(T, rho)
                    for x in range(K):
                        e = {lam: expected_transitions_exact(grid, lam, prior, x, sched) for lam in (0.0, 0.5, 1.0)}
                        worst = max(worst, abs(e[0.5] - 0.5 * (e[0.0] + e[1.0])))
                        for lam, val in e.items():
                            worst = max(worst, abs(val - expected_transitions_enumerated(
                                grid, lam, prior, x, sched, weights_fn)))
                        cases += 1
    return CheckReport("transition_linearity", float(worst), cases)


def check_absorbing(seed: int = 0, weights_fn: Callable = posterior_weights) -> CheckReport:
    """At lambda = 0 every trajectory with positive probability changes state at most once,
    and never when it starts at the target. Deviation is the probability of violating paths."""
    gen = rngmod.substream(seed, rngmod.VERIFY, 5)
    worst, cases = 0.0, 0
    for K in (2, 3, 4):
        prior = _random_prior(gen, K)
        for T in (1, 3, 6):
            grid = build_grid(T, 1.0 + 3.0 * gen.uniform())
            for x in range(K):
                prob, counts, start = trajectory_transitions(grid, 0.0, prior, x, weights_fn=weights_fn)
                bad = (counts > 1) | ((start == x) & (counts > 0))
                worst = max(worst, float(prob[bad].sum()))
                cases += 1
    return CheckReport("absorbing_lambda0", worst, cases)


def check_final_marginal(seed: int = 0, weights_fn: Callable = posterior_weights) -> CheckReport:
    """The generative chain reproduces the data distribution.

    Data-conditioned predictor: every intermediate table equals the product of
    marginals and the mixture of final tables over x ~ q0 equals q0. Optimal
    single-token predictor: the final table equals q0 directly.
    """
    gen = rngmod.substream(seed, rngmod.VERIFY, 6)
    sched = GammaSchedule()
    worst, cases = 0.0, 0
    for K in (2, 3, 4):
        for L in (1, 2):
            prior = _random_prior(gen, K)
            q0 = gen.dirichlet(np.ones(K ** L))
            states = joint_states(K, L)
            for T in (1, 3, 6):
                grid = build_grid(T, 1.0 + 3.0 * gen.uniform())
                for lam in (0.0, 0.5, 1.0):
                    mix = np.zeros(K ** L)
                    for d, x in enumerate(states):
                        chain = enumerate_reverse(grid, lam, prior, PointDenoiser(x, K), K, L, sched, weights_fn)
                        for i, t in enumerate(grid.times):
                            expect = product_table(marginal(sched(t), prior, x))
                            worst = max(worst, float(np.max(np.abs(chain.tables[i] - expect))))
                        mix += q0[d] * chain.final
                    worst = max(worst, float(np.max(np.abs(mix - q0))))
                    if L == 1:
                        chain = enumerate_reverse(grid, lam, prior, BayesDenoiser(q0, K, 1, prior, sched),
                                                  K, 1, sched, weights_fn)
                        worst = max(worst, float(np.max(np.abs(chain.final - q0))))
                    cases += 1
    return CheckReport("final_marginal", worst, cases)


def run_all(trials: int = 10_000, seed: int = 0, weights_fn: Callable = posterior_weights) -> list:
    sched = GammaSchedule()
    return [
        check_weight_constraints(trials, seed, weights_fn),
        check_marginal_consistency(sched, trials=trials, seed=seed, weights_fn=weights_fn),
        check_bayes_forward(sched, trials=trials, seed=seed, weights_fn=weights_fn),
        check_transition_linearity(seed, weights_fn),
        check_absorbing(seed, weights_fn),
        check_final_marginal(seed, weights_fn),
    ]
