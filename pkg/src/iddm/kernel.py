"""Probability kernels of the interpolating model.

States are category indices; one-hot vectors only appear inside the
arithmetic. Every function broadcasts over leading batch axes, so the same
code serves scalar checks, per-position sampling and batched losses. Weight
fields may be scalars or arrays that broadcast against the state array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUM_TOL = 1e-12
RENORM_TOL = 1e-9


class SimplexError(ValueError):
    pass


class KernelError(ValueError):
    """Invalid weights or step ordering."""


class KernelSingularityError(KernelError):
    pass


def as_simplex(probs, axis: int = -1) -> np.ndarray:
    """Validate a probability vector (or stack of them).

    Sums within 1e-9 of one are renormalized; anything further off, or any
    negative entry, is rejected instead of silently fixed.
    """
    p = np.array(probs, dtype=np.float64)
    if p.ndim == 0 or p.shape[axis] == 0:
        raise SimplexError("simplex needs at least one category")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0):
        raise SimplexError(f"simplex entries must be finite and nonnegative: {p}")
    total = p.sum(axis=axis, keepdims=True)
    if np.any(np.abs(total - 1.0) > RENORM_TOL):
        raise SimplexError(f"simplex sums to {np.squeeze(total)}, not 1")
    return p / total


def one_hot(x, K: int) -> np.ndarray:
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x >= K):
        raise IndexError(f"category index out of range [0, {K}): {x}")
    return np.eye(K, dtype=np.float64)[x]


@dataclass(frozen=True)
class PosteriorWeights:
    """Stay / prior-resample / flip-to-target mixture weights."""

    w_stay: float | np.ndarray
    w_prior: float | np.ndarray
    w_flip: float | np.ndarray

    def __post_init__(self):
        ws = (np.asarray(self.w_stay), np.asarray(self.w_prior), np.asarray(self.w_flip))
        for w in ws:
            if np.any(w < -SUM_TOL) or np.any(w > 1.0 + SUM_TOL):
                raise KernelError(f"weight outside [0, 1]: {w}")
        if np.any(np.abs(ws[0] + ws[1] + ws[2] - 1.0) > SUM_TOL):
            raise KernelError("posterior weights do not sum to one")

    def expand(self, ndim_extra: int = 1):
        """Weights with trailing axes appended for broadcasting against (..., K)."""
        pad = (Ellipsis,) + (None,) * ndim_extra
        return tuple(np.asarray(w, dtype=np.float64)[pad] for w in (self.w_stay, self.w_prior, self.w_flip))


def posterior_weights(gamma_s, gamma_t, lam) -> PosteriorWeights:
    """Marginal-consistent weights for a step from level gamma_t back to gamma_s.

    w_stay = (1-lam) * r, w_prior = lam * (1-gamma_s), w_flip = rest, with
    r = (1-gamma_s)/(1-gamma_t). The remainder form and the closed form
    (1-lam)(1-r) + lam*gamma_s are both computed and must agree.
    """
    gamma_s = np.asarray(gamma_s, dtype=np.float64)
    gamma_t = np.asarray(gamma_t, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(gamma_t >= 1.0):
        raise KernelSingularityError("gamma_t = 1 leaves the retention ratio undefined")
    if np.any(gamma_s <= gamma_t):
        raise KernelError("need gamma_s > gamma_t (s strictly before t)")
    if np.any(lam < 0.0) or np.any(lam > 1.0):
        raise KernelError(f"lambda outside [0, 1]: {lam}")

    ratio = np.minimum((1.0 - gamma_s) / (1.0 - gamma_t), 1.0)
    w_stay = (1.0 - lam) * ratio
    w_prior = lam * (1.0 - gamma_s)
    w_flip = 1.0 - (w_stay + w_prior)
    closed = (1.0 - lam) * (1.0 - ratio) + lam * gamma_s
    if np.any(np.abs(w_flip - closed) > SUM_TOL):
        raise AssertionError(f"flip weight mismatch: remainder {w_flip} vs closed form {closed}")
    w_flip = np.maximum(w_flip, 0.0)

    c1 = w_stay * (1.0 - gamma_t) + w_prior - (1.0 - gamma_s)
    c2 = w_stay * gamma_t + w_flip - gamma_s
    if np.any(np.abs(c1) > SUM_TOL) or np.any(np.abs(c2) > SUM_TOL):
        raise AssertionError("posterior weights violate the marginal constraints")

    def _out(a):
        return float(a) if a.ndim == 0 else a

    return PosteriorWeights(_out(w_stay), _out(w_prior), _out(w_flip))


def step_weights(sched, s, t, lam) -> PosteriorWeights:
    """posterior_weights for times (s, t) on a gamma schedule."""
    return posterior_weights(_gamma(sched, s), _gamma(sched, t), lam)


def _gamma(sched, t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return sched(float(t))
    return np.array([sched(float(v)) for v in t.ravel()]).reshape(t.shape)


def marginal(gamma_t, prior, x) -> np.ndarray:
    """(1 - gamma_t) * prior + gamma_t * e_x, broadcast over x."""
    prior = np.asarray(prior, dtype=np.float64)
    g = np.asarray(gamma_t, dtype=np.float64)
    ex = one_hot(x, prior.shape[-1])
    g = g.reshape(g.shape + (1,) * (ex.ndim - g.ndim)) if g.ndim < ex.ndim else g
    return (1.0 - g) * prior + g * ex


def parametrized_reverse(weights: PosteriorWeights, x_t, prior, x_theta) -> np.ndarray:
    """w_stay * e_{x_t} + w_prior * prior + w_flip * x_theta."""
    x_theta = np.asarray(x_theta, dtype=np.float64)
    K = x_theta.shape[-1]
    ws, wp, wf = weights.expand()
    return ws * one_hot(x_t, K) + wp * np.asarray(prior, dtype=np.float64) + wf * x_theta


def posterior(weights: PosteriorWeights, x_t, prior, x) -> np.ndarray:
    """Target-conditioned reverse step; the reverse step with x_theta = e_x."""
    K = np.asarray(prior).shape[-1]
    return parametrized_reverse(weights, x_t, prior, one_hot(x, K))


@dataclass(frozen=True)
class ForwardKernel:
    """Row i: keep x_s = i with prob 1 - alpha[i], else redraw from marginal_t."""

    alpha: np.ndarray
    marginal_t: np.ndarray

    def matrix(self) -> np.ndarray:
        K = len(self.alpha)
        a = self.alpha[:, None]
        return a * self.marginal_t[None, :] + (1.0 - a) * np.eye(K)


def forward_kernel(weights: PosteriorWeights, prior, x: int, marginal_t, marginal_s) -> ForwardKernel:
    """Bayes-inverted noising step p(x_t | x_s, x) for a single token."""
    prior = np.asarray(prior, dtype=np.float64)
    m_s = np.asarray(marginal_s, dtype=np.float64)
    m_t = np.asarray(marginal_t, dtype=np.float64)
    if np.any(m_s <= 0.0):
        raise KernelSingularityError("forward kernel needs marginal_s > 0 for every state")
    D = weights.w_prior * prior + weights.w_flip * one_hot(x, len(prior))
    alpha = np.clip(D / m_s, 0.0, 1.0)
    return ForwardKernel(alpha=alpha, marginal_t=m_t)


def categorical_from_uniform(probs, u) -> np.ndarray:
    """Inverse-CDF draw: the first index whose cumulative mass exceeds u."""
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs, axis=-1)
    u = np.asarray(u, dtype=np.float64)[..., None]
    idx = np.sum(cdf <= u, axis=-1)
    K = probs.shape[-1]
    # rounding can leave cdf[-1] a hair below u; fall back to the last supported category
    last = K - 1 - np.argmax(probs[..., ::-1] > 0.0, axis=-1)
    return np.where(idx >= K, last, idx)


def sample_categorical(dist, rng: np.random.Generator):
    dist = np.asarray(dist, dtype=np.float64)
    u = rng.random(dist.shape[:-1])
    out = categorical_from_uniform(dist, u)
    return int(out) if out.ndim == 0 else out
