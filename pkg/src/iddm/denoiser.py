"""A small MLP predictor of the clean sequence, with exact reverse-mode gradients.

Input: flattened one-hot sequence concatenated with a sinusoidal time
embedding. Two tanh hidden layers, then a per-position softmax head. The
head starts at zero so an untrained model predicts the uniform simplex.

The head logits also get ``beta * log m_t(x_t^l | x^l = k)``, the exact
per-position likelihood of the observed token under the forward marginal.
Bounded time features cannot push the probability of leaving the current
token to zero as t -> 0; this term can, once beta is learned. beta is part
of the zero-initialized head.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .schedule import GammaSchedule

LOG_FLOOR = 1e-300

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "beta")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserParams:
    K: int
    L: int
    hidden: int
    time_dim: int
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    beta: np.ndarray
    prior: np.ndarray = None  # fixed, not trained; uniform when omitted

    def __post_init__(self):
        if self.prior is None:
            object.__setattr__(self, "prior", np.full(self.K, 1.0 / self.K))
        prior = np.asarray(self.prior, dtype=np.float64)
        if prior.shape != (self.K,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ShapeError(f"prior must be a simplex of length {self.K}")
        object.__setattr__(self, "prior", prior)
        expected = self.shapes(self.K, self.L, self.hidden, self.time_dim)
        for name in PARAM_NAMES:
            arr = getattr(self, name)
            if arr.shape != expected[name]:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")

    @staticmethod
    def shapes(K: int, L: int, hidden: int, time_dim: int) -> dict:
        d_in = L * K + time_dim
        return {
            "W1": (d_in, hidden), "b1": (hidden,),
            "W2": (hidden, hidden), "b2": (hidden,),
            "W3": (hidden, L * K), "b3": (L * K,),
            "beta": (1,),
        }

    def arrays(self) -> list:
        return [getattr(self, n) for n in PARAM_NAMES]

    def with_arrays(self, arrays) -> "DenoiserParams":
        return replace(self, **dict(zip(PARAM_NAMES, arrays)))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, flat, K: int, L: int, hidden: int, time_dim: int, prior=None) -> "DenoiserParams":
        flat = np.asarray(flat, dtype=np.float64)
        shapes = cls.shapes(K, L, hidden, time_dim)
        total = sum(int(np.prod(s)) for s in shapes.values())
        if flat.size != total:
            raise ShapeError(f"expected {total} parameters, got {flat.size}")
        out, pos = {}, 0
        for name in PARAM_NAMES:
            n = int(np.prod(shapes[name]))
            out[name] = flat[pos:pos + n].reshape(shapes[name]).copy()
            pos += n
        return cls(K=K, L=L, hidden=hidden, time_dim=time_dim, prior=prior, **out)

    def __call__(self, x_t, t):
        return forward(self, x_t, t)


def time_embedding(t, dim: int) -> np.ndarray:
    if dim <= 0 or dim % 2:
        raise ValueError(f"time embedding dim must be even and positive, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.geomspace(1.0, 100.0, dim // 2)
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def init(seed: int, K: int, L: int, hidden: int = 64, time_dim: int = 16, prior=None) -> DenoiserParams:
    if min(K, L, hidden, time_dim) <= 0:
        raise ValueError("all denoiser dimensions must be positive")
    gen = rngmod.substream(seed, rngmod.INIT)
    shapes = DenoiserParams.shapes(K, L, hidden, time_dim)
    d_in = shapes["W1"][0]

    def uni(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return gen.uniform(-bound, bound, size=shape)

    return DenoiserParams(
        K=K, L=L, hidden=hidden, time_dim=time_dim,
        W1=uni(shapes["W1"], d_in), b1=uni(shapes["b1"], d_in),
        W2=uni(shapes["W2"], hidden), b2=uni(shapes["b2"], hidden),
        W3=np.zeros(shapes["W3"]), b3=np.zeros(shapes["b3"]), beta=np.zeros(1), prior=prior,
    )


def _inputs(params: DenoiserParams, x_t, t):
    x_t = np.asarray(x_t)
    if x_t.ndim != 2 or x_t.shape[1] != params.L:
        raise ShapeError(f"x_t must have shape (batch, {params.L}), got {x_t.shape}")
    if np.any(x_t < 0) or np.any(x_t >= params.K):
        raise ShapeError("token index out of range")
    B = x_t.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    onehot = np.eye(params.K)[x_t].reshape(B, params.L * params.K)
    return np.concatenate([onehot, time_embedding(t, params.time_dim)], axis=1)


def token_loglik(prior, x_t, t, K: int, sched: GammaSchedule = GammaSchedule()) -> np.ndarray:
    """log m_t(x_t^l | x^l = k) for every candidate k; shape (B, L, K)."""
    x_t = np.asarray(x_t)
    B = x_t.shape[0]
    c = np.broadcast_to(np.asarray(sched.complement(t), dtype=np.float64), (B,))[:, None, None]
    lik = c * np.asarray(prior)[x_t][..., None] + (1.0 - c) * np.eye(K)[x_t]
    return np.log(np.maximum(lik, LOG_FLOOR))


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(params: DenoiserParams, x_t, t):
    inp = _inputs(params, x_t, t)
    h1 = np.tanh(inp @ params.W1 + params.b1)
    h2 = np.tanh(h1 @ params.W2 + params.b2)
    ll = token_loglik(params.prior, x_t, t, params.K)
    logits = (h2 @ params.W3 + params.b3).reshape(-1, params.L, params.K) + params.beta[0] * ll
    return inp, h1, h2, ll, logits


def forward(params: DenoiserParams, x_t, t) -> np.ndarray:
    """Per-position predicted simplex; shape (B, L, K), or (L, K) for one sequence."""
    x_t = np.asarray(x_t)
    single = x_t.ndim == 1
    if single:
        x_t = x_t[None, :]
    probs = _softmax(_forward_cache(params, x_t, t)[-1])
    return probs[0] if single else probs


def logits(params: DenoiserParams, x_t, t) -> np.ndarray:
    return _forward_cache(params, np.atleast_2d(x_t), t)[-1]


def backward(params: DenoiserParams, x_t, t, grad_logits) -> DenoiserParams:
    """Gradient of sum(grad_logits * logits) with respect to every parameter."""
    x_t = np.atleast_2d(np.asarray(x_t))
    inp, h1, h2, ll, lg = _forward_cache(params, x_t, t)
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != lg.shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != logits shape {lg.shape}")
    dbeta = np.array([np.sum(g * ll)])
    g = g.reshape(g.shape[0], -1)

    dW3 = h2.T @ g
    db3 = g.sum(axis=0)
    dz2 = (g @ params.W3.T) * (1.0 - h2 ** 2)
    dW2 = h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ params.W2.T) * (1.0 - h1 ** 2)
    dW1 = inp.T @ dz1
    db1 = dz1.sum(axis=0)
    return params.with_arrays([dW1, db1, dW2, db2, dW3, db3, dbeta])


def softmax_backward(probs, grad_probs) -> np.ndarray:
    """Pull a gradient on softmax outputs back to the logits."""
    inner = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def sgd_step(params: DenoiserParams, grads: DenoiserParams, lr: float) -> DenoiserParams:
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    _check_match(params, grads)
    return params.with_arrays([p - lr * g for p, g in zip(params.arrays(), grads.arrays())])


def _check_match(params, grads):
    for p, g in zip(params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise ShapeError("parameter / gradient shape mismatch")


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        return sgd_step(params, grads, self.lr)


class Adam:
    def __init__(self, lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: DenoiserParams, grads: DenoiserParams) -> DenoiserParams:
        _check_match(params, grads)
        gs = grads.arrays()
        if self.m is None:
            self.m = [np.zeros_like(g) for g in gs]
            self.v = [np.zeros_like(g) for g in gs]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        new = []
        for i, (p, g) in enumerate(zip(params.arrays(), gs)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            new.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return params.with_arrays(new)


def make_optimizer(kind: str, lr: float):
    kind = kind.lower()
    if kind == "adam":
        return Adam(lr)
    if kind == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {kind!r}")


class UniformDenoiser:
    """Predicts the uniform simplex everywhere; equals a zero-head MLP."""

    def __init__(self, K: int, L: int):
        self.K, self.L = K, L

    def __call__(self, x_t, t):
        x_t = np.asarray(x_t)
        return np.full(x_t.shape + (self.K,), 1.0 / self.K)


class PointDenoiser:
    """Always predicts e_x for a fixed target sequence x (the data-conditioned optimum)."""

    def __init__(self, x, K: int):
        self.x = np.asarray(x)
        self.K = K
        self.L = self.x.size
        self._onehot = np.eye(K)[self.x]

    def __call__(self, x_t, t):
        x_t = np.asarray(x_t)
        return np.broadcast_to(self._onehot, x_t.shape + (self.K,)).copy()
