"""Variational bound and training loss.

Per-token quantities are summed over sequence positions: the variational
chain factorizes over positions given the clean sequence, and the model's
reverse step factorizes given the noisy sequence, so every KL splits.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import denoiser as dn
from . import rng as rngmod
from .kernel import (
    categorical_from_uniform,
    marginal,
    parametrized_reverse,
    posterior,
    posterior_weights,
)
from .schedule import GammaSchedule, StepGrid, lambda_at

LOG_FLOOR = 1e-300


class SupportError(ValueError):
    """The target distribution has mass where the model has none."""


def kl_categorical(p, q) -> np.ndarray:
    """KL(p || q) over the last axis; zero-mass entries of p contribute nothing."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError("KL arguments differ in category count")
    mask = p > 0.0
    if np.any(mask & (q <= 0.0)):
        raise SupportError("p has mass where q is zero")
    ratio = np.log(np.maximum(p, LOG_FLOOR)) - np.log(np.maximum(q, LOG_FLOOR))
    out = np.sum(np.where(mask, p * ratio, 0.0), axis=-1)
    return float(out) if out.ndim == 0 else out


def diffusion_loss_term(gamma_s, gamma_t, lam, x_t, x, prior, x_theta):
    w = posterior_weights(gamma_s, gamma_t, lam)
    target = posterior(w, x_t, prior, x)
    model = parametrized_reverse(w, x_t, prior, x_theta)
    return kl_categorical(target, model)


@dataclass
class Batch:
    """Training tuples: clean x and noisy x_t of shape (B, L), times s < t of shape (B,)."""

    x_t: np.ndarray
    x: np.ndarray
    s: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.t)

    def take(self, idx) -> "Batch":
        return Batch(self.x_t[idx], self.x[idx], self.s[idx], self.t[idx])


def _gammas(sched: GammaSchedule, times) -> np.ndarray:
    return np.array([sched(float(v)) for v in np.ravel(times)])


def _batch_weights(batch: Batch, lam: float, sched: GammaSchedule):
    gs = _gammas(sched, batch.s)[:, None]
    gt = _gammas(sched, batch.t)[:, None]
    return posterior_weights(gs, gt, lam)


def _batch_terms(batch, lam, prior, x_theta, sched):
    w = _batch_weights(batch, lam, sched)
    target = posterior(w, batch.x_t, prior, batch.x)
    model = parametrized_reverse(w, batch.x_t, prior, x_theta)
    return w, target, model


def training_loss(batch: Batch, lam: float, prior, denoiser, sched: GammaSchedule = GammaSchedule()) -> float:
    """Mean over the batch of the per-sequence diffusion KL."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    x_theta = denoiser(batch.x_t, batch.t)
    _, target, model = _batch_terms(batch, lam, prior, x_theta, sched)
    per_seq = kl_categorical(target, model).sum(axis=-1)
    return float(np.mean(per_seq))


def training_loss_and_grad(params: dn.DenoiserParams, batch: Batch, lam: float, prior,
                           sched: GammaSchedule = GammaSchedule()):
    """Loss as in training_loss plus its exact gradient with respect to params."""
    x_theta = dn.forward(params, batch.x_t, batch.t)
    w, target, model = _batch_terms(batch, lam, prior, x_theta, sched)
    per_seq = kl_categorical(target, model).sum(axis=-1)
    B = len(batch)
    # dKL/dmodel = -target/model; dmodel/dx_theta = w_flip
    ratio = np.where(target > 0.0, target / np.maximum(model, LOG_FLOOR), 0.0)
    _, _, wf = w.expand()
    grad_probs = -wf * ratio / B
    grad_logits = dn.softmax_backward(x_theta, grad_probs)
    grads = dn.backward(params, batch.x_t, batch.t, grad_logits)
    return float(np.mean(per_seq)), grads


def draw_marginal(gamma_t, prior, x, gen: np.random.Generator) -> np.ndarray:
    """x_t ~ Cat((1 - gamma_t) prior + gamma_t e_x), independently per entry of x."""
    probs = marginal(gamma_t, prior, x)
    return categorical_from_uniform(probs, gen.random(np.shape(x)))


def sample_training_batch(samples, batch_size: int, T: int, prior, gen: np.random.Generator,
                          sched: GammaSchedule = GammaSchedule()) -> Batch:
    """x ~ data, t ~ U(1/T, 1), s = t - 1/T, x_t ~ marginal at t."""
    samples = np.asarray(samples)
    dt = 1.0 / T
    x = samples[gen.integers(len(samples), size=batch_size)]
    t = gen.uniform(dt, 1.0, size=batch_size) if T > 1 else np.ones(batch_size)
    s = np.maximum(t - dt, 0.0)
    gt = _gammas(sched, t)[:, None]
    x_t = draw_marginal(gt, prior, x, gen)
    return Batch(x_t=x_t, x=x, s=s, t=t)


@dataclass
class ElboReport:
    reconstruction: float
    diffusion_terms: np.ndarray
    prior_kl: float
    total: float
    stderr: float

    def __post_init__(self):
        expected = self.reconstruction - float(np.sum(self.diffusion_terms)) - self.prior_kl
        if not np.isclose(self.total, expected, rtol=0, atol=1e-9):
            raise ValueError("ELBO total inconsistent with its terms")


def elbo_batch(X, grid: StepGrid, lam, prior, denoiser, gen: np.random.Generator, n_mc: int = 8,
               sched: GammaSchedule = GammaSchedule()):
    """Monte-Carlo ELBO terms for every row of X.

    Returns (reconstruction (B,), diffusion (B, T-1), prior_kl (B,), variance (B,)),
    where diffusion column j holds the term for grid step i = j + 2 and
    variance is the MC variance of the total estimate.
    """
    X = np.atleast_2d(np.asarray(X))
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    B, L = X.shape
    prior = np.asarray(prior, dtype=np.float64)
    T = grid.T
    recon = np.zeros(B)
    diff = np.zeros((B, T - 1))
    var = np.zeros(B)
    Xr = np.repeat(X, n_mc, axis=0)
    for i in range(1, T + 1):
        s, t = grid.times[i - 1], grid.times[i]
        x_t = draw_marginal(sched(t), prior, Xr, gen)
        x_theta = denoiser(x_t, np.full(len(x_t), t))
        w = posterior_weights(sched(s), sched(t), lambda_at(lam, t))
        model = parametrized_reverse(w, x_t, prior, x_theta)
        if i == 1:
            picked = np.take_along_axis(model, Xr[..., None], axis=-1)[..., 0]
            vals = np.log(np.maximum(picked, LOG_FLOOR)).sum(axis=-1)
        else:
            vals = kl_categorical(posterior(w, x_t, prior, Xr), model).sum(axis=-1)
        vals = vals.reshape(B, n_mc)
        mean = vals.mean(axis=1)
        if i == 1:
            recon = mean
        else:
            diff[:, i - 2] = mean
        if n_mc > 1:
            var += vals.var(axis=1, ddof=1) / n_mc
        else:
            var += np.nan
    m1 = marginal(sched(1.0), prior, X)
    prior_kl = kl_categorical(m1, np.broadcast_to(prior, m1.shape)).sum(axis=-1)
    return recon, diff, np.asarray(prior_kl, dtype=np.float64).reshape(B), var


def elbo(x, grid: StepGrid, lam, prior, denoiser, gen: np.random.Generator, n_mc: int = 8,
         sched: GammaSchedule = GammaSchedule()) -> ElboReport:
    """Monte-Carlo lower bound on log p(x) for one sequence x."""
    x = np.atleast_1d(np.asarray(x))
    recon, diff, pkl, var = elbo_batch(x[None, :], grid, lam, prior, denoiser, gen, n_mc, sched)
    total = recon[0] - diff[0].sum() - pkl[0]
    return ElboReport(float(recon[0]), diff[0], float(pkl[0]), float(total), float(np.sqrt(var[0])))


def elbo_totals(dataset, grid: StepGrid, lam, prior, denoiser, seed: int, n_mc: int = 8,
                sched: GammaSchedule = GammaSchedule(), threads: int = 1):
    """Per-sequence ELBO totals and MC variances, one substream per fixed-size block."""
    data = np.atleast_2d(np.asarray(dataset))
    if len(data) == 0:
        raise ValueError("empty dataset")
    blocks = list(rngmod.blocks(len(data)))

    def run(block):
        b, lo, hi = block
        gen = rngmod.substream(seed, rngmod.ELBO, b)
        recon, diff, pkl, var = elbo_batch(data[lo:hi], grid, lam, prior, denoiser, gen, n_mc, sched)
        return recon - diff.sum(axis=1) - pkl, var

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def nll_metric(dataset, grid: StepGrid, lam, prior, denoiser, seed: int, n_mc: int = 8,
               sched: GammaSchedule = GammaSchedule(), threads: int = 1) -> float:
    """Negative ELBO in nats per token, averaged over the dataset; exp() gives perplexity."""
    data = np.atleast_2d(np.asarray(dataset))
    totals, _ = elbo_totals(data, grid, lam, prior, denoiser, seed, n_mc, sched, threads)
    return float(-np.mean(totals) / data.shape[1])
