"""Denoiser training: sample (x, t, x_t), step on the diffusion KL."""

from __future__ import annotations

import logging

import numpy as np

from . import denoiser as dn
from . import rng as rngmod
from .objective import SupportError, sample_training_batch, training_loss_and_grad
from .schedule import GammaSchedule

log = logging.getLogger(__name__)


LR_DECAYS = ("linear", "none")


class TrainingError(RuntimeError):
    pass


def train(params: dn.DenoiserParams, samples, prior, *, T: int, steps: int, batch_size: int = 128,
          lr: float = 3e-3, optimizer: str = "adam", lam: float = 0.0, seed: int = 0,
          log_every: int = 100, decay: str = "linear", sched: GammaSchedule = GammaSchedule()):
    """Run `steps` optimizer updates; returns (params, per-step losses).

    With decay="linear" the learning rate falls linearly to zero over the run,
    which removes most of the seed-to-seed spread in the final model.
    """
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[1] != params.L:
        raise TrainingError(f"samples must have shape (n, {params.L})")
    if decay not in LR_DECAYS:
        raise TrainingError(f"unknown lr decay {decay!r}; expected one of {LR_DECAYS}")
    opt = dn.make_optimizer(optimizer, lr)
    gen = rngmod.substream(seed, rngmod.TRAIN)
    losses = np.empty(steps)
    for step in range(steps):
        batch = sample_training_batch(samples, batch_size, T, prior, gen, sched)
        try:
            loss, grads = training_loss_and_grad(params, batch, lam, prior, sched)
        except SupportError:
            loss = float("inf")
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at step {step} (lr={lr}, batch={batch_size})")
        losses[step] = loss
        if log_every and step % log_every == 0:
            log.info("step %d loss %.5f", step, loss)
        if decay == "linear":
            opt.lr = lr * (1.0 - step / steps)
        try:
            params = opt.step(params, grads)
        except ValueError as exc:
            raise TrainingError(f"update at step {step} diverged (lr={lr}): {exc}") from None
    return params, losses
