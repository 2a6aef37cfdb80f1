import time

import numpy as np
import pytest

from iddm import data, denoiser as dn
from iddm.config import RunConfig
from iddm.train import train

SEEDS = (0, 1, 2)

# Filled by test_acceptance.py; printed once at the end of the run.
ACCEPTANCE = {}
TRAIN_SECONDS = []


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")


@pytest.fixture(scope="session")
def markov_setup():
    cfg = RunConfig()
    ds = cfg.load_dataset()
    prior = data.make_prior(cfg.prior_kind, ds)
    return cfg, ds, prior, cfg.dataset_spec().joint_table()


def train_default(cfg, ds, prior, seed):
    p = dn.init(seed, ds.K, ds.L, cfg.model_hidden, cfg.model_time_dim, prior=prior)
    p, losses = train(p, ds.samples, prior, T=cfg.train_T, steps=cfg.train_steps,
                      batch_size=cfg.train_batch_size, lr=cfg.train_lr, optimizer=cfg.train_optimizer,
                      lam=cfg.train_lambda, seed=seed, log_every=0, decay=cfg.train_lr_decay)
    return p, losses


@pytest.fixture(scope="session")
def trained_models(markov_setup):
    """Default-config models on the K=4, L=3 Markov toy, one per seed."""
    cfg, ds, prior, _ = markov_setup
    models = []
    for s in SEEDS:
        start = time.perf_counter()
        models.append(train_default(cfg, ds, prior, s)[0])
        TRAIN_SECONDS.append(time.perf_counter() - start)
    return models


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
