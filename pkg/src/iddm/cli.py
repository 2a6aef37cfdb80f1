"""Command-line entry point: verify, train, sample, elbo, sweep."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys


from . import checkpoint as ckptmod
from . import data as datamod
from . import denoiser as dn
from . import oracle
from .config import ConfigError, RunConfig
from .kernel import PosteriorWeights, posterior_weights
from .objective import nll_metric
from .sampler import SamplerConfig, sample
from .schedule import build_grid
from .train import TrainingError, train

log = logging.getLogger("iddm")


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        raw = os.environ.get("IDDM_THREADS", "1")
        try:
            n = int(raw)
        except ValueError:
            raise SystemExit(f"IDDM_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise SystemExit("thread count must be >= 1")
    return n


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str):
    return [int(v) for v in text.split(",") if v.strip()]


def _swapped_weights(gamma_s, gamma_t, lam):
    # Test hook: exchanges the prior and flip weights so every check should fail.
    w = posterior_weights(gamma_s, gamma_t, lam)
    return PosteriorWeights(w.w_stay, w.w_flip, w.w_prior)


# ---------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    weights_fn = _swapped_weights if args.inject_fault else posterior_weights
    reports = oracle.run_all(trials=args.trials, seed=args.seed, weights_fn=weights_fn)
    ok = all(r.passed for r in reports)
    if args.json:
        print(json.dumps({
            "passed": ok,
            "checks": [
                {"name": r.name, "max_deviation": r.max_deviation, "tolerance": r.tolerance,
                 "cases": r.cases, "passed": r.passed, "detail": r.detail}
                for r in reports
            ],
        }, indent=2))
    else:
        print("# check\tmax_deviation\ttolerance\tcases\tstatus")
        for r in reports:
            print(r.line())
        print("PASS" if ok else "FAIL")
    return 0 if ok else 1


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = cfg.updated(args.set)
    dataset = cfg.load_dataset()
    if cfg.data_kind == "file":
        # The fixture header is authoritative for the shape.
        cfg = cfg.updated([f"data.K = {dataset.K}", f"data.L = {dataset.L}"])
    prior = datamod.make_prior(cfg.prior_kind, dataset)
    params = dn.init(cfg.train_seed, dataset.K, dataset.L, cfg.model_hidden, cfg.model_time_dim, prior=prior)
    try:
        params, losses = train(
            params, dataset.samples, prior, T=cfg.train_T, steps=cfg.train_steps,
            batch_size=cfg.train_batch_size, lr=cfg.train_lr, optimizer=cfg.train_optimizer,
            lam=cfg.train_lambda, seed=cfg.train_seed, log_every=cfg.train_log_every,
            decay=cfg.train_lr_decay,
        )
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    ckptmod.save(args.out, ckptmod.Checkpoint(params=params, prior=prior, config=cfg))
    if len(losses):
        tail = losses[-min(100, len(losses)):]
        print(f"final_loss\t{tail.mean():.6f}")
    return 0


# ---------------------------------------------------------------- sample


def _sampler_args(ckpt, args):
    cfg = ckpt.config
    lam = cfg.schedule_lambda if args.lam is None else args.lam
    rho = cfg.sampler_rho if args.rho is None else args.rho
    steps = cfg.sampler_steps if args.steps is None else args.steps
    return lam, rho, steps


def cmd_sample(args) -> int:
    ckpt = ckptmod.load(args.ckpt)
    lam, rho, steps = _sampler_args(ckpt, args)
    p = ckpt.params
    conf = SamplerConfig(grid=build_grid(steps, rho), lam=lam, prior=ckpt.prior, seed=args.seed)
    samples, stats = sample(conf, p, n=args.n, L=p.L, threads=_threads(args))
    datamod.write_fixture(args.out, samples, p.K, p.L)
    mean = float(stats.total_transitions.mean()) if args.n else float("nan")
    print(f"mean_transitions\t{mean:.6f}")
    return 0


# ---------------------------------------------------------------- elbo


def _predictor(kind: str, ckpt, dataset):
    p = ckpt.params
    if kind == "model":
        return p
    if kind == "uniform":
        return dn.UniformDenoiser(p.K, p.L)
    table = datamod.empirical_joint(dataset.samples, p.K, p.L)
    return oracle.BayesDenoiser(table, p.K, p.L, ckpt.prior)


def _check_dims(ckpt, dataset):
    if (dataset.K, dataset.L) != (ckpt.params.K, ckpt.params.L):
        raise ckptmod.CheckpointError(
            f"dataset has K={dataset.K}, L={dataset.L}; checkpoint expects "
            f"K={ckpt.params.K}, L={ckpt.params.L}")


def cmd_elbo(args) -> int:
    ckpt = ckptmod.load(args.ckpt)
    dataset = datamod.read_fixture(args.data)
    _check_dims(ckpt, dataset)
    lam, rho, steps = _sampler_args(ckpt, args)
    den = _predictor(args.predictor, ckpt, dataset)
    nll = nll_metric(dataset.samples, build_grid(steps, rho), lam, ckpt.prior, den, args.seed,
                     n_mc=args.mc, threads=_threads(args))
    print(f"nats_per_token\t{nll:.6f}")
    print(f"perplexity\t{math.exp(nll):.6f}")
    return 0


# ---------------------------------------------------------------- sweep


def cmd_sweep(args) -> int:
    ckpt = ckptmod.load(args.ckpt)
    dataset = datamod.read_fixture(args.data) if args.data else ckpt.config.load_dataset()
    _check_dims(ckpt, dataset)
    p = ckpt.params
    threads = _threads(args)
    try:
        target = datamod.empirical_joint(dataset.samples, p.K, p.L)
    except datamod.CapacityError:
        target = None
    elbo_data = dataset.samples[:args.elbo_n]
    print("# lambda\trho\tsteps\ttv\tmean_transitions\tnats_per_token")
    for steps in _ints(args.steps):
        for rho in _floats(args.rhos):
            grid = build_grid(steps, rho)
            for lam in _floats(args.lambdas):
                conf = SamplerConfig(grid=grid, lam=lam, prior=ckpt.prior, seed=args.seed)
                samples, stats = sample(conf, p, n=args.n, L=p.L, threads=threads)
                tv = float("nan")
                if target is not None and args.n:
                    tv = datamod.tv_distance(datamod.empirical_joint(samples, p.K, p.L), target)
                mean = float(stats.total_transitions.mean()) if args.n else float("nan")
                nll = float("nan")
                if len(elbo_data):
                    nll = nll_metric(elbo_data, grid, lam, ckpt.prior, p, args.seed, n_mc=args.mc,
                                     threads=threads)
                print(f"{lam:g}\t{rho:g}\t{steps}\t{tv:.6f}\t{mean:.6f}\t{nll:.6f}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iddm", description="Interpolating discrete diffusion on toy data.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $IDDM_THREADS or 1); results do not depend on it")
        return p

    v = common(sub.add_parser("verify", help="run the exact property suite"))
    v.add_argument("--trials", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--json", action="store_true", help="structured report on stdout")
    v.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    t = common(sub.add_parser("train", help="train a denoiser and write a checkpoint"))
    t.add_argument("--config", default=None, help="dotted-key config file (defaults if omitted)")
    t.add_argument("--out", required=True)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    t.set_defaults(func=cmd_train)

    s = common(sub.add_parser("sample", help="generate sequences from a checkpoint"))
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--rho", type=float, default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = common(sub.add_parser("elbo", help="negative ELBO in nats per token on a fixture"))
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--lambda", dest="lam", type=float, default=None)
    e.add_argument("--rho", type=float, default=None)
    e.add_argument("--steps", type=int, default=None)
    e.add_argument("--mc", type=int, default=8)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--predictor", choices=("model", "uniform", "bayes"), default="model",
                   help="swap the checkpoint model for a reference predictor")
    e.set_defaults(func=cmd_elbo)

    w = common(sub.add_parser("sweep", help="evaluate a lambda x rho x steps grid"))
    w.add_argument("--ckpt", required=True)
    w.add_argument("--lambdas", default="0,0.25,0.5,0.75,1")
    w.add_argument("--rhos", default="4")
    w.add_argument("--steps", default="32")
    w.add_argument("--n", type=int, default=2000)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--data", default=None, help="fixture to compare against (default: the training data)")
    w.add_argument("--mc", type=int, default=4)
    w.add_argument("--elbo-n", type=int, default=256, help="sequences used for the ELBO column")
    w.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, ckptmod.CheckpointError, datamod.DatasetError, datamod.CapacityError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
