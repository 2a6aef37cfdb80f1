"""Noise level, resampling strength and the discrete time grid.

Time runs from t=0 (data) to t=1 (prior). The noise level gamma_t is the
weight of the clean token in the marginal, so gamma(0) = 1 and gamma(1) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np


class ScheduleError(ValueError):
    """Raised for times outside [0, 1] or ill-ordered step pairs."""


class SingularityError(ScheduleError):
    """Raised when the conditional retention ratio is undefined (t = 0)."""


GAMMA_KINDS = ("linear",)


@dataclass(frozen=True)
class GammaSchedule:
    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in GAMMA_KINDS:
            raise ScheduleError(f"unknown gamma schedule {self.kind!r}; expected one of {GAMMA_KINDS}")

    def complement(self, t):
        """1 - gamma_t, computed without cancellation where the kind allows it.

        Accepts a scalar (returns float) or an array of times.
        """
        _check_time(t)
        if self.kind == "linear":
            return float(t) if np.ndim(t) == 0 else np.asarray(t, dtype=np.float64).copy()
        raise AssertionError(self.kind)

    def __call__(self, t: float) -> float:
        return gamma_at(self, t)


def _check_time(t) -> None:
    if not np.all((np.asarray(t) >= 0.0) & (np.asarray(t) <= 1.0)):
        raise ScheduleError(f"time {t!r} outside [0, 1]")


def gamma_at(sched: GammaSchedule, t: float) -> float:
    _check_time(t)
    if sched.kind == "linear":
        return 1.0 - float(t)
    raise AssertionError(sched.kind)


def gamma_cond(sched: GammaSchedule, s: float, t: float) -> float:
    """Retention ratio (1 - gamma_s) / (1 - gamma_t) for a step from t back to s."""
    _check_time(s)
    _check_time(t)
    if s >= t:
        raise ScheduleError(f"need s < t, got s={s!r}, t={t!r}")
    denom = sched.complement(t)
    if denom <= 0.0:
        raise SingularityError(f"1 - gamma_t vanishes at t={t!r}")
    return min(1.0, sched.complement(s) / denom)


@dataclass(frozen=True)
class StepGrid:
    """Ascending times t(0)=0 < ... < t(T)=1; samplers walk it from the top."""

    T: int
    rho: float
    times: tuple

    def __post_init__(self):
        ts = np.asarray(self.times)
        if len(ts) != self.T + 1 or ts[0] != 0.0 or ts[-1] != 1.0 or np.any(np.diff(ts) <= 0):
            raise ScheduleError("grid times must increase strictly from 0 to 1 with T+1 entries")

    def steps(self):
        """(s, t) pairs in generation order, i = T..1."""
        for i in range(self.T, 0, -1):
            yield self.times[i - 1], self.times[i]


def build_grid(T: int, rho: float = 1.0) -> StepGrid:
    if int(T) != T or T < 1:
        raise ScheduleError(f"step count must be a positive integer, got {T!r}")
    if rho < 1.0:
        raise ScheduleError(f"rho must be >= 1, got {rho!r}")
    T = int(T)
    times = tuple(float((i / T) ** rho) for i in range(T + 1))
    return StepGrid(T=T, rho=float(rho), times=times)


@dataclass(frozen=True)
class ConstantLambda:
    value: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ScheduleError(f"lambda must lie in [0, 1], got {self.value!r}")

    def __call__(self, t: float) -> float:
        return self.value


LambdaLike = Union[float, ConstantLambda, Callable[[float], float]]


def as_lambda_schedule(lam: LambdaLike) -> Callable[[float], float]:
    """Accept a float, a ConstantLambda, or any callable t -> [0, 1]."""
    if isinstance(lam, (int, float, np.floating)):
        return ConstantLambda(float(lam))
    if callable(lam):
        return lam
    raise TypeError(f"cannot interpret {lam!r} as a lambda schedule")


def lambda_at(lam: LambdaLike, t: float) -> float:
    value = float(as_lambda_schedule(lam)(t))
    if not (0.0 <= value <= 1.0):
        raise ScheduleError(f"lambda({t}) = {value} outside [0, 1]")
    return value
