import numpy as np
import pytest
from hypothesis import given, strategies as st

from iddm.schedule import (
    ConstantLambda, GammaSchedule, ScheduleError, SingularityError, StepGrid,
    build_grid, gamma_at, gamma_cond, lambda_at,
)

LIN = GammaSchedule()


def test_gamma_endpoints_exact():
    assert gamma_at(LIN, 0.0) == 1.0
    assert gamma_at(LIN, 1.0) == 0.0


def test_gamma_quarter():
    assert gamma_at(LIN, 0.25) == 0.75


def test_gamma_monotone_on_dense_grid():
    g = np.array([gamma_at(LIN, t) for t in np.linspace(0, 1, 10_001)])
    assert np.all(np.diff(g) <= 0)


def test_gamma_rejects_out_of_range():
    with pytest.raises(ScheduleError):
        gamma_at(LIN, 1.5)
    with pytest.raises(ScheduleError):
        gamma_at(LIN, -0.1)


def test_unknown_kind():
    with pytest.raises(ScheduleError):
        GammaSchedule("cosine")


def test_complement_array():
    t = np.array([0.0, 0.3, 1.0])
    np.testing.assert_array_equal(LIN.complement(t), t)


class TestGammaCond:
    def test_value(self):
        assert gamma_cond(LIN, 0.25, 0.5) == 0.5

    def test_s_zero(self):
        assert gamma_cond(LIN, 0.0, 0.7) == 0.0

    def test_continuity_as_s_approaches_t(self):
        assert gamma_cond(LIN, 0.5 - 1e-12, 0.5) == pytest.approx(1.0, abs=1e-10)

    def test_requires_s_before_t(self):
        with pytest.raises(ScheduleError):
            gamma_cond(LIN, 0.5, 0.5)

    def test_singular_at_zero(self):
        with pytest.raises((SingularityError, ScheduleError)):
            gamma_cond(LIN, 0.0, 0.0)

    @given(st.floats(0.0, 1.0), st.floats(1e-6, 1.0))
    def test_in_unit_interval(self, a, b):
        s, t = sorted((a * b, b))
        if s >= t:
            return
        assert 0.0 <= gamma_cond(LIN, s, t) <= 1.0


class TestGrid:
    def test_uniform(self):
        assert build_grid(4, 1.0).times == (0.0, 0.25, 0.5, 0.75, 1.0)

    def test_rho_two(self):
        assert build_grid(2, 2.0).times == (0.0, 0.25, 1.0)

    @pytest.mark.parametrize("rho", [1.0, 2.5, 7.0])
    def test_single_step(self, rho):
        assert build_grid(1, rho).times == (0.0, 1.0)

    @given(st.integers(1, 200), st.floats(1.0, 10.0))
    def test_strictly_increasing_with_endpoints(self, T, rho):
        ts = np.array(build_grid(T, rho).times)
        assert ts[0] == 0.0 and ts[-1] == 1.0
        assert np.all(np.diff(ts) > 0)
        assert len(ts) == T + 1

    def test_steps_walk_downward(self):
        g = build_grid(3, 1.0)
        assert list(g.steps()) == [(2 / 3, 1.0), (1 / 3, 2 / 3), (0.0, 1 / 3)]

    @pytest.mark.parametrize("T,rho", [(0, 1.0), (2.5, 1.0), (3, 0.5)])
    def test_rejects_bad_arguments(self, T, rho):
        with pytest.raises(ScheduleError):
            build_grid(T, rho)

    def test_grid_validation(self):
        with pytest.raises(ScheduleError):
            StepGrid(T=2, rho=1.0, times=(0.0, 0.6, 0.5))


class TestLambda:
    def test_constant(self):
        assert lambda_at(0.3, 0.9) == 0.3
        assert ConstantLambda(0.2)(0.1) == 0.2

    def test_callable(self):
        assert lambda_at(lambda t: 0.5 * t, 0.5) == 0.25

    def test_out_of_range(self):
        with pytest.raises(ScheduleError):
            ConstantLambda(1.5)
        with pytest.raises(ScheduleError):
            lambda_at(lambda t: 2.0, 0.5)
