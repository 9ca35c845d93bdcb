import math

import numpy as np
import pytest

from nsvdelay.delay import (DelaySpec, HistorySegment, PhysicalParams, ProcessState,
                            check_hypotheses, delay_g, delay_integral_certificate,
                            delay_integral_constant, ev2_distance_sq, ev2_norm_sq, history_eval,
                            lipschitz_bound, steps_in, trapezoid_weights)
from nsvdelay.errors import ConfigurationError, InfeasibleHypotheses
from nsvdelay.spectral import norm, norm_sq, random_field, shear_field, zeros
from nsvdelay.stepper import ForcingSpec, StepperConfig, evolve


class TestStepArithmetic:
    def test_steps_in(self):
        assert steps_in(0.5, 0.01) == 50
        assert steps_in(0.0, 0.01) == 0
        with pytest.raises(ConfigurationError):
            steps_in(0.505, 0.01)

    def test_trapezoid_weights(self):
        w = trapezoid_weights(4, 0.25)
        np.testing.assert_allclose(w, [0.125, 0.25, 0.25, 0.25, 0.125])
        assert trapezoid_weights(0, 0.1).tolist() == [0.0]


class TestHistorySegment:
    """Ring of past fields, oldest first."""

    def test_constant_layout(self, grid16, rng):
        u = random_field(grid16, rng)
        hist = HistorySegment.constant(u, 0.1, 0.5, step=3)
        assert hist.n_delay == 5
        assert hist.h == pytest.approx(0.5)
        assert hist.t == pytest.approx(0.3)
        np.testing.assert_allclose(hist.times(), 0.3 + np.linspace(-0.5, 0.0, 6))

    def test_append_drops_oldest(self, grid16, rng):
        a, b = random_field(grid16, rng), random_field(grid16, rng)
        hist = HistorySegment.constant(a, 0.1, 0.2).append(b)
        assert hist.step == 1
        assert hist.newest is b
        assert hist.lag(0) is b
        assert hist.lag(2) is a

    def test_interpolation_exact_for_linear_paths(self, grid16, rng):
        a, b = random_field(grid16, rng), random_field(grid16, rng)
        hist = HistorySegment.from_function(lambda s: a + b * s, 0.1, 0.5)
        mid = history_eval(hist, -0.23)
        np.testing.assert_allclose(mid.coeffs, (a + b * -0.23).coeffs, atol=1e-15)

    def test_integral_of_constant_segment(self, grid16, rng):
        u = random_field(grid16, rng, norm_value=2.0)
        hist = HistorySegment.constant(u, 0.05, 0.5)
        assert hist.integral_v_sq() == pytest.approx(0.5 * 4.0, rel=1e-13)
        state = ProcessState(hist)
        assert ev2_norm_sq(state) == pytest.approx(4.0 * 1.5, rel=1e-13)

    def test_distance_is_zero_on_self(self, grid16, rng):
        s = ProcessState.initial(random_field(grid16, rng), dt=0.1, h=0.3)
        assert ev2_distance_sq(s, s) == 0.0


class TestDelaySpec:
    """Delay terms and their Lipschitz constants."""

    def test_discrete_reads_oldest_slot(self, grid16, rng):
        a, b = random_field(grid16, rng), random_field(grid16, rng)
        hist = HistorySegment.constant(a, 0.1, 0.2).append(b)
        g = delay_g(DelaySpec(gain=0.3), hist.t, hist)
        np.testing.assert_allclose(g.coeffs, 0.3 * a.coeffs, atol=1e-16)

    def test_variable_interpolates(self, grid16, rng):
        a, b = random_field(grid16, rng), random_field(grid16, rng)
        hist = HistorySegment.from_function(lambda s: a + b * s, 0.1, 0.5)
        spec = DelaySpec(kind="variable", gain=1.0, tau=(0.25, 0.1, 2.0))
        t = 0.0
        g = delay_g(spec, t, hist)
        np.testing.assert_allclose(g.coeffs, (a + b * (-spec.tau_at(t))).coeffs, atol=1e-14)

    def test_variable_rejects_fast_lag(self):
        with pytest.raises(ConfigurationError):
            DelaySpec(kind="variable", gain=1.0, tau=(0.25, 0.5, 4.0))

    def test_point_mass_matches_discrete(self, grid16, rng):
        hist = HistorySegment.from_function(lambda s: random_field(grid16, np.random.default_rng(int(100 * (s + 1)))), 0.1, 0.5)
        pm = DelaySpec.point_mass(0.7, hist.n_delay, hist.dt)
        a = delay_g(pm, 0.0, hist)
        b = delay_g(DelaySpec(gain=0.7), 0.0, hist)
        np.testing.assert_allclose(a.coeffs, b.coeffs, atol=1e-14)
        assert pm.kernel_mass(0.5) == pytest.approx(1.0)

    def test_tanh_is_contraction(self, grid16, rng):
        a, b = random_field(grid16, rng, norm_value=3.0), random_field(grid16, rng, norm_value=3.0)
        spec = DelaySpec(gain=1.0, pointwise="tanh")
        ga = delay_g(spec, 0.0, HistorySegment.constant(a, 0.1, 0.1))
        gb = delay_g(spec, 0.0, HistorySegment.constant(b, 0.1, 0.1))
        assert norm(ga - gb, "H") <= norm(a - b, "H") + 1e-12

    def test_lipschitz_bound(self):
        assert lipschitz_bound(DelaySpec(gain=-0.4), 4.0) == pytest.approx(0.2)
        uniform = DelaySpec(kind="distributed", gain=0.5, kernel=(2.0, 2.0, 2.0))
        assert lipschitz_bound(uniform, 1.0, 0.5) == pytest.approx(0.5)
        with pytest.raises(ConfigurationError):
            lipschitz_bound(uniform)

    def test_integral_constant_variable_jacobian(self):
        spec = DelaySpec(kind="variable", gain=0.2, tau=(0.3, 0.1, 5.0))
        c = delay_integral_constant(spec, 0.4, 0.5)
        assert c == pytest.approx(0.2 * math.exp(0.1) / math.sqrt(0.5))

    def test_dict_round_trip(self):
        spec = DelaySpec(kind="distributed", gain=0.5, pointwise="sin", kernel=(1.0, 2.0, 1.0))
        assert DelaySpec.from_dict(spec.to_dict()) == spec
        with pytest.raises(ConfigurationError):
            DelaySpec.from_dict({"gain": 1.0, "lag": 2})

    def test_delay_integral_bound_holds_on_trajectories(self, grid16, params16, rng):
        spec = DelaySpec(gain=0.3, pointwise="tanh")
        cfg = StepperConfig(0.05, "imex_cnab2", 0.0, 2.0)
        f = ForcingSpec.zero()
        s1 = ProcessState.initial(random_field(grid16, rng), dt=0.05, h=params16.h)
        s2 = ProcessState.initial(random_field(grid16, rng), dt=0.05, h=params16.h)
        seq1, seq2 = [s1], [s2]
        for _ in range(40):
            seq1.append(evolve(seq1[-1], seq1[-1].t + 0.05, f, spec, cfg, params16))
            seq2.append(evolve(seq2[-1], seq2[-1].t + 0.05, f, spec, cfg, params16))
        cg = delay_integral_constant(spec, 0.2, params16.h)
        lhs, rhs = delay_integral_certificate(spec, seq1, seq2, 0.2, cg)
        assert 0 < lhs <= rhs


class TestHypothesisWindow:
    """Admissible intervals for the decay rate and the auxiliary weight."""

    def test_delay_free_values(self):
        p = PhysicalParams(1.0, 1.0, 0.5, 1.0)
        win = check_hypotheses(p, DelaySpec(), 0.5, 0.25)
        assert win.sigma_max == 1.0
        assert win.eta1 == 0.5
        assert win.delay_free
        assert dict(win.rows())["cg_max"] == "unconstrained-by-delay"

    def test_cg_too_large_is_rejected(self):
        p = PhysicalParams(1.0, 1.0, 0.5, 1.0)
        win = check_hypotheses(p, DelaySpec(), 0.1, 0.1, strict=False)
        with pytest.raises(InfeasibleHypotheses) as exc:
            check_hypotheses(p, DelaySpec(gain=1.0), 0.1, 0.1, cg=1.01 * win.cg_max)
        assert exc.value.condition == "cg"

    def test_sigma_out_of_range(self, params16):
        with pytest.raises(InfeasibleHypotheses) as exc:
            check_hypotheses(params16, DelaySpec(), 5.0, 0.1)
        assert exc.value.condition == "sigma"

    def test_non_strict_reports(self, params16):
        win = check_hypotheses(params16, DelaySpec(gain=0.1), 5.0, 0.1, strict=False)
        assert not win.feasible
        assert win.to_dict()["feasible"] is False

    def test_params_validation(self):
        with pytest.raises(ConfigurationError):
            PhysicalParams(-1.0, 1.0, 0.5)


def test_zero_history_and_shear_state(grid16):
    z = HistorySegment.zero(grid16, 0.1, 0.3)
    assert all(f.is_zero() for f in z.fields)
    s = ProcessState.initial(shear_field(grid16), dt=0.1, h=0.3)
    assert norm_sq(s.u, "V") == pytest.approx(0.5)
    assert zeros(grid16).is_zero()
