import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsvdelay.delay import DelaySpec, PhysicalParams, ProcessState
from nsvdelay.errors import ConfigurationError, DomainError
from nsvdelay.measure import (EmpiricalMeasure, Functional, build_measure, constant_rho,
                              depth_doubling_table, functional, integrate_values,
                              invariance_residual, push_forward, time_average)
from nsvdelay.spectral import Grid, norm_sq, random_field
from nsvdelay.stepper import ForcingSpec, StepperConfig, evolve


@pytest.fixture(scope="module")
def periodic_linear():
    """Contracting linear fixture: 8x8, no convection, weak delay, period-1 forcing."""
    grid = Grid(2, 8)
    params = PhysicalParams.for_grid(grid, 1.0, 1.0, 0.25)
    rng = np.random.default_rng(2)
    f = ForcingSpec.periodic(random_field(grid, rng, kmax=2, norm_value=1.0, space="H"),
                             random_field(grid, rng, kmax=2, norm_value=0.5, space="H"),
                             2 * math.pi)
    cfg = StepperConfig(0.05, "imex_cnab2", convection=False)
    u0 = random_field(grid, rng, kmax=2, norm_value=1.0)
    return {"grid": grid, "params": params, "f": f, "g": DelaySpec(gain=0.1), "cfg": cfg,
            "rho": constant_rho(u0)}


class TestFunctionals:
    def test_builtins(self, grid16, rng):
        s = ProcessState.initial(random_field(grid16, rng), dt=0.1, h=0.2)
        assert functional("one")(s) == 1.0
        assert functional("v_sq")(s) == pytest.approx(norm_sq(s.u, "V"))

    def test_mode_functional(self, grid16, rng):
        s = ProcessState.initial(random_field(grid16, rng), dt=0.1, h=0.2)
        phi = functional("mode:0:1,-2:im")
        assert phi(s) == s.u.coeffs[0, 1, -2].imag
        with pytest.raises(ConfigurationError):
            functional("mode:0:9,0:re")(s)
        with pytest.raises(ConfigurationError):
            functional("energy")

    def test_combine_and_compose(self, grid16, rng):
        s = ProcessState.initial(random_field(grid16, rng), dt=0.1, h=0.2)
        h, v = functional("h_sq"), functional("v_sq")
        assert Functional.combine(2.0, h, -1.0, v)(s) == pytest.approx(2 * h(s) - v(s))
        assert h.compose(math.sqrt, "h")(s) == pytest.approx(math.sqrt(h(s)))


class TestEmpiricalMeasure:
    """Weighted sample sets and their integrals."""

    def test_constant_integrates_to_one_exactly(self, periodic_linear):
        p = periodic_linear
        mu = build_measure(0.0, p["rho"], -3.0, 2, p["f"], p["g"], p["cfg"], p["params"])
        assert mu.integrate(functional("one")) == 1.0
        assert mu.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_weights_validated(self, grid16, rng):
        s = ProcessState.initial(random_field(grid16, rng), dt=0.1, h=0.2)
        with pytest.raises(DomainError):
            EmpiricalMeasure(0.0, [-1.0], [s], (0.0, 0.0))
        with pytest.raises(ConfigurationError):
            EmpiricalMeasure(0.0, [1.0, 1.0], [s], (0.0, 0.0))

    def test_cache_matches_direct(self, periodic_linear):
        p = periodic_linear
        args = (0.0, p["rho"], -2.0, 20, p["f"], p["g"], p["cfg"], p["params"])
        cached = build_measure(*args)
        direct = build_measure(*args, use_cache=False)
        for a, b in zip(cached.states, direct.states):
            assert a.t == b.t
            np.testing.assert_allclose(a.u.coeffs, b.u.coeffs, atol=1e-14)

    def test_cache_skipped_for_incommensurate_shift(self, periodic_linear):
        p = periodic_linear
        mu = build_measure(0.0, p["rho"], -1.5, 3, p["f"], p["g"], p["cfg"], p["params"])
        direct = build_measure(0.0, p["rho"], -1.5, 3, p["f"], p["g"], p["cfg"], p["params"],
                               use_cache=False)
        for a, b in zip(mu.states, direct.states):
            assert np.array_equal(a.u.coeffs, b.u.coeffs)

    def test_time_average_is_trapezoid_mean(self, periodic_linear):
        p = periodic_linear
        tau, t = -1.0, 0.0
        phi = functional("h_sq")
        got = time_average(phi, p["rho"], tau, t, p["f"], p["g"], p["cfg"], p["params"],
                           stride=4)
        s = np.arange(tau, t + 1e-12, 0.2)
        vals = [phi(evolve(p["rho"](x, 0.05, 0.25), t, p["f"], p["g"], p["cfg"], p["params"]))
                for x in s]
        assert got == pytest.approx(np.trapezoid(vals, s) / (t - tau), rel=1e-12)

    def test_stride_must_divide_window(self, periodic_linear):
        p = periodic_linear
        with pytest.raises(ConfigurationError):
            build_measure(0.0, p["rho"], -1.0, 3, p["f"], p["g"], p["cfg"], p["params"])
        with pytest.raises(ConfigurationError):
            build_measure(0.0, p["rho"], -1.5, 10, p["f"], p["g"], p["cfg"], p["params"],
                          richardson=True)

    def test_push_forward_keeps_weights(self, periodic_linear):
        p = periodic_linear
        mu = build_measure(0.0, p["rho"], -1.0, 5, p["f"], p["g"], p["cfg"], p["params"])
        nu = push_forward(mu, 0.5, p["f"], p["g"], p["cfg"], p["params"])
        assert np.array_equal(nu.raw_weights, mu.raw_weights)
        assert all(s.t == pytest.approx(0.5) for s in nu.states)


@settings(max_examples=20, deadline=None)
@given(w=st.lists(st.floats(0.0, 10.0), min_size=2, max_size=12).filter(lambda x: sum(x) > 1e-3),
       a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_integral_is_linear_and_positive(w, a, b, seed):
    rng = np.random.default_rng(seed)
    w = np.array(w)
    x, y = rng.random(w.size), rng.random(w.size)
    lhs = integrate_values(w, a * x + b * y)
    rhs = a * integrate_values(w, x) + b * integrate_values(w, y)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert integrate_values(w, x) >= 0.0


class TestInvariance:
    """Residuals of the invariance relation under depth doubling."""

    def test_residual_shrinks_with_depth(self, periodic_linear):
        p = periodic_linear
        phis = [functional("h_sq"), functional("v_sq")]
        rows = depth_doubling_table(phis, p["rho"], 0.0, 1.0, 4.0, 2, 20, p["f"], p["g"],
                                    p["cfg"], p["params"])
        for pid in ("h_sq", "v_sq"):
            res = [r[3] for r in rows if r[0] == pid]
            assert res[0] > res[1] > res[2]

    def test_rejects_earlier_time(self, periodic_linear):
        p = periodic_linear
        mu = build_measure(0.0, p["rho"], -1.0, 20, p["f"], p["g"], p["cfg"], p["params"])
        with pytest.raises(ConfigurationError):
            invariance_residual(mu, -1.0, [functional("one")], p["rho"], p["f"], p["g"], p["cfg"],
                                p["params"])
