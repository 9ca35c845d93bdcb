"""A-priori bounds evaluated along stored runs.

Each function returns a :class:`BoundCertificate` holding both sides of one
inequality at every admissible sample time.  All integrals of run data are
composite trapezoid sums at solver resolution; integrals of the forcing use
closed forms.  Weighted integrals ``exp(-sigma t) int_tau^t exp(sigma s) x(s) ds``
are accumulated by the recursion

    I_{n+1} = e^{-sigma dt} I_n + dt/2 (e^{-sigma dt} x_n + x_{n+1}),

which is the trapezoid rule without overflow for large ``|t|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .delay import HypothesisWindow, ev2_norm_sq, trapezoid_weights
from .errors import ConfigurationError, InsufficientData
from .stepper import Run, window_integrals

VERDICTS = ("pass", "fail", "inconclusive")


@dataclass
class BoundCertificate:
    """Both sides of an inequality at the sample times, plus the verdict."""

    id: str
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    tol: float = 0.0
    constants: dict = field(default_factory=dict)
    verdict: str = ""
    notes: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.lhs = np.asarray(self.lhs, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        if not self.verdict:
            self.verdict = "pass" if self.holds() else "fail"

    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs * (1.0 + self.tol)))

    @property
    def margin(self) -> float:
        if self.lhs.size == 0:
            return math.nan
        return float(np.min(self.rhs - self.lhs))

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def summary(self) -> dict:
        return {"id": self.id, "verdict": self.verdict, "margin": self.margin,
                "samples": int(self.times.size), "tol": self.tol,
                "constants": dict(self.constants), "notes": self.notes}


def damped_integral(x: np.ndarray, dt: float, sigma: float) -> np.ndarray:
    """``exp(-sigma t_n) int_{t_0}^{t_n} exp(sigma s) x(s) ds`` by the trapezoid rule."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x
    a = math.exp(-sigma * dt)
    b = np.zeros_like(x)
    b[1:] = 0.5 * dt * (a * x[:-1] + x[1:])
    return lfilter([1.0], [1.0, -a], b)


def _check_window(run: Run, window: HypothesisWindow):
    if abs(window.params.h - run.h) > 1e-12 * max(1.0, run.h):
        raise ConfigurationError("window and run use different delay horizons")


def _forcing_term(run: Run, window: HypothesisWindow) -> np.ndarray:
    """``(beta alpha^2)^-1 exp(-sigma t) int_tau^t exp(sigma s) ||f||_{V'}^2``."""
    scale = 1.0 / (window.beta * window.params.alpha ** 2)
    return np.array([scale * run.forcing.damped_energy(t, window.sigma, run.tau) for t in run.t])


def decay_rhs(run: Run, window: HypothesisWindow) -> np.ndarray:
    """Right-hand side of the energy decay bound at every sample."""
    x0 = ev2_norm_sq(run.initial)
    return (window.decay_prefactor * np.exp(-window.sigma * (run.t - run.tau)) * x0
            + _forcing_term(run, window))


def certify_decay(run: Run, window: HypothesisWindow, tol: float = 0.0) -> BoundCertificate:
    """``||grad u(t)||^2 + eta1 e^{-sigma t} int_tau^t e^{sigma s}||grad u||^2`` against the decay bound."""
    _check_window(run, window)
    if run.t[-1] - run.tau < run.h:
        raise InsufficientData(f"run length {run.t[-1] - run.tau} shorter than h={run.h}")
    lhs = run.v_sq + window.eta1 * damped_integral(run.v_sq, run.dt, window.sigma)
    rhs = decay_rhs(run, window)
    return BoundCertificate("decay", run.t, lhs, rhs, tol,
                            {"A": window.decay_prefactor, "eta1": window.eta1,
                             "sigma": window.sigma, "beta": window.beta, "C_g": window.cg,
                             "initial_norm_sq": ev2_norm_sq(run.initial)})


def certify_window_integral(run: Run, window: HypothesisWindow, tol: float = 0.0) -> BoundCertificate:
    """``int_{t-h}^t ||grad u||^2`` against ``e^{sigma h} / eta1`` times the decay bound, ``t >= tau + h``."""
    _check_window(run, window)
    m = run.n_delay
    if run.t.size <= m or run.t[-1] - run.tau < run.h:
        raise InsufficientData("run shorter than one delay horizon")
    if m == 0:
        raise InsufficientData("window integral needs h > 0")
    lhs = window_integrals(run.t, run.v_sq, run.dt, m)[m:]
    rhs = math.exp(window.sigma * run.h) / window.eta1 * decay_rhs(run, window)[m:]
    return BoundCertificate("window", run.t[m:], lhs, rhs, tol,
                            {"A": window.decay_prefactor, "eta1": window.eta1,
                             "exp_sigma_h": math.exp(window.sigma * run.h)})


# --------------------------------------------------------------------------- absorbing

def rho_sigma(window: HypothesisWindow, forcing, t: float) -> float:
    """``(beta alpha^2)^-1 e^{-sigma t} int_{-inf}^t e^{sigma s}||f(s)||_{V'}^2 ds``."""
    return forcing.damped_energy(t, window.sigma) / (window.beta * window.params.alpha ** 2)


def absorbing_radius_sq(window: HypothesisWindow, forcing, t: float) -> float:
    """``R1(t)^2 = (1 + e^{sigma h} / eta1) rho_sigma(t)``."""
    h = window.params.h
    return (1.0 + math.exp(window.sigma * h) / window.eta1) * rho_sigma(window, forcing, t)


def derivative_radius_sq(run: Run, window: HypothesisWindow, i: int, *, _cache=None) -> tuple:
    """Bound on ``int_{t-h}^t ||grad d_t u||^2`` at sample ``i`` and its ingredients.

    Testing the equation with ``d_t u`` and splitting the convection, forcing and
    delay pairings by Young's inequality with weight ``C7 / 4`` each gives

        (C7/4) int ||grad d_t u||^2 <= (nu/2) ||grad u(t-h)||^2
            + (C4^2 h max ||grad u||^4 + int ||f||_{V'}^2 + C6 int ||g||^2) / C7,

    with ``||grad u(t-h)||^2`` and ``int_{t-2h}^t ||grad u||^2`` bounded by the
    decay estimate and the delay integral by the delay-integral constant ``C_g``.
    """
    p = window.params
    h, sigma, dt = run.h, window.sigma, run.dt
    m = run.n_delay
    t = run.t[i]
    if _cache is None:
        _cache = _derivative_cache(run, window)
    rhs_dec, f_all = _cache
    grad_prev = rhs_dec[i - m]
    two_window = math.exp(2 * sigma * h) / window.eta1 * rhs_dec[i]
    g_int = window.cg ** 2 * math.exp(sigma * h) * two_window
    te, ve = run.extended_v_sq()
    sel = (te >= t - 2 * h - 1e-12 * max(1.0, abs(t))) & (te <= t + 1e-12 * max(1.0, abs(t)))
    max4 = float(np.max(ve[sel] ** 2))
    fs = f_all[i - m:i + 1]
    f_int = float(np.sum(0.5 * dt * (fs[1:] + fs[:-1])))
    C7, C4 = p.C7, p.C4
    kappa0 = C7 / 4.0
    value = (0.5 * p.nu * grad_prev
             + (C4 ** 2 * h * max4 + f_int + p.C6 * g_int) / C7) / kappa0
    parts = {"kappa0": kappa0, "C4": C4, "C7": C7, "max_grad4": max4, "f_window": f_int,
             "g_window_bound": g_int, "grad_prev_bound": grad_prev}
    return value, parts


def _derivative_cache(run: Run, window: HypothesisWindow) -> tuple:
    return decay_rhs(run, window), np.array([run.forcing.norm_sq(s) for s in run.t])


def certify_derivative(run: Run, window: HypothesisWindow, tol: float = 0.0) -> BoundCertificate:
    """Derivative window bound at every sample with ``t >= tau + 2h``."""
    _check_window(run, window)
    m = run.n_delay
    if m == 0 or run.t.size <= 2 * m:
        raise InsufficientData("need h > 0 and a run longer than 2h")
    lhs_all = window_integrals(run.t, run.dtv_sq, run.dt, m)
    idx = range(2 * m, run.t.size)
    rhs = []
    last = {}
    cache = _derivative_cache(run, window)
    for i in idx:
        v, last = derivative_radius_sq(run, window, i, _cache=cache)
        rhs.append(v)
    return BoundCertificate("deriv-R2", run.t[2 * m:], lhs_all[2 * m:], rhs, tol, last)


def certify_absorbing(runs: Sequence[Run], window: HypothesisWindow, *, tol: float = 1e-3,
                      eps: float = 0.0) -> BoundCertificate:
    """Endpoint ``E_V^2`` norms of several pullback runs against ``R1(t*)^2``.

    A run is admissible once ``e^{-sigma (t* - tau)} ||x||^2 < tol (R1^2 + eps)``;
    otherwise the verdict is ``inconclusive``.  Admissible runs must satisfy
    ``||(u(t*), u_t*)||^2 <= R1^2 + eps`` and the derivative window bound.
    """
    if not runs:
        raise ConfigurationError("no runs given")
    t_star = runs[0].t[-1]
    for r in runs:
        _check_window(r, window)
        if abs(r.t[-1] - t_star) > 1e-9 * max(1.0, abs(t_star)):
            raise ConfigurationError("runs must share the evaluation time")
        if r.forcing is not runs[0].forcing and r.forcing.kind != runs[0].forcing.kind:
            raise ConfigurationError("runs must share the forcing")
    r1 = absorbing_radius_sq(window, runs[0].forcing, t_star)
    c_init = window.decay_prefactor * (1.0 + math.exp(window.sigma * window.params.h) / window.eta1)
    lhs, rhs, depths, decisive = [], [], [], []
    r2_lhs, r2_rhs = [], []
    for r in runs:
        x0 = ev2_norm_sq(r.initial)
        depth = t_star - r.tau
        decisive.append(math.exp(-window.sigma * depth) * x0 < tol * (r1 + eps))
        lhs.append(ev2_norm_sq(r.final))
        rhs.append(r1 + eps)
        depths.append(depth)
        m = r.n_delay
        if m > 0 and r.t.size > 2 * m:
            r2_lhs.append(window_integrals(r.t, r.dtv_sq, r.dt, m)[-1])
            r2_rhs.append(derivative_radius_sq(r, window, r.t.size - 1)[0])
    lhs, rhs = np.array(lhs), np.array(rhs)
    dec = np.array(decisive)
    r2_ok = all(a <= b for a, b in zip(r2_lhs, r2_rhs))
    if not dec.all():
        verdict = "inconclusive"
    else:
        verdict = "pass" if bool(np.all(lhs <= rhs)) and r2_ok else "fail"
    return BoundCertificate("absorb-R1", np.array(depths), lhs, rhs, 0.0,
                            {"R1_sq": r1, "c_init": c_init, "eps": eps, "depth_tol": tol,
                             "R2_lhs": [float(x) for x in r2_lhs],
                             "R2_rhs": [float(x) for x in r2_rhs],
                             "decisive": [bool(x) for x in dec]},
                            verdict=verdict,
                            notes="times column holds pullback depths t* - tau")


def absorbing_entry_depth(window: HypothesisWindow, forcing, t_star: float, initial_norm_sq: float,
                          tol: float = 1e-3, eps: float = 0.0) -> float:
    """Smallest depth with ``e^{-sigma D} ||x||^2 < tol (R1(t*)^2 + eps)``."""
    r1 = absorbing_radius_sq(window, forcing, t_star) + eps
    if initial_norm_sq <= 0:
        return 0.0
    if r1 <= 0:
        return math.inf
    return max(0.0, math.log(initial_norm_sq / (tol * r1)) / window.sigma)


# --------------------------------------------------------------------------- pairs

def _pair_diff_v_sq(run1: Run, run2: Run) -> np.ndarray:
    if run1.trajectory is None or run2.trajectory is None:
        raise InsufficientData("pair certificates need runs with keep_trajectory")
    if run1.t.shape != run2.t.shape or not np.array_equal(run1.t, run2.t):
        raise ConfigurationError("runs do not share their sample times")
    if run1.grid != run2.grid or run1.n_delay != run2.n_delay:
        raise ConfigurationError("runs differ in grid or delay horizon")
    g = run1.grid
    k2 = g.k2.reshape(-1)[g.retained_index]
    d = run1.trajectory - run2.trajectory
    return ((d.real ** 2 + d.imag ** 2) * k2).sum(axis=(1, 2))


def _check_pair(run1: Run, run2: Run):
    same = (run1.params == run2.params and run1.cfg == run2.cfg and run1.delay == run2.delay
            and run1.forcing.kind == run2.forcing.kind)
    if not same:
        raise ConfigurationError("runs differ in parameters, scheme, delay or forcing")


def contraction_psi(run1: Run, run2: Run, window: HypothesisWindow, tol: float = 0.0):
    """``psi`` and the pair bound ``||U x1 - U x2||^2 <= (1 + 1/eta2) K e^{-sigma(t-tau-h)}||x1 - x2||^2 + psi``.

    ``psi(t) = 2 C1 alpha^-2 (1 + 1/eta2)(1/lambda1 + 1)^3 e^{-sigma(t-h)} int_tau^t
    e^{sigma s} ||grad(u1-u2)||^2 ||grad u2|| ds``; it vanishes identically when the
    runs were integrated without convection.  Returns ``(psi_series, certificate)``.
    """
    _check_pair(run1, run2)
    _check_window(run1, window)
    p = window.params
    m = run1.n_delay
    if run1.t.size <= m:
        raise InsufficientData("pair runs shorter than one delay horizon")
    d2 = _pair_diff_v_sq(run1, run2)
    li, a2 = 1.0 / p.lambda1, p.alpha ** 2
    inv_eta2 = 1.0 / window.eta2
    if run1.cfg.convection:
        c1 = p.C1
        weight = 2.0 * c1 / a2 * (1.0 + inv_eta2) * (li + 1.0) ** 3
        psi = weight * math.exp(window.sigma * run1.h) * damped_integral(
            d2 * np.sqrt(run2.v_sq), run1.dt, window.sigma)
    else:
        c1 = 0.0
        psi = np.zeros_like(d2)
    bg = window.beta + 4.0 * window.cg
    K = 1.0 + li / a2 + (window.cg ** 2 * p.C6 * (li + 1.0) / (a2 * bg) if window.cg > 0 else 0.0)
    h0a, h0b = run1.initial.history, run2.initial.history
    pre = np.array([float(np.sum(((a.coeffs - b.coeffs).real ** 2 + (a.coeffs - b.coeffs).imag ** 2)
                                 * a.grid.k2)) for a, b in zip(h0a.fields, h0b.fields)])
    x_diff = float(pre[-1] + trapezoid_weights(m, run1.dt) @ pre)
    win = window_integrals(run1.t, d2, run1.dt, m)
    lhs = (d2 + win)[m:]
    init = (1.0 + inv_eta2) * K * np.exp(-window.sigma * (run1.t - run1.tau - run1.h)) * x_diff
    rhs = (init + psi)[m:]
    cert = BoundCertificate("contraction", run1.t[m:], lhs, rhs, tol,
                            {"K": K, "eta2": window.eta2, "C1": c1, "initial_diff_sq": x_diff})
    return psi, cert


def certify_lipschitz_in_initial_data(run1: Run, run2: Run, window: Optional[HypothesisWindow] = None,
                                      tol: float = 0.0) -> BoundCertificate:
    """Continuous dependence on the current field for runs sharing the past segment.

    ``||grad w(t)||^2 <= alpha^-2 (1/lambda1 + alpha^2) ||grad w(tau)||^2
    + 2 alpha^-2 (C1 max(||grad u|| + ||grad v||) + C6^{1/2} C_g e^{sigma (t-tau)/2}) int_tau^t ||grad w||^2``
    for ``w = u - v``.  The Gronwall-integrated bound is stored under ``constants``.
    """
    _check_pair(run1, run2)
    h1, h2 = run1.initial.history, run2.initial.history
    for a, b in zip(h1.fields[:-1], h2.fields[:-1]):
        if a is not b and not np.array_equal(a.coeffs, b.coeffs):
            raise ConfigurationError("runs must share the initial history segment")
    p = run1.params
    d2 = _pair_diff_v_sq(run1, run2)
    a2, li = p.alpha ** 2, 1.0 / p.lambda1
    sigma = window.sigma if window is not None else 0.0
    cg = window.cg if window is not None else 0.0
    c1 = p.C1 if run1.cfg.convection else 0.0
    gsum = np.sqrt(run1.v_sq) + np.sqrt(run2.v_sq)
    running_max = np.maximum.accumulate(gsum)
    s = run1.t - run1.tau
    coef = 2.0 / a2 * (c1 * running_max + math.sqrt(p.C6) * cg * np.exp(0.5 * sigma * s))
    integral = np.concatenate([[0.0], np.cumsum(0.5 * run1.dt * (d2[1:] + d2[:-1]))])
    base = (li + a2) / a2 * d2[0]
    rhs = base + coef * integral
    gronwall = base * np.exp(coef * s)
    return BoundCertificate("lipschitz", run1.t, d2, rhs, tol,
                            {"C1": c1, "C_g": cg, "sigma": sigma,
                             "gronwall_rhs": [float(x) for x in gronwall]})


CERTIFICATE_IDS = ("decay", "window", "absorb-R1", "deriv-R2", "contraction",
                   "lipschitz")
