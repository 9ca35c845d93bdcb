"""Time-averaged empirical measures along pullback trajectories.

For a map ``rho: s -> state`` and a window ``[tau, t]`` the empirical measure
puts trapezoid weight on the states ``U(t, s) rho(s)``, ``s`` on the stride grid,
so that integrating a functional against it reproduces the trapezoid time
average ``(t - tau)^-1 int_tau^t Phi(U(t, s) rho(s)) ds``.

With ``richardson=True`` only the older half ``[tau, (tau + t)/2]`` is kept.  This
is ``2 A(D) - A(D/2)`` for the plain averages ``A`` over depths ``D`` and ``D/2``:
the weights stay positive while the ``O(1/D)`` transient of the Cesaro mean
cancels, leaving the exponentially small memory of the initial states.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .delay import (DelaySpec, HistorySegment, PhysicalParams, ProcessState, ev2_norm_sq, steps_in,
                    trapezoid_weights)
from .errors import BlowUpError, ConfigurationError, DomainError
from .spectral import SpectralField, norm_sq
from .stepper import ForcingSpec, StepperConfig, evolve, step


# --------------------------------------------------------------------------- functionals

@dataclass(frozen=True)
class Functional:
    """Real-valued observable of a state."""

    id: str
    rule: Callable = field(compare=False, repr=False)
    bounded_by: str = ""

    def __call__(self, state: ProcessState) -> float:
        return float(self.rule(state))

    def compose(self, fn: Callable[[float], float], new_id: str) -> "Functional":
        return Functional(new_id, lambda s: fn(self.rule(s)), self.bounded_by)

    @staticmethod
    def combine(a: float, phi: "Functional", b: float, psi: "Functional") -> "Functional":
        return Functional(f"{a}*{phi.id}+{b}*{psi.id}", lambda s: a * phi.rule(s) + b * psi.rule(s))


def _mode_functional(fid: str, comp: int, idx: tuple, part: str) -> Functional:
    def rule(state):
        g = state.grid
        if len(idx) != g.dim or not 0 <= comp < g.dim:
            raise ConfigurationError(f"{fid} does not match a {g.dim}-d grid")
        if max(abs(i) for i in idx) > g.kmax:
            raise ConfigurationError(f"{fid} addresses a non-retained mode")
        c = state.u.coeffs[(comp,) + tuple(i % g.n for i in idx)]
        return c.real if part == "re" else c.imag
    return Functional(fid, rule, "|u_k| <= ||u||")


BUILTIN = {
    "one": Functional("one", lambda s: 1.0, "constant"),
    "h_sq": Functional("h_sq", lambda s: norm_sq(s.u, "H"), "lambda1^-1 ||x||^2"),
    "v_sq": Functional("v_sq", lambda s: norm_sq(s.u, "V"), "||x||^2"),
    "ev2_sq": Functional("ev2_sq", ev2_norm_sq, "||x||^2"),
}

_MODE = re.compile(r"^mode:(\d+):(-?\d+(?:,-?\d+)*):(re|im)$")


def functional(fid: str) -> Functional:
    """Built-in by id: ``one``, ``h_sq``, ``v_sq``, ``ev2_sq`` or ``mode:<comp>:<k1,k2[,k3]>:<re|im>``."""
    if fid in BUILTIN:
        return BUILTIN[fid]
    m = _MODE.match(fid)
    if m is None:
        raise ConfigurationError(f"unknown functional {fid!r}")
    comp = int(m.group(1))
    idx = tuple(int(x) for x in m.group(2).split(","))
    return _mode_functional(fid, comp, idx, m.group(3))


def constant_rho(u0: SpectralField, phi=None) -> Callable:
    """``rho(s) = (u0, phi)`` for every ``s``."""
    def rho(s, dt, h):
        return ProcessState.initial(u0, phi, dt=dt, h=h, tau=s)
    rho.constant = True
    return rho


# --------------------------------------------------------------------------- measures

@dataclass
class EmpiricalMeasure:
    """Weighted states at time ``t`` built from the window ``[tau, t]``."""

    t: float
    raw_weights: np.ndarray
    states: list
    window: tuple
    stride: int = 1
    richardson: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.raw_weights = np.asarray(self.raw_weights, dtype=float)
        if self.raw_weights.size != len(self.states) or not self.states:
            raise ConfigurationError("weights and states differ in number or are empty")
        if np.any(self.raw_weights < 0) or not self.raw_weights.sum() > 0:
            raise DomainError("weights must be non-negative with positive sum")

    @property
    def weights(self) -> np.ndarray:
        return self.raw_weights / self.raw_weights.sum()

    @property
    def depth(self) -> float:
        return self.window[1] - self.window[0]

    def integrate(self, phi: Functional) -> float:
        values = np.array([phi(s) for s in self.states])
        return integrate_values(self.raw_weights, values)

    def support_norms_sq(self) -> np.ndarray:
        return np.array([ev2_norm_sq(s) for s in self.states])


def integrate_values(raw_weights: np.ndarray, values: np.ndarray) -> float:
    # dividing by the same sum keeps constant functionals exact
    return float(np.dot(raw_weights, values) / raw_weights.sum())


def _sample_steps(tau: float, t: float, dt: float, stride: int, richardson: bool) -> tuple:
    n = steps_in(t - tau, dt, "t - tau")
    if n < 0:
        raise ConfigurationError("tau must not exceed t")
    if stride < 1 or n % stride:
        raise ConfigurationError(f"stride {stride} does not divide the {n} window steps")
    m = n // stride
    j0 = steps_in(tau, dt, "tau")
    if richardson:
        if m % 2:
            raise ConfigurationError("the half-window average needs an even number of samples")
        m //= 2
    offsets = np.arange(m + 1) * stride
    w = trapezoid_weights(m, stride * dt) if m > 0 else np.ones(1)
    return j0 + offsets, w


def _shift_cacheable(f: ForcingSpec, rho, shift: float) -> bool:
    if not getattr(rho, "constant", False):
        return False
    if f.autonomous:
        return True
    if f.kind == "time_periodic" and f.omega != 0.0:
        q = shift * f.omega / (2 * math.pi)
        return abs(q - round(q)) < 1e-12 * max(1.0, abs(q))
    return False


def build_measure(t: float, rho, tau: float, stride: int, f: ForcingSpec, g: DelaySpec,
                  cfg: StepperConfig, params: PhysicalParams, *, richardson: bool = False,
                  use_cache: bool = True) -> EmpiricalMeasure:
    """Empirical measure of ``{U(t, s) rho(s)}`` over the stride grid of ``[tau, t]``.

    When the forcing is invariant under shifts by ``stride * dt`` and ``rho`` is
    constant, all samples come from one trajectory started at ``tau``:
    ``U(t, tau + j P) x = U(t - j P, tau) x``.
    """
    dt = cfg.dt
    steps, w = _sample_steps(tau, t, dt, stride, richardson)
    t_step = steps_in(t, dt, "t")
    states = []
    try:
        if use_cache and len(steps) > 1 and _shift_cacheable(f, rho, stride * dt):
            first = int(steps[0])
            need = sorted({t_step - (int(s) - first) for s in steps})
            cur = rho(first * dt, dt, params.h)
            found = {}
            for target in need:
                while cur.step < target:
                    cur = step(cur, f, g, cfg, params)
                found[target] = cur
            states = [_retime(found[t_step - (int(s) - first)], t_step) for s in steps]
        else:
            for s in steps:
                states.append(evolve(rho(int(s) * dt, dt, params.h), t, f, g, cfg, params))
    except BlowUpError as exc:
        raise BlowUpError(exc.t, "inner evolution blew up") from exc
    return EmpiricalMeasure(t, w, states, (tau, t), stride, richardson,
                            {"cached": bool(states) and use_cache})


def _retime(state: ProcessState, t_step: int) -> ProcessState:
    if state.step == t_step:
        return state
    hist = state.history
    return ProcessState(HistorySegment(hist.dt, t_step, hist.fields), state.prev_rhs)


def time_average(phi: Functional, rho, tau: float, t: float, f: ForcingSpec, g: DelaySpec,
                 cfg: StepperConfig, params: PhysicalParams, *, stride: int = 1,
                 richardson: bool = False, use_cache: bool = True) -> float:
    """Trapezoid average of ``phi(U(t, s) rho(s))`` over ``s in [tau, t]``."""
    mu = build_measure(t, rho, tau, stride, f, g, cfg, params, richardson=richardson,
                       use_cache=use_cache)
    return mu.integrate(phi)


def push_forward(mu: EmpiricalMeasure, t: float, f: ForcingSpec, g: DelaySpec,
                 cfg: StepperConfig, params: PhysicalParams) -> EmpiricalMeasure:
    """``U(t, mu.t)`` applied to every sample; weights unchanged."""
    states = [evolve(s, t, f, g, cfg, params) for s in mu.states]
    return EmpiricalMeasure(t, mu.raw_weights, states, mu.window, mu.stride, mu.richardson,
                            {"pushed_from": mu.t})


def invariance_residual(mu_tau: EmpiricalMeasure, t: float, phis: Sequence[Functional], rho,
                        f: ForcingSpec, g: DelaySpec, cfg: StepperConfig,
                        params: PhysicalParams, *, use_cache: bool = True) -> dict:
    """``|int phi d mu_t - int phi o U(t, tau) d mu_tau|`` per functional.

    ``mu_t`` is rebuilt at time ``t`` with the same depth, stride and averaging mode.
    """
    if t < mu_tau.t:
        raise ConfigurationError("t must not precede the measure's time")
    pushed = push_forward(mu_tau, t, f, g, cfg, params)
    mu_t = build_measure(t, rho, t - mu_tau.depth, mu_tau.stride, f, g, cfg, params,
                         richardson=mu_tau.richardson, use_cache=use_cache)
    out = {}
    for phi in phis:
        out[phi.id] = abs(mu_t.integrate(phi) - pushed.integrate(phi))
    return out


def depth_doubling_table(phis: Sequence[Functional], rho, tau_measure: float, t: float,
                         base_depth: float, doublings: int, stride: int, f: ForcingSpec,
                         g: DelaySpec, cfg: StepperConfig, params: PhysicalParams, *,
                         richardson: bool = True) -> list:
    """Rows ``(phi id, depth, value of int phi d mu_tau, residual)`` for depths ``D 2^i``."""
    rows = []
    for i in range(doublings + 1):
        depth = base_depth * 2 ** i
        mu = build_measure(tau_measure, rho, tau_measure - depth, stride * 2 ** i, f, g, cfg,
                           params, richardson=richardson)
        res = invariance_residual(mu, t, phis, rho, f, g, cfg, params)
        for phi in phis:
            rows.append((phi.id, depth, mu.integrate(phi), res[phi.id]))
    return rows
