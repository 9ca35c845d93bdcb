"""IMEX time stepping for the Voigt-regularised, delay-forced Navier-Stokes system.

Per retained mode the update solves

    (1 + alpha^2 |k|^2) (u+ - u) / dt + nu |k|^2 u* = R

with ``R = P[f - (u . grad) u] + g(t, u_t)`` explicit and ``u*`` either ``u+``
(``imex_euler``) or ``(u+ + u) / 2`` with a second-order Adams-Bashforth
extrapolation of ``R`` (``imex_cnab2``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .delay import (DelaySpec, HistorySegment, PhysicalParams, ProcessState, _delayed_sample,
                    steps_in, trapezoid_weights)
from .errors import BlowUpError, ConfigurationError, InsufficientData
from .spectral import (Grid, SpectralField, _convection, _project, norm_sq, truncate_modes)

SCHEMES = ("imex_euler", "imex_cnab2")
FORCING_KINDS = ("zero", "constant_field", "time_periodic", "exp_windowed")
BLOWUP_LIMIT = 1e12


# --------------------------------------------------------------------------- forcing

@dataclass(frozen=True, eq=False)
class ForcingSpec:
    """Body force ``f(t)``.

    * ``zero``
    * ``constant_field``: ``F``
    * ``time_periodic``: ``F0 + F1 sin(omega t)``
    * ``exp_windowed``: ``F exp(-gamma |t|)``
    """

    kind: str = "zero"
    fields: tuple = ()
    omega: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        need = {"zero": 0, "constant_field": 1, "time_periodic": 2, "exp_windowed": 1}
        if self.kind not in need:
            raise ConfigurationError(f"unknown forcing kind {self.kind!r}")
        object.__setattr__(self, "fields", tuple(self.fields))
        if len(self.fields) != need[self.kind]:
            raise ConfigurationError(f"{self.kind} forcing takes {need[self.kind]} field(s)")
        if self.kind == "exp_windowed" and not self.gamma > 0:
            raise ConfigurationError("exp_windowed forcing needs gamma > 0")
        if not all(math.isfinite(x) for x in (self.omega, self.gamma)):
            raise ConfigurationError("forcing parameters must be finite")

    @classmethod
    def zero(cls) -> "ForcingSpec":
        return cls()

    @classmethod
    def constant(cls, F: SpectralField) -> "ForcingSpec":
        return cls("constant_field", (F,))

    @classmethod
    def periodic(cls, F0: SpectralField, F1: SpectralField, omega: float) -> "ForcingSpec":
        return cls("time_periodic", (F0, F1), omega=omega)

    @classmethod
    def exp_windowed(cls, F: SpectralField, gamma: float) -> "ForcingSpec":
        return cls("exp_windowed", (F,), gamma=gamma)

    @property
    def autonomous(self) -> bool:
        return self.kind in ("zero", "constant_field")

    def is_zero(self) -> bool:
        return all(F.is_zero() for F in self.fields)

    def _factors(self, t: float) -> tuple:
        if self.kind == "constant_field":
            return (1.0,)
        if self.kind == "time_periodic":
            return (1.0, math.sin(self.omega * t))
        if self.kind == "exp_windowed":
            return (math.exp(-self.gamma * abs(t)),)
        return ()

    def at(self, t: float, grid: Grid) -> Optional[np.ndarray]:
        """Coefficients of ``f(t)``; ``None`` stands for the zero field."""
        if not self.fields:
            return None
        out = None
        for c, F in zip(self._factors(t), self.fields):
            if F.grid != grid:
                raise ConfigurationError("forcing lives on a different grid")
            out = c * F.coeffs if out is None else out + c * F.coeffs
        return out

    def field_at(self, t: float, grid: Grid) -> SpectralField:
        c = self.at(t, grid)
        return SpectralField(grid, np.zeros(grid.coeff_shape, complex) if c is None else c)

    def norm_sq(self, t: float, space: str = "Vdual") -> float:
        if not self.fields:
            return 0.0
        return norm_sq(self.field_at(t, self.fields[0].grid), space)

    def _gram(self, space):
        nsq = norm_sq
        F = self.fields
        if len(F) == 1:
            return nsq(F[0], space), 0.0, 0.0
        a, b = nsq(F[0], space), nsq(F[1], space)
        c = 0.5 * (nsq(F[0] + F[1], space) - a - b)
        return a, b, c

    def damped_energy(self, t: float, sigma: float, start: float = -math.inf,
                      space: str = "Vdual") -> float:
        """``exp(-sigma t) * int_start^t exp(sigma s) ||f(s)||^2 ds`` in closed form."""
        if not sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if start > t:
            raise ConfigurationError("start must not exceed t")
        if self.kind == "zero":
            return 0.0
        total = self._tail(t, sigma, space)
        if start != -math.inf:
            total -= math.exp(-sigma * (t - start)) * self._tail(start, sigma, space)
        return max(total, 0.0)

    def _tail(self, t, sigma, space):
        # exp(-sigma t) * int_{-inf}^t exp(sigma s) ||f(s)||^2 ds
        a, b, c = self._gram(space)
        if self.kind == "constant_field":
            return a / sigma
        if self.kind == "time_periodic":
            w = self.omega
            s1 = (sigma * math.sin(w * t) - w * math.cos(w * t)) / (sigma ** 2 + w ** 2)
            c2 = (sigma * math.cos(2 * w * t) + 2 * w * math.sin(2 * w * t)) / (sigma ** 2 + 4 * w ** 2)
            return a / sigma + 2.0 * c * s1 + 0.5 * b * (1.0 / sigma - c2)
        g2 = 2.0 * self.gamma
        if t <= 0:
            return a * math.exp(g2 * t) / (sigma + g2)
        head = math.exp(-sigma * t) / (sigma + g2)
        if abs(sigma - g2) < 1e-14:
            body = t * math.exp(-sigma * t)
        else:
            body = (math.exp(-g2 * t) - math.exp(-sigma * t)) / (sigma - g2)
        return a * (head + body)

    def sup_norm(self, space: str = "Vdual") -> float:
        """``sup_t ||f(t)||`` in ``space``."""
        if not self.fields:
            return 0.0
        if self.kind == "time_periodic":
            F0, F1 = self.fields
            if self.omega == 0.0:
                return math.sqrt(norm_sq(F0, space))
            return math.sqrt(max(norm_sq(F0 + F1, space), norm_sq(F0 - F1, space)))
        return math.sqrt(norm_sq(self.fields[0], space))

    def map_fields(self, fn: Callable[[SpectralField], SpectralField]) -> "ForcingSpec":
        return replace(self, fields=tuple(fn(F) for F in self.fields))

    def truncated(self, radius: float) -> "ForcingSpec":
        """The same forcing restricted to modes with ``|k| <= radius``."""
        return self.map_fields(lambda F: truncate_modes(F, radius))

    def minus(self, other: "ForcingSpec") -> "ForcingSpec":
        if (self.kind, self.omega, self.gamma) != (other.kind, other.omega, other.gamma):
            raise ConfigurationError("forcings differ in kind or parameters")
        return replace(self, fields=tuple(a - b for a, b in zip(self.fields, other.fields)))


# --------------------------------------------------------------------------- stepping

@dataclass(frozen=True)
class StepperConfig:
    """Step size, scheme and integration interval."""

    dt: float
    scheme: str = "imex_cnab2"
    t_start: float = 0.0
    t_end: float = 0.0
    convection: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.t_end < self.t_start:
            raise ConfigurationError("t_end precedes t_start")

    def check_horizon(self, h: float) -> int:
        return steps_in(h, self.dt, "h")


@lru_cache(maxsize=32)
def _mode_factors(grid: Grid, nu: float, alpha: float, dt: float) -> dict:
    M = 1.0 + alpha ** 2 * grid.k2
    L = nu * grid.k2
    return {
        "M": M,
        "euler": 1.0 / (M + dt * L),
        "cn_num": M - 0.5 * dt * L,
        "cn_den": 1.0 / (M + 0.5 * dt * L),
    }


def amplification_factor(k2, nu: float, alpha: float, dt: float, scheme: str):
    """Per-mode multiplier of the linear (``f = g = 0``, no convection) update."""
    M = 1.0 + alpha ** 2 * np.asarray(k2, dtype=float)
    L = nu * np.asarray(k2, dtype=float)
    if scheme == "imex_euler":
        return M / (M + dt * L)
    return (M - 0.5 * dt * L) / (M + 0.5 * dt * L)


def explicit_rhs(state: ProcessState, f: ForcingSpec, g: DelaySpec, cfg: StepperConfig, *,
                 delay_history: Optional[HistorySegment] = None,
                 convection: Optional[bool] = None) -> np.ndarray:
    """Projected explicit right-hand side at the state's time.

    ``delay_history`` evaluates the delay term on another trajectory's segment.
    """
    grid = state.grid
    t = state.t
    raw = f.at(t, grid)
    raw = np.zeros(grid.coeff_shape, dtype=np.complex128) if raw is None else np.array(raw)
    if g.gain != 0.0:
        hist = state.history if delay_history is None else delay_history
        raw += g.gain * _delayed_sample(g, t, hist)
    conv = cfg.convection if convection is None else convection
    if conv and not state.u.is_zero():
        raw -= _convection(state.u.coeffs, state.u.coeffs, grid)
    return _project(raw, grid)


def advance(state: ProcessState, rhs: np.ndarray, cfg: StepperConfig,
            params: PhysicalParams) -> ProcessState:
    """One step given the explicit right-hand side at the current time."""
    if cfg.dt != state.dt:
        raise ConfigurationError(f"config dt={cfg.dt} differs from state dt={state.dt}")
    fac = _mode_factors(state.grid, params.nu, params.alpha, cfg.dt)
    u = state.u.coeffs
    if cfg.scheme == "imex_euler" or state.prev_rhs is None:
        new = (fac["M"] * u + cfg.dt * rhs) * fac["euler"]
    else:
        new = (fac["cn_num"] * u + cfg.dt * (1.5 * rhs - 0.5 * state.prev_rhs)) * fac["cn_den"]
    t_new = (state.step + 1) * cfg.dt
    if not np.all(np.isfinite(new)):
        raise BlowUpError(t_new, "non-finite coefficient")
    if np.abs(new).max(initial=0.0) > BLOWUP_LIMIT:
        raise BlowUpError(t_new, f"coefficient magnitude above {BLOWUP_LIMIT:g}")
    keep = rhs if cfg.scheme == "imex_cnab2" else None
    return ProcessState(state.history.append(SpectralField(state.grid, new)), keep)


def step(state: ProcessState, f: ForcingSpec, g: DelaySpec, cfg: StepperConfig,
         params: PhysicalParams) -> ProcessState:
    """Advance ``(u(t), u_t)`` by one ``dt``."""
    return advance(state, explicit_rhs(state, f, g, cfg), cfg, params)


def energy_residual(before: ProcessState, after: ProcessState, rhs: np.ndarray,
                    cfg: StepperConfig, params: PhysicalParams) -> float:
    """Relative imbalance of the scheme's discrete energy identity over one step.

    With ``E = ||u||^2 + alpha^2 ||grad u||^2`` the Crank-Nicolson step satisfies
    ``(E+ - E) / (2 dt) + nu ||grad ubar||^2 = (R*, ubar)`` with ``ubar`` the
    midpoint; the Euler step carries the extra dissipation ``||u+ - u||_M^2 / (2 dt)``
    and pairs with ``u+``.
    """
    fac = _mode_factors(before.grid, params.nu, params.alpha, cfg.dt)
    M, k2, dt = fac["M"], before.grid.k2, cfg.dt
    u0, u1 = before.u.coeffs, after.u.coeffs

    def q(w, a, b):
        return float(np.sum(w * (a.real * b.real + a.imag * b.imag)))

    E0, E1 = q(M, u0, u0), q(M, u1, u1)
    if cfg.scheme == "imex_euler" or before.prev_rhs is None:
        d = u1 - u0
        lhs = (E1 - E0 + q(M, d, d)) / (2 * dt) + params.nu * q(k2, u1, u1)
        rhs_val = q(1.0, rhs, u1)
    else:
        ub = 0.5 * (u0 + u1)
        rstar = 1.5 * rhs - 0.5 * before.prev_rhs
        lhs = (E1 - E0) / (2 * dt) + params.nu * q(k2, ub, ub)
        rhs_val = q(1.0, rstar, ub)
    scale = max(abs(E1 - E0) / (2 * dt), abs(lhs), abs(rhs_val), np.finfo(float).tiny)
    return abs(lhs - rhs_val) / scale


# --------------------------------------------------------------------------- runs

@dataclass(eq=False)
class Run:
    """Trajectory artifact: energy record, end states and optional compact fields."""

    params: PhysicalParams
    forcing: ForcingSpec
    delay: DelaySpec
    cfg: StepperConfig
    initial: ProcessState
    final: ProcessState
    t: np.ndarray
    h_sq: np.ndarray
    v_sq: np.ndarray
    da_sq: np.ndarray
    dtv_sq: np.ndarray
    energy_residual: np.ndarray
    trajectory: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def tau(self) -> float:
        return self.initial.t

    @property
    def grid(self) -> Grid:
        return self.initial.grid

    @property
    def n_delay(self) -> int:
        return self.initial.history.n_delay

    @property
    def h(self) -> float:
        return self.initial.history.h

    @property
    def dt(self) -> float:
        return self.cfg.dt

    def field(self, i: int) -> SpectralField:
        """Stored field at sample ``i`` (requires ``keep_trajectory``)."""
        if self.trajectory is None:
            raise InsufficientData("run was integrated without keep_trajectory")
        return SpectralField.from_compact(self.grid, self.trajectory[i])

    def extended_v_sq(self) -> tuple:
        """``(times, ||grad u||^2)`` including the initial segment before ``tau``."""
        hist = self.initial.history
        t = np.concatenate([hist.times()[:-1], self.t])
        v = np.concatenate([hist.v_norms_sq()[:-1], self.v_sq])
        return t, v

    def record_rows(self) -> np.ndarray:
        return np.column_stack([self.t, self.h_sq, self.v_sq, self.da_sq, self.dtv_sq])


def _norms(u: SpectralField) -> tuple:
    return norm_sq(u, "H"), norm_sq(u, "V"), norm_sq(u, "DA")


def simulate(state: ProcessState, t_end: float, f: ForcingSpec, g: DelaySpec,
             cfg: StepperConfig, params: PhysicalParams, *, keep_trajectory: bool = False,
             check_energy: bool = False, rhs_fn=None) -> Run:
    """Integrate from the state's time to ``t_end`` and record the energy series.

    ``rhs_fn(state) -> coefficients`` replaces :func:`explicit_rhs` when given.
    """
    n = steps_in(t_end - state.t, cfg.dt, "t_end - t")
    if n < 0:
        raise ConfigurationError("t_end precedes the state's time")
    if state.dt != cfg.dt:
        raise ConfigurationError(f"config dt={cfg.dt} differs from state dt={state.dt}")
    if abs(state.history.h - params.h) > 1e-12 * max(1.0, params.h):
        raise ConfigurationError("history horizon differs from params.h")
    stats = np.empty((n + 1, 3))
    dtv = np.zeros(n + 1)
    resid = np.zeros(n + 1)
    traj = np.empty((n + 1, state.grid.dim, state.grid.n_retained), complex) if keep_trajectory else None
    stats[0] = _norms(state.u)
    if keep_trajectory:
        traj[0] = state.u.compact()
    start = state
    cur = state
    for i in range(1, n + 1):
        rhs = explicit_rhs(cur, f, g, cfg) if rhs_fn is None else rhs_fn(cur)
        nxt = advance(cur, rhs, cfg, params)
        if check_energy:
            resid[i] = energy_residual(cur, nxt, rhs, cfg, params)
        dtv[i] = norm_sq(nxt.u - cur.u, "V") / cfg.dt ** 2
        stats[i] = _norms(nxt.u)
        if keep_trajectory:
            traj[i] = nxt.u.compact()
        cur = nxt
    if n >= 1:
        dtv[0] = dtv[1]
    t = (state.step + np.arange(n + 1)) * cfg.dt
    return Run(params, f, g, cfg, start, cur, t, stats[:, 0], stats[:, 1], stats[:, 2], dtv,
               resid, traj)


def evolve(state: ProcessState, t: float, f: ForcingSpec, g: DelaySpec, cfg: StepperConfig,
           params: PhysicalParams) -> ProcessState:
    """``U(t, tau)`` applied to the state at ``tau``; no record is kept."""
    n = steps_in(t - state.t, cfg.dt, "t - tau")
    if n < 0:
        raise ConfigurationError("t precedes the state's time")
    if state.dt != cfg.dt:
        raise ConfigurationError(f"config dt={cfg.dt} differs from state dt={state.dt}")
    for _ in range(n):
        state = step(state, f, g, cfg, params)
    return state


def time_derivative_series(run: Run) -> np.ndarray:
    """``||grad d_t u||`` per sample from difference quotients of consecutive steps."""
    if run.t.size < 2:
        raise InsufficientData("need at least two consecutive steps")
    return np.sqrt(run.dtv_sq)


def window_integrals(t: np.ndarray, values: np.ndarray, dt: float, n_window: int) -> np.ndarray:
    """Trapezoid integrals of ``values`` over ``[t_i - n_window dt, t_i]`` for ``i >= n_window``."""
    if n_window == 0:
        return np.zeros(values.size)
    c = np.concatenate([[0.0], np.cumsum(0.5 * dt * (values[1:] + values[:-1]))])
    out = np.full(values.size, np.nan)
    out[n_window:] = c[n_window:] - c[:-n_window]
    return out


__all__ = ["ForcingSpec", "StepperConfig", "Run", "step", "advance", "explicit_rhs", "evolve",
           "simulate", "time_derivative_series", "energy_residual", "amplification_factor",
           "window_integrals", "trapezoid_weights", "SCHEMES"]
