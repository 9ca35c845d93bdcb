"""Solution segments, delay terms and the admissible-constant windows.

Time is indexed by an integer step counter: a state at step ``j`` lives at
``t = j * dt``.  A :class:`HistorySegment` holds the ``n_delay + 1`` fields at
steps ``j - n_delay, ..., j`` so the horizon is ``h = n_delay * dt`` exactly and
the discrete delay never interpolates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, InfeasibleHypotheses
from .spectral import (EmbeddingConstants, Grid, SpectralField, _hermitian, _project,
                       _to_physical, _to_spectral, norm_sq, zeros)

STEP_TOL = 1e-9


def steps_in(duration: float, dt: float, what: str = "duration") -> int:
    """``duration / dt`` as an int, refusing anything that is not an integer multiple."""
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    q = duration / dt
    j = int(round(q))
    if abs(q - j) > STEP_TOL * max(1.0, abs(q)):
        raise ConfigurationError(f"{what}={duration} is not an integer multiple of dt={dt}")
    return j


def trapezoid_weights(m: int, dt: float) -> np.ndarray:
    """Composite trapezoid weights for ``m + 1`` equispaced samples."""
    w = np.full(m + 1, dt)
    if m == 0:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * dt
    return w


# --------------------------------------------------------------------------- history

@dataclass(frozen=True, eq=False)
class HistorySegment:
    """Fields at steps ``step - n_delay .. step``, oldest first."""

    dt: float
    step: int
    fields: tuple

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if len(self.fields) < 1:
            raise ConfigurationError("a history needs at least one slot")
        object.__setattr__(self, "fields", tuple(self.fields))
        grid = self.fields[0].grid
        for f in self.fields:
            if f.grid != grid:
                raise ConfigurationError("history slots live on different grids")

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    @property
    def n_delay(self) -> int:
        return len(self.fields) - 1

    @property
    def h(self) -> float:
        return self.n_delay * self.dt

    @property
    def t(self) -> float:
        return self.step * self.dt

    @property
    def newest(self) -> SpectralField:
        return self.fields[-1]

    @property
    def oldest(self) -> SpectralField:
        return self.fields[0]

    def times(self) -> np.ndarray:
        return np.arange(self.step - self.n_delay, self.step + 1) * self.dt

    def slots(self):
        """``(time, field)`` pairs, oldest first."""
        return list(zip(self.times().tolist(), self.fields))

    def lag(self, j: int) -> SpectralField:
        """Field ``j`` steps in the past (``lag(0)`` is the newest)."""
        if not 0 <= j <= self.n_delay:
            raise DomainError(f"lag {j} outside [0, {self.n_delay}]")
        return self.fields[self.n_delay - j]

    def append(self, u: SpectralField) -> "HistorySegment":
        """Roll the window forward one step, ``u`` becoming the newest slot."""
        if u.grid != self.grid:
            raise ConfigurationError("appended field lives on a different grid")
        return HistorySegment(self.dt, self.step + 1, self.fields[1:] + (u,))

    def v_norms_sq(self) -> np.ndarray:
        return np.array([norm_sq(f, "V") for f in self.fields])

    def integral_v_sq(self) -> float:
        """Trapezoid value of ``int_{-h}^0 ||grad phi||^2``."""
        return float(trapezoid_weights(self.n_delay, self.dt) @ self.v_norms_sq())

    @classmethod
    def constant(cls, u: SpectralField, dt: float, h: float, step: int = 0) -> "HistorySegment":
        return cls(dt, step, (u,) * (steps_in(h, dt, "h") + 1))

    @classmethod
    def zero(cls, grid: Grid, dt: float, h: float, step: int = 0) -> "HistorySegment":
        return cls.constant(zeros(grid), dt, h, step)

    @classmethod
    def from_function(cls, fn: Callable[[float], SpectralField], dt: float, h: float,
                      step: int = 0) -> "HistorySegment":
        """Sample ``theta -> phi(theta)`` on the slot offsets ``theta in [-h, 0]``."""
        m = steps_in(h, dt, "h")
        return cls(dt, step, tuple(fn((j - m) * dt) for j in range(m + 1)))


def history_eval(history: HistorySegment, theta: float) -> SpectralField:
    """``u(t + theta)`` for ``theta in [-h, 0]``; linear between slots."""
    h = history.h
    if not -h - STEP_TOL * max(1.0, h) <= theta <= 0.0:
        raise DomainError(f"theta={theta} outside [-{h}, 0]")
    q = (theta + h) / history.dt
    j = int(round(q))
    if abs(q - j) <= STEP_TOL * max(1.0, abs(q)):
        return history.fields[min(max(j, 0), history.n_delay)]
    lo = int(math.floor(q))
    frac = q - lo
    a, b = history.fields[lo], history.fields[lo + 1]
    return SpectralField(a.grid, (1.0 - frac) * a.coeffs + frac * b.coeffs)


# --------------------------------------------------------------------------- states

@dataclass(frozen=True, eq=False)
class ProcessState:
    """Current field, solution segment and the multistep scheme phase.

    ``prev_rhs`` holds the explicit right-hand side of the previous step when the
    stepper is mid-way through a two-step scheme; ``None`` forces a restart.
    """

    history: HistorySegment
    prev_rhs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.prev_rhs is not None and self.prev_rhs.flags.writeable:
            r = np.array(self.prev_rhs)
            r.flags.writeable = False
            object.__setattr__(self, "prev_rhs", r)

    @property
    def u(self) -> SpectralField:
        return self.history.newest

    @property
    def step(self) -> int:
        return self.history.step

    @property
    def dt(self) -> float:
        return self.history.dt

    @property
    def t(self) -> float:
        return self.history.t

    @property
    def grid(self) -> Grid:
        return self.history.grid

    @classmethod
    def initial(cls, u0: SpectralField, phi: Optional[HistorySegment] = None, *, dt: float,
                h: float, tau: float = 0.0) -> "ProcessState":
        """State ``(u_tau, phi)`` at time ``tau``; ``phi`` defaults to the constant segment.

        The newest slot of ``phi`` is replaced by ``u0`` so the pair is consistent.
        """
        step = steps_in(tau, dt, "tau")
        if phi is None:
            return cls(HistorySegment.constant(u0, dt, h, step))
        if phi.dt != dt or phi.n_delay != steps_in(h, dt, "h"):
            raise ConfigurationError("initial history does not match dt and h")
        return cls(HistorySegment(dt, step, phi.fields[:-1] + (u0,)))

    def with_history(self, history: HistorySegment) -> "ProcessState":
        return ProcessState(history, None)


def ev2_norm_sq(state: ProcessState) -> float:
    """``||grad u||^2 + int_{-h}^0 ||grad u(t+s)||^2 ds``."""
    value = norm_sq(state.u, "V") + state.history.integral_v_sq()
    if not math.isfinite(value):
        raise DomainError("state norm is not finite")
    return value


def ev2_distance_sq(a: ProcessState, b: ProcessState) -> float:
    if a.history.n_delay != b.history.n_delay or a.dt != b.dt:
        raise ConfigurationError("states have different history layouts")
    w = trapezoid_weights(a.history.n_delay, a.dt)
    diffs = np.array([norm_sq(x - y, "V") for x, y in zip(a.history.fields, b.history.fields)])
    return float(diffs[-1] + w @ diffs)


# --------------------------------------------------------------------------- delay terms

POINTWISE_MAPS = {
    "identity": (None, 1.0),
    "tanh": (np.tanh, 1.0),
    "sin": (np.sin, 1.0),
}

DELAY_KINDS = ("discrete", "variable", "distributed")


@dataclass(frozen=True)
class DelaySpec:
    """Delay term ``kappa * G(u(t - h))`` and its variable and distributed relatives.

    ``tau`` gives the variable lag as ``(mean, amplitude, omega)`` meaning
    ``mean + amplitude * sin(omega * t)``; ``tau_fn`` overrides it with an arbitrary
    callable, in which case ``tau_rate_max`` must bound its derivative.  ``kernel``
    holds density samples on a uniform grid of ``[-h, 0]`` (oldest first).
    """

    kind: str = "discrete"
    gain: float = 0.0
    pointwise: str = "identity"
    tau: Optional[tuple] = None
    tau_fn: Optional[Callable[[float], float]] = field(default=None, compare=False)
    tau_rate_max: Optional[float] = None
    kernel: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ConfigurationError(f"unknown delay kind {self.kind!r}")
        if self.pointwise not in POINTWISE_MAPS:
            raise ConfigurationError(f"unknown pointwise map {self.pointwise!r}")
        if not math.isfinite(self.gain):
            raise ConfigurationError("delay gain must be finite")
        if self.kind == "variable":
            if self.tau_fn is None and self.tau is None:
                raise ConfigurationError("variable delay needs tau or tau_fn")
            if self.tau is not None:
                object.__setattr__(self, "tau", tuple(float(x) for x in self.tau))
                if len(self.tau) != 3:
                    raise ConfigurationError("tau must be (mean, amplitude, omega)")
            if self.tau_fn is not None and self.tau_rate_max is None:
                raise ConfigurationError("tau_fn needs tau_rate_max")
            if self.rate_max() >= 1.0:
                raise ConfigurationError("variable delay must satisfy sup tau' < 1")
        if self.kind == "distributed":
            if self.kernel is None or len(self.kernel) < 2:
                raise ConfigurationError("distributed delay needs at least two kernel samples")
            k = tuple(float(x) for x in self.kernel)
            if min(k) < 0 or not all(math.isfinite(x) for x in k):
                raise ConfigurationError("kernel samples must be finite and non-negative")
            object.__setattr__(self, "kernel", k)

    @property
    def lipschitz_G(self) -> float:
        return POINTWISE_MAPS[self.pointwise][1]

    def tau_at(self, t: float) -> float:
        if self.tau_fn is not None:
            return float(self.tau_fn(t))
        mean, amp, omega = self.tau
        return mean + amp * math.sin(omega * t)

    def rate_max(self) -> float:
        """Bound on ``tau'`` (zero for the non-variable kinds)."""
        if self.kind != "variable":
            return 0.0
        if self.tau_rate_max is not None:
            return float(self.tau_rate_max)
        _, amp, omega = self.tau
        return abs(amp * omega)

    def kernel_mass(self, h: float) -> float:
        """Trapezoid mass of the kernel samples over ``[-h, 0]``."""
        k = np.asarray(self.kernel)
        return float(trapezoid_weights(k.size - 1, h / (k.size - 1)) @ k) if h > 0 else 0.0

    def kernel_on(self, history: HistorySegment) -> np.ndarray:
        """Kernel density at the slot offsets, interpolated when grids differ."""
        k = np.asarray(self.kernel)
        if k.size == history.n_delay + 1:
            return k
        src = np.linspace(-history.h, 0.0, k.size)
        return np.interp(history.times() - history.t, src, k)

    @classmethod
    def point_mass(cls, gain: float, n_delay: int, dt: float, pointwise: str = "identity") -> "DelaySpec":
        """Distributed kernel whose trapezoid rule puts unit mass on ``theta = -h``."""
        k = np.zeros(n_delay + 1)
        k[0] = 2.0 / dt
        return cls(kind="distributed", gain=gain, pointwise=pointwise, kernel=tuple(k))

    def to_dict(self) -> dict:
        if self.tau_fn is not None:
            raise ConfigurationError("a callable tau_fn cannot be serialised")
        out = {"kind": self.kind, "gain": self.gain, "pointwise": self.pointwise}
        if self.tau is not None:
            out["tau"] = list(self.tau)
        if self.tau_rate_max is not None:
            out["tau_rate_max"] = self.tau_rate_max
        if self.kernel is not None:
            out["kernel"] = list(self.kernel)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DelaySpec":
        known = {"kind", "gain", "pointwise", "tau", "tau_rate_max", "kernel"}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown delay keys {sorted(extra)}")
        d = dict(d)
        for key in ("tau", "kernel"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def apply_pointwise(name: str, u: SpectralField) -> np.ndarray:
    """Raw (unprojected) coefficients of ``G(u)`` evaluated componentwise on the grid."""
    fn = POINTWISE_MAPS[name][0]
    if fn is None:
        return np.array(u.coeffs)
    g = u.grid
    return _hermitian(_to_spectral(fn(_to_physical(u.coeffs, g)), g), g.axes)


def _delayed_sample(spec: DelaySpec, t: float, history: HistorySegment) -> np.ndarray:
    if spec.kind == "discrete":
        return apply_pointwise(spec.pointwise, history.oldest)
    if spec.kind == "variable":
        lag = spec.tau_at(t)
        h = history.h
        if not -STEP_TOL <= lag <= h + STEP_TOL * max(1.0, h):
            raise DomainError(f"tau({t})={lag} outside [0, {h}]")
        return apply_pointwise(spec.pointwise, history_eval(history, -min(max(lag, 0.0), h)))
    w = trapezoid_weights(history.n_delay, history.dt) * spec.kernel_on(history)
    acc = np.zeros(history.grid.coeff_shape, dtype=np.complex128)
    for wj, fj in zip(w, history.fields):
        if wj != 0.0:
            acc += wj * apply_pointwise(spec.pointwise, fj)
    return acc


def delay_g(spec: DelaySpec, t: float, history: HistorySegment) -> SpectralField:
    """``g(t, u_t)`` as a valid field."""
    grid = history.grid
    if spec.gain == 0.0:
        return zeros(grid)
    raw = spec.gain * _delayed_sample(spec, t, history)
    return SpectralField(grid, _project(raw, grid))


def lipschitz_bound(spec: DelaySpec, lambda1: float = 1.0, h: Optional[float] = None) -> float:
    """``L_g`` with ``||g(xi) - g(mu)|| <= L_g sup_theta ||grad(xi - mu)(theta)||``.

    The pointwise map is ``L_G``-Lipschitz in ``L^2``, projection and truncation
    are ``L^2`` contractions and ``||w|| <= lambda1^{-1/2} ||grad w||``.
    """
    base = abs(spec.gain) * spec.lipschitz_G / math.sqrt(lambda1)
    if spec.kind == "distributed":
        if h is None:
            raise ConfigurationError("the distributed bound needs the horizon h")
        base *= spec.kernel_mass(h)
    return base


def delay_integral_constant(spec: DelaySpec, sigma: float, h: float, lambda1: float = 1.0) -> float:
    """``C_g`` in ``int e^{sigma s}||g(u_s)-g(v_s)||^2 <= C_g^2 int_{tau-h} e^{sigma s}||u-v||_V^2``.

    Shifting the delayed argument costs ``e^{sigma h}``; the variable lag adds the
    Jacobian ``1 / (1 - sup tau')`` of ``s -> s - tau(s)``.
    """
    lg = lipschitz_bound(spec, lambda1, h)
    c = lg * math.exp(0.5 * sigma * h)
    if spec.kind == "variable":
        c /= math.sqrt(1.0 - spec.rate_max())
    return c


def delay_integral_certificate(spec: DelaySpec, runs_u, runs_v, sigma: float, cg: float) -> tuple:
    """Evaluate both sides of the delay-integral bound along a pair of state sequences.

    ``runs_u`` and ``runs_v`` are equal-length lists of :class:`ProcessState` on a
    common step grid.  Returns ``(lhs, rhs)``; the pre-history is taken from the
    first state's segment.
    """
    if len(runs_u) != len(runs_v) or not runs_u:
        raise ConfigurationError("state sequences must be non-empty and of equal length")
    dt = runs_u[0].dt
    m = len(runs_u) - 1
    times = np.array([s.t for s in runs_u])
    gdiff = np.array([norm_sq(delay_g(spec, s.t, s.history) - delay_g(spec, r.t, r.history), "H")
                      for s, r in zip(runs_u, runs_v)])
    lhs = float(trapezoid_weights(m, dt) @ (np.exp(sigma * times) * gdiff))
    h0u, h0v = runs_u[0].history, runs_v[0].history
    pre = [norm_sq(a - b, "V") for a, b in zip(h0u.fields, h0v.fields)]
    post = [norm_sq(s.u - r.u, "V") for s, r in zip(runs_u[1:], runs_v[1:])]
    vals = np.array(pre + post)
    all_t = np.concatenate([h0u.times(), times[1:]])
    rhs = cg ** 2 * float(trapezoid_weights(vals.size - 1, dt) @ (np.exp(sigma * all_t) * vals))
    return lhs, rhs


# --------------------------------------------------------------------------- hypotheses

@dataclass(frozen=True)
class PhysicalParams:
    """Viscosity, Voigt length, delay horizon and the constants of the geometry."""

    nu: float
    alpha: float
    h: float
    lambda1: float = 1.0
    constants: Optional[EmbeddingConstants] = None

    def __post_init__(self):
        for name in ("nu", "alpha", "lambda1"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be positive, got {v}")
        if not (math.isfinite(self.h) and self.h >= 0):
            raise ConfigurationError(f"h must be non-negative, got {self.h}")

    @classmethod
    def for_grid(cls, grid: Grid, nu: float, alpha: float, h: float) -> "PhysicalParams":
        return cls(nu, alpha, h, grid.lambda1, EmbeddingConstants.for_grid(grid, alpha))

    @property
    def C6(self) -> float:
        return self.constants.C6 if self.constants is not None else 1.0 / self.lambda1

    @property
    def C1(self) -> float:
        return self._const("C1")

    @property
    def C2(self) -> float:
        return self._const("C2")

    @property
    def C4(self) -> float:
        return self._const("C4")

    @property
    def C7(self) -> float:
        return self.constants.C7 if self.constants is not None else self.alpha ** 2

    def _const(self, name):
        if self.constants is None:
            raise ConfigurationError(f"{name} needs embedding constants; use PhysicalParams.for_grid")
        return getattr(self.constants, name)


@dataclass(frozen=True)
class HypothesisWindow:
    """Admissible intervals and derived rates for a chosen ``(sigma, beta, C_g)``.

    ``conditions`` maps each checked requirement to ``True``/``False``; the
    ``eta2 < eta1``, ``eta5 > 0`` and ``eta6 > 0`` entries are advisory because
    only some certificates need them.
    """

    params: PhysicalParams
    sigma: float
    beta: float
    cg: float
    lg: float
    cg_max: float
    sigma_max: float
    beta_max: float
    eta1: float
    eta2: float
    eta5: float
    eta6: float
    conditions: dict
    delay_free: bool = False

    FATAL = ("cg", "sigma", "beta", "eta1", "eta2")

    @property
    def feasible(self) -> bool:
        return all(self.conditions[c] for c in self.FATAL)

    @property
    def decay_prefactor(self) -> float:
        """Initial-data factor ``alpha^-2 (lambda1^-1 + alpha^2 + 2 C_g C6^{1/2})`` of the decay bound."""
        p = self.params
        return (1.0 / p.lambda1 + p.alpha ** 2 + 2.0 * self.cg * math.sqrt(p.C6)) / p.alpha ** 2

    def rows(self) -> list:
        return [
            ("sigma", self.sigma), ("sigma_max", self.sigma_max),
            ("beta", self.beta), ("beta_max", self.beta_max),
            ("L_g", self.lg), ("C_g", self.cg),
            ("cg_max", "unconstrained-by-delay" if self.delay_free else self.cg_max),
            ("eta1", self.eta1), ("eta2", self.eta2), ("eta5", self.eta5), ("eta6", self.eta6),
        ]

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.rows()}
        d["conditions"] = dict(self.conditions)
        d["feasible"] = self.feasible
        return d


def _window(params: PhysicalParams, sigma: float, beta: float, cg: float, lg: float,
            delay_free: bool) -> HypothesisWindow:
    nu, a2, li = params.nu, params.alpha ** 2, 1.0 / params.lambda1
    c6h = math.sqrt(params.C6)
    gap = 2.0 * nu - sigma * li - a2 * sigma
    cg_max = gap / ((li + 1.0) * c6h)
    sigma_max = (2.0 * nu - 4.0 * cg * c6h * (li + 1.0)) / (li + a2)
    beta_max = gap / (li + 1.0) - 4.0 * cg * c6h
    eta1 = (gap - (beta + 4.0 * cg * c6h) * (li + 1.0)) / a2
    bg = beta + 4.0 * cg
    tail = cg ** 2 * params.C6 * (li + 1.0) ** 2 / bg if bg > 0 else math.inf
    eta2 = (gap - bg * (li + 1.0) - tail) / a2
    try:
        c2 = params.C2
    except ConfigurationError:
        c2 = math.nan
    eta5 = (gap - bg * (li + 1.0) - 3.0 * c2 / 8.0) / a2
    eta6 = (gap - bg * (li + 1.0) - (3.0 * c2 + 2.0) / 8.0 - (li / bg if bg > 0 else math.inf)) / a2
    conditions = {
        "cg": cg < cg_max if not delay_free else True,
        "sigma": 0.0 < sigma < sigma_max,
        "beta": 0.0 < beta < beta_max,
        "eta1": eta1 > 0.0,
        "eta2": eta2 > 0.0,
        "eta2<eta1": eta2 < eta1,
        "eta5": eta5 > 0.0,
        "eta6": eta6 > 0.0,
    }
    return HypothesisWindow(params, sigma, beta, cg, lg, cg_max, sigma_max, beta_max,
                            eta1, eta2, eta5, eta6, conditions, delay_free)


def check_hypotheses(params: PhysicalParams, spec: DelaySpec, sigma: float, beta: float, *,
                     cg: Optional[float] = None, strict: bool = True) -> HypothesisWindow:
    """Evaluate the admissibility intervals for ``(sigma, beta)``.

    ``cg`` overrides the delay constant derived from ``spec``.  With ``strict`` the
    first violated fatal requirement raises :class:`InfeasibleHypotheses`.
    """
    lg = lipschitz_bound(spec, params.lambda1, params.h)
    if cg is None:
        cg = delay_integral_constant(spec, sigma, params.h, params.lambda1)
    if cg < 0 or not math.isfinite(cg):
        raise ConfigurationError(f"C_g must be finite and non-negative, got {cg}")
    win = _window(params, float(sigma), float(beta), float(cg), lg, spec.gain == 0.0 and cg == 0.0)
    if strict:
        messages = {
            "cg": f"C_g={win.cg:.6g} not below cg_max={win.cg_max:.6g}",
            "sigma": f"sigma={sigma:.6g} outside (0, {win.sigma_max:.6g})",
            "beta": f"beta={beta:.6g} outside (0, {win.beta_max:.6g})",
            "eta1": f"eta1={win.eta1:.6g} is not positive",
            "eta2": f"eta2={win.eta2:.6g} is not positive",
        }
        for name in HypothesisWindow.FATAL:
            if not win.conditions[name]:
                raise InfeasibleHypotheses(name, messages[name], win)
    return win
