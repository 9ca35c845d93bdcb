"""Pullback-attraction diagnostics and the split of a solution into a decaying and a smooth part."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .delay import (DelaySpec, HistorySegment, PhysicalParams, ProcessState, _delayed_sample,
                    trapezoid_weights)
from .errors import BlowUpError, ConfigurationError, DomainError
from .estimates import BoundCertificate, damped_integral
from .spectral import _project, norm_sq
from .stepper import ForcingSpec, StepperConfig, advance, evolve, explicit_rhs, steps_in


# --------------------------------------------------------------------------- clouds

@dataclass
class StateCloud:
    """States sharing an evaluation time, with ``(tau, member id)`` per state."""

    t: float
    members: list
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        if self.members:
            g = self.members[0].grid
            for m in self.members:
                if m.grid != g:
                    raise ConfigurationError("cloud members live on different grids")
                if abs(m.t - self.t) > 1e-9 * max(1.0, abs(self.t)):
                    raise ConfigurationError(f"member at t={m.t} in a cloud at t={self.t}")
        if not self.provenance:
            self.provenance = [(math.nan, j) for j in range(len(self.members))]

    def __len__(self):
        return len(self.members)


def ev2_embedding(state: ProcessState) -> np.ndarray:
    """Real vector whose Euclidean norm is the trapezoid ``E_V^2`` norm of the state."""
    hist = state.history
    g = state.grid
    k = np.sqrt(g.k2.reshape(-1)[g.retained_index])
    w = np.concatenate([[1.0], trapezoid_weights(hist.n_delay, hist.dt)])
    fields = (state.u,) + hist.fields
    parts = [math.sqrt(wj) * (f.compact() * k) for wj, f in zip(w, fields) if wj > 0]
    return np.concatenate([p.reshape(-1) for p in parts]).view(float)


def semidistance(a: StateCloud, b: StateCloud) -> float:
    """``max_{x in a} min_{y in b} ||x - y||_{E_V^2}``."""
    if not len(a) or not len(b):
        raise DomainError("semidistance of an empty cloud")
    if abs(a.t - b.t) > 1e-9 * max(1.0, abs(a.t)):
        raise ConfigurationError("clouds are evaluated at different times")
    if a.members[0].grid != b.members[0].grid:
        raise ConfigurationError("clouds live on different grids")
    xa = np.array([ev2_embedding(s) for s in a.members])
    xb = np.array([ev2_embedding(s) for s in b.members])
    return float(directed_hausdorff(xa, xb, seed=0)[0])


def zero_cloud(like: StateCloud) -> StateCloud:
    s = like.members[0]
    z = ProcessState.initial(s.u * 0.0, None, dt=s.dt, h=s.history.h, tau=s.t)
    return StateCloud(like.t, [z], [(like.t, "zero")])


# --------------------------------------------------------------------------- sweeps

@dataclass
class SweepResult:
    t_star: float
    taus: list
    clouds: list
    distances: list

    def rows(self) -> list:
        return [(tau, d) for tau, d in zip(self.taus, self.distances)]


def _evolve_member(args):
    j, tau, u0, phi, t_star, f, g, cfg, params = args
    state = ProcessState.initial(u0, phi, dt=cfg.dt, h=params.h, tau=tau)
    try:
        return evolve(state, t_star, f, g, cfg, params)
    except BlowUpError as exc:
        raise BlowUpError(exc.t, f"member {j} started at tau={tau} blew up") from exc


def pullback_sweep(t_star: float, taus: Sequence[float], family: Sequence, f: ForcingSpec,
                   g: DelaySpec, cfg: StepperConfig, params: PhysicalParams, *,
                   workers: int = 1) -> SweepResult:
    """Evolve every ``(u0, phi)`` of ``family`` from each ``tau`` to ``t_star``.

    ``phi`` may be ``None`` for the constant segment.  Returns the endpoint clouds
    and their semidistances to the deepest cloud.
    """
    taus = [float(x) for x in taus]
    if not taus:
        raise ConfigurationError("empty tau schedule")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ConfigurationError("tau schedule must be strictly decreasing")
    if taus[0] > t_star:
        raise ConfigurationError("tau schedule starts after t_star")
    if not family:
        raise ConfigurationError("empty initial family")
    steps_in(t_star, cfg.dt, "t_star")
    jobs = [(j, tau, u0, phi, t_star, f, g, cfg, params)
            for tau in taus for j, (u0, phi) in enumerate(family)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            finals = list(pool.map(_evolve_member, jobs))
    else:
        finals = [_evolve_member(a) for a in jobs]
    n = len(family)
    clouds = [StateCloud(t_star, finals[i * n:(i + 1) * n], [(tau, j) for j in range(n)])
              for i, tau in enumerate(taus)]
    deepest = clouds[-1]
    distances = [semidistance(c, deepest) for c in clouds]
    return SweepResult(t_star, taus, clouds, distances)


# --------------------------------------------------------------------------- splitting

@dataclass
class RegularitySplitRun:
    """Series from integrating ``u``, ``v`` and ``w`` side by side."""

    xi: float
    radius: float
    split_error: float
    t: np.ndarray
    u_da: np.ndarray
    v_da: np.ndarray
    w_da: np.ndarray
    v_v: np.ndarray
    w_v: np.ndarray
    v_energy: np.ndarray
    additivity_gap: np.ndarray
    certificates: list
    constants: dict
    final_u: Optional[ProcessState] = None
    final_v: Optional[ProcessState] = None
    final_w: Optional[ProcessState] = None

    @property
    def additive(self) -> bool:
        return bool(np.max(self.additivity_gap) <= 1e-10)


def choose_split_radius(f: ForcingSpec, xi: float) -> tuple:
    """Smallest ``|k|`` cut-off with ``sup_t ||f - f_K||_{V'} < xi``."""
    if not xi > 0:
        raise ConfigurationError(f"splitting tolerance must be positive, got {xi}")
    if not f.fields:
        return 0.0, 0.0
    g = f.fields[0].grid
    radii = np.unique(np.sqrt(g.k2[g.mask]))
    for r in np.concatenate([[0.0], radii]):
        err = f.minus(f.truncated(float(r) * (1 + 1e-12))).sup_norm("Vdual")
        if err < xi:
            return float(r) * (1 + 1e-12), err
    raise ConfigurationError("no cut-off reaches the splitting tolerance")


def regularity_split(initial: ProcessState, t_end: float, xi: float, f: ForcingSpec,
                     g: DelaySpec, cfg: StepperConfig, params: PhysicalParams, *,
                     sigma: Optional[float] = None) -> RegularitySplitRun:
    """Integrate ``u`` with ``v`` (forced by ``f - f_K``, no delay, ``v(tau) = u_tau``) and
    ``w`` (forced by ``f_K + g(t, u_t)``, ``w(tau) = 0``, history ``phi``).

    Certificates:

    * ``split-w``: testing the ``w`` equation with ``A w`` and Young's inequality
      with weights ``nu/4`` on the forcing, delay and convection pairings gives,
      with ``c = nu/2 - s (1/lambda1 + alpha^2) > 0``,
      ``alpha^2 ||A w(t)||^2 + c e^{-s t} int e^{s r}||A w||^2 <= J(t)`` where
      ``J = e^{-s t} int_tau^t e^{s r} (2/nu)(||f_K||^2 + ||g||^2) + 2 Kc ||grad w||^6`` and
      ``Kc = 27 C2^4 / (256 (nu/4)^3)``.  The lhs adds ``int_{t-h}^t ||A w||^2`` once
      ``t >= tau + h``.
    * ``split-v``: ``||v||^2 + alpha^2 ||grad v||^2 <= e^{-s_v (t-tau)}(...)(tau)
      + nu^-1 e^{-s_v t} int e^{s_v r} ||f - f_K||_{V'}^2`` with ``s_v = nu / (1/lambda1 + alpha^2)``.
    """
    radius, err = choose_split_radius(f, xi)
    f_low = f.truncated(radius) if f.fields else f
    f_high = f.minus(f_low) if f.fields else f
    grid = initial.grid
    nu, a2, li = params.nu, params.alpha ** 2, 1.0 / params.lambda1
    s_w = min(sigma if sigma is not None else math.inf, nu / (4.0 * (li + a2)))
    c_w = nu / 2.0 - s_w * (li + a2)
    eps = nu / 4.0
    kc = 27.0 * params.C2 ** 4 / (256.0 * eps ** 3) if cfg.convection else 0.0
    s_v = nu / (li + a2)

    zero_hist = HistorySegment.zero(grid, cfg.dt, params.h, initial.step)
    v = ProcessState(HistorySegment(cfg.dt, initial.step, zero_hist.fields[:-1] + (initial.u,)))
    w = ProcessState(HistorySegment(cfg.dt, initial.step,
                                    initial.history.fields[:-1] + (zero_hist.newest,)))
    u = ProcessState(initial.history)
    no_delay = DelaySpec()
    n = steps_in(t_end - initial.t, cfg.dt, "t_end - tau")
    rows = np.zeros((n + 1, 9))

    def record(i, u, v, w, g_sq, fl_sq):
        diff = u.u - v.u - w.u
        scale = max(norm_sq(u.u, "H"), np.finfo(float).tiny)
        rows[i] = (norm_sq(u.u, "DA"), norm_sq(v.u, "DA"), norm_sq(w.u, "DA"),
                   norm_sq(v.u, "V"), norm_sq(w.u, "V"),
                   norm_sq(v.u, "H") + a2 * norm_sq(v.u, "V"),
                   math.sqrt(norm_sq(diff, "H") / scale), g_sq, fl_sq)

    def g_and_f(state):
        t = state.t
        graw = g.gain * _delayed_sample(g, t, state.history) if g.gain != 0.0 else None
        gfield = None if graw is None else _project(graw, grid)
        return gfield, f_low.norm_sq(t, "H") if f_low.fields else 0.0

    gf, fl = g_and_f(u)
    record(0, u, v, w, 0.0 if gf is None else float(np.sum(np.abs(gf) ** 2)), fl)
    for i in range(1, n + 1):
        rhs_u = explicit_rhs(u, f, g, cfg)
        rhs_v = explicit_rhs(v, f_high, no_delay, cfg)
        rhs_w = explicit_rhs(w, f_low, no_delay, cfg)
        if gf is not None:
            rhs_w = rhs_w + gf
        u = advance(u, rhs_u, cfg, params)
        v = advance(v, rhs_v, cfg, params)
        w = advance(w, rhs_w, cfg, params)
        gf, fl = g_and_f(u)
        record(i, u, v, w, 0.0 if gf is None else float(np.sum(np.abs(gf) ** 2)), fl)

    t = (initial.step + np.arange(n + 1)) * cfg.dt
    u_da, v_da, w_da, v_v, w_v, v_en, gap, g_sq, fl_sq = rows.T
    m = steps_in(params.h, cfg.dt, "h")

    integrand = (2.0 / nu) * (fl_sq + g_sq) + 2.0 * kc * w_v ** 3
    J = damped_integral(integrand, cfg.dt, s_w)
    lhs_w = w_da.copy()
    rhs_w = J / a2
    if m > 0 and n >= m:
        c = np.concatenate([[0.0], np.cumsum(0.5 * cfg.dt * (w_da[1:] + w_da[:-1]))])
        lhs_w[m:] += c[m:] - c[:-m]
        rhs_w[m:] += math.exp(s_w * params.h) * J[m:] / c_w
    cert_w = BoundCertificate("split-w", t, lhs_w, rhs_w, 0.0,
                              {"s": s_w, "c": c_w, "Kc": kc, "radius": radius})
    rhs_v = (np.exp(-s_v * (t - t[0])) * v_en[0]
             + np.array([f_high.damped_energy(tt, s_v, t[0]) for tt in t]) / nu)
    cert_v = BoundCertificate("split-v", t, v_en, rhs_v, 1e-12, {"s_v": s_v, "split_error": err})
    return RegularitySplitRun(xi, radius, err, t, u_da, v_da, w_da, v_v, w_v, v_en, gap,
                              [cert_w, cert_v], {"s_w": s_w, "s_v": s_v, "Kc": kc},
                              u, v, w)
