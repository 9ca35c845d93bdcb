"""Divergence-free Fourier fields on the periodic box and the operators on them.

A field is stored as its complex Fourier coefficients on the full ``n**dim``
FFT lattice, shape ``(dim, n, ..., n)``, in numpy FFT ordering.  Only the
retained modes ``0 < max_i |m_i| <= kmax`` with ``kmax = (n - 1) // 3`` are ever
non-zero, so every quadratic product evaluated on the ``n`` grid is free of
aliasing inside the retained set (the 2/3 rule).

Inner products use the normalised measure ``dx / |box|``: for
``u(x) = sum_k u_k exp(i k.x)`` one has ``||u||^2 = sum_k |u_k|^2``.  All
constants in :class:`EmbeddingConstants` refer to this normalisation and to the
gradient norm ``||u||_V = ||grad u||``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, DomainError

SPACES = ("H", "V", "DA", "Vdual")


@dataclass(frozen=True)
class Grid:
    """Periodic box ``[0, box_length)^dim`` resolved by ``n`` collocation points per axis."""

    dim: int
    n: int
    box_length: float = 2.0 * math.pi
    lambda1: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 4 or self.n % 2:
            raise ConfigurationError(f"n must be even and >= 4, got {self.n}")
        if not self.box_length > 0:
            raise ConfigurationError(f"box_length must be positive, got {self.box_length}")
        object.__setattr__(self, "lambda1", (2.0 * math.pi / self.box_length) ** 2)

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def coeff_shape(self) -> tuple:
        return (self.dim,) + self.shape

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.dim, 0))

    @property
    def kmax(self) -> int:
        return (self.n - 1) // 3

    @cached_property
    def mode_numbers(self) -> np.ndarray:
        """Integer wave numbers, shape ``(dim, n, ..., n)``."""
        m = np.fft.fftfreq(self.n, d=1.0 / self.n).round().astype(np.int64)
        return np.stack(np.meshgrid(*([m] * self.dim), indexing="ij"))

    @cached_property
    def wavevectors(self) -> np.ndarray:
        return self.mode_numbers * (2.0 * math.pi / self.box_length)

    @cached_property
    def mask(self) -> np.ndarray:
        """Retained modes (zero mode excluded)."""
        m = np.abs(self.mode_numbers).max(axis=0)
        return (m <= self.kmax) & (m > 0)

    @cached_property
    def k2(self) -> np.ndarray:
        return (self.wavevectors ** 2).sum(axis=0)

    @cached_property
    def inv_k2(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.mask] = 1.0 / self.k2[self.mask]
        return out

    @cached_property
    def retained_index(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def n_retained(self) -> int:
        return int(self.retained_index.size)

    def physical_coordinates(self):
        x = np.arange(self.n) * (self.box_length / self.n)
        return np.meshgrid(*([x] * self.dim), indexing="ij")


def _hermitian(a: np.ndarray, axes: tuple) -> np.ndarray:
    """Average ``a_k`` with ``conj(a_{-k})``, making the represented field exactly real."""
    rev = np.roll(np.flip(a, axis=axes), 1, axis=axes)
    return 0.5 * (a + np.conj(rev))


def _to_physical(a: np.ndarray, grid: Grid) -> np.ndarray:
    # retained modes never reach the Nyquist column, so the half spectrum suffices
    half = a[..., :grid.n // 2 + 1]
    return sfft.irfftn(half, s=grid.shape, axes=grid.axes, norm="forward")


def _to_spectral(a: np.ndarray, grid: Grid) -> np.ndarray:
    """Full-lattice coefficients of a real array, truncated to the retained box."""
    n, K = grid.n, grid.kmax
    half = sfft.rfftn(a, axes=grid.axes, norm="forward")
    out = np.zeros(a.shape[:-grid.dim] + grid.shape, dtype=np.complex128)
    out[..., :K + 1] = half[..., :K + 1]
    # negative last-axis modes from conjugate symmetry
    pos = half[..., 1:K + 1]
    other = tuple(range(-grid.dim, -1))
    if other:
        pos = np.roll(np.flip(pos, axis=other), 1, axis=other)
    out[..., n - K:] = np.conj(pos[..., ::-1])
    return out


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Divergence-free, zero-mean, real vector field held by its Fourier coefficients.

    Instances are treated as immutable; the coefficient array is flagged read-only.
    Use :func:`leray_project` or the factories below to build valid fields.
    """

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.coeff_shape:
            raise ConfigurationError(
                f"coefficient shape {self.coeffs.shape} does not match grid {self.grid.coeff_shape}")
        if self.coeffs.flags.writeable:
            c = np.array(self.coeffs, dtype=np.complex128)
            c.flags.writeable = False
            object.__setattr__(self, "coeffs", c)

    def _same_grid(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise ConfigurationError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other):
        self._same_grid(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._same_grid(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def to_physical(self) -> np.ndarray:
        return _to_physical(self.coeffs, self.grid)

    def compact(self) -> np.ndarray:
        """Retained coefficients only, shape ``(dim, n_retained)``."""
        return self.coeffs.reshape(self.grid.dim, -1)[:, self.grid.retained_index]

    @classmethod
    def from_compact(cls, grid: Grid, vec: np.ndarray) -> "SpectralField":
        c = np.zeros((grid.dim, grid.n ** grid.dim), dtype=np.complex128)
        c[:, grid.retained_index] = vec
        return cls(grid, c.reshape(grid.coeff_shape))

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def invariant_errors(self) -> dict:
        """Relative violations of zero mean, solenoidality, conjugate symmetry and truncation."""
        g = self.grid
        c = self.coeffs
        scale = max(float(np.abs(c).max()), np.finfo(float).tiny)
        div = np.abs((g.wavevectors * c).sum(axis=0)) / np.sqrt(np.maximum(g.k2, 1.0))
        return {
            "mean": float(np.abs(c[(slice(None),) + (0,) * g.dim]).max()) / scale,
            "divergence": float(div.max()) / scale,
            "symmetry": float(np.abs(c - _hermitian(c, g.axes)).max()) / scale,
            "truncation": float(np.abs(c[:, ~g.mask]).max(initial=0.0)) / scale,
        }

    def check(self, tol: float = 1e-12) -> "SpectralField":
        bad = {k: v for k, v in self.invariant_errors().items() if v > tol}
        if bad:
            raise DomainError(f"field violates invariants: {bad}")
        return self


def _check_raw(raw: np.ndarray, grid: Grid) -> np.ndarray:
    raw = np.asarray(raw)
    if raw.shape != grid.coeff_shape:
        raise ConfigurationError(f"raw coefficients {raw.shape} do not match grid {grid.coeff_shape}")
    return raw


def _project(raw: np.ndarray, grid: Grid) -> np.ndarray:
    k = grid.wavevectors
    kdotu = (k * raw).sum(axis=0)
    out = raw - k * (kdotu * grid.inv_k2)
    out[:, ~grid.mask] = 0.0
    return out


def leray_project(raw, grid: Grid, *, symmetry_tol: float = 1e-10) -> SpectralField:
    """Orthogonal projection onto divergence-free, zero-mean fields of the retained lattice."""
    raw = _check_raw(raw, grid).astype(np.complex128, copy=False)
    scale = max(float(np.abs(raw).max(initial=0.0)), np.finfo(float).tiny)
    if float(np.abs(raw - _hermitian(raw, grid.axes)).max(initial=0.0)) > symmetry_tol * scale:
        raise DomainError("raw coefficients lack conjugate symmetry")
    return SpectralField(grid, _project(raw, grid))


def apply_stokes(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, u.coeffs * u.grid.k2)


def apply_inverse_stokes(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, u.coeffs * u.grid.inv_k2)


def _convection(u: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """Dealiased, symmetrised Fourier coefficients of ``(u . grad) v``."""
    d = grid.dim
    hs = (Ellipsis, slice(0, grid.n // 2 + 1))
    ik = 1j * grid.wavevectors[hs]
    vh = v[hs]
    stack = np.empty((d + d * d,) + vh.shape[1:], dtype=np.complex128)
    stack[:d] = u[hs]
    for i in range(d):
        np.multiply(ik[i], vh, out=stack[d + i * d:d + (i + 1) * d])
    phys = sfft.irfftn(stack, s=grid.shape, axes=grid.axes, norm="forward")
    prod = phys[0] * phys[d:2 * d]
    for i in range(1, d):
        prod += phys[i] * phys[d + i * d:d + (i + 1) * d]
    out = _to_spectral(prod, grid)
    out[:, ~grid.mask] = 0.0
    return _hermitian(out, grid.axes)


def inner(u: SpectralField, v: SpectralField) -> float:
    """H inner product ``(u, v)``."""
    u._same_grid(v)
    return float(np.real(np.vdot(u.coeffs, v.coeffs)))


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """``b(u, v, w) = mean_x u_i (d_i v_j) w_j`` evaluated pseudospectrally."""
    u._same_grid(v)
    u._same_grid(w)
    conv = _convection(u.coeffs, v.coeffs, u.grid)
    return float(np.real(np.vdot(w.coeffs, conv)))


def nonlinear_B(u: SpectralField) -> SpectralField:
    """Leray projection of the dealiased convection term ``(u . grad) u``."""
    conv = _convection(u.coeffs, u.coeffs, u.grid)
    return SpectralField(u.grid, _project(conv, u.grid))


def norm_sq(u: SpectralField, space: str = "H") -> float:
    g = u.grid
    e = (u.coeffs.real ** 2 + u.coeffs.imag ** 2).sum(axis=0)
    if space == "H":
        w = None
    elif space == "V":
        w = g.k2
    elif space == "DA":
        w = g.k2 ** 2
    elif space == "Vdual":
        w = g.inv_k2
    else:
        raise DomainError(f"unknown space {space!r}; expected one of {SPACES}")
    return float(e.sum() if w is None else (w * e).sum())


def norm(u: SpectralField, space: str = "H") -> float:
    """Norm in H (L2), V (gradient), DA (Stokes operator) or Vdual (inverse gradient)."""
    return math.sqrt(norm_sq(u, space))


# --------------------------------------------------------------------------- factories

def zeros(grid: Grid) -> SpectralField:
    return SpectralField(grid, np.zeros(grid.coeff_shape, dtype=np.complex128))


def from_physical(arrays, grid: Grid) -> SpectralField:
    """Truncate and project a real physical-space vector field."""
    arrays = np.asarray(arrays, dtype=float)
    if arrays.shape != grid.coeff_shape:
        raise ConfigurationError(f"physical field {arrays.shape} does not match grid {grid.coeff_shape}")
    c = _hermitian(_to_spectral(arrays, grid), grid.axes)
    return SpectralField(grid, _project(c, grid))


def shear_field(grid: Grid, amplitude: float = 1.0, mode: int = 1, component: int = 0,
                direction: int = 1) -> SpectralField:
    """``amplitude * cos(mode * x_direction) e_component`` (unidirectional, so ``B = 0``)."""
    if component == direction:
        raise ConfigurationError("shear component and direction must differ")
    if not 0 < mode <= grid.kmax:
        raise ConfigurationError(f"mode {mode} is not retained (kmax={grid.kmax})")
    c = np.zeros(grid.coeff_shape, dtype=np.complex128)
    for sign in (1, -1):
        idx = [0] * grid.dim
        idx[direction] = sign * mode
        c[(component,) + tuple(idx)] = 0.5 * amplitude
    return SpectralField(grid, c)


def random_field(grid: Grid, rng: np.random.Generator, *, kmax: int | None = None,
                 slope: float = 0.0, norm_value: float | None = None,
                 space: str = "V") -> SpectralField:
    """Random valid field on modes with ``max_i |m_i| <= kmax``.

    Coefficients are Gaussian with amplitude ``|k|**-slope``; the result is
    rescaled so that ``norm(u, space) == norm_value`` when given.
    """
    raw = rng.standard_normal(grid.coeff_shape) + 1j * rng.standard_normal(grid.coeff_shape)
    raw *= np.where(grid.k2 > 0, np.maximum(grid.k2, 1e-300) ** (-0.5 * slope), 0.0)
    if kmax is not None:
        raw[:, np.abs(grid.mode_numbers).max(axis=0) > kmax] = 0.0
    u = SpectralField(grid, _project(_hermitian(raw, grid.axes), grid))
    if norm_value is not None:
        current = norm(u, space)
        if current == 0.0:
            raise DomainError("random field vanished; increase kmax")
        u = u * (norm_value / current)
    return u


def truncate_modes(u: SpectralField, radius: float) -> SpectralField:
    """Keep only modes with ``|k| <= radius``."""
    keep = u.grid.k2 <= radius * radius
    return SpectralField(u.grid, np.where(keep, u.coeffs, 0.0))


# --------------------------------------------------------------------------- constants

@dataclass(frozen=True)
class EmbeddingConstants:
    """Constants of the trilinear and embedding estimates, relative to the gradient norm.

    ``C6`` bounds ``||g||_{V'}^2 <= C6 ||g||^2``; ``C7``/``C7p`` bracket
    ``||w||^2 + alpha^2 ||grad w||^2`` by multiples of ``||grad w||^2``.
    """

    C1: float
    C2: float
    C3: float
    C4: float
    C5: float
    C6: float
    C7: float
    C7p: float

    @classmethod
    def for_grid(cls, grid: Grid, alpha: float = 1.0) -> "EmbeddingConstants":
        # sup|u| <= sum_k |u_k|, then Cauchy-Schwarz against the weight that
        # matches each norm; exact for the truncated lattice, not sharp.
        k = np.sqrt(grid.k2[grid.mask])
        s1, s2, s3 = (float(np.sum(k ** -p)) for p in (1, 2, 3))
        lam = grid.lambda1
        c1 = math.sqrt(s2 / lam)
        c2 = math.sqrt(s3)
        return cls(C1=c1, C2=c2, C3=math.sqrt(s1) * lam ** -0.25, C4=c1, C5=c2,
                   C6=1.0 / lam, C7=alpha ** 2, C7p=alpha ** 2 + 1.0 / lam)

    def validate(self, grid: Grid, rng: np.random.Generator, samples: int = 20,
                 alpha: float = 1.0) -> dict:
        """Largest observed ratio ``lhs / (C * rhs)`` per inequality over random fields.

        Raises :class:`DomainError` if any ratio exceeds one.
        """
        worst = {name: 0.0 for name in ("b_vvv", "b_agradh", "b_interp", "B_vdual", "B_h", "vdual_h", "voigt_energy", "poincare")}

        def bump(name, lhs, rhs):
            if rhs > 0:
                worst[name] = max(worst[name], lhs / rhs)

        for _ in range(samples):
            slope = float(rng.uniform(-0.5, 2.0))
            u, v, w = (random_field(grid, rng, slope=slope) for _ in range(3))
            uH, uV, uA = norm(u, "H"), norm(u, "V"), norm(u, "DA")
            vV, vA = norm(v, "V"), norm(v, "DA")
            wH, wV = norm(w, "H"), norm(w, "V")
            b = abs(trilinear_b(u, v, w))
            bump("b_vvv", b, self.C1 * uV * vV * wV)
            bump("b_agradh", b, self.C2 * math.sqrt(uA * uV) * vV * wH)
            bump("b_interp", b, self.C3 * math.sqrt(uH * uV * vV * vA) * wH)
            Bu = nonlinear_B(u)
            bump("B_vdual", norm(Bu, "Vdual"), self.C4 * uV ** 2)
            bump("B_h", norm(Bu, "H"), self.C5 * math.sqrt(uA) * uV ** 1.5)
            bump("vdual_h", norm_sq(w, "Vdual"), self.C6 * wH ** 2)
            mid = wH ** 2 + alpha ** 2 * wV ** 2
            bump("voigt_energy", self.C7 * wV ** 2, mid)
            bump("voigt_energy", mid, self.C7p * wV ** 2)
            bump("poincare", uH ** 2, uV ** 2 / grid.lambda1)
        over = {k: v for k, v in worst.items() if v > 1.0 + 1e-12}
        if over:
            raise DomainError(f"embedding constants violated: {over}")
        return worst
