"""Run configuration read from TOML.

Every key, its unit and its default is listed in :data:`DEFAULTS`; the resolved
configuration (defaults filled in) is what gets written into run manifests.
Times are in the box's time unit, lengths in box units, rates per time unit.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .delay import DelaySpec, PhysicalParams, ProcessState, check_hypotheses
from .errors import ConfigurationError, MissingArtifact
from .spectral import Grid, SpectralField, norm, random_field, shear_field, zeros
from .stepper import ForcingSpec, StepperConfig

TWO_PI = 2.0 * math.pi

DEFAULTS = {
    "grid": {"dim": 2, "n": 16, "box_length": TWO_PI},
    # nu: viscosity, alpha: Voigt length, h: delay horizon (time)
    "physics": {"nu": 1.0, "alpha": 1.0, "h": 0.5},
    # dt and times in time units; scheme imex_euler | imex_cnab2
    "stepper": {"dt": 0.01, "scheme": "imex_cnab2", "t_start": 0.0, "t_end": 5.0,
                "convection": True},
    # kind discrete | variable | distributed; gain kappa; pointwise identity | tanh | sin
    "delay": {"kind": "discrete", "gain": 0.0, "pointwise": "identity"},
    # kind zero | constant_field | time_periodic | exp_windowed; shape random | shear;
    # amplitude, amplitude1: H norms of F (or F0) and F1; omega rad/time; gamma 1/time
    "forcing": {"kind": "zero", "shape": "random", "amplitude": 1.0, "amplitude1": 0.5,
                "omega": 1.0, "gamma": 1.0, "kmax": 2, "seed": 11, "mode": 1},
    # kind zero | random | shear | snapshot; norm: gradient norm of u_tau
    "initial": {"kind": "random", "norm": 1.0, "seed": 1, "kmax": 3, "mode": 1, "path": ""},
    "hypotheses": {"sigma": 0.1, "beta": 0.1, "override": False},
    "output": {"dir": "out"},
    # attractor sweep: family gradient norms, tau schedule, evaluation time
    "attractor": {"t_star": 0.0, "taus": [-1.0, -2.0, -4.0], "family_norms": [0.5, 2.0],
                  "seed": 5, "split_xi": 0.0},
    # measure: measure time, base depth, doublings, stride (steps), functional ids
    "measure": {"tau": 0.0, "t": 1.0, "depth": 2.0, "doublings": 3, "stride": 10,
                "richardson": True, "functionals": ["one", "h_sq", "v_sq"]},
    "certify": {"ids": ["decay", "window", "deriv-R2"]},
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown configuration key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{where}{key} must be a table")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    """Resolved configuration with builders for the simulation objects."""

    data: dict
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "RunConfig":
        raw = dict(raw)
        delay_extra = {}
        if "delay" in raw:
            delay_extra = {k: v for k, v in raw["delay"].items() if k in ("tau", "kernel", "tau_rate_max")}
            raw["delay"] = {k: v for k, v in raw["delay"].items() if k not in delay_extra}
        data = _merge(DEFAULTS, raw)
        data["delay"].update(delay_extra)
        cfg = cls(data, Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise MissingArtifact(f"config not found: {path}")
        try:
            raw = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
        return cls.from_dict(raw, path.parent)

    def validate(self):
        self.grid()
        self.params()
        self.stepper()
        self.delay()
        if self.data["initial"]["kind"] not in ("zero", "random", "shear", "snapshot"):
            raise ConfigurationError(f"unknown initial kind {self.data['initial']['kind']!r}")

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def grid(self) -> Grid:
        g = self.data["grid"]
        return Grid(int(g["dim"]), int(g["n"]), float(g["box_length"]))

    def params(self) -> PhysicalParams:
        p = self.data["physics"]
        return PhysicalParams.for_grid(self.grid(), float(p["nu"]), float(p["alpha"]), float(p["h"]))

    def stepper(self) -> StepperConfig:
        s = self.data["stepper"]
        cfg = StepperConfig(float(s["dt"]), s["scheme"], float(s["t_start"]), float(s["t_end"]),
                            bool(s["convection"]))
        cfg.check_horizon(float(self.data["physics"]["h"]))
        return cfg

    def delay(self) -> DelaySpec:
        d = dict(self.data["delay"])
        if d.get("kind") == "distributed" and isinstance(d.get("kernel"), str):
            d["kernel"] = self._kernel(d["kernel"])
        return DelaySpec.from_dict(d)

    def _kernel(self, name: str) -> tuple:
        m = int(round(float(self.data["physics"]["h"]) / float(self.data["stepper"]["dt"])))
        h = float(self.data["physics"]["h"])
        theta = np.linspace(-h, 0.0, m + 1)
        if name == "uniform":
            return tuple(np.full(m + 1, 1.0 / h))
        if name == "exponential":
            k = np.exp(theta)
            return tuple(k / (1.0 - math.exp(-h)))
        raise ConfigurationError(f"unknown kernel preset {name!r}")

    def _shape(self, grid, shape, seed, kmax, mode, value) -> SpectralField:
        if shape == "shear":
            u = shear_field(grid, 1.0, int(mode))
        elif shape == "random":
            u = random_field(grid, np.random.default_rng(int(seed)), kmax=int(kmax))
        else:
            raise ConfigurationError(f"unknown field shape {shape!r}")
        return u * (value / norm(u, "H"))

    def forcing(self) -> ForcingSpec:
        f = self.data["forcing"]
        grid = self.grid()
        kind = f["kind"]
        if kind == "zero":
            return ForcingSpec.zero()
        F = self._shape(grid, f["shape"], f["seed"], f["kmax"], f["mode"], float(f["amplitude"]))
        if kind == "constant_field":
            return ForcingSpec.constant(F)
        if kind == "time_periodic":
            F1 = self._shape(grid, f["shape"], int(f["seed"]) + 1, f["kmax"], f["mode"],
                             float(f["amplitude1"]))
            return ForcingSpec.periodic(F, F1, float(f["omega"]))
        if kind == "exp_windowed":
            return ForcingSpec.exp_windowed(F, float(f["gamma"]))
        raise ConfigurationError(f"unknown forcing kind {kind!r}")

    def initial_field(self, norm_value=None, seed=None) -> SpectralField:
        i = self.data["initial"]
        grid = self.grid()
        value = float(i["norm"] if norm_value is None else norm_value)
        kind = i["kind"]
        if kind == "zero":
            return zeros(grid)
        if kind == "snapshot":
            from .io import read_snapshot
            u, _ = read_snapshot(self.base_dir / i["path"])
            if u.grid != grid:
                raise ConfigurationError("snapshot grid differs from the configured grid")
            return u
        if kind == "shear":
            u = shear_field(grid, 1.0, int(i["mode"]))
        else:
            u = random_field(grid, np.random.default_rng(int(i["seed"] if seed is None else seed)),
                             kmax=int(i["kmax"]))
        return u * (value / norm(u, "V"))

    def initial_state(self, tau=None) -> ProcessState:
        s = self.stepper()
        tau = s.t_start if tau is None else tau
        return ProcessState.initial(self.initial_field(), None, dt=s.dt,
                                    h=float(self.data["physics"]["h"]), tau=tau)

    def window(self, strict: bool = True):
        hp = self.data["hypotheses"]
        return check_hypotheses(self.params(), self.delay(), float(hp["sigma"]), float(hp["beta"]),
                                strict=strict)

    @property
    def override(self) -> bool:
        return bool(self.data["hypotheses"]["override"])

    @property
    def output_dir(self) -> Path:
        return self.base_dir / self.data["output"]["dir"]
