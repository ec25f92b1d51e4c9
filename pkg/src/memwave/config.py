"""JSON experiment configs and atomic report writing."""
from __future__ import annotations

import copy
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .control import CgConfig
from .dynamics import TimeMesh
from .geometry import DirichletSpectrum, Grid1D, MovingRegion
from .kernel import MemoryKernel

EXPERIMENTS = ("simulate", "adjoint", "control", "mgcc-check", "kernel-check",
               "sharpness", "ode-demo", "compare", "sweep")

REQUIRED = {
    "simulate": ("kernel",),
    "adjoint": ("kernel",),
    "control": ("kernel", "region"),
    "mgcc-check": ("region",),
    "kernel-check": ("kernel",),
    "sharpness": (),
    "ode-demo": ("kernel",),
    "compare": ("kernel", "regions"),
    "sweep": ("configs",),
}

# every verdict reads its threshold from here unless the config overrides it
DEFAULT_TOLERANCES = {
    "duality_rel": 1e-11,
    "min_reduction": 1e3,
    "min_ratio": 100.0,
    "slope_tol": 0.15,
    "rest_factor": 10.0,
    "muntz_ratio": 1e-3,
    "min_obs_growth": 5.0,
}


class ConfigInvalid(ValueError):
    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


@dataclass
class ExperimentConfig:
    experiment: str
    kernel: Optional[dict] = None
    n: int = 100
    T: float = 1.0
    n_t: Optional[int] = None
    cfl: float = 0.5
    region: Optional[dict] = None
    regions: Optional[dict] = None
    eps0: float = 0.02
    observation_mode: str = "weight_rho"
    targets: str = "full"
    initial: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    cg: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    expect: Optional[str] = None
    params: dict = field(default_factory=dict)
    configs: Optional[list] = None
    out: Optional[str] = None
    seed: int = 0

    # --- builders ------------------------------------------------------
    def grid(self) -> Grid1D:
        return Grid1D(self.n)

    def mesh(self) -> TimeMesh:
        if self.n_t is not None:
            return TimeMesh(self.T, self.n_t)
        return TimeMesh.from_cfl(self.T, self.grid(), self.cfl)

    def build_kernel(self) -> MemoryKernel:
        return MemoryKernel.from_config(self.kernel, self.T)

    def build_region(self, spec: Optional[dict] = None) -> MovingRegion:
        return MovingRegion.from_config(spec or self.region, self.grid())

    def cg_config(self) -> CgConfig:
        return CgConfig(**self.cg)

    def tol(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))

    def field_data(self, which: str, names) -> list:
        spec = self.initial if which == "initial" else self.final
        return [profile(spec.get(k), self.grid()) for k in names]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tolerances"] = {**DEFAULT_TOLERANCES, **self.tolerances}
        return d


def profile(spec, grid: Grid1D) -> np.ndarray:
    """Grid function from None (zero), "phiK", a list of modal coefficients or {"K": c}."""
    sp = DirichletSpectrum(grid)
    if spec is None:
        return np.zeros(grid.n)
    if isinstance(spec, str):
        if spec.startswith("phi") and spec[3:].isdigit():
            return sp.phi[int(spec[3:]) - 1].copy()
        raise ValueError(f"unknown preset {spec!r}; use 'phiK'")
    if isinstance(spec, dict):
        c = np.zeros(grid.n)
        for k, v in spec.items():
            c[int(k) - 1] = float(v)
        return sp.synth(c)
    return sp.synth(np.asarray(spec, dtype=float))


def from_dict(d: dict, path="<config>") -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigInvalid(path, "config must be a JSON object")
    if "experiment" not in d:
        raise ConfigInvalid(path, "missing field 'experiment'")
    exp = d["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigInvalid(path, f"unknown experiment {exp!r}; valid: {', '.join(EXPERIMENTS)}")
    known = {f.name for f in fields(ExperimentConfig)}
    extra = sorted(set(d) - known)
    if extra:
        raise ConfigInvalid(path, f"unknown field(s) {extra}")
    for name in REQUIRED[exp]:
        if d.get(name) is None:
            raise ConfigInvalid(path, f"missing field {name!r} required by {exp}")
    cfg = ExperimentConfig(**copy.deepcopy(d))
    validate(cfg, path)
    return cfg


def validate(cfg: ExperimentConfig, path="<config>") -> None:
    """Run the module pre-conditions before any computation."""
    try:
        if cfg.n < 2:
            raise ValueError("n must be >= 2")
        if not cfg.T > 0:
            raise ValueError("T must be positive")
        if cfg.experiment == "sweep":
            return
        if cfg.kernel is not None:
            cfg.build_kernel()
        if cfg.region is not None:
            cfg.build_region()
        for spec in (cfg.regions or {}).values():
            cfg.build_region(spec)
        if cfg.experiment in ("simulate", "adjoint", "control", "compare"):
            cfg.mesh().check_cfl(cfg.grid())
        if cfg.experiment in ("control", "compare"):
            cfg.cg_config()
            if cfg.observation_mode not in ("indicator", "weight_rho"):
                raise ValueError("observation_mode must be 'indicator' or 'weight_rho'")
        cfg.field_data("initial", ("y0", "y1", "z0"))
        cfg.field_data("final", ("p0", "p1", "q0"))
        unknown_tol = set(cfg.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown_tol:
            raise ValueError(f"unknown tolerance(s) {sorted(unknown_tol)}")
        if cfg.expect not in (None, "pass", "fail"):
            raise ValueError("expect must be 'pass' or 'fail'")
    except ConfigInvalid:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigInvalid(path, str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigInvalid(path, f"cannot read: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(path, f"invalid JSON: {exc}") from exc
    return from_dict(d, path)


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json_atomic(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_config(path, cfg: ExperimentConfig) -> None:
    d = {k: v for k, v in asdict(cfg).items() if v is not None}
    write_json_atomic(path, d)


def write_report(path, report: dict) -> None:
    write_json_atomic(path, report)
