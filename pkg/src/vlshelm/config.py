"""JSON run configuration.

A config file is a JSON object whose sections mirror the dataclasses below.
Every key is optional; unknown keys and badly typed values are rejected with
the dotted field path and, where it can be located, the line number.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = [
    "DomainConfig",
    "SourceConfig",
    "ContrastConfig",
    "SolverConfig",
    "InversionConfig",
    "ExperimentConfig",
    "RunConfig",
    "load_config",
    "parse_config",
]


@dataclass
class DomainConfig:
    shape: str = "rect"  # "rect" or "disk"
    width: float = 1.0
    height: float = 1.0
    nx: int = 32
    ny: int = 32
    n_boundary: int = 64
    radius: float = 1.0
    refinements: int = 0

    def validate(self):
        _choice("domain.shape", self.shape, ("rect", "disk"))
        _positive("domain.width", self.width)
        _positive("domain.height", self.height)
        _positive("domain.nx", self.nx)
        _positive("domain.ny", self.ny)
        _positive("domain.radius", self.radius)
        if self.n_boundary < 8:
            raise ConfigError("domain.n_boundary: must be at least 8")
        if self.refinements < 0:
            raise ConfigError("domain.refinements: must be non-negative")


@dataclass
class SourceConfig:
    positions: list = field(default_factory=lambda: [[0.15, 0.5], [0.85, 0.5]])
    radius: float | None = None  # None: twice the mesh size

    def validate(self):
        pts = np.asarray(self.positions, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
            raise ConfigError("sources.positions: expected a non-empty list of [x, y] pairs")
        if self.radius is not None:
            _positive("sources.radius", self.radius)


@dataclass
class ContrastConfig:
    kind: str = "indicator"  # "zero", "constant", "indicator" or "file"
    value: float = 0.2
    box: list = field(default_factory=lambda: [0.25, 0.75, 0.25, 0.75])
    path: str | None = None

    def validate(self):
        _choice("q_true.kind", self.kind, ("zero", "constant", "indicator", "file"))
        if len(self.box) != 4:
            raise ConfigError("q_true.box: expected [xmin, xmax, ymin, ymax]")
        if self.kind == "file" and not self.path:
            raise ConfigError("q_true.path: required when kind is 'file'")
        if self.kind in ("constant", "indicator") and self.value < -1:
            raise ConfigError("q_true.value: contrast must be >= -1")


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 500
    restart: int = 50
    lu_refine_tol: float | None = None

    def validate(self):
        _positive("solver.tol", self.tol)
        _positive("solver.max_iter", self.max_iter)
        _positive("solver.restart", self.restart)
        if self.lu_refine_tol is not None:
            _positive("solver.lu_refine_tol", self.lu_refine_tol)


@dataclass
class InversionConfig:
    kind: str = "fwi"  # "fwi" or "rom"
    a: float = 1e-6
    p: float = 4.0
    max_iter: int = 60
    param_grid: list = field(default_factory=lambda: [8, 8])
    bound: float | None = None
    gradient: str | None = None  # "adjoint", "fd" or None for the default of each kind
    floor: float = 0.0

    def validate(self):
        _choice("inversion.kind", self.kind, ("fwi", "rom"))
        if self.a < 0:
            raise ConfigError("inversion.a: must be non-negative")
        if not self.p > 2:
            raise ConfigError("inversion.p: must exceed 2")
        _positive("inversion.max_iter", self.max_iter)
        if len(self.param_grid) != 2 or min(self.param_grid) < 1:
            raise ConfigError("inversion.param_grid: expected [nx, ny] with positive entries")
        if self.gradient is not None:
            _choice("inversion.gradient", self.gradient, ("adjoint", "fd"))
        if self.floor < -1:
            raise ConfigError("inversion.floor: must be >= -1")


@dataclass
class ExperimentConfig:
    amplitude: float = 0.3
    n_list: list = field(default_factory=lambda: [2, 4, 8, 16])
    k: float = 2.0
    source_center: list = field(default_factory=lambda: [0.5, 0.5])
    source_width: float = 0.1
    k_list: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    direction: list = field(default_factory=lambda: [1.0, 0.0])
    refinements: int = 4

    def validate(self):
        _positive("experiment.k", self.k)
        _positive("experiment.source_width", self.source_width)
        if not self.n_list or min(self.n_list) < 1:
            raise ConfigError("experiment.n_list: expected positive integers")
        if not self.k_list or min(self.k_list) <= 0:
            raise ConfigError("experiment.k_list: expected positive wavenumbers")
        if len(self.direction) != 2 or not np.any(self.direction):
            raise ConfigError("experiment.direction: expected a nonzero [dx, dy]")
        if self.refinements < 1:
            raise ConfigError("experiment.refinements: must be at least 1")


@dataclass
class RunConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    order: int = 1
    k_values: list = field(default_factory=lambda: [1.0, 1.5, 2.0])
    sources: SourceConfig = field(default_factory=SourceConfig)
    q_true: ContrastConfig = field(default_factory=ContrastConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    source_strength: float = 1.0  # 0 gives a zero right-hand side
    threads: int = 1
    output: str = "output"
    seed: int = 0

    def validate(self):
        _choice("order", self.order, (1, 2))
        ks = np.asarray(self.k_values, dtype=float)
        if ks.ndim != 1 or len(ks) == 0 or np.any(ks <= 0) or np.any(np.diff(ks) <= 0):
            raise ConfigError("k_values: expected a strictly increasing list of positive wavenumbers")
        _positive("threads", self.threads)
        for section in (self.domain, self.sources, self.q_true, self.solver, self.inversion, self.experiment):
            section.validate()
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{name}: {value!r} is not one of {list(allowed)}")


def _positive(name, value):
    if not value > 0:
        raise ConfigError(f"{name}: must be positive, got {value!r}")


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text, key):
    line = _line_of(text, key)
    return f" (line {line})" if line else ""


def _type_ok(value, default, hint):
    if value is None:
        return "None" in str(hint)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int) and not isinstance(default, bool):
        if "float" in str(hint):
            return isinstance(value, (int, float)) and not isinstance(value, bool)
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float) or "float" in str(hint):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str) or "str" in str(hint):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _build(cls, data, prefix, text):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"{path}: unknown key{_where(text, key)}; allowed: {sorted(known)}")
        f = known[key]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, path + ".", text)
            continue
        if not _type_ok(value, default, f.type):
            raise ConfigError(f"{path}: bad value {value!r}{_where(text, key)}")
        kwargs[key] = float(value) if isinstance(default, float) and isinstance(value, int) else value
    return cls(**kwargs)


def parse_config(data, text=None):
    """Build and validate a ``RunConfig`` from a parsed JSON object."""
    cfg = _build(RunConfig, data, "", text)
    try:
        return cfg.validate()
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0].rsplit(".", 1)[-1]
        raise ConfigError(f"{exc}{_where(text, key)}") from None


def load_config(path=None):
    """Read a config file; ``None`` gives the default configuration."""
    if path is None:
        return RunConfig().validate()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(data, text)
