"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments.  Keys (all optional except
``problem``)::

    problem    boundary_layer | fichera | eriksson_johnson | poly_sanity
    eps        diffusion parameter (problem default if absent)
    degree     polynomial degree for poly_sanity
    variant    literal | standard (fichera corner function)
    theta      Doerfler parameter, 0 < theta <= 1          [0.75]
    alpha      graph-norm weight                            [1.0]
    dp         test enrichment                              [1]
    p_max      maximum order per direction, >= 2            [6]
    tol        stop when eta_total <= tol                   [1e-8]
    max_iter   iteration budget                             [30]
    max_dofs   dof budget                                   [100000]
    max_seconds  wall-clock budget in seconds (none if absent)
    mode       hp | iso-p2 | iso-p3 | iso-p4                [hp]
    out        output directory                             [out]
    seed       seed for randomized checks                   [0]
    vtk        write mesh_NNN.vtu files (true/false)        [true]
    timing     fill the seconds column (true/false)         [true]
"""
from __future__ import annotations

from dataclasses import dataclass, fields

from ..problems import PROBLEMS

MODES = ("hp", "iso-p2", "iso-p3", "iso-p4")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = ""
    eps: float | None = None
    degree: int | None = None
    variant: str | None = None
    theta: float = 0.75
    alpha: float = 1.0
    dp: int = 1
    p_max: int = 6
    tol: float = 1e-8
    max_iter: int = 30
    max_dofs: int = 100_000
    max_seconds: float | None = None
    mode: str = "hp"
    out: str = "out"
    seed: int = 0
    vtk: bool = True
    timing: bool = True

    def validate(self) -> "RunConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of "
                              f"{', '.join(sorted(PROBLEMS))}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.p_max < 2:
            raise ConfigError(f"p_max must be >= 2, got {self.p_max}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.eps is not None and not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.max_seconds is not None and not self.max_seconds > 0:
            raise ConfigError(f"max_seconds must be positive, got {self.max_seconds}")
        if self.dp < 1 or self.alpha <= 0 or self.max_iter < 1 or self.max_dofs < 1:
            raise ConfigError("dp, alpha, max_iter and max_dofs must be positive")
        return self


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw: str):
    t = _TYPES[key]
    try:
        if "bool" in t:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if "float" in t:
            return float(raw)
        if "int" in t:
            return int(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, **overrides) -> RunConfig:
    cfg = RunConfig()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        setattr(cfg, key, _convert(key, val))
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg.validate()


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, **overrides)
