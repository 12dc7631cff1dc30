"""Run configuration: flat dotted key-value files, defaults, validation.

The on-disk format is one ``section.key = value`` assignment per line,
``#`` comments, blank lines ignored.  Command-line overrides use the
same ``key=value`` strings and win over file entries.  Parsing collects
every violation before raising, so a bad file reports all its problems
at once; structural problems (unreadable file, a line that is not an
assignment, a repeated key) raise ParseError immediately.

The symmetric prestrain generator accepts one number (isotropic
multiple of the identity), three (diagonal), or nine (full row-major
matrix, checked for symmetry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "GridSection",
    "ModelSection",
    "SchemeSection",
    "QuasiSection",
    "DataSection",
    "IoSection",
    "RunConfig",
    "parse_config",
    "parse_assignments",
    "apply_assignments",
    "validate",
    "render_config",
    "config_as_dict",
]


@dataclass(frozen=True)
class GridSection:
    n: int = 32
    L: float = 2.0 * math.pi
    dealias_fraction: float = 2.0 / 3.0


@dataclass(frozen=True)
class ModelSection:
    base: str = "W01"
    q: float = 2.0
    composition: str = "right"
    m_b: tuple = tuple(map(tuple, 0.1 * np.eye(3)))
    quadratic_term: bool = True


@dataclass(frozen=True)
class SchemeSection:
    dt: float = 1e-3
    t_end: float = 1.0
    eps: float = 0.0
    n_galerkin: int | None = None
    cfl_safety: float = 0.8
    a_split: float | None = None  # None resolves to the equilibrium stiffness
    cfl_check_every: int = 100
    growth_factor: float = 1e3


@dataclass(frozen=True)
class QuasiSection:
    picard_tol: float = 1e-12
    max_iter: int = 50
    elliptic_tol: float = 1e-8


@dataclass(frozen=True)
class DataSection:
    seed: int = 0
    amplitude: float = 1e-2
    band: int = 2
    mean_zero_phi: bool = True


@dataclass(frozen=True)
class IoSection:
    out_dir: str = "runs/out"
    stride: int = 10
    heavy_stride: int = 10  # every N-th record carries the augmented energy; 0 = never
    save_final_state: bool = True


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    scheme: SchemeSection = field(default_factory=SchemeSection)
    quasi: QuasiSection = field(default_factory=QuasiSection)
    data: DataSection = field(default_factory=DataSection)
    io: IoSection = field(default_factory=IoSection)

    def m_b_matrix(self) -> np.ndarray:
        return np.asarray(self.model.m_b, dtype=float)


# -- value parsers -----------------------------------------------------------


def _parse_float(raw: str) -> float:
    return float(raw)


def _parse_int(raw: str) -> int:
    value = int(raw, 0) if raw.lower().startswith("0x") else int(raw)
    return value


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_opt_int(raw: str) -> int | None:
    if raw.lower() in ("none", "off"):
        return None
    return int(raw)


def _parse_opt_float(raw: str) -> float | None:
    if raw.lower() in ("none", "auto"):
        return None
    return float(raw)


def _parse_str(raw: str) -> str:
    return raw


def _parse_m_b(raw: str) -> tuple:
    parts = [p for chunk in raw.split(",") for p in chunk.split()]
    values = [float(p) for p in parts]
    if len(values) == 1:
        m = values[0] * np.eye(3)
    elif len(values) == 3:
        m = np.diag(values)
    elif len(values) == 9:
        m = np.array(values).reshape(3, 3)
    else:
        raise ValueError(f"expected 1, 3, or 9 numbers, got {len(values)}")
    return tuple(map(tuple, m))


_KEYS = {
    "grid.n": _parse_int,
    "grid.L": _parse_float,
    "grid.dealias_fraction": _parse_float,
    "model.base": _parse_str,
    "model.q": _parse_float,
    "model.composition": _parse_str,
    "model.M_B": _parse_m_b,
    "model.quadratic_term": _parse_bool,
    "scheme.dt": _parse_float,
    "scheme.t_end": _parse_float,
    "scheme.eps": _parse_float,
    "scheme.n_galerkin": _parse_opt_int,
    "scheme.cfl_safety": _parse_float,
    "scheme.a_split": _parse_opt_float,
    "scheme.cfl_check_every": _parse_int,
    "scheme.growth_factor": _parse_float,
    "quasi.picard_tol": _parse_float,
    "quasi.max_iter": _parse_int,
    "quasi.elliptic_tol": _parse_float,
    "data.seed": _parse_int,
    "data.amplitude": _parse_float,
    "data.band": _parse_int,
    "data.mean_zero_phi": _parse_bool,
    "io.out_dir": _parse_str,
    "io.stride": _parse_int,
    "io.heavy_stride": _parse_int,
    "io.save_final_state": _parse_bool,
}

# config key "model.M_B" lands on dataclass field "m_b"
_FIELD_NAMES = {"model.M_B": "m_b"}


def _field_name(key: str) -> str:
    return _FIELD_NAMES.get(key, key.split(".", 1)[1])


def parse_assignments(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key = value`` pairs from config text; structure errors raise."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ParseError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ParseError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = raw
    return pairs


def apply_assignments(
    config: RunConfig, pairs: dict[str, str]
) -> tuple[RunConfig, list[str]]:
    """Fold raw string pairs into a config; unknown keys and bad values collect."""
    violations = []
    staged: dict[str, dict] = {}
    for key, raw in pairs.items():
        parser = _KEYS.get(key)
        if parser is None:
            violations.append(f"{key}: unknown key")
            continue
        try:
            value = parser(raw)
        except ValueError as exc:
            violations.append(f"{key}: {exc}")
            continue
        section = key.split(".", 1)[0]
        staged.setdefault(section, {})[_field_name(key)] = value
    for section, updates in staged.items():
        config = replace(config, **{section: replace(getattr(config, section), **updates)})
    return config, violations


def _retained_band(n: int, fraction: float) -> int:
    return int(math.floor(fraction * n / 2.0))


def validate(config: RunConfig, verb: str | None = None) -> list[str]:
    """All range and consistency violations; empty means valid."""
    v = []
    g, m, s, q, d, io_ = (
        config.grid,
        config.model,
        config.scheme,
        config.quasi,
        config.data,
        config.io,
    )
    if g.n < 4 or g.n % 2 != 0:
        v.append(f"grid.n: must be even and >= 4, got {g.n}")
    if not g.L > 0.0:
        v.append(f"grid.L: must be positive, got {g.L}")
    if not 0.0 < g.dealias_fraction <= 1.0:
        v.append(f"grid.dealias_fraction: must lie in (0, 1], got {g.dealias_fraction}")

    if m.base not in ("W01", "W02", "CaseStudy"):
        v.append(f"model.base: unknown variant {m.base!r}")
    if m.base != "CaseStudy" and not m.q > 1.0:
        v.append(f"model.q: determinant exponent must exceed 1, got {m.q}")
    if m.composition not in ("right", "left", "none"):
        v.append(f"model.composition: unknown composition {m.composition!r}")
    mb = np.asarray(m.m_b, dtype=float)
    if mb.shape != (3, 3):
        v.append(f"model.M_B: expected a 3x3 matrix, got shape {mb.shape}")
    elif not np.allclose(mb, mb.T, rtol=0.0, atol=1e-14):
        v.append("model.M_B: generator must be symmetric")

    if not s.dt > 0.0:
        v.append(f"scheme.dt: must be positive, got {s.dt}")
    if s.t_end < 0.0:
        v.append(f"scheme.t_end: must be nonnegative, got {s.t_end}")
    if s.eps < 0.0:
        v.append(f"scheme.eps: must be nonnegative, got {s.eps}")
    if s.n_galerkin is not None and s.n_galerkin < 1:
        v.append(f"scheme.n_galerkin: must be >= 1 or none, got {s.n_galerkin}")
    if not 0.0 < s.cfl_safety <= 1.0:
        v.append(f"scheme.cfl_safety: must lie in (0, 1], got {s.cfl_safety}")
    if s.cfl_check_every < 1:
        v.append(f"scheme.cfl_check_every: must be >= 1, got {s.cfl_check_every}")
    if not s.growth_factor > 1.0:
        v.append(f"scheme.growth_factor: must exceed 1, got {s.growth_factor}")

    if not q.picard_tol > 0.0:
        v.append(f"quasi.picard_tol: must be positive, got {q.picard_tol}")
    if q.max_iter < 1:
        v.append(f"quasi.max_iter: must be >= 1, got {q.max_iter}")
    if not q.elliptic_tol > 0.0:
        v.append(f"quasi.elliptic_tol: must be positive, got {q.elliptic_tol}")

    if d.seed < 0:
        v.append(f"data.seed: must be nonnegative, got {d.seed}")
    if d.amplitude < 0.0:
        v.append(f"data.amplitude: must be nonnegative, got {d.amplitude}")
    if d.band < 1:
        v.append(f"data.band: must be >= 1, got {d.band}")
    elif g.n >= 4 and 0.0 < g.dealias_fraction <= 1.0:
        retained = _retained_band(g.n, g.dealias_fraction)
        if d.band > retained:
            v.append(
                f"data.band: {d.band} exceeds the retained band {retained} "
                f"of grid.n={g.n} at dealias_fraction={g.dealias_fraction}"
            )

    if not io_.out_dir:
        v.append("io.out_dir: must be nonempty")
    if io_.stride < 1:
        v.append(f"io.stride: must be >= 1, got {io_.stride}")
    if io_.heavy_stride < 0:
        v.append(f"io.heavy_stride: must be >= 0 (0 disables), got {io_.heavy_stride}")

    if verb == "quasistatic" and not d.mean_zero_phi:
        v.append(
            "data.mean_zero_phi: quasi-static runs require mean-zero order "
            "parameter data (the diffusion flux conserves the mean)"
        )
    return v


def parse_config(
    path, overrides: tuple[str, ...] = (), verb: str | None = None
) -> RunConfig:
    """Config file plus override strings -> validated RunConfig.

    Raises ParseError on structural problems and ValidationError carrying
    the full list of violations otherwise.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config {path!r}: {exc}") from exc
    pairs = parse_assignments(text, source=str(path))
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override {item!r}: expected key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        pairs[key] = raw  # overrides win over file entries
    config, violations = apply_assignments(RunConfig(), pairs)
    violations += validate(config, verb=verb)
    if violations:
        raise ValidationError(violations)
    return config


def _render_value(key: str, value) -> str:
    if key == "model.M_B":
        return " ".join(repr(float(x)) for row in value for x in row)
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _iter_keys(config: RunConfig):
    for key in _KEYS:
        section = key.split(".", 1)[0]
        yield key, getattr(getattr(config, section), _field_name(key))


def render_config(config: RunConfig) -> str:
    """Canonical echo of every effective key; parsing it back round-trips."""
    lines = [f"{key} = {_render_value(key, value)}" for key, value in _iter_keys(config)]
    return "\n".join(lines) + "\n"


def config_as_dict(config: RunConfig) -> dict:
    """JSON-ready nested dict of the effective configuration."""
    out: dict[str, dict] = {}
    for section_field in fields(config):
        section = getattr(config, section_field.name)
        entry = {}
        for f in fields(section):
            value = getattr(section, f.name)
            name = f.name
            if name == "m_b":
                # external key name, as in config files
                name = "M_B"
                value = [list(map(float, row)) for row in value]
            entry[name] = value
        out[section_field.name] = entry
    return out
