"""Case configuration: flat ``key = value`` files with ``[section]`` headers.

Example::

    [geometry]
    shape = hshape
    arm_thickness = 0.46
    bridge_height = 0.5
    snap = yes

    [mesh]
    n = 64

    [physics]
    pr = 1
    ra = 1e3
    phi = 0

Every key may be overridden from the environment as
``HNFCAVITY_<SECTION>_<KEY>`` (upper case), e.g. ``HNFCAVITY_PHYSICS_RA=1e4``.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .mesh import GeometrySpec, MeshError, Shape
from .properties import PropertyError
from .solver import SolverConfig

ENV_PREFIX = "HNFCAVITY_"


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based source line when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line


@dataclass
class OutputFlags:
    fields: bool = True
    nusselt: bool = True
    streamfunction: bool = True
    report: bool = True


@dataclass
class CaseConfig:
    geometry: GeometrySpec = field(default_factory=lambda: GeometrySpec(Shape.SQUARE))
    n: int = 32
    pr: float = 0.71
    ra: float = 1e3
    phi: float = 0.0
    split: float = 0.5
    snap: bool = False
    weighted_nusselt: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)
    outputs: OutputFlags = field(default_factory=OutputFlags)
    sweep: dict[str, list[float]] = field(default_factory=dict)
    grids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.pr > 0:
            raise ConfigError(f"Pr must be positive, got {self.pr}")
        if not self.ra >= 0:
            raise ConfigError(f"Ra must be non-negative, got {self.ra}")
        if self.n < 2:
            raise ConfigError(f"grid n must be >= 2, got {self.n}")

    def replace(self, **changes) -> "CaseConfig":
        geo = {k: changes.pop(k) for k in list(changes) if k in _GEOMETRY_KEYS}
        out = dataclasses.replace(self, **changes)
        if geo:
            out = dataclasses.replace(out, geometry=dataclasses.replace(out.geometry, **geo))
        return out

    def label(self) -> str:
        """Deterministic directory name for this case's artifacts."""
        g = self.geometry
        tag = f"{g.shape.value}_n{self.n}_pr{self.pr:g}_ra{self.ra:g}_phi{self.phi:g}"
        if g.heater_extent != 1:
            tag += f"_heat{g.heater_extent:g}"
        return tag


_GEOMETRY_KEYS = {f.name for f in dataclasses.fields(GeometrySpec)}

# section -> key -> parser
_FLOAT, _INT = float, int


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


SCHEMA = {
    "geometry": {"shape": Shape, "outer_width": _FLOAT, "outer_height": _FLOAT,
                 "arm_thickness": _FLOAT, "bridge_height": _FLOAT, "heater_extent": _FLOAT,
                 "snap": _bool},
    "mesh": {"n": _INT},
    "physics": {"pr": _FLOAT, "ra": _FLOAT, "phi": _FLOAT, "split": _FLOAT},
    "solver": {"tolerance": _FLOAT, "max_newton": _INT, "max_picard": _INT, "damping": _FLOAT,
               "continuation": _floats, "min_step": _FLOAT, "max_bisections": _INT, "backend": str},
    "outputs": {"fields": _bool, "nusselt": _bool, "streamfunction": _bool, "report": _bool,
                "weighted_nusselt": _bool},
    "sweep": {"ra": _floats, "pr": _floats, "phi": _floats, "heater_extent": _floats},
    "gridstudy": {"grids": _ints},
}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to the line where it is defined."""
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip().lower()
            lines[(section, "")] = no
        elif "=" in s and section is not None:
            lines[(section, s.split("=", 1)[0].strip().lower())] = no
    return lines


def _environment_overrides(environ) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        for section in SCHEMA:
            if rest.startswith(section + "_"):
                out.setdefault(section, {})[rest[len(section) + 1:]] = value
                break
    return out


def parse_config(text: str = "", source: str | None = None, environ=None) -> CaseConfig:
    """Parse configuration text; environment overrides are applied on top.

    Raises
    ------
    ConfigError
        On syntax errors, unknown sections/keys or invalid values, with the
        offending line number.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True,
                                       inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", exc.lineno, source) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"cannot parse line {exc.errors[0][1].strip()!r}" if exc.errors else str(exc),
                          line, source) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), source) from exc

    lines = _key_lines(text)
    raw: dict[str, dict[str, tuple[str, int | None]]] = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((sec, "")), source)
        for key, value in parser.items(section):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((sec, key)), source)
            raw.setdefault(sec, {})[key] = (value, lines.get((sec, key)))
    for sec, items in _environment_overrides(os.environ if environ is None else environ).items():
        for key, value in items.items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown override {ENV_PREFIX}{sec.upper()}_{key.upper()}")
            raw.setdefault(sec, {})[key] = (value, None)

    values: dict[str, dict] = {}
    for sec, items in raw.items():
        for key, (text_value, line) in items.items():
            try:
                values.setdefault(sec, {})[key] = SCHEMA[sec][key](text_value)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}", line, source) from exc

    def first_line(sec):
        items = raw.get(sec, {})
        found = [ln for _, ln in items.values() if ln is not None]
        return min(found) if found else None

    geo = dict(values.get("geometry", {}))
    snap = geo.pop("snap", False)
    try:
        geometry = GeometrySpec(**geo)
    except (MeshError, ValueError, TypeError) as exc:
        raise ConfigError(f"[geometry] {exc}", first_line("geometry"), source) from exc
    try:
        solver = SolverConfig(**values.get("solver", {}))
    except ValueError as exc:
        raise ConfigError(f"[solver] {exc}", first_line("solver"), source) from exc
    out = dict(values.get("outputs", {}))
    weighted = out.pop("weighted_nusselt", True)
    phys = values.get("physics", {})
    try:
        cfg = CaseConfig(geometry=geometry, n=values.get("mesh", {}).get("n", 32), snap=snap,
                         weighted_nusselt=weighted, solver=solver, outputs=OutputFlags(**out),
                         sweep=values.get("sweep", {}), grids=values.get("gridstudy", {}).get("grids", []),
                         **phys)
    except ConfigError as exc:
        raise ConfigError(str(exc), first_line("physics"), source) from exc
    if not 0 <= cfg.phi:
        raise ConfigError(f"phi must be non-negative, got {cfg.phi}", first_line("physics"), source)
    return cfg


def load_config(path, environ=None) -> CaseConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, str(path), environ)


def format_config(cfg: CaseConfig) -> str:
    """Serialise a config so that ``parse_config(format_config(c))`` reproduces it."""
    g, s, o = cfg.geometry, cfg.solver, cfg.outputs
    lines = ["[geometry]", f"shape = {g.shape.value}"]
    lines += [f"{k} = {getattr(g, k)!r}" for k in
              ("outer_width", "outer_height", "arm_thickness", "bridge_height", "heater_extent")]
    lines += [f"snap = {'yes' if cfg.snap else 'no'}", "", "[mesh]", f"n = {cfg.n}", "",
              "[physics]", f"pr = {cfg.pr!r}", f"ra = {cfg.ra!r}", f"phi = {cfg.phi!r}",
              f"split = {cfg.split!r}", "", "[solver]"]
    lines += [f"{k} = {getattr(s, k)!r}" for k in
              ("tolerance", "max_newton", "max_picard", "damping", "min_step", "max_bisections")]
    lines.append(f"backend = {s.backend}")
    if s.continuation is not None:
        lines.append("continuation = " + ", ".join(repr(v) for v in s.continuation))
    lines += ["", "[outputs]"]
    lines += [f"{k} = {'yes' if getattr(o, k) else 'no'}" for k in ("fields", "nusselt", "streamfunction", "report")]
    lines.append(f"weighted_nusselt = {'yes' if cfg.weighted_nusselt else 'no'}")
    if cfg.sweep:
        lines += ["", "[sweep]"] + [f"{k} = " + ", ".join(repr(v) for v in vals) for k, vals in cfg.sweep.items()]
    if cfg.grids:
        lines += ["", "[gridstudy]", "grids = " + ", ".join(str(n) for n in cfg.grids)]
    return "\n".join(lines) + "\n"
