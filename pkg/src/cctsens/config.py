"""INI run configuration.

Sections and keys (all optional except ``[scenario] system``)::

    [scenario]  system, variant
    [params]    <parameter> = <value>   overrides of the catalog defaults
    [solver]    dt, newton_tol, newton_max_iter, delta_floor, t_max,
                max_halvings, singular_tol, sep_radius, dwell, branch_tol
    [cct]       bracket = lo, hi; cct_tol, classify_tol, capture, eps_uep, eps_kappa,
                truncation, cuep_truncation, fd_delta, fd_cct_tol
    [sweep]     param, from, to, steps, tolerance, skip_adjacent
    [portrait]  x_lo, x_hi, points, t_span, trace_var, trace_lo, trace_hi,
                trace_points, tcl
    [output]    dir, trajectories

Unknown sections or keys are errors, so a typo never silently falls back
to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .cct import CctConfig
from .exceptions import CctError, ContractViolation
from .integrator import IntegratorConfig
from .systems import CATALOG, build_system, get_system


class ConfigError(CctError, ValueError):
    """The configuration file is missing, malformed or inconsistent."""


SECTIONS = ("scenario", "params", "solver", "cct", "sweep", "portrait", "output")

_SOLVER_KEYS = {
    "dt": float, "newton_tol": float, "newton_max_iter": int, "delta_floor": float,
    "t_max": float, "max_halvings": int, "singular_tol": float, "sep_radius": float,
    "dwell": float, "branch_tol": float,
}
_CCT_KEYS = {
    "cct_tol": float, "classify_tol": float, "eps_uep": float, "eps_kappa": float,
    "truncation": float, "cuep_truncation": str, "fd_delta": float, "fd_cct_tol": float,
    "capture": float,
}


@dataclass(frozen=True)
class SweepSpec:
    param: str
    start: float
    stop: float
    steps: int
    tolerance: float = 0.02
    skip_adjacent: bool = True

    def values(self) -> list[float]:
        if self.steps == 1:
            return [self.start]
        step = (self.stop - self.start) / (self.steps - 1)
        # rounded so that printed sweep values are the intended decimals
        return [round(self.start + i * step, 12) for i in range(self.steps)]


@dataclass(frozen=True)
class PortraitSpec:
    x_lo: tuple[float, ...] = ()
    x_hi: tuple[float, ...] = ()
    points: tuple[int, ...] = ()
    t_span: float = 2.0
    trace_var: int = 0
    trace_lo: float = -4.0
    trace_hi: float = 4.0
    trace_points: int = 401
    tcl: float | None = None


@dataclass(frozen=True)
class RunConfig:
    system: str
    variant: str | None = None
    overrides: dict = field(default_factory=dict)
    solver: IntegratorConfig = field(default_factory=IntegratorConfig)
    cct: CctConfig = field(default_factory=CctConfig)
    sweep: SweepSpec | None = None
    portrait: PortraitSpec = field(default_factory=PortraitSpec)
    out_dir: Path = Path("out")
    trajectories: bool = True

    @property
    def active(self) -> str:
        return self.sweep.param if self.sweep is not None else get_system(self.system).active

    def build(self, value: float | None = None):
        """Scenario and parameters, with the active parameter set to ``value``."""
        overrides = dict(self.overrides)
        if value is not None:
            overrides[self.active] = value
        return build_system(self.system, overrides, active=self.active, variant=self.variant)


def _floats(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _convert(section: str, key: str, text: str, kind):
    try:
        if kind is bool:
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        return kind(text.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {text!r} as {kind.__name__}") from None


def _check_keys(parser, section: str, allowed) -> None:
    extra = sorted(set(parser[section]) - set(allowed))
    if extra:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(extra)}")


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    """Parse INI text into a validated RunConfig."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")
    if not parser.has_section("scenario") or "system" not in parser["scenario"]:
        raise ConfigError("[scenario] system is required")
    _check_keys(parser, "scenario", ("system", "variant"))
    system = parser["scenario"]["system"].strip()
    if system not in CATALOG:
        raise ConfigError(f"unknown system {system!r}; known: {', '.join(sorted(CATALOG))}")
    entry = CATALOG[system]
    variant = parser["scenario"].get("variant")
    variant = variant.strip() if variant else None

    overrides = {}
    if parser.has_section("params"):
        for key, text_v in parser["params"].items():
            if key not in entry.defaults:
                raise ConfigError(f"[params] system {system} has no parameter {key!r}")
            overrides[key] = _convert("params", key, text_v, float)

    solver_kw = {"t_max": entry.t_max}
    if parser.has_section("solver"):
        _check_keys(parser, "solver", _SOLVER_KEYS)
        for key, text_v in parser["solver"].items():
            solver_kw[key] = _convert("solver", key, text_v, _SOLVER_KEYS[key])

    cct_kw = {"bracket": entry.bracket}
    if parser.has_section("cct"):
        _check_keys(parser, "cct", (*_CCT_KEYS, "bracket"))
        for key, text_v in parser["cct"].items():
            if key == "bracket":
                br = _floats(text_v, "[cct] bracket")
                if len(br) != 2:
                    raise ConfigError("[cct] bracket needs two numbers: low, high")
                cct_kw["bracket"] = br
            else:
                cct_kw[key] = _convert("cct", key, text_v, _CCT_KEYS[key])

    sweep = None
    if parser.has_section("sweep"):
        sec = parser["sweep"]
        _check_keys(parser, "sweep", ("param", "from", "to", "steps", "tolerance",
                                      "skip_adjacent"))
        missing = [k for k in ("from", "to", "steps") if k not in sec]
        if missing:
            raise ConfigError(f"[sweep] missing keys: {', '.join(missing)}")
        param = sec.get("param", entry.active).strip()
        if param not in entry.defaults:
            raise ConfigError(f"[sweep] system {system} has no parameter {param!r}")
        sweep = SweepSpec(
            param=param,
            start=_convert("sweep", "from", sec["from"], float),
            stop=_convert("sweep", "to", sec["to"], float),
            steps=_convert("sweep", "steps", sec["steps"], int),
            tolerance=_convert("sweep", "tolerance", sec.get("tolerance", "0.02"), float),
            skip_adjacent=_convert("sweep", "skip_adjacent", sec.get("skip_adjacent", "yes"),
                                   bool))
        if not sweep.start < sweep.stop:
            raise ConfigError("[sweep] from must be below to")
        if sweep.steps < 2:
            raise ConfigError("[sweep] steps must be at least 2")
        if not sweep.tolerance > 0:
            raise ConfigError("[sweep] tolerance must be positive")

    portrait = PortraitSpec()
    if parser.has_section("portrait"):
        sec = parser["portrait"]
        allowed = {f.name for f in fields(PortraitSpec)}
        _check_keys(parser, "portrait", allowed)
        kw = {}
        for key in ("x_lo", "x_hi"):
            if key in sec:
                kw[key] = _floats(sec[key], f"[portrait] {key}")
        if "points" in sec:
            pts = _floats(sec["points"], "[portrait] points")
            if any(v < 0 or v != int(v) for v in pts):
                raise ConfigError("[portrait] points must be non-negative integers")
            kw["points"] = tuple(int(v) for v in pts)
        for key, kind in (("t_span", float), ("trace_var", int), ("trace_lo", float),
                          ("trace_hi", float), ("trace_points", int), ("tcl", float)):
            if key in sec:
                kw[key] = _convert("portrait", key, sec[key], kind)
        portrait = PortraitSpec(**kw)
        if not (len(portrait.x_lo) == len(portrait.x_hi) == len(portrait.points)):
            raise ConfigError("[portrait] x_lo, x_hi and points need the same length")
        if not portrait.trace_lo < portrait.trace_hi or portrait.trace_points < 2:
            raise ConfigError("[portrait] trace range is empty")

    out_dir = Path("out")
    trajectories = True
    if parser.has_section("output"):
        _check_keys(parser, "output", ("dir", "trajectories"))
        sec = parser["output"]
        if "dir" in sec:
            out_dir = Path(sec["dir"].strip())
        if "trajectories" in sec:
            trajectories = _convert("output", "trajectories", sec["trajectories"], bool)
    if base_dir is not None and not out_dir.is_absolute():
        out_dir = base_dir / out_dir

    try:
        solver = IntegratorConfig(**solver_kw)
        cct = CctConfig(**cct_kw)
        cfg = RunConfig(system=system, variant=variant, overrides=overrides, solver=solver,
                        cct=cct, sweep=sweep, portrait=portrait, out_dir=out_dir,
                        trajectories=trajectories)
        cfg.build(None)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_config(text, base_dir=path.parent)


def with_out_dir(cfg: RunConfig, out_dir) -> RunConfig:
    return replace(cfg, out_dir=Path(out_dir))
