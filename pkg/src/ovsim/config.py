"""Run configuration: INI-style sections, baseline defaults and named
scenario presets."""

from __future__ import annotations

import configparser
import dataclasses
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .macro import FLUX_MODES, LOCAL, NONLOCAL, ParameterSet

SECTIONS = ("params", "scenario", "grid", "micro", "output")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MicroSettings:
    """Cell-scale settings. Lengths left as ``None`` scale with ``h``:
    ``sigma = h``, ``eps = 4h``, ``rho_ball = 2h``."""

    sigma: float | None = None
    M: int = 15
    eps: float | None = None
    P: int = 17
    rho_ball: float | None = None
    f_max: float | None = None
    f_max_factor: float = 2.0
    kappa: float = 0.5
    activation_threshold: float = 0.2
    mde_steps: int = 20

    def resolved(self, h: float) -> "MicroSettings":
        return replace(self,
                       sigma=h if self.sigma is None else self.sigma,
                       eps=4 * h if self.eps is None else self.eps,
                       rho_ball=2 * h if self.rho_ball is None else self.rho_ball)


@dataclass(frozen=True)
class RunConfig:
    params: ParameterSet = field(default_factory=ParameterSet)
    mode: str = LOCAL
    scenario: str = "baseline-local"
    stages: int = 75
    L: float = 4.0
    h: float = 0.03125
    micro: MicroSettings = field(default_factory=MicroSettings)
    out_dir: str = "ovsim-out"
    snapshot_every: int = 5
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in FLUX_MODES:
            raise ConfigError(f"scenario.infected_flux must be one of {FLUX_MODES}, got {self.mode!r}")
        if self.stages < 1:
            raise ConfigError(f"scenario.stages must be >= 1, got {self.stages}")
        if not (self.L > 0 and self.h > 0):
            raise ConfigError("grid.L and grid.h must be > 0")
        if self.snapshot_every < 1:
            raise ConfigError("output.snapshot_every must be >= 1")
        if self.threads < 1:
            raise ConfigError("output.threads must be >= 1")
        m = self.micro
        for name in ("sigma", "eps", "rho_ball", "f_max"):
            v = getattr(m, name)
            if v is not None and not v > 0:
                raise ConfigError(f"micro.{name} must be > 0, got {v}")
        if m.M < 1 or m.P < 3 or m.mde_steps < 1:
            raise ConfigError("micro.M >= 1, micro.P >= 3 and micro.mde_steps >= 1 are required")
        if not (0 < m.kappa <= 1):
            raise ConfigError(f"micro.kappa must lie in (0, 1], got {m.kappa}")
        if not (0 <= m.activation_threshold < 1):
            raise ConfigError("micro.activation_threshold must lie in [0, 1)")
        if m.f_max_factor <= 1:
            raise ConfigError("micro.f_max_factor must be > 1")
        if m.sigma is not None and abs(m.sigma - self.h) > 1e-12 * self.h:
            raise ConfigError("micro.sigma must equal grid.h (micro-fibre domains tile the grid)")

    def resolved_micro(self) -> MicroSettings:
        return self.micro.resolved(self.h)

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


# Each preset lists exactly what differs from the baseline.
PRESETS: dict[str, dict] = {
    "baseline-local": {},
    "fibre-30": {"R_F": 0.30},
    "fibre-35": {"R_F": 0.35},
    "fibre-40": {"R_F": 0.40},
    "ScF-05": {"S_cF": 0.5},
    "fibre-30-ScF-05": {"R_F": 0.30, "S_cF": 0.5},
    "fibre-40-ScF-05": {"R_F": 0.40, "S_cF": 0.5},
    "nonlocal-baseline": {"mode": NONLOCAL},
    "nonlocal-ScFSiF-03": {"mode": NONLOCAL, "S_cF": 0.3, "S_iF": 0.3},
    "nonlocal-Sie-0001": {"mode": NONLOCAL, "S_ie": 0.001},
    "nonlocal-fibre-30": {"mode": NONLOCAL, "R_F": 0.30},
    "nonlocal-fibre-30-weak": {"mode": NONLOCAL, "R_F": 0.30, "S_cc": 0.05, "S_ce": 0.001},
    "cross-adhesion-a": {"mode": NONLOCAL, "S_cc": 0.05, "S_ci": 0.05, "S_ic": 0.1, "S_ii": 0.1,
                         "S_ce": 0.001},
    "cross-adhesion-b": {"mode": NONLOCAL, "S_cc": 0.1, "S_ci": 0.1, "S_ic": 0.05, "S_ii": 0.05,
                         "S_ie": 0.001},
}


def preset_config(name: str, base: RunConfig | None = None) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(PRESETS)}")
    base = base or RunConfig()
    changes = dict(PRESETS[name])
    mode = changes.pop("mode", LOCAL)
    return replace(base, scenario=name, mode=mode, params=replace(base.params, **changes))


# key tables: section -> {key: (target, attribute, type)}
_PARAM_KEYS = {f.name: f.type for f in fields(ParameterSet)}
_MICRO_KEYS = {f.name: f.type for f in fields(MicroSettings)}
_SCENARIO_KEYS = {"name": "str", "infected_flux": "str", "stages": "int"}
_GRID_KEYS = {"L": "float", "h": "float"}
_OUTPUT_KEYS = {"dir": "str", "snapshot_every": "int", "threads": "int", "seed": "int"}
_KEYS = {"params": _PARAM_KEYS, "scenario": _SCENARIO_KEYS, "grid": _GRID_KEYS,
         "micro": _MICRO_KEYS, "output": _OUTPUT_KEYS}


def _line_of(text: str, section: str | None, key: str | None = None) -> int:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return n
    return 0


def _convert(raw: str, typ: str, where: str):
    raw = raw.strip()
    kind = typ.replace(" ", "")
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            if raw.lower() in ("none", ""):
                if "None" in kind:
                    return None
                raise ValueError("a number is required")
            return float(raw)
        if kind.startswith("str"):
            return raw.strip('"').strip("'")
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.split('|')[0]}: {exc}") from None
    raise ConfigError(f"{where}: unsupported type {typ}")


def loads_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse config text; missing keys take the baseline defaults."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from None

    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _KEYS:
            raise ConfigError(f"{source}:{_line_of(text, section)}: unknown section [{section}]")
        table = _KEYS[section]
        values[section] = {}
        for key, raw in parser.items(section):
            line = _line_of(text, section, key)
            where = f"{source}:{line}: {section}.{key}"
            if key not in table:
                raise ConfigError(f"{where}: unknown key")
            values[section][key] = (_convert(raw, table[key], where), line)

    def get(section, key, default):
        return values.get(section, {}).get(key, (default, 0))[0]

    scenario = get("scenario", "name", "baseline-local")
    try:
        cfg = preset_config(scenario)
    except ConfigError as exc:
        raise ConfigError(f"{source}:{_line_of(text, 'scenario', 'name')}: scenario.name: {exc}") from None

    def build(section, make):
        try:
            return make()
        except (ValueError, TypeError) as exc:
            msg = str(exc)
            key = next((k for k in values.get(section, {}) if re.search(rf"\b{re.escape(k)}\b", msg)), None)
            line = values[section][key][1] if key else _line_of(text, section)
            raise ConfigError(f"{source}:{line}: {section}{'.' + key if key else ''}: {msg}") from None

    params = build("params", lambda: replace(cfg.params, **{k: v for k, (v, _) in values.get("params", {}).items()}))
    micro = build("micro", lambda: replace(cfg.micro, **{k: v for k, (v, _) in values.get("micro", {}).items()}))

    def make_cfg():
        return RunConfig(
            params=params,
            mode=get("scenario", "infected_flux", cfg.mode),
            scenario=scenario,
            stages=get("scenario", "stages", cfg.stages),
            L=get("grid", "L", cfg.L),
            h=get("grid", "h", cfg.h),
            micro=micro,
            out_dir=get("output", "dir", cfg.out_dir),
            snapshot_every=get("output", "snapshot_every", cfg.snapshot_every),
            threads=get("output", "threads", cfg.threads),
            seed=get("output", "seed", cfg.seed),
        )

    try:
        return make_cfg()
    except ConfigError as exc:
        msg = str(exc)
        m = re.match(r"(\w+)\.(\w+)", msg)
        line = 0
        if m:
            sect, key = m.group(1), m.group(2)
            if sect in values and key in values[sect]:
                line = values[sect][key][1]
        raise ConfigError(f"{source}:{line}: {msg}") from None


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads_config(text, source=str(path))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_config(cfg: RunConfig) -> str:
    out = ["[scenario]", f"name = {cfg.scenario}", f"infected_flux = {cfg.mode}",
           f"stages = {cfg.stages}", "", "[grid]", f"L = {_fmt(cfg.L)}", f"h = {_fmt(cfg.h)}", "",
           "[params]"]
    out += [f"{f.name} = {_fmt(getattr(cfg.params, f.name))}" for f in fields(ParameterSet)]
    out += ["", "[micro]"]
    out += [f"{f.name} = {_fmt(getattr(cfg.micro, f.name))}" for f in fields(MicroSettings)
            if getattr(cfg.micro, f.name) is not None]
    out += ["", "[output]", f"dir = {cfg.out_dir}", f"snapshot_every = {cfg.snapshot_every}",
            f"threads = {cfg.threads}", f"seed = {cfg.seed}", ""]
    return "\n".join(out)


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
