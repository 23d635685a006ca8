"""Run configuration grammar, settings file and logging setup.

A run configuration is line-oriented text with ``[section]`` headers and
``key = value`` lines; ``#`` outside quotes starts a comment. Values are read with
YAML, so numbers may be decimal or scientific, lists are ``[a, b, c]``, booleans are
``true``/``false`` and a quoted value is always a string. Example:

    [model]
    model = competition
    variant = sweep

    [grid]
    n = 256

    [time]
    t_end = 1.0

    [ic]
    family = cosine_perturbed_equilibrium
    amplitude = 0.1

    [sweep]
    eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]

The settings file (``config.yaml`` next to this module) holds logging, output and
plot defaults that are not part of a run's identity.
"""

import hashlib
import logging
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from errors import ConfigError, SimulationError
from integrator import TimeSpec
from mesh_fields import GridSpec
from models import (
    CompetitionParams,
    ConstantFamily,
    CosinePerturbedEquilibrium,
    DimensionalParams,
    GaussianBump,
    InitialFamily,
    ModelParams,
    PredPreyParams,
    nondimensionalize,
)
from operators import FunctionalResponse

logger = logging.getLogger(__name__)

MIN_CONFIG_CELLS = 3
MODELS = ("competition", "predprey")
VARIANTS = ("indirect", "limit", "sweep")

# value kinds: float, int, bool, str, floats (list), ints_or_int, floats_or_float
SCHEMA: dict[str, dict[str, str]] = {
    "model": {"model": "str", "variant": "str"},
    "grid": {"dim": "int", "n": "ints_or_int", "length": "floats_or_float"},
    "time": {
        "t_end": "float",
        "dt_max": "float",
        "cfl_adv": "float",
        "snapshot_stride": "int",
        "snapshot_interval": "float",
        "dt": "float",
    },
    "params": {
        "d_u": "float",
        "d_z": "float",
        "d_v": "float",
        "chi": "float",
        "mu1": "float",
        "mu1_prime": "float",
        "mu2": "float",
        "a1": "float",
        "a2": "float",
        "b": "float",
        "response": "str",
        "c": "float",
        "m": "float",
        "eps": "float",
    },
    "dimensional": {
        "D_u": "float",
        "D_v": "float",
        "D_w": "float",
        "alpha1": "float",
        "alpha2": "float",
        "alpha3": "float",
        "beta1": "float",
        "beta2": "float",
        "beta3": "float",
        "chi0": "float",
        "alpha": "float",
        "lambda": "float",
        "L": "float",
        "tau": "float",
        "W_star": "float",
    },
    "ic": {
        "family": "str",
        "value": "float",
        "center": "floats_or_float",
        "width": "float",
        "amplitude": "float",
        "floor": "float",
        "mode": "int",
        "compatibility": "bool",
        "w_init": "float",
    },
    "sweep": {"eps": "floats", "workers": "int", "error_floor": "float"},
    "output": {"directory": "str"},
    "mms": {"enabled": "bool", "levels": "int", "n0": "int", "dt0": "float", "refine": "int"},
}

PARAM_KEYS = {
    "competition": ("d_u", "d_v", "chi", "mu1", "mu2", "a1", "a2", "eps"),
    "predprey": ("d_z", "d_v", "chi", "mu1", "mu1_prime", "mu2", "b", "response", "c", "m", "eps"),
}
FAMILIES: dict[str, tuple[type, tuple[str, ...]]] = {
    ConstantFamily.name: (ConstantFamily, ("value",)),
    GaussianBump.name: (GaussianBump, ("center", "width", "amplitude", "floor")),
    CosinePerturbedEquilibrium.name: (CosinePerturbedEquilibrium, ("amplitude", "mode")),
}
DIMENSIONAL_FIELDS = {"lambda": "lam"}


@dataclass(frozen=True)
class SweepSpec:
    eps: tuple[float, ...]
    workers: int = 1
    error_floor: float = 1e-10


@dataclass(frozen=True)
class MMSSpec:
    """Manufactured-solution refinement ladder ``n0 * refine^k``, ``dt0 / refine^k``."""

    enabled: bool = False
    levels: int = 3
    n0: int = 32
    dt0: float = 4e-3
    refine: int = 2


@dataclass(frozen=True)
class RunConfig:
    model: str
    variant: str
    grid: GridSpec
    time: TimeSpec
    params: ModelParams
    ic: InitialFamily
    compatibility: bool = True
    w_init: float = 0.0
    dimensional: DimensionalParams | None = None
    sweep: SweepSpec | None = None
    output: str | None = None
    mms: MMSSpec = field(default_factory=MMSSpec)


@dataclass
class _Entry:
    text: str
    line: int


def _fail(entry: _Entry, section: str, key: str, expected: str) -> ConfigError:
    return ConfigError(
        f"line {entry.line}: [{section}] {key}: expected {expected}, got {entry.text!r}"
    )


def _as_float(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError("boolean where a number is expected")
    return float(value)


def _as_int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int | str):
        raise ValueError("not an integer")
    return int(value)


def _coerce(section: str, key: str, entry: _Entry) -> Any:
    kind = SCHEMA[section][key]
    try:
        value = yaml.safe_load(entry.text)
    except yaml.YAMLError as err:
        raise _fail(entry, section, key, "a YAML scalar or list") from err
    try:
        if kind == "float":
            return _as_float(value)
        if kind == "int":
            return _as_int(value)
        if kind == "bool":
            if not isinstance(value, bool):
                raise ValueError("not a boolean")
            return value
        if kind == "str":
            if not isinstance(value, str) or not value:
                raise ValueError("not a string")
            return value
        items = value if isinstance(value, list) else None
        if kind == "floats":
            if items is None or not items:
                raise ValueError("not a list")
            return tuple(_as_float(v) for v in items)
        if kind == "ints_or_int":
            return tuple(_as_int(v) for v in items) if items is not None else (_as_int(value),)
        return tuple(_as_float(v) for v in items) if items is not None else (_as_float(value),)
    except (TypeError, ValueError) as err:
        expected = {
            "float": "a real number",
            "int": "an integer",
            "bool": "true or false",
            "str": "a word",
            "floats": "a list of real numbers",
            "ints_or_int": "an integer or a list of integers",
            "floats_or_float": "a real number or a list of real numbers",
        }[kind]
        raise _fail(entry, section, key, expected) from err


def _strip_comment(raw: str) -> str:
    """Drop a ``#`` comment; a ``#`` inside a quoted value is kept."""
    quote = None
    escaped = False
    for i, ch in enumerate(raw):
        if quote:
            if escaped:
                escaped = False
            elif ch == "\\" and quote == '"':
                escaped = True
            elif ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return raw[:i]
    return raw


def _tokenize(text: str) -> tuple[dict[str, dict[str, _Entry]], dict[str, int]]:
    sections: dict[str, dict[str, _Entry]] = {}
    headers: dict[str, int] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        header = re.fullmatch(r"\[\s*(\w+)\s*\]", line)
        if header:
            current = header.group(1)
            if current not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            if current in headers:
                raise ConfigError(f"line {lineno}: section [{current}] appears twice")
            headers[current] = lineno
            sections[current] = {}
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: {key} appears before any [section]")
        if key not in SCHEMA[current]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{current}]")
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: [{current}] {key} given twice")
        sections[current][key] = _Entry(value.strip(), lineno)
    return sections, headers


class _Reader:
    """Typed access to the tokenized sections with line-tagged errors."""

    def __init__(self, text: str):
        self.sections, self.headers = _tokenize(text)

    def has(self, section: str) -> bool:
        return section in self.sections

    def keys(self, section: str) -> set[str]:
        return set(self.sections.get(section, {}))

    def get(self, section: str, key: str, default: Any = None, required: bool = False) -> Any:
        entry = self.sections.get(section, {}).get(key)
        if entry is None:
            if required:
                raise ConfigError(f"[{section}] {key} is required")
            return default
        return _coerce(section, key, entry)

    def line(self, section: str, key: str | None = None) -> int:
        if key is not None and key in self.sections.get(section, {}):
            return self.sections[section][key].line
        return self.headers.get(section, 0)

    def build(self, section: str, factory, *args, **kwargs):
        """Construct a record, tagging invariant failures with the section's line."""
        try:
            return factory(*args, **kwargs)
        except SimulationError as err:
            raise ConfigError(f"line {self.line(section)}: [{section}] {err.message}") from err


def _parse_grid(reader: _Reader) -> GridSpec:
    dim = reader.get("grid", "dim", 1)
    n = reader.get("grid", "n", required=True)
    length = reader.get("grid", "length", (1.0,))
    if dim not in (1, 2):
        raise ConfigError(
            f"line {reader.line('grid', 'dim')}: [grid] dim must be 1 or 2, got {dim}"
        )
    if len(n) == 1:
        n = n * dim
    if len(length) == 1:
        length = length * dim
    if len(n) != dim or len(length) != dim:
        raise ConfigError(f"line {reader.line('grid')}: [grid] n and length need {dim} entries")
    if min(n) < MIN_CONFIG_CELLS:
        raise ConfigError(
            f"line {reader.line('grid', 'n')}: [grid] n must be >= {MIN_CONFIG_CELLS}, got {min(n)}"
        )
    return reader.build("grid", GridSpec, n, length)


def _parse_time(reader: _Reader) -> TimeSpec:
    return reader.build(
        "time",
        TimeSpec,
        t_end=reader.get("time", "t_end", required=True),
        dt_max=reader.get("time", "dt_max", 1e-3),
        cfl_adv=reader.get("time", "cfl_adv", 0.5),
        snapshot_stride=reader.get("time", "snapshot_stride", 10),
        snapshot_interval=reader.get("time", "snapshot_interval"),
        fixed_dt=reader.get("time", "dt"),
    )


def _parse_params(reader: _Reader, model: str) -> tuple[ModelParams, DimensionalParams | None]:
    given = reader.keys("params")
    allowed = set(PARAM_KEYS[model])
    unknown = sorted(given - allowed)
    if unknown:
        key = unknown[0]
        raise ConfigError(
            f"line {reader.line('params', key)}: [params] {key} is not a {model} parameter"
        )
    if reader.has("dimensional"):
        if model != "competition":
            raise ConfigError(
                f"line {reader.line('dimensional')}: "
                "[dimensional] applies to the competition model only"
            )
        if given:
            key = sorted(given)[0]
            raise ConfigError(
                f"line {reader.line('params', key)}: [params] {key} conflicts with [dimensional]"
            )
        values = {}
        for key in SCHEMA["dimensional"]:
            values[DIMENSIONAL_FIELDS.get(key, key)] = reader.get("dimensional", key, required=True)
        dimensional = reader.build("dimensional", DimensionalParams, **values)
        params, groups = reader.build("dimensional", nondimensionalize, dimensional)
        logger.debug(f"Derived parameters {params} with groups {groups}")
        return params, dimensional

    values = {key: reader.get("params", key) for key in given}
    if model == "competition":
        return reader.build("params", CompetitionParams, **values), None
    response_args = {
        "kind": values.pop("response", "holling2"),
        "c": values.pop("c", 1.0),
        "m": values.pop("m", 1.0),
    }
    response = reader.build("params", FunctionalResponse, **response_args)
    return reader.build("params", PredPreyParams, response=response, **values), None


def _parse_ic(reader: _Reader) -> tuple[InitialFamily, bool, float]:
    name = reader.get("ic", "family", required=True)
    if name not in FAMILIES:
        raise ConfigError(
            f"line {reader.line('ic', 'family')}: [ic] family must be one of {sorted(FAMILIES)}, "
            f"got {name!r}"
        )
    cls, keys = FAMILIES[name]
    foreign = sorted(reader.keys("ic") - set(keys) - {"family", "compatibility", "w_init"})
    if foreign:
        key = foreign[0]
        raise ConfigError(f"line {reader.line('ic', key)}: [ic] {key} does not apply to {name}")
    values = {key: reader.get("ic", key) for key in keys if key in reader.keys("ic")}
    family = reader.build("ic", cls, **values)
    compatibility = reader.get("ic", "compatibility", True)
    w_init = reader.get("ic", "w_init", 0.0)
    if w_init < 0:
        raise ConfigError(f"line {reader.line('ic', 'w_init')}: [ic] w_init must be nonnegative")
    return family, compatibility, w_init


def parse_config(text: str) -> RunConfig:
    """Parse and validate run-configuration text.

    Raises:
        ConfigError: with the offending line and key on unknown sections or keys,
            malformed values and parameter invariant violations.
    """
    reader = _Reader(text)
    model = reader.get("model", "model", required=True)
    if model not in MODELS:
        raise ConfigError(
            f"line {reader.line('model', 'model')}: [model] model must be one of {MODELS}, "
            f"got {model!r}"
        )
    variant = reader.get("model", "variant", "sweep" if reader.has("sweep") else "indirect")
    if variant not in VARIANTS:
        raise ConfigError(
            f"line {reader.line('model', 'variant')}: [model] variant must be one of {VARIANTS}, "
            f"got {variant!r}"
        )

    grid = _parse_grid(reader)
    time = _parse_time(reader)
    params, dimensional = _parse_params(reader, model)
    family, compatibility, w_init = _parse_ic(reader)

    sweep = None
    if reader.has("sweep"):
        eps = reader.get("sweep", "eps", required=True)
        bad = [e for e in eps if not 0.0 < e <= 1.0]
        if bad:
            raise ConfigError(
                f"line {reader.line('sweep', 'eps')}: [sweep] eps must lie in (0,1], got {bad[0]}"
            )
        sweep = SweepSpec(
            eps=eps,
            workers=reader.get("sweep", "workers", 1),
            error_floor=reader.get("sweep", "error_floor", 1e-10),
        )
        if sweep.workers < 1:
            raise ConfigError(
                f"line {reader.line('sweep', 'workers')}: [sweep] workers must be >= 1"
            )
    elif variant == "sweep":
        raise ConfigError("variant = sweep needs a [sweep] section with an eps list")

    mms = MMSSpec(
        enabled=reader.get("mms", "enabled", False),
        levels=reader.get("mms", "levels", 3),
        n0=reader.get("mms", "n0", 32),
        dt0=reader.get("mms", "dt0", 4e-3),
        refine=reader.get("mms", "refine", 2),
    )
    if mms.levels < 2 or mms.n0 < MIN_CONFIG_CELLS or mms.refine < 2 or not mms.dt0 > 0:
        raise ConfigError(
            f"line {reader.line('mms')}: [mms] needs levels >= 2, n0 >= {MIN_CONFIG_CELLS}, "
            "refine >= 2 and dt0 > 0"
        )

    return RunConfig(
        model=model,
        variant=variant,
        grid=grid,
        time=time,
        params=params,
        ic=family,
        compatibility=compatibility,
        w_init=w_init,
        dimensional=dimensional,
        sweep=sweep,
        output=reader.get("output", "directory"),
        mms=mms,
    )


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple | list):
        return "[" + ", ".join(_format(v) for v in value) + "]"
    return str(value)


def _quote(text: str) -> str:
    """YAML double-quoted scalar, so digits and ``#`` survive a re-parse."""
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text of ``cfg``; parsing it gives back an equal RunConfig."""
    lines = ["[model]", f"model = {cfg.model}", f"variant = {cfg.variant}", ""]

    grid = cfg.grid
    uniform = len(set(grid.n)) == 1 and len(set(grid.length)) == 1
    lines += ["[grid]", f"dim = {grid.dim}"]
    lines.append(f"n = {grid.n[0] if uniform else _format(grid.n)}")
    lines.append(f"length = {_format(grid.length[0] if uniform else grid.length)}")
    lines.append("")

    ts = cfg.time
    lines += [
        "[time]",
        f"t_end = {_format(float(ts.t_end))}",
        f"dt_max = {_format(float(ts.dt_max))}",
        f"cfl_adv = {_format(float(ts.cfl_adv))}",
        f"snapshot_stride = {ts.snapshot_stride}",
    ]
    if ts.snapshot_interval is not None:
        lines.append(f"snapshot_interval = {_format(float(ts.snapshot_interval))}")
    if ts.fixed_dt is not None:
        lines.append(f"dt = {_format(float(ts.fixed_dt))}")
    lines.append("")

    if cfg.dimensional is not None:
        lines.append("[dimensional]")
        for key in SCHEMA["dimensional"]:
            value = getattr(cfg.dimensional, DIMENSIONAL_FIELDS.get(key, key))
            lines.append(f"{key} = {_format(float(value))}")
    else:
        lines.append("[params]")
        p = cfg.params
        for key in PARAM_KEYS[cfg.model]:
            if key in ("response", "c", "m"):
                value = {"response": p.response.kind, "c": p.response.c, "m": p.response.m}[key]
            else:
                value = getattr(p, key)
            lines.append(f"{key} = {_format(value if isinstance(value, str) else float(value))}")
    lines.append("")

    lines += ["[ic]", f"family = {cfg.ic.name}"]
    for f in fields(cfg.ic):
        value = getattr(cfg.ic, f.name)
        if isinstance(value, tuple):
            value = tuple(float(v) for v in value)
        elif f.name != "mode":
            value = float(value)
        lines.append(f"{f.name} = {_format(value)}")
    lines += [
        f"compatibility = {_format(cfg.compatibility)}",
        f"w_init = {_format(float(cfg.w_init))}",
        "",
    ]

    if cfg.sweep is not None:
        lines += [
            "[sweep]",
            f"eps = {_format(tuple(float(e) for e in cfg.sweep.eps))}",
            f"workers = {cfg.sweep.workers}",
            f"error_floor = {_format(float(cfg.sweep.error_floor))}",
            "",
        ]
    if cfg.output is not None:
        lines += ["[output]", f"directory = {_quote(cfg.output)}", ""]

    m = cfg.mms
    lines += [
        "[mms]",
        f"enabled = {_format(m.enabled)}",
        f"levels = {m.levels}",
        f"n0 = {m.n0}",
        f"dt0 = {_format(float(m.dt0))}",
        f"refine = {m.refine}",
    ]
    return "\n".join(lines) + "\n"


def config_digest(cfg: RunConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical configuration text."""
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:16]


def load_config_file(path: Path) -> RunConfig:
    """Read and parse a run-configuration file (OSError propagates)."""
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def load_settings(config_path: Path | None = None) -> dict:
    """Load the YAML settings file.

    Args:
        config_path: Path to the settings file. If None, uses config.yaml next to this module

    Returns:
        Settings dictionary (empty when the file does not exist)
    """
    if config_path is None:
        config_path = Path(__file__).parent / "config.yaml"

    if config_path.exists():
        with open(config_path) as f:
            return yaml.safe_load(f) or {}
    return {}


def setup_logging(settings: dict) -> None:
    """Configure logging based on the settings file."""
    log_config = settings.get("logging", {})
    logging.basicConfig(
        level=getattr(logging, log_config.get("level", "INFO")),
        format=log_config.get("format", "%(levelname)s: %(message)s"),
    )
