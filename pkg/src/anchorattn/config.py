"""Run configuration: built-in defaults < config file < command-line flags.

Config files are flat ``key = value`` text; ``#`` starts a comment, blank
lines are ignored, keys are the long flag names with ``-`` replaced by ``_``
(``memory_ceiling = 1073741824``). List values are comma separated.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .anchor import DEFAULT_ANCHORS
from .errors import AnchorAttnError


class ConfigError(AnchorAttnError, ValueError):
    exit_code = 2


def _ints(value) -> tuple[int, ...]:
    if isinstance(value, (tuple, list)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).split(",") if v.strip())


def _strs(value) -> tuple[str, ...]:
    if isinstance(value, (tuple, list)):
        return tuple(value)
    return tuple(v.strip() for v in str(value).split(",") if v.strip())


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _opt_str(value):
    return None if value in (None, "", "none") else str(value)


@dataclass
class RunConfig:
    seed: int = 0
    out: str | None = None
    # shapes
    n: int = 64
    m: int = DEFAULT_ANCHORS
    d: int = 8
    D: int = 8
    heads: int = 2
    shared_anchors: bool = False
    # verify
    instances: int = 1000
    poison_delta: bool = False
    threads: int | None = None
    # gradcheck
    step: float = 1e-5
    tol: float = 1e-5
    zero_init: bool = False
    # bench
    mechanisms: tuple[str, ...] = ("vanilla", "anchor-fast")
    ns: tuple[int, ...] = (512, 1024, 2048, 4096, 8192)
    ms: tuple[int, ...] = ()
    ds: tuple[int, ...] = (64,)
    reps: int = 3
    warmup: int = 1
    memory_ceiling: int = 2 * 1024**3
    float32: bool = False
    parallel_heads: bool = False
    dry_run: bool = False
    plot: bool = True
    # demo-train
    lr: float = 0.1
    epochs: int = 10
    batch_size: int = 16
    samples: int = 2000
    classes: int = 3
    tokens: int = 64
    width: int = 8
    separation: float = 3.0
    noise: float = 1.0
    holdout: float = 0.2
    dataset: str | None = None
    labels: str | None = None
    patch: int = 7
    # anchors-fit
    iters: int = 20
    init: str = "keys"
    keys: str | None = None


CONVERTERS = {
    int: int,
    float: float,
    bool: _bool,
    "tuple[int, ...]": _ints,
    "tuple[str, ...]": _strs,
    "str | None": _opt_str,
    "int | None": lambda v: None if v in (None, "", "none") else int(v),
    "str": str,
    "int": int,
    "float": float,
    "bool": _bool,
}

COMMAND_DEFAULTS = {
    "verify": {},
    "gradcheck": dict(n=8, m=4, d=4, D=6, heads=2),
    "bench": dict(d=64, heads=1),
    "demo-train": dict(n=64, d=8, D=8),
    "anchors-fit": dict(d=4),
}


def field_names() -> set[str]:
    return {f.name for f in fields(RunConfig) }


def convert(name: str, value):
    ftype = {f.name: f.type for f in fields(RunConfig)}[name]
    conv = CONVERTERS.get(ftype)
    if conv is None:
        raise ConfigError(f"no converter for {name} ({ftype})")
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r} ({exc})") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    known = field_names()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = convert(key, value)
    return values


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def build_config(command: str, file_values: dict | None = None, cli_values: dict | None = None) -> RunConfig:
    cfg = replace(RunConfig(), **COMMAND_DEFAULTS.get(command, {}))
    for source in (file_values or {}, cli_values or {}):
        cfg = replace(cfg, **{k: convert(k, v) for k, v in source.items()})
    return cfg
