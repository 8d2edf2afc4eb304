"""Plain-text run configuration.

Grammar, one entry per line::

    # comment                      (also allowed after a value)
    key = value

``key`` is an identifier. ``value`` is a number, a bare word, a quoted
string, ``true``/``false``, or a comma-separated list of those for the list
keys (``kinds``, ``alphas``, ``seeds``). Unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Optional

from .errors import ConfigError
from .scores import KIND_NAMES, ScoreKind
from .synthdata import SynthConfig
from .trainer import TrainConfig

SEED_ENV = "SALGUIDE_SEED"
RESOLVED_NAME = "resolved_config.txt"
_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

_SYNTH = SynthConfig()
_TRAIN = TrainConfig()


@dataclass(frozen=True)
class RunConfig:
    # paths
    data_dir: str = "data"
    out_dir: str = "runs"
    checkpoint: str = ""
    # dataset
    image_size: int = _SYNTH.image_size
    n_samples: int = _SYNTH.n_samples
    positive_fraction: float = _SYNTH.positive_fraction
    lesion_intensity_min: float = _SYNTH.lesion_intensity_min
    lesion_intensity_max: float = _SYNTH.lesion_intensity_max
    lesion_sigma_min: float = _SYNTH.lesion_sigma_min
    lesion_sigma_max: float = _SYNTH.lesion_sigma_max
    second_lesion_prob: float = _SYNTH.second_lesion_prob
    confounder_rate: float = _SYNTH.confounder_rate
    tag_size: int = _SYNTH.tag_size
    tag_offset: int = _SYNTH.tag_offset
    tag_intensity: float = _SYNTH.tag_intensity
    background_level: float = _SYNTH.background_level
    background_variation: float = _SYNTH.background_variation
    noise_std: float = _SYNTH.noise_std
    train_fraction: float = _SYNTH.train_fraction
    val_fraction: float = _SYNTH.val_fraction
    test_fraction: float = _SYNTH.test_fraction
    # training
    seed: int = 0
    epochs: int = _TRAIN.epochs
    learning_rate: float = _TRAIN.learning_rate
    weight_decay: float = _TRAIN.weight_decay
    batch_size: int = _TRAIN.batch_size
    alpha: float = _TRAIN.alpha
    score_kind: str = _TRAIN.score_kind.value
    k_percent: float = _TRAIN.k_percent
    stop_weights: bool = _TRAIN.stop_weights
    # evaluation / export
    split: str = "test"
    tau: float = 0.01
    run_id: str = ""
    n_heatmaps: int = 8
    # sweep
    kinds: tuple = tuple(KIND_NAMES)
    alphas: tuple = (0.25, 0.5, 0.75, 1.0)
    seeds: tuple = (0, 1, 2)
    jobs: int = 1

    def __post_init__(self):
        try:
            ScoreKind.parse(self.score_kind)
            for k in self.kinds:
                ScoreKind.parse(k)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**{f.name: getattr(self, f.name) for f in fields(SynthConfig)})

    def train_config(self, **overrides) -> TrainConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(TrainConfig)}
        kw.update(overrides)
        return TrainConfig(**kw)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def write_resolved(self, directory) -> Path:
        path = Path(directory) / RESOLVED_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(self.dumps())
        return path


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}
_LIST_ITEM = {"kinds": str, "alphas": float, "seeds": int}
KEYS = tuple(_TYPES)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return v if v and re.fullmatch(r"[A-Za-z0-9_./-]+", v) else '"' + v.replace('"', '\\"') + '"'
    return str(v)


def _scalar(key: str, text: str, typ):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    try:
        if typ is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ.__name__}") from None
    return text


def coerce(key: str, value):
    """Convert a raw string (or already-typed value) for ``key``."""
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _TYPES[key]
    if not isinstance(value, str):
        if typ is tuple:
            return tuple(_LIST_ITEM[key](v) for v in value)
        return typ(value)
    if typ is tuple:
        items = [p for p in value.split(",") if p.strip()]
        if not items:
            raise ConfigError(f"{key}: empty list")
        return tuple(_scalar(key, p, _LIST_ITEM[key]) for p in items)
    return _scalar(key, value, typ)


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def parse_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_text(text, str(path))


def resolve(path: Optional[str] = None, overrides: Optional[Mapping] = None,
            environ: Optional[Mapping] = None) -> RunConfig:
    """Defaults, then the config file, then SALGUIDE_SEED, then explicit overrides."""
    values = parse_file(path) if path else {}
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV, "").strip():
        values["seed"] = coerce("seed", env[SEED_ENV])
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = coerce(key, value)
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
