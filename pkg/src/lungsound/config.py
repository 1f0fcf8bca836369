"""Run configuration: an INI file with one section per module.

Precedence is command-line flag > file value > built-in default. Unknown
sections or keys are rejected so typos never pass silently.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .cnn_classifier import TrainConfig
from .melspec import MelConfig
from .vae_augment import VaeTrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    audio_dir: str = ""
    diagnoses: str = ""
    work_dir: str = "work"


@dataclass
class IngestConfig:
    scheme: str = "ternary"


@dataclass
class BalanceConfig:
    method: str = "vae"
    k: int = 5
    # "label:count,label:count"; empty means the built-in targets for the scheme
    targets: str = ""


@dataclass
class EvaluateConfig:
    folds: int = 10
    protocol: str = "default"
    seed: int = 0
    stratified: bool = True
    patient_disjoint: bool = False
    val_fraction: float = 0.1
    # test share of a single split; 0 runs k-fold cross-validation
    holdout: float = 0.0
    jobs: int = 1


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    melspec: MelConfig = field(default_factory=MelConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    vae_augment: VaeTrainConfig = field(default_factory=VaeTrainConfig)
    cnn_classifier: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)


SECTIONS = tuple(f.name for f in dataclasses.fields(RunConfig))
# Fields that are filled programmatically, never from a file.
_INTERNAL = {("cnn_classifier", "class_weights")}


def _fields(section: str) -> dict[str, dataclasses.Field]:
    cls = {f.name: f for f in dataclasses.fields(RunConfig)}[section].default_factory
    return {f.name: f for f in dataclasses.fields(cls) if (section, f.name) not in _INTERNAL}


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def _apply(config: RunConfig, values: dict[str, dict[str, str]], origin: str) -> RunConfig:
    out = {}
    for section in SECTIONS:
        current = getattr(config, section)
        known = _fields(section)
        updates = {}
        for key, raw in values.get(section, {}).items():
            if key not in known:
                raise ConfigError(f"{origin}: unknown key {key!r} in [{section}]; known: {', '.join(known)}")
            updates[key] = _convert(section, key, raw, getattr(current, key))
        try:
            out[section] = dataclasses.replace(current, **updates) if updates else current
        except ValueError as exc:
            raise ConfigError(f"{origin}: [{section}] {exc}") from None
    unknown = set(values) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{origin}: unknown section(s) {sorted(unknown)}; known: {', '.join(SECTIONS)}")
    return RunConfig(**out)


def parse_config(text: str, origin: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="\0none")
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    values = {s: dict(parser.items(s)) for s in parser.sections()}
    return _apply(RunConfig(), values, origin)


def load_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Defaults, then the file at ``path`` (if given), then ``overrides``."""
    config = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        config = parse_config(p.read_text(), str(p))
    if overrides:
        cleaned = {s: {k: str(v) for k, v in kv.items() if v is not None} for s, kv in overrides.items()}
        config = _apply(config, cleaned, "command line")
    return config


def dump_config(config: RunConfig) -> str:
    """INI text that parses back to ``config``."""
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        current = getattr(config, section)
        for key in _fields(section):
            value = getattr(current, key)
            lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
        lines.append("")
    return "\n".join(lines)


def parse_targets(text: str) -> dict[str, int] | None:
    text = text.strip()
    if not text:
        return None
    out = {}
    for part in text.split(","):
        label, sep, count = part.rpartition(":")
        if not sep or not label.strip():
            raise ConfigError(f"bad target entry {part!r}; expected label:count")
        try:
            out[label.strip()] = int(count)
        except ValueError:
            raise ConfigError(f"bad target count in {part!r}") from None
    return out
