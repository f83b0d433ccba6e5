"""Sectioned key=value run configuration: file values merged with
command-line overrides, echoed verbatim into every run directory."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from pathlib import Path

from .data import PreprocessConfig
from .synth import SynthConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    out: str = "run"
    events: str = ""
    demographics: str = ""
    data_dir: str = ""             # preprocess artifacts
    checkpoint: str = ""
    window: int = 40
    max_samples_per_patient: int = 3
    folds_seed: int | None = None  # defaults to seed
    synth: SynthConfig = dataclasses.field(default_factory=SynthConfig)
    prep: PreprocessConfig = dataclasses.field(default_factory=PreprocessConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)

    def fold_seed(self) -> int:
        return self.seed if self.folds_seed is None else self.folds_seed


_SECTIONS = {"run": None, "synth": "synth", "preprocess": "prep", "train": "train"}


def _coerce(raw: str, default):
    """Type from the field's default value; None defaults read as float."""
    raw = raw.strip()
    if default is None:
        if raw in ("", "none"):
            return None
        try:
            return int(raw)
        except ValueError:
            return float(raw)
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        parts = [p for p in raw.split(",") if p.strip()]
        return tuple(float(p) for p in parts)
    return raw


def _apply(obj, items):
    defaults = {f.name: getattr(type(obj)(), f.name)
                for f in dataclasses.fields(obj)}
    for key, raw in items:
        if key not in defaults:
            raise ConfigError(f"unknown option {key!r} for "
                              f"[{type(obj).__name__}]")
        try:
            setattr(obj, key, _coerce(raw, defaults[key]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"option {key!r}: {exc}") from None
    return obj


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Parse the sectioned file (if given), then apply flag overrides."""
    config = RunConfig()
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            attr = _SECTIONS[section]
            target = config if attr is None else getattr(config, attr)
            _apply(target, parser.items(section))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            _apply(getattr(config, section), [(name, str(value))])
        else:
            _apply(config, [(key, str(value))])
    # re-run the synth invariants after overrides
    config.synth.__post_init__()
    config.train.__post_init__()
    return config


def format_config(config: RunConfig, extra: dict | None = None) -> str:
    """Deterministic echo of every resolved value."""
    lines = ["format_version=1", "[run]"]
    for f in dataclasses.fields(RunConfig):
        if f.name in ("synth", "prep", "train"):
            continue
        lines.append(f"{f.name}={getattr(config, f.name)}")
    for section, attr in (("synth", config.synth), ("preprocess", config.prep),
                          ("train", config.train)):
        lines.append(f"[{section}]")
        for f in dataclasses.fields(attr):
            lines.append(f"{f.name}={getattr(attr, f.name)}")
    if extra:
        lines.append("[provenance]")
        for key in sorted(extra):
            lines.append(f"{key}={extra[key]}")
    return "\n".join(lines) + "\n"


def file_digest(*paths) -> str:
    h = hashlib.sha256()
    for path in paths:
        p = Path(path)
        if p.exists():
            h.update(p.read_bytes())
    return h.hexdigest()
