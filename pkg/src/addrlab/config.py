"""Flat ``key = value`` run configuration with dotted namespaces.

Example::

    # comments start with '#'
    trainer.variant = addr
    trainer.beta = 0.1
    reg.alpha = 0.05
    synth.overlap = 0.5
    data.dir = runs/data

Every key is checked against a schema built from the library dataclasses;
unknown keys and unparsable values are rejected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import fields
from pathlib import Path

from .data import SyntheticSpec
from .evaluation import ProbeConfig
from .trainer import TrainerConfig

# keys living outside the trainer/synth dataclasses, with their defaults
_EXTRA = {
    "data.dir": "data",
    "data.fractions": (0.8, 0.1, 0.1),
    "data.split_seed": 0,
    "out.dir": "run",
    "report.dir": "reports",
    "report.format": "csv",
    "eval.split": "test",
    "eval.folds": 0,
    "eval.checkpoint": "",
    "ablate.variants": ("base", "united", "multiple", "addr"),
    "ablate.seeds": (0, 1, 2, 3, 4),
    "gradcheck.instances": 100,
    "gradcheck.seed": 0,
    "gradcheck.flip_adv_sign": False,
}
# regularizer knobs are stored on TrainerConfig but exposed under their own namespace
_REG_KEYS = {"reg.alpha": "alpha", "reg.gamma": "gamma", "reg.literal_eq9": "literal_eq9"}


class ConfigError(ValueError):
    pass


def _schema() -> dict:
    schema = {}
    for f in fields(TrainerConfig):
        if f.name not in _REG_KEYS.values():
            schema["trainer." + f.name] = f.default
    for key, name in _REG_KEYS.items():
        schema[key] = getattr(TrainerConfig, name)
    for f in fields(SyntheticSpec):
        schema["synth." + f.name] = f.default
    for f in fields(ProbeConfig):
        schema["probe." + f.name] = f.default
    schema.update(_EXTRA)
    return schema


SCHEMA = _schema()


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: str, raw) -> object:
    """Coerce ``raw`` to the type of ``key``'s default."""
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    default = SCHEMA[key]
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw.strip()


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


class RunConfig:
    """Effective configuration: schema defaults, then file values, then overrides."""

    def __init__(self, values: dict | None = None):
        self.values = dict(SCHEMA)
        for k, v in (values or {}).items():
            self.values[k] = parse_value(k, v)
        # fail early on invalid combinations
        try:
            self.trainer()
            self.synth().validate()
            self.probe()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = {}
        if path is not None:
            values.update(parse_text(Path(path).read_text(), str(path)))
        for k, v in (overrides or {}).items():
            values[k] = parse_value(k, v)
        return cls(values)

    def __getitem__(self, key):
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def with_overrides(self, **overrides) -> "RunConfig":
        return RunConfig({**self.values, **overrides})

    def trainer(self) -> TrainerConfig:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("trainer.")}
        kw.update({name: self.values[key] for key, name in _REG_KEYS.items()})
        return TrainerConfig(**kw)

    def synth(self) -> SyntheticSpec:
        return SyntheticSpec(**{k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("synth.")})

    def probe(self) -> ProbeConfig:
        return ProbeConfig(**{k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("probe.")})

    def to_text(self) -> str:
        lines = [f"# config_hash = {self.hash()}"]
        for k in sorted(self.values):
            v = self.values[k]
            v = ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        canon = {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}
        return hashlib.sha256(json.dumps(canon, sort_keys=True).encode()).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values
