"""Run configuration: one TOML file is the single source of truth for a run.

Sections: ``[run]`` (seed, out_dir), ``[data]`` (train/test manifest paths),
``[model]``, ``[loss]``, ``[train]``. Overrides arrive as dotted
``section.key=value`` strings; values parse as TOML scalars (bare words fall
back to strings). The environment variable ``SKNET_SEED`` overrides the
configured seed. Every command serializes its fully-resolved config back to
the output directory before any compute, so a run directory is
self-describing.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .losses import LossConfig
from .model import ConfigError, ModelConfig
from .training import TrainConfig

SEED_ENV_VAR = "SKNET_SEED"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_manifest: str = ""
    test_manifest: str = ""
    out_dir: str = "runs/out"
    seed: int = 0

    def __post_init__(self):
        self.train.seed = self.seed
        self.train.loss = self.loss


def parse_override(text: str) -> tuple:
    """Split ``section.key=value`` into (section, key, typed value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    dotted, raw = text.split("=", 1)
    if "." not in dotted:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    section, key = dotted.split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare word: treat as string
    return section.strip(), key.strip(), value


def load_run_config(path: str, overrides: tuple = ()) -> RunConfig:
    """Parse a TOML run config and apply overrides and the seed env var."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")
    return build_run_config(raw, overrides)


def build_run_config(raw: dict, overrides: tuple = ()) -> RunConfig:
    for key, value in raw.items():
        if not isinstance(value, dict):
            raise ConfigError(f"top-level key {key!r} must live in a [section]")
    raw = {k: dict(v) for k, v in raw.items()}
    for text in overrides:
        section, key, value = parse_override(text)
        raw.setdefault(section, {})[key] = value
    run = raw.pop("run", {})
    data = raw.pop("data", {})
    seed = int(os.environ.get(SEED_ENV_VAR, run.get("seed", 0)))
    try:
        cfg = RunConfig(
            model=ModelConfig(**raw.pop("model", {})),
            loss=LossConfig(**raw.pop("loss", {})),
            train=TrainConfig(**raw.pop("train", {})),
            train_manifest=data.get("train_manifest", ""),
            test_manifest=data.get("test_manifest", ""),
            out_dir=run.get("out_dir", "runs/out"),
            seed=seed,
        )
    except TypeError as exc:
        raise ConfigError(f"bad config key: {exc}") from None
    if raw:
        raise ConfigError(f"unknown config sections: {sorted(raw)}")
    return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def to_toml(cfg: RunConfig) -> str:
    """Serialize the fully-resolved config (diff-able run provenance)."""
    sections = {
        "run": {"seed": cfg.seed, "out_dir": cfg.out_dir},
        "data": {"train_manifest": cfg.train_manifest, "test_manifest": cfg.test_manifest},
        "model": asdict(cfg.model),
        "loss": asdict(cfg.loss),
        "train": {k: v for k, v in asdict(cfg.train).items() if k not in ("loss", "seed")},
    }
    out = []
    for name, body in sections.items():
        out.append(f"[{name}]")
        for key, value in body.items():
            out.append(f"{key} = {_toml_value(value)}")
        out.append("")
    return "\n".join(out)


def write_resolved_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_toml(cfg))
