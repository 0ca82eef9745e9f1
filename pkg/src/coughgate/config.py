"""Run configuration: INI-style file, environment overrides, CLI overrides.

Precedence (low to high): built-in defaults, config file, COUGHGATE_*
environment variables, ``--set section.key=value`` flags. Every key is
validated against the schema before any work starts.

The CLI defaults are desk-scale (toy CNN/SSL presets); paper-scale values
are reachable by overriding the relevant keys.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from coughgate.cnn import CnnTrainConfig
from coughgate.quality import GateThresholds
from coughgate.ssl_model import DownstreamConfig, EncoderConfig, UpstreamConfig
from coughgate.svm import SvmParams

ENV_PREFIX = "COUGHGATE_"

# section -> key -> (type, default); None defaults mean "use the scale preset"
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "run": {
        "seed": (int, 0),
        "workers": (int, 4),
    },
    "gate": {
        "min_max_amplitude": (float, 0.01),
        "max_clipping_ratio": (float, 0.30),
        "min_cough_probability": (float, 0.5),
        "min_background_power_ratio": (float, 3.16),
    },
    "svm": {
        "c": (float, 1.0),
        "gamma": (float, None),
        "tolerance": (float, 1e-3),
        "max_passes": (int, 10),
    },
    "cnn": {
        "arch": (str, "toy"),
        "learning_rate": (float, None),
        "epochs": (int, None),
        "batch_size": (int, 16),
        "upsample_ratio": (int, 4),
    },
    "ssl": {
        "scale": (str, "toy"),
        "encoder_layers": (int, None),
        "hidden": (int, None),
        "heads": (int, None),
        "ffn": (int, None),
        "upstream_steps": (int, None),
        "upstream_warmup": (int, None),
        "upstream_batch": (int, None),
        "upstream_lr": (float, None),
        "downstream_steps": (int, None),
        "downstream_warmup": (int, None),
        "downstream_batch": (int, None),
        "downstream_lr": (float, None),
        "eval_interval": (int, 300),
        "upsample_ratio": (int, 5),
        "head_width": (int, None),
    },
    "synth": {
        "n_train": (int, 100),
        "n_validation": (int, 30),
        "n_test": (int, 0),
        "n_unlabeled": (int, 0),
    },
}


class ConfigError(Exception):
    """Unknown key, malformed value, or unreadable config file."""


def _parse_value(section: str, key: str, raw: str):
    try:
        typ, _ = SCHEMA[section][key]
    except KeyError:
        raise ConfigError(f"unknown config key [{section}] {key}") from None
    raw = raw.strip()
    try:
        if typ is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from None


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, raw: str) -> None:
        self.values.setdefault(section, {})[key] = _parse_value(section, key, raw)


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    env: dict[str, str] | None = None,
) -> RunConfig:
    """Assemble and validate the configuration from all sources."""
    cfg = RunConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                cfg.set(section, key, raw)

    env = os.environ if env is None else env
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :].lower()
        section, _, key = rest.partition("_")
        if section not in SCHEMA:
            raise ConfigError(f"unknown section in env var {name}")
        cfg.set(section, key, raw)

    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        cfg.set(section, key, raw)
    return cfg


def gate_thresholds(cfg: RunConfig) -> GateThresholds:
    g = cfg.values["gate"]
    return GateThresholds(
        min_max_amplitude=g["min_max_amplitude"],
        max_clipping_ratio=g["max_clipping_ratio"],
        min_cough_probability=g["min_cough_probability"],
        min_background_power_ratio=g["min_background_power_ratio"],
    )


def svm_params(cfg: RunConfig) -> SvmParams:
    s = cfg.values["svm"]
    return SvmParams(
        C=s["c"], gamma=s["gamma"], tolerance=s["tolerance"], max_passes=s["max_passes"]
    )


def cnn_train_config(cfg: RunConfig) -> tuple[str, CnnTrainConfig]:
    c = cfg.values["cnn"]
    arch = c["arch"]
    base = CnnTrainConfig.toy() if arch == "toy" else CnnTrainConfig()
    if c["learning_rate"] is not None:
        base.learning_rate = c["learning_rate"]
    if c["epochs"] is not None:
        base.epochs = c["epochs"]
    base.batch_size = c["batch_size"]
    base.upsample_ratio = c["upsample_ratio"]
    return arch, base


def ssl_configs(cfg: RunConfig) -> tuple[EncoderConfig, UpstreamConfig, DownstreamConfig]:
    s = cfg.values["ssl"]
    toy = s["scale"] == "toy"
    enc = EncoderConfig.toy() if toy else EncoderConfig()
    up = UpstreamConfig.toy() if toy else UpstreamConfig()
    down = DownstreamConfig.toy() if toy else DownstreamConfig()
    if s["encoder_layers"] is not None:
        enc.layers = s["encoder_layers"]
    if s["hidden"] is not None:
        enc.hidden = s["hidden"]
    if s["heads"] is not None:
        enc.heads = s["heads"]
    if s["ffn"] is not None:
        enc.ffn = s["ffn"]
    if s["upstream_steps"] is not None:
        up.total_steps = s["upstream_steps"]
    if s["upstream_warmup"] is not None:
        up.warmup_steps = s["upstream_warmup"]
    if s["upstream_batch"] is not None:
        up.batch_size = s["upstream_batch"]
    if s["upstream_lr"] is not None:
        up.max_lr = s["upstream_lr"]
    if s["downstream_steps"] is not None:
        down.steps = s["downstream_steps"]
    if s["downstream_warmup"] is not None:
        down.warmup_steps = s["downstream_warmup"]
    if s["downstream_batch"] is not None:
        down.batch_size = s["downstream_batch"]
    if s["downstream_lr"] is not None:
        down.lr = s["downstream_lr"]
    down.eval_interval = s["eval_interval"]
    down.upsample_ratio = s["upsample_ratio"]
    if s["head_width"] is not None:
        down.head_width = s["head_width"]
    return enc, up, down
