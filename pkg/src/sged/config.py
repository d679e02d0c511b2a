"""
Layered flat configuration with dotted keys.

Precedence, lowest first: built-in defaults, config file, environment
(``SGED_`` prefix), command-line overrides. The config file holds one
``key = value`` pair per line; ``#`` starts a comment. In environment
variables the dot becomes a double underscore, so ``encoder.dag_window`` is
set by ``SGED_ENCODER__DAG_WINDOW=3``.

Unknown keys are rejected everywhere. :func:`dump` emits the same format the
file parser reads, so an echoed config can be saved and reloaded verbatim.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Any, Mapping, Optional

from .data import SyntheticSpec
from .model import ModelConfig
from .train import TrainConfig

ENV_PREFIX = "SGED_"

DEFAULTS: dict[str, Any] = {
    "encoder.kind": "dag_lite",
    "encoder.hidden": 300,
    "encoder.dag_window": 2,
    "sse.enabled": True,
    "sse.intra": True,
    "sse.inter": True,
    "decoder.enabled": True,
    "decoder.label_dim": 100,
    "train.lr": 1e-4,
    "train.batch_size": 16,
    "train.epochs": 60,
    "train.seed": 0,
    "train.seeds_for_average": 5,
    "train.loss_normalization": "mean",
    "data.val_from_train": 0,
    "eval.split": "test",
    "synth.n_train": 200,
    "synth.n_val": 50,
    "synth.n_test": 50,
    "synth.min_length": 6,
    "synth.max_length": 12,
    "synth.min_speakers": 2,
    "synth.max_speakers": 3,
    "synth.n_labels": 4,
    "synth.p_inertia": 0.6,
    "synth.p_influence": 0.2,
    "synth.noise_eps": 0.05,
    "synth.feature_dim": 32,
    "synth.feature_noise_sigma": 1.0,
}

LR_GRID = (1e-5, 5e-5, 1e-4, 5e-4)
BATCH_GRID = (8, 16, 32)
_CHOICES = {
    "encoder.kind": ("ffn_passthrough", "birnn_attn", "dag_lite"),
    "train.loss_normalization": ("mean", "sum"),
    "eval.split": ("train", "val", "test"),
}


class ConfigError(ValueError):
    pass


def parse_value(key: str, text: str) -> Any:
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    if key in _CHOICES and text not in _CHOICES[key]:
        raise ConfigError(f"{key}: {text!r} not one of {', '.join(_CHOICES[key])}")
    return text


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None
    return out


def load_file(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    return parse_text(p.read_text(encoding="utf-8"), str(p))


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower().replace("__", ".")
        try:
            out[key] = parse_value(key, value)
        except ConfigError as e:
            raise ConfigError(f"environment {name}: {e}") from None
    return out


def resolve(
    path: Optional[str | Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> dict[str, Any]:
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(load_file(path))
    cfg.update(env_overrides(environ))
    for key, value in (overrides or {}).items():
        cfg[key] = parse_value(key, value) if isinstance(value, str) else _check(key, value)
    return cfg


def _check(key: str, value: Any) -> Any:
    # route typed values through the text parser so both paths validate alike
    return parse_value(key, format_value(value))


def dump(cfg: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {format_value(cfg[k])}\n" for k in sorted(cfg))


def config_hash(cfg: Mapping[str, Any]) -> str:
    return hashlib.sha256(dump(cfg).encode("utf-8")).hexdigest()[:16]


def model_config(cfg: Mapping[str, Any]) -> ModelConfig:
    enabled = cfg["sse.enabled"]
    return ModelConfig(
        encoder=cfg["encoder.kind"],
        hidden=cfg["encoder.hidden"],
        dag_window=cfg["encoder.dag_window"],
        label_dim=cfg["decoder.label_dim"],
        use_intra=enabled and cfg["sse.intra"],
        use_inter=enabled and cfg["sse.inter"],
        use_sgd=cfg["decoder.enabled"],
    )


def train_config(cfg: Mapping[str, Any]) -> TrainConfig:
    return TrainConfig(
        model=model_config(cfg),
        learning_rate=cfg["train.lr"],
        batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"],
        seed=cfg["train.seed"],
        seeds_for_average=cfg["train.seeds_for_average"],
        normalize_loss=cfg["train.loss_normalization"] == "mean",
    )


def synthetic_spec(cfg: Mapping[str, Any], n_dialogues: int, seed: int) -> SyntheticSpec:
    return SyntheticSpec(
        n_dialogues=n_dialogues,
        length_range=(cfg["synth.min_length"], cfg["synth.max_length"]),
        n_speakers_range=(cfg["synth.min_speakers"], cfg["synth.max_speakers"]),
        n_labels=cfg["synth.n_labels"],
        p_inertia=cfg["synth.p_inertia"],
        p_influence=cfg["synth.p_influence"],
        noise_eps=cfg["synth.noise_eps"],
        feature_dim=cfg["synth.feature_dim"],
        feature_noise_sigma=cfg["synth.feature_noise_sigma"],
        seed=seed,
    )
