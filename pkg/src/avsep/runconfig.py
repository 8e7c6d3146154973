"""Flat ``key = value`` run-configuration files.

One assignment per line; ``#`` starts a comment; blank lines are ignored.
Keys split into the model schema (forwarded to :class:`ModelConfig`) and
the training schema (forwarded to :class:`TrainSettings`). Unknown keys
are an error, naming the key.
"""

from __future__ import annotations

from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainSettings

__all__ = ["parse_file", "parse_text", "make_model_config", "make_train_settings"]

_BOOL = {"true": True, "false": False}

# key -> converter
_MODEL_SCHEMA = {
    "sample_rate": int,
    "enc_kernel": int,
    "enc_stride": int,
    "n_audio_channels": int,
    "n_video_channels": int,
    "n_video_in": int,
    "depth": int,
    "n_fusion_cycles": int,
    "n_audio_cycles": int,
    "intra_variant": str,
    "inter_t_enabled": "bool",
    "inter_m_enabled": "bool",
    "inter_b_enabled": "bool",
    "dropout_p": float,
    "ffn_channels": "int_triple",
    "q_kernel": int,
    "audio_only": "bool",
    "n_speakers": int,
}

_TRAIN_SCHEMA = {
    "lr": float,
    "max_steps": int,
    "steps_per_epoch": int,
    "clip_norm": float,
    "plateau_patience": int,
    "stop_patience": int,
    "seed": int,
    "snr_db": float,
    "mixture_seconds": float,
    "target_si_snri_db": float,
    "dynamic_mix": "bool",
    "pool_size": int,
}


def _convert(key: str, raw: str, conv):
    try:
        if conv == "bool":
            if raw.lower() not in _BOOL:
                raise ValueError("expected true or false")
            return _BOOL[raw.lower()]
        if conv == "int_triple":
            parts = [int(p.strip()) for p in raw.split(",")]
            if len(parts) != 3:
                raise ValueError("expected three comma-separated integers")
            return tuple(parts)
        return conv(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({e})") from e


def parse_text(text: str) -> dict:
    """Parse config text into a {key: typed value} dict."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _MODEL_SCHEMA:
            conv = _MODEL_SCHEMA[key]
        elif key in _TRAIN_SCHEMA:
            conv = _TRAIN_SCHEMA[key]
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _convert(key, raw, conv)
    return out


def parse_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_text(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def make_model_config(values: dict) -> ModelConfig:
    return ModelConfig(**{k: v for k, v in values.items() if k in _MODEL_SCHEMA})


def make_train_settings(values: dict) -> TrainSettings:
    return TrainSettings(**{k: v for k, v in values.items() if k in _TRAIN_SCHEMA})
