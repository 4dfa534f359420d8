"""Flat JSON run configuration, validated before any simulation starts.

Every key is optional; unset keys fall back to the dataclass defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .peers.session import SessionConfig
from .physchan import ChannelParams, TimingParams

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_open_prob = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_count = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        # channel and detectors
        "loss_db": _nonneg,
        "dark_prob": _prob,
        "gate_ns": _pos,
        "dead_time_ns": _pos,
        "mismatch": _prob,
        "fwhm_ns": _pos,
        "rise_ns": _pos,
        "record_window_ns": _pos,
        "reference_gate_ns": _pos,
        # timing
        "rep_rate_hz": _pos,
        "init_us": _pos,
        "readout_us": _pos,
        "switch_ms": _nonneg,
        "passive": {"type": "boolean"},
        # state
        "visibility": _prob,
        "visibility_z": _prob,
        "visibility_y": _prob,
        "bell_visibility": _prob,
        "inject_error_rate": _prob,
        # certification
        "delta": _open_prob,
        "q": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.25},
        "bell_rounds_per_setting": _count,
        # protocol
        "target_sifted_bits": _count,
        "max_rounds": _count,
        "batch_size": _count,
        "disclose_fraction": _open_prob,
        "abort_qber": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "randomness": {"enum": ["replay", "secure"]},
        "timeout_s": _pos,
        "n_passes": {"type": "integer", "minimum": 1, "maximum": 16},
        "confirm_bits": {"type": "integer", "enum": [64, 128, 192, 256]},
        # key budget
        "eps_sec": _open_prob,
        "eps_ec": _open_prob,
        "log_base": {"enum": ["log2", "ln"]},
        "length_policy": {"enum": ["finite", "asymptotic"]},
        # run
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "mode": {"enum": ["simulate", "listen", "connect", "analyze"]},
        "out": {"type": "string"},
        "points": {"type": "integer", "minimum": 2, "maximum": 100000},
    },
}

CHANNEL_KEYS = {
    "loss_db": "loss_db",
    "dark_prob": "dark_count_prob_per_window",
    "gate_ns": "gate_width_ns",
    "dead_time_ns": "detector_dead_time_ns",
    "mismatch": "efficiency_mismatch",
    "fwhm_ns": "photon_fwhm_ns",
    "rise_ns": "rise_ns",
    "record_window_ns": "record_window_ns",
    "reference_gate_ns": "reference_gate_ns",
}
TIMING_KEYS = {
    "rep_rate_hz": "rep_rate_hz",
    "init_us": "init_time_us",
    "readout_us": "ion_readout_time_us",
    "switch_ms": "basis_switch_time_ms",
    "passive": "passive_switching",
}
SESSION_KEYS = (
    "visibility_z", "visibility_y", "bell_visibility", "inject_error_rate", "delta", "q",
    "bell_rounds_per_setting", "target_sifted_bits", "max_rounds", "batch_size", "disclose_fraction",
    "abort_qber", "timeout_s", "n_passes", "confirm_bits", "eps_sec", "eps_ec", "log_base",
    "length_policy", "seed",
)


class ConfigError(ValueError):
    code = 5


@dataclass
class RunConfig:
    session: SessionConfig = field(default_factory=SessionConfig)
    mode: str = "simulate"
    out: str = "out"
    randomness: str = "replay"
    points: int = 41
    raw: dict = field(default_factory=dict)

    @property
    def channel(self) -> ChannelParams:
        return self.session.channel

    @property
    def timing(self) -> TimingParams:
        return self.session.timing

    @property
    def seed(self) -> int:
        return self.session.seed


def validate(data: dict) -> None:
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "config"
        raise ConfigError(f"{where}: {exc.message}") from None


def from_dict(data: dict) -> RunConfig:
    validate(data)
    try:
        channel = ChannelParams(**{CHANNEL_KEYS[k]: v for k, v in data.items() if k in CHANNEL_KEYS})
        timing = TimingParams(**{TIMING_KEYS[k]: v for k, v in data.items() if k in TIMING_KEYS})
        kw = {k: data[k] for k in SESSION_KEYS if k in data}
        if "visibility" in data:
            for k in ("visibility_z", "visibility_y", "bell_visibility"):
                kw.setdefault(k, data["visibility"])
        session = SessionConfig(channel=channel, timing=timing, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(session, data.get("mode", "simulate"), data.get("out", "out"),
                     data.get("randomness", "replay"), data.get("points", 41), dict(data))


def load(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_dict(data)
