"""Experiment configuration files: schema, defaults and hashing.

A config is one YAML (or JSON) mapping with a ``kind``, an optional
``seed`` and ``output_dir``, and nested sections named after the modules
they configure.  Omitted sections and fields take the defaults listed in
``SECTIONS``; ``null`` marks values derived from other fields.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

import yaml

from .nanonmr import DEFAULT_KAPPA
from .signals import DEFAULT_GYROMAGNETIC_SCALE


class ConfigError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class _Field:
    def __init__(self, kind, default, choices=None, nullable=False, minimum=None):
        self.kind = kind
        self.default = default
        self.choices = choices
        self.nullable = nullable or default is None
        self.minimum = minimum

    def check(self, value, path):
        if value is None:
            if self.nullable:
                return None
            raise ConfigError(path, "must not be null")
        if self.kind == "number":
            if isinstance(value, str):
                # YAML 1.1 reads exponents without a decimal point (3e6) as strings
                try:
                    value = float(value)
                except ValueError:
                    raise ConfigError(path, f"expected a number, got {value!r}") from None
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(path, f"expected a number, got {value!r}")
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError(path, "must be finite")
        elif self.kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(path, f"expected an integer, got {value!r}")
        elif self.kind == "bool":
            if not isinstance(value, bool):
                raise ConfigError(path, f"expected true or false, got {value!r}")
        elif self.kind == "str":
            if not isinstance(value, str):
                raise ConfigError(path, f"expected a string, got {value!r}")
            if self.choices and value not in self.choices:
                raise ConfigError(path, f"must be one of {', '.join(self.choices)}")
        elif self.kind == "numbers":
            if not isinstance(value, list) or not value:
                raise ConfigError(path, "expected a non-empty list of numbers")
            value = [_Field("number", 0.0).check(v, f"{path}[{i}]") for i, v in enumerate(value)]
        if self.minimum is not None and self.kind in ("number", "int") and value < self.minimum:
            raise ConfigError(path, f"must be >= {self.minimum}")
        return value


def _num(default, **kw):
    return _Field("number", default, **kw)


def _int(default, **kw):
    return _Field("int", default, **kw)


TONE_FIELDS = {
    "amplitude": _num(None),  # k in rad/s
    "field_nT": _num(None),  # alternative to amplitude
    "frequency": _num(None),
    "phase": _num(0.0),
}

SECTIONS = {
    "signal": {
        "tones": _Field("tones", [{"field_nT": 880.0, "frequency": 1000002.0, "phase": 0.0}]),
        "gyromagnetic_scale": _num(DEFAULT_GYROMAGNETIC_SCALE, minimum=0.0),
        "trace_csv": _Field("str", None),
    },
    "sequence": {
        "tau": _num(500e-9, nullable=True),
        "order": _int(1, minimum=1),
    },
    "sensor": {
        "t2": _num(100e-6),
        "decay_exponent": _num(1.0),
        "contrast": _num(0.3),
        "mean_photons_bright": _num(0.03),
        "readout_dead_time": _num(5e-6, nullable=True),
    },
    "readout": {
        "final_pulse_phase": _num(0.0),
    },
    "clock": {
        "nominal_period": _num(None),
        "white_jitter": _num(0.0, minimum=0.0),
        "frequency_random_walk": _num(0.0, minimum=0.0),
        "stability_horizon": _num(None),
    },
    "acquisition": {
        "total_time": _num(1.0, nullable=True),
        "export_csv": _Field("bool", False),
    },
    "analysis": {
        "trace": _Field("str", None),
        "expected": _num(None),
        "search_halfwidth": _num(None),
        "window": _Field("str", "rect", choices=("rect", "hann")),
        "zero_pad": _int(16, minimum=1),
        "segments": _int(1, minimum=1),
        "false_alarm": _num(1e-3),
    },
    "sweep": {
        "center_frequency": _num(1e6),
        "span": _num(0.9e6),
        "points": _int(50, minimum=8),
        "repetitions": _int(20000, minimum=1),
        "order": _int(1, minimum=1),
        "random_phase": _Field("bool", True),
        "final_pulse_phase": _num(math.pi / 2),
    },
    "scaling": {
        "method": _Field("str", "qdyne", choices=("qdyne", "sweep")),
        "times": _Field("numbers", [1.0, 3.0, 10.0, 30.0, 100.0]),
        "trials": _int(20, minimum=10),
    },
    "bandwidth": {
        "span": _num(300e3),
        "points": _int(25, minimum=3),
        "offset": _num(12507.3),
        "search_halfwidth": _num(20.0),
    },
    "bath": {
        "box": _Field("numbers", [6.0, 6.0, 6.0]),
        "depth": _num(5.0),
        "n_spins": _int(300, nullable=True, minimum=0),
        "density": _num(None),
        "diffusion": _num(1e-15),
        "t1p": _num(0.32e-3),
        "larmor_frequency": _num(1.025e6),
        "bandwidth": _num(10e3),
        "timestep": _num(4.5e-6),
        "duration": _num(10e-3),
        "kappa": _num(DEFAULT_KAPPA),
        "max_spins": _int(200_000, minimum=1),
    },
}

KIND_SECTIONS = {
    "qdyne": ("signal", "sequence", "sensor", "readout", "clock", "acquisition", "analysis"),
    "multitone": ("signal", "sequence", "sensor", "readout", "clock", "acquisition", "analysis"),
    "bandwidth": ("signal", "sequence", "sensor", "readout", "clock", "acquisition", "bandwidth"),
    "sweep": ("signal", "sensor", "sweep"),
    "scaling": ("signal", "sequence", "sensor", "readout", "clock", "acquisition", "analysis",
                "sweep", "scaling"),
    "nmr": ("bath", "sequence", "sensor", "readout", "clock", "acquisition", "analysis"),
    "analyze": ("analysis",),
}

# per-kind default overrides (section -> field -> value)
KIND_DEFAULTS = {
    "multitone": {
        "signal": {"tones": [
            {"amplitude": 68017.4, "frequency": 1000010.0, "phase": 0.3},
            {"amplitude": 68017.4, "frequency": 1000035.0, "phase": 1.9},
            {"amplitude": 68017.4, "frequency": 1000057.0, "phase": 4.0},
        ]},
        "sensor": {"mean_photons_bright": 5.0},
        "acquisition": {"total_time": 180.0},
    },
    "bandwidth": {
        "signal": {"tones": [{"amplitude": 117809.7, "frequency": 1e6, "phase": 0.4}]},
        "sensor": {"mean_photons_bright": 5.0},
        "acquisition": {"total_time": 4.0},
    },
    "sweep": {
        "signal": {"tones": [{"amplitude": 8e5, "frequency": 1e6, "phase": 0.0}]},
        "sensor": {"mean_photons_bright": 5.0},
    },
    "nmr": {
        "sequence": {"tau": None},
        "sensor": {"readout_dead_time": None},
        "clock": {"nominal_period": 9e-6},
        "bath": {"duration": 0.5},
        "acquisition": {"total_time": None},
        "analysis": {"segments": 50, "window": "hann", "search_halfwidth": 15e3},
    },
}

TOP_LEVEL = {"kind", "seed", "output_dir"} | set(SECTIONS)


def _check_tones(value, path):
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of tones")
    out = []
    for i, tone in enumerate(value):
        p = f"{path}[{i}]"
        if not isinstance(tone, dict):
            raise ConfigError(p, "expected a mapping")
        for key in tone:
            if key not in TONE_FIELDS:
                raise ConfigError(f"{p}.{key}", "unknown field")
        t = {k: f.check(tone.get(k, f.default), f"{p}.{k}") for k, f in TONE_FIELDS.items()}
        if t["frequency"] is None:
            raise ConfigError(f"{p}.frequency", "required")
        if (t["amplitude"] is None) == (t["field_nT"] is None):
            raise ConfigError(p, "give exactly one of amplitude or field_nT")
        out.append(t)
    return out


def normalize(raw) -> dict:
    """Validate a parsed config and return it with every default filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a mapping")
    for key in raw:
        if key not in TOP_LEVEL:
            raise ConfigError(str(key), "unknown field")
    kind = raw.get("kind")
    if kind not in KIND_SECTIONS:
        raise ConfigError("kind", f"must be one of {', '.join(KIND_SECTIONS)}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "expected a nonnegative integer")
    out_dir = raw.get("output_dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output_dir", "expected a string")
    cfg = {"kind": kind, "seed": seed, "output_dir": out_dir}
    allowed = KIND_SECTIONS[kind]
    overrides = KIND_DEFAULTS.get(kind, {})
    for name in SECTIONS:
        if name in raw and name not in allowed:
            raise ConfigError(name, f"section not used by kind {kind!r}")
    for name in allowed:
        given = raw.get(name) or {}
        if not isinstance(given, dict):
            raise ConfigError(name, "expected a mapping")
        fields = SECTIONS[name]
        for key in given:
            if key not in fields:
                raise ConfigError(f"{name}.{key}", "unknown field")
        section = {}
        for key, f in fields.items():
            default = copy.deepcopy(overrides.get(name, {}).get(key, f.default))
            value = given.get(key, default)
            path = f"{name}.{key}"
            if f.kind == "tones":
                section[key] = _check_tones(value, path)
            else:
                section[key] = f.check(value, path)
        cfg[name] = section
    return cfg


def load(path) -> dict:
    """Read and validate a config file (YAML or JSON)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"cannot parse config: {exc}") from exc
    return normalize(raw if raw is not None else {})


def canonical(cfg: dict) -> str:
    """Canonical JSON of the parts of a config that determine the results."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()
