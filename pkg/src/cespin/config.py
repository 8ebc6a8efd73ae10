"""TOML run configuration: shipped defaults, a user file and ``section.key=value`` overrides."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

#: Keys that do not affect numerical results and are left out of the config hash.
UNHASHED = {("run", "workers"), ("run", "output_dir")}

_POSITIVE = {
    ("field", "magnitude_mT"), ("bath", "cutoff_nm"), ("cce", "t_max_us"), ("cce", "chunk_size"),
    ("cce", "points"), ("cce", "t2_grid_step_us"), ("cce", "t2_rtol"), ("filter", "total_time_us"),
    ("filter", "omega_max"), ("filter", "points"), ("noise", "delta2"), ("noise", "tau_c_us"),
    ("noise", "amplitude"), ("noise", "omega_c"), ("noise", "power"), ("optics", "branching_ratio"),
    ("optics", "radiative_lifetime_us"), ("optics", "t1_us"), ("protocol", "pulses_per_train"),
    ("protocol", "pulse_duration_us"), ("t1", "gap_max_us"), ("t1", "points"),
    ("odmr", "linewidth_MHz"), ("odmr", "span_MHz"), ("odmr", "points"), ("rabi", "calibration"),
    ("rabi", "periods"), ("rabi", "points"), ("run", "workers"),
}
_NON_NEGATIVE = {
    ("cce", "pair_cutoff_nm"), ("optics", "pump_rate"), ("optics", "saturated_count_rate"),
    ("protocol", "readout_pulses"), ("protocol", "pulse_spacing_us"), ("t1", "noise_relative"),
    ("odmr", "mw_rate"), ("rabi", "power"), ("rabi", "detuning_sigma_MHz"), ("fit", "noise_relative"),
}
_CHOICES = {
    ("cce", "sequence"): ("ramsey", "hahn", "cpmg"),
    ("filter", "sequence"): ("ramsey", "hahn", "cpmg"),
    ("noise", "sequence"): ("ramsey", "hahn", "cpmg"),
    ("noise", "kind"): ("lorentzian", "hard_cutoff"),
    ("protocol", "polarization"): ("sigma_plus", "linear", "elliptical"),
    ("fit", "model"): ("stretched_exponential", "exponential_recovery", "lorentzian",
                      "damped_cosine", "power_law"),
    ("cce", "order"): (1, 2),
}


def default_config() -> dict:
    text = resources.files("cespin.data").joinpath("default.toml").read_text()
    return tomllib.loads(text)


def _check_type(key, default, value):
    if isinstance(default, bool) or isinstance(value, bool):
        ok = isinstance(default, bool) and isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float))
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def _merge(base: dict, update: dict, source: str):
    for section, table in update.items():
        if section not in base:
            raise ConfigError(f"unknown config section '{section}' in {source}")
        if not isinstance(table, dict):
            raise ConfigError(f"'{section}' must be a table in {source}")
        for key, value in table.items():
            if key not in base[section]:
                raise ConfigError(f"unknown config key '{section}.{key}' in {source}")
            base[section][key] = _check_type(f"{section}.{key}", base[section][key], value)


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    dotted, raw = text.split("=", 1)
    parts = dotted.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts[0], parts[1], value


def validate(cfg: dict):
    for section, key in _POSITIVE:
        v = cfg[section][key]
        if not v > 0:
            raise ConfigError(f"{section}.{key} must be positive, got {v}")
    for section, key in _NON_NEGATIVE:
        v = cfg[section][key]
        if v < 0:
            raise ConfigError(f"{section}.{key} must be non-negative, got {v}")
    for (section, key), choices in _CHOICES.items():
        if cfg[section][key] not in choices:
            raise ConfigError(f"{section}.{key} must be one of {choices}, got {cfg[section][key]!r}")
    if not 0 <= cfg["optics"]["ellipticity_leakage"] <= 1:
        raise ConfigError("optics.ellipticity_leakage must lie in [0, 1]")
    if not 0 <= cfg["crystal"]["central_frame"] < 6:
        raise ConfigError("crystal.central_frame must be 0..5")
    if len(cfg["field"]["direction"]) != 3:
        raise ConfigError("field.direction must have three components")
    crystal = cfg["crystal"]["file"]
    if not crystal.startswith("builtin:") and not Path(crystal).is_file():
        raise ConfigError(f"crystal.file {crystal!r} does not exist")
    for n in cfg["cce"]["t2_scan_n"] + cfg["noise"]["scan_n"]:
        if not isinstance(n, int) or n < 1:
            raise ConfigError(f"pulse counts must be positive integers, got {n!r}")


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the TOML file at ``path``, then ``section.key=value`` overrides."""
    cfg = default_config()
    if path is not None:
        try:
            user = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        _merge(cfg, user, str(path))
    for text in overrides:
        section, key, value = _parse_override(text)
        _merge(cfg, {section: {key: value}}, "--set")
    validate(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON of every result-relevant setting."""
    trimmed = copy.deepcopy(cfg)
    for section, key in UNHASHED:
        trimmed[section].pop(key, None)
    blob = json.dumps(trimmed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
