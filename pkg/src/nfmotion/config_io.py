"""Flat `key = value` experiment configuration files.

Grammar: one `key = value` per line, `#` starts a comment, blank lines
ignored. Unknown keys are errors. A `preset` key (desk | tableII) seeds the
scenario before the remaining keys override individual fields.
"""

from __future__ import annotations

from dataclasses import fields, replace

import numpy as np

from .harness import PRESETS, ExperimentConfig, ExperimentError, Scenario


class ConfigError(ValueError):
    pass


_SCENARIO_KEYS = {
    "n_tx": int, "n_rx": int, "m_sub": int, "d0": float, "fc": float,
    "pri": float, "n_pulses": int, "bandwidth": float,
    "p0_x": float, "p0_y": float, "v0_x": float, "v0_y": float,
    "pt_dbm": float, "gt_db": float, "gr_db": float, "sigma_s2": float,
    "snr_db": float, "delay_std": float, "doppler_sign": float,
    "loc_grid_half": float, "loc_grid_step": float,
    "vel_grid_half": float, "vel_grid_step": float,
}
_EXPERIMENT_KEYS = {
    "param": str, "values": str, "methods": str, "trials": int,
    "seed": int, "threads": int, "out": str, "trial_log": str,
}
_ALL_KEYS = {"preset", *_SCENARIO_KEYS, *_EXPERIMENT_KEYS}


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(key: str, value: str, typ):
    try:
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {value!r}") from exc


# required when no preset shortcut supplies them
_CORE_KEYS = ("n_tx", "n_rx", "m_sub", "n_pulses",
              "p0_x", "p0_y", "v0_x", "v0_y")


def build_experiment(raw: dict[str, str],
                     overrides: dict | None = None) -> ExperimentConfig:
    """ExperimentConfig from parsed keys plus CLI overrides (already typed)."""
    merged = dict(raw)
    explicit_preset = "preset" in merged
    preset_name = merged.pop("preset", "desk")
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}")
    if merged and not explicit_preset:
        # a fully explicit configuration must name the core scenario keys
        for key in _CORE_KEYS:
            if key not in merged:
                raise ConfigError(f"missing config key {key!r} "
                                  "(or select a preset)")
    scenario = PRESETS[preset_name]()

    scn_updates = {}
    p0 = list(scenario.p0)
    v0 = list(scenario.v0)
    for key, value in merged.items():
        if key in _SCENARIO_KEYS:
            val = _convert(key, value, _SCENARIO_KEYS[key])
            if key == "p0_x":
                p0[0] = val
            elif key == "p0_y":
                p0[1] = val
            elif key == "v0_x":
                v0[0] = val
            elif key == "v0_y":
                v0[1] = val
            else:
                scn_updates[key] = val
    scenario = replace(scenario, p0=tuple(p0), v0=tuple(v0), **scn_updates)

    exp_kwargs: dict = {}
    if "param" in merged:
        exp_kwargs["sweep_param"] = merged["param"]
    if "values" in merged:
        try:
            exp_kwargs["sweep_values"] = tuple(
                float(v) for v in merged["values"].split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(f"cannot parse values {merged['values']!r}") from exc
    if "methods" in merged:
        exp_kwargs["methods"] = tuple(
            m.strip() for m in merged["methods"].split(",") if m.strip())
    for key, attr in (("trials", "trials"), ("seed", "seed"),
                      ("threads", "threads")):
        if key in merged:
            exp_kwargs[attr] = _convert(key, merged[key], int)
    if "out" in merged:
        exp_kwargs["out_path"] = merged["out"]
    if "trial_log" in merged:
        exp_kwargs["trial_log_path"] = merged["trial_log"]
    if overrides:
        exp_kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if "sweep_values" not in exp_kwargs:
        exp_kwargs["sweep_values"] = (scenario.snr_db,)
    try:
        return ExperimentConfig(scenario=scenario, **exp_kwargs)
    except ExperimentError as exc:
        raise ConfigError(str(exc)) from exc


def load_experiment(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return build_experiment(parse_config_text(text), overrides)
