"""Experiment configuration: strict INI schema with full-default echo.

A config document has sections [workload], [predictor], [skipper],
[scheduler], [output] and, for sweeps, [sweep]. Every key is typed and
validated; unknown sections or keys are hard errors. Precedence is
flags > config file > defaults. The resolved configuration can be echoed
back as a canonical INI document; a [meta] section in an input file (as
written into run manifests) is accepted and ignored, so any manifest is
itself a loadable config.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import Any

from .backbone_sim import Preset, SyntheticSpec
from .bench import DEFAULT_CACHE_COST
from .errors import ConfigError
from .predictor import HorizonMode, PredictorConfig, PredictorKind
from .skipper import SkipConfig, SkipKind


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_float(raw: str) -> float:
    val = float(raw)
    if math.isnan(val):
        raise ValueError("NaN is not a valid value")
    return val


_PARSERS = {
    "int": int,
    "float": _parse_float,
    "str": str.strip,
    "bool": _parse_bool,
}

# section -> key -> (type name, default). A None default means "unset".
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "workload": {
        "kind": ("str", "synthetic"),
        "preset": ("str", Preset.MIXED.value),
        "n_tokens": ("int", 96),
        "dims": ("int", 8),
        "stable_fraction": ("float", 0.3),
        "linear_fraction": ("float", 0.4),
        "chaotic_fraction": ("float", 0.3),
        "turn_step": ("int", 8),
        "amplitude": ("float", 1.0),
        "frequency": ("float", 0.15),
        "noise_sigma": ("float", 0.0),
        "coupling": ("float", 0.0),
        "seed": ("int", None),
        "trace_path": ("str", ""),
    },
    "predictor": {
        "kind": ("str", PredictorKind.CHTP.value),
        "n_max": ("int", 6),
        "horizon_mode": ("str", HorizonMode.TIMESTEP_DELTA.value),
        "rng_seed": ("int", None),
        "p_stable": ("float", 0.3),
        "p_chaotic": ("float", 0.7),
        "eps": ("float", 1e-8),
    },
    "skipper": {
        "kind": ("str", SkipKind.CAS.value),
        "eta": ("float", 0.2),
        "interval": ("int", 5),
        "tau": ("float", 0.1),
        "enforce_streak_cap": ("bool", True),
        "warmup_fulls": ("int", 3),
    },
    "scheduler": {
        "steps": ("int", 50),
        "t_max": ("float", None),
    },
    "output": {
        "dir": ("str", "."),
        "run_id": ("str", ""),
        "c_cache": ("float", DEFAULT_CACHE_COST),
    },
    "sweep": {
        "eta": ("str", ""),
        "p_stable": ("str", ""),
        "p_chaotic": ("str", ""),
        "n_max": ("str", ""),
        "predictor": ("str", ""),
        "skipper": ("str", ""),
        "tau": ("str", ""),
        "interval": ("str", ""),
        "seeds": ("str", ""),
    },
}

# Canonical column order for sweep grids (subset actually swept is used).
SWEEP_AXES = ("eta", "p_stable", "p_chaotic", "n_max", "predictor", "skipper", "tau", "interval")

_AXIS_TARGET = {
    "eta": ("skipper", "eta", "float"),
    "p_stable": ("predictor", "p_stable", "float"),
    "p_chaotic": ("predictor", "p_chaotic", "float"),
    "n_max": ("predictor", "n_max", "int"),
    "predictor": ("predictor", "kind", "str"),
    "skipper": ("skipper", "kind", "str"),
    "tau": ("skipper", "tau", "float"),
    "interval": ("skipper", "interval", "int"),
}

_ENUMS = {
    ("workload", "kind"): ("synthetic", "trace"),
    ("workload", "preset"): tuple(p.value for p in Preset),
    ("predictor", "kind"): tuple(k.value for k in PredictorKind),
    ("predictor", "horizon_mode"): tuple(m.value for m in HorizonMode),
    ("skipper", "kind"): tuple(k.value for k in SkipKind),
}


@dataclass(frozen=True)
class ResolvedConfig:
    """Fully-typed configuration with every key materialized."""

    values: dict[str, dict[str, Any]]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def synthetic_spec(self) -> SyntheticSpec:
        w = self.values["workload"]
        return SyntheticSpec(
            n_tokens=w["n_tokens"],
            dims=w["dims"],
            fractions=(
                w["stable_fraction"],
                w["linear_fraction"],
                w["chaotic_fraction"],
            ),
            preset=Preset(w["preset"]),
            turn_step=w["turn_step"],
            amplitude=w["amplitude"],
            frequency=w["frequency"],
            noise_sigma=w["noise_sigma"],
            coupling=w["coupling"],
            seed=w["seed"] if w["seed"] is not None else 0,
        )

    def predictor_config(self) -> PredictorConfig:
        p = self.values["predictor"]
        rng_seed = p["rng_seed"]
        if (
            rng_seed is None
            and p["kind"] == PredictorKind.RANDOM_GROUPING.value
            and self.values["workload"]["seed"] is not None
        ):
            rng_seed = self.values["workload"]["seed"]
        return PredictorConfig(
            kind=PredictorKind(p["kind"]),
            n_max=p["n_max"],
            horizon_mode=HorizonMode(p["horizon_mode"]),
            rng_seed=rng_seed,
            p_stable=p["p_stable"],
            p_chaotic=p["p_chaotic"],
            eps=p["eps"],
        )

    def skip_config(self) -> SkipConfig:
        s = self.values["skipper"]
        return SkipConfig(
            kind=SkipKind(s["kind"]),
            eta=s["eta"],
            interval=s["interval"],
            tau=s["tau"],
            enforce_streak_cap=s["enforce_streak_cap"],
            warmup_fulls=s["warmup_fulls"],
        )


def read_config_file(path) -> dict[str, dict[str, str]]:
    """Read an INI document into raw strings, validating the key set."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    raw: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section == "meta":
            continue  # manifests carry provenance here; not configuration
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            raw.setdefault(section, {})[key] = value
    return raw


def _check_known(raw: dict[str, dict[str, str]], origin: str) -> None:
    for section, keys in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}] in {origin}")
        for key in keys:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key} in {origin}")


def resolve(
    file_raw: dict[str, dict[str, str]] | None = None,
    overrides: dict[str, dict[str, str]] | None = None,
) -> ResolvedConfig:
    """Merge defaults < file < overrides and parse to typed values.

    Unknown sections or keys in either source are hard errors: a typoed knob
    must never silently fall back to its default.
    """
    if file_raw:
        _check_known(file_raw, "config file")
    if overrides:
        _check_known(overrides, "overrides")
    values: dict[str, dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (type_name, default) in keys.items():
            raw = None
            if file_raw and key in file_raw.get(section, {}):
                raw = file_raw[section][key]
            if overrides and key in overrides.get(section, {}):
                raw = overrides[section][key]
            if raw is None:
                values[section][key] = default
                continue
            raw = str(raw)
            if raw == "" and default is None:
                values[section][key] = None
                continue
            try:
                values[section][key] = _PARSERS[type_name](raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r} ({exc})"
                ) from exc
            allowed = _ENUMS.get((section, key))
            if allowed and values[section][key] not in allowed:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r} "
                    f"(expected one of {', '.join(allowed)})"
                )
    cfg = ResolvedConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: ResolvedConfig) -> None:
    w = cfg.values["workload"]
    if w["kind"] == "synthetic":
        if w["seed"] is None:
            raise ConfigError(
                "workload.seed is required for synthetic (stochastic) workloads"
            )
        try:
            cfg.synthetic_spec()
        except Exception as exc:
            raise ConfigError(f"invalid workload parameters: {exc}") from exc
    else:
        if not w["trace_path"]:
            raise ConfigError("workload.trace_path is required when kind = trace")
    try:
        pred = cfg.predictor_config()
        cfg.skip_config()
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"invalid policy parameters: {exc}") from exc
    if pred.kind is PredictorKind.RANDOM_GROUPING and pred.rng_seed is None:
        raise ConfigError("predictor.rng_seed is required for random-grouping")
    if cfg.values["scheduler"]["steps"] < 0:
        raise ConfigError("scheduler.steps must be >= 0")
    if cfg.values["output"]["c_cache"] < 0:
        raise ConfigError("output.c_cache must be >= 0")


def format_value(val: Any) -> str:
    """Canonical string form (floats round-trip at 17 significant digits)."""
    if val is None:
        return ""
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return format(val, ".17g")
    return str(val)


def echo_config(cfg: ResolvedConfig, meta: dict[str, str] | None = None) -> str:
    """Serialize the fully-resolved configuration as canonical INI text."""
    lines: list[str] = []
    if meta:
        lines.append("[meta]")
        for key, val in meta.items():
            lines.append(f"{key} = {val}")
        lines.append("")
    for section in SCHEMA:
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            lines.append(f"{key} = {format_value(cfg.values[section][key])}")
        lines.append("")
    return "\n".join(lines)


def sweep_axes(cfg: ResolvedConfig) -> dict[str, list[str]]:
    """Parse the [sweep] section's populated axes, in canonical order."""
    sw = cfg.values["sweep"]
    axes: dict[str, list[str]] = {}
    for name in SWEEP_AXES:
        raw = sw.get(name, "")
        if not raw:
            continue
        items = [part.strip() for part in raw.split(",") if part.strip()]
        if not items:
            raise ConfigError(f"sweep.{name} lists no values")
        section, key, type_name = _AXIS_TARGET[name]
        for item in items:
            try:
                val = _PARSERS[type_name](item)
            except ValueError as exc:
                raise ConfigError(f"bad value in sweep.{name}: {item!r}") from exc
            allowed = _ENUMS.get((section, key))
            if allowed and val not in allowed:
                raise ConfigError(
                    f"bad value in sweep.{name}: {item!r} "
                    f"(expected one of {', '.join(allowed)})"
                )
        axes[name] = items
    return axes


def sweep_seeds(cfg: ResolvedConfig) -> list[int]:
    raw = cfg.values["sweep"].get("seeds", "")
    if not raw:
        raise ConfigError("sweep.seeds is required for sweeps")
    try:
        return [int(part.strip()) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep.seeds list: {raw!r}") from exc


def apply_axis_override(
    overrides: dict[str, dict[str, str]], axis: str, value: str
) -> None:
    """Route one sweep-axis value onto its (section, key) override slot."""
    section, key, _ = _AXIS_TARGET[axis]
    overrides.setdefault(section, {})[key] = value
