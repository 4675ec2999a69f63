"""Run configuration: one strict JSON file drives every CLI command.

Unknown keys are errors; absent keys take defaults. Presets pin the
published hyperparameter bundles: "initial-paper" (the starting values),
"expost-paper" and "exante-paper" (the tuned per-mode values). The default
configuration equals the exante-paper preset.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "preset": "exante-paper",
    "paths": {
        "data": None,
        "schema": None,
        "violations": None,
        "output": "out",
    },
    "pipeline": {
        "mode": "ExAnte",
        "target_year": None,
        "min_years": 6,
        "sparse_threshold": 0.30,
        "impute_k": 5,
        "gray_filter": True,
        "gray_quantile": 0.05,
        "gray_before_standardize": True,
        "smote": True,
        "smote_k": 5,
        "smote_stage": "pre_split",
        "zscore_scope": "all",
        "seed": 0,
    },
    "network": {
        "channels": [32, 64],
        "dense_hidden": 128,
        "conv_dropout": 0.25,
        "dense_dropout": 0.5,
        "dtype": "float32",
    },
    "training": {
        "lr": 0.0005,
        "batch_size": 64,
        "epochs": 8,
        "seed": 0,
        "ratios": [0.70, 0.15, 0.15],
        "threshold": 0.75,
        "threshold_policy": "max_f2",
    },
    "anomaly": {
        "n_trees": 100,
        "psi": 256,
        "seed": 0,
    },
    "baseline": {
        "C": 1.0,
        "iters": 500,
        "threshold": 0.35,
        "seed": 0,
        "framing": "flat_images",
        "train_years": [2010, 2017],
        "valid_years": [2018, 2019],
        "test_years": [2020, 2021],
    },
    "explain": {
        "company": None,
        "scale": 8,
        "layer_grids": [],
    },
    "synth": {
        "n_companies": 1436,
        "n_years": 13,
        "f_fin": 180,
        "f_esg": 40,
        "f_ic": 63,
        "fraud_rate": 0.048,
        "band_strength": 1.0,
        "cluster_strength": 3.0,
        "missing_rate": 0.02,
        "gray_rate": 0.03,
        "seed": 7,
        "start_year": 2010,
    },
    "compare": {
        "external": [],
    },
}

# fields whose None default accepts this type when provided
NULLABLE_TYPES = {
    "paths.data": str,
    "paths.schema": str,
    "paths.violations": str,
    "pipeline.target_year": int,
    "explain.company": str,
}

PRESETS = {
    "initial-paper": {
        "pipeline": {"mode": "ExAnte"},
        "training": {"lr": 0.01, "batch_size": 64, "epochs": 5, "threshold": 0.5},
    },
    "expost-paper": {
        "pipeline": {"mode": "ExPost"},
        "training": {"lr": 0.001, "batch_size": 32, "epochs": 6, "threshold": 0.45},
    },
    "exante-paper": {
        "pipeline": {"mode": "ExAnte"},
        "training": {"lr": 0.0005, "batch_size": 64, "epochs": 8, "threshold": 0.75},
    },
}

EXTERNAL_ENTRY_DEFAULTS = {"name": None, "path": None, "threshold": 0.5}


@dataclass
class RunConfig:
    resolved: dict

    def section(self, name: str) -> dict:
        return self.resolved[name]

    def __getitem__(self, name: str):
        return self.resolved[name]

    @property
    def output_dir(self) -> Path:
        return Path(self.resolved["paths"]["output"])

    def hash(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def echo(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "resolved_config.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.resolved, fh, sort_keys=True, indent=1)
        return path


def _check_type(path: str, value, default) -> None:
    if value is None and path in NULLABLE_TYPES:
        return
    if default is None:
        expected = NULLABLE_TYPES.get(path)
        if expected is None or isinstance(value, expected):
            return
        raise ConfigError(f"config key {path}: expected {expected.__name__}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {path}: expected boolean")
        return
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {path}: expected number")
        return
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {path}: expected integer")
        return
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {path}: expected string")
        return
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"config key {path}: expected list")
        return
    raise ConfigError(f"config key {path}: unsupported type")


def _merge(base: dict, override: dict, prefix: str = "") -> None:
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path}: expected section object")
            _merge(base[key], value, prefix=f"{path}.")
        else:
            _check_type(path, value, base[key])
            base[key] = value


def _validate_external(entries) -> list:
    out = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError(f"config key compare.external[{i}]: expected object")
        merged = dict(EXTERNAL_ENTRY_DEFAULTS)
        for key, value in entry.items():
            if key not in merged:
                raise ConfigError(f"unknown config key: compare.external[{i}].{key}")
            merged[key] = value
        if not isinstance(merged["name"], str) or not isinstance(merged["path"], str):
            raise ConfigError(f"config key compare.external[{i}]: name and path are required strings")
        if not isinstance(merged["threshold"], (int, float)) or isinstance(merged["threshold"], bool):
            raise ConfigError(f"config key compare.external[{i}].threshold: expected number")
        out.append(merged)
    return out


def resolve_config(user: dict, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Layer preset values and user keys over the defaults, strictly."""
    resolved = copy.deepcopy(DEFAULTS)
    preset_name = preset or user.get("preset", resolved["preset"])
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}")
    resolved["preset"] = preset_name
    _merge(resolved, copy.deepcopy(PRESETS[preset_name]))
    _merge(resolved, user)
    resolved["preset"] = preset_name
    if overrides:
        _merge(resolved, overrides)
    resolved["compare"]["external"] = _validate_external(resolved["compare"]["external"])
    _sanity(resolved)
    return RunConfig(resolved=resolved)


def _sanity(resolved: dict) -> None:
    if resolved["pipeline"]["mode"] not in ("ExAnte", "ExPost"):
        raise ConfigError("pipeline.mode must be ExAnte or ExPost")
    ratios = resolved["training"]["ratios"]
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or any(r <= 0 for r in ratios):
        raise ConfigError("training.ratios must be three positive numbers summing to 1")
    if resolved["pipeline"]["smote_stage"] not in ("pre_split", "post_split"):
        raise ConfigError("pipeline.smote_stage must be pre_split or post_split")
    if resolved["pipeline"]["zscore_scope"] not in ("all", "train_only"):
        raise ConfigError("pipeline.zscore_scope must be all or train_only")
    if (
        resolved["pipeline"]["zscore_scope"] == "train_only"
        and resolved["pipeline"]["smote_stage"] == "pre_split"
    ):
        # pre-split resampling changes the split population after scaling,
        # so a train-fitted scaler cannot be defined consistently
        raise ConfigError("zscore_scope=train_only requires smote_stage=post_split")
    if resolved["baseline"]["framing"] not in ("flat_images", "temporal_rows"):
        raise ConfigError("baseline.framing must be flat_images or temporal_rows")
    policy = resolved["training"]["threshold_policy"]
    if not (policy == "max_f2" or policy == "manual"):
        raise ConfigError("training.threshold_policy must be max_f2 or manual")
    channels = resolved["network"]["channels"]
    if len(channels) != 2 or channels[1] != 2 * channels[0]:
        raise ConfigError("network.channels must double between blocks")


def parse_config(path, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Load, validate, and resolve a JSON config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return resolve_config(user, preset=preset, overrides=overrides)
