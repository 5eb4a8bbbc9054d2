"""JSON run configuration: schema, defaults, validation, overrides."""

import copy
import json

from .errors import ConfigError
from .network import ModelConfig
from .training import OptState

# leaf values give the default; a type in VALUE_TYPES constrains overrides
DEFAULTS = {
    "model": {
        "d": 64,
        "layers": 5,
        "classes": 5,
        "directions": 8,
        "use_global": True,
        "h_update": "strict_paper",
        "biases": True,
        "stem_channels": [32, 32],
        "precision": "wide",
        "init_gate_scale": 0.1,
        "init_conv_std": 0.001,
    },
    "train": {
        "lr": 0.001,
        "momentum": 0.9,
        "weight_decay": 0.0005,
        "batch_size": 2,
        "epochs": 1,
        "seed": 0,
        "eval_every": 0,
    },
    "data": {
        "synth": {"count": 20, "height": 24, "width": 24, "seed": 0},
        "dir": None,
    },
    "io": {
        "checkpoint_in": None,
        "checkpoint_out": None,
        "pred_dir": None,
        "report_dir": None,
    },
    "gradcheck": {
        "n_coords": 200,
        "eps": 1e-5,
        "tol": 1e-5,
        "height": 6,
        "width": 6,
        "seed": 0,
    },
}

_TYPES = {
    "model.d": int, "model.layers": int, "model.classes": int,
    "model.directions": int, "model.use_global": bool, "model.h_update": str,
    "model.biases": bool, "model.stem_channels": list, "model.precision": str,
    "model.init_gate_scale": float, "model.init_conv_std": float,
    "train.lr": float, "train.momentum": float, "train.weight_decay": float,
    "train.batch_size": int, "train.epochs": int, "train.seed": int,
    "train.eval_every": int,
    "data.synth": dict, "data.synth.count": int, "data.synth.height": int,
    "data.synth.width": int, "data.synth.seed": int, "data.dir": str,
    "io.checkpoint_in": (str, dict), "io.checkpoint_out": str, "io.pred_dir": str,
    "io.report_dir": str,
    "gradcheck.n_coords": int, "gradcheck.eps": float, "gradcheck.tol": float,
    "gradcheck.height": int, "gradcheck.width": int, "gradcheck.seed": int,
}


def _check_type(path, value):
    expected = _TYPES.get(path)
    if expected is None or value is None:
        return value
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {path!r} must be a boolean, got {value!r}")
    elif expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {path!r} must be a number, got {value!r}")
        value = float(value)
    elif expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {path!r} must be an integer, got {value!r}")
    elif not isinstance(value, expected):
        names = (expected.__name__ if isinstance(expected, type)
                 else " or ".join(t.__name__ for t in expected))
        raise ConfigError(f"config key {path!r} must be a {names}, got {value!r}")
    return value


def _merge(defaults, user, prefix=""):
    merged = {}
    for key, default in defaults.items():
        path = f"{prefix}{key}"
        if key not in user:
            merged[key] = copy.deepcopy(default)
        elif isinstance(default, dict) and isinstance(user[key], dict):
            merged[key] = _merge(default, user[key], prefix=f"{path}.")
        else:
            merged[key] = _check_type(path, user[key])
    for key in user:
        if key not in defaults:
            raise ConfigError(f"unknown config key {prefix}{key!r}")
    return merged


def normalize(user):
    """Merge a raw config dict over the defaults, rejecting unknown keys."""
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge(DEFAULTS, user)


def load_run_config(path, overrides=()):
    """Parse a JSON config file, apply key=value overrides, merge defaults.

    Returns (merged, raw): raw preserves only what the user set, which lets
    commands distinguish explicit values from defaults.
    """
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for item in overrides:
        raw = apply_override(raw, item)
    return normalize(raw), raw


def apply_override(raw, item):
    """Apply a dotted `section.key=value` override; values parse as JSON
    literals and fall back to bare strings."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    key_path, text = item.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    keys = key_path.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {item!r} descends into non-object {key!r}")
    node[keys[-1]] = value
    return raw


def model_config_from(merged):
    section = merged["model"]
    return ModelConfig(
        d=section["d"], layers=section["layers"], classes=section["classes"],
        directions=section["directions"], use_global=section["use_global"],
        h_update=section["h_update"], biases=section["biases"],
        stem_channels=tuple(section["stem_channels"]),
        precision=section["precision"],
        init_gate_scale=section["init_gate_scale"],
        init_conv_std=section["init_conv_std"],
    ).validate()


def opt_state_from(merged):
    section = merged["train"]
    return OptState(lr=section["lr"], momentum=section["momentum"],
                    weight_decay=section["weight_decay"],
                    batch_size=section["batch_size"])
