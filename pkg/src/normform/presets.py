"""Named run configurations and config merging.

A run config is a JSON document. ``{"preset": name, ...}`` starts from the
named preset and deep-merges the remaining keys over it.
"""

import copy
import json

from .exceptions import ConfigError

_SCALAR_NETWORK = {
    "phi1_hidden": [16, 16], "psi1_hidden": [16, 16],
    "phi2_hidden": [16, 16], "psi2_hidden": [16, 16],
    "activation": "elu", "sign_eps": 0.1,
}
_SCALAR_TRAINING = {"epochs": 200, "batch_size": 10, "learning_rate": 1e-3, "seed": 0}


def _scalar(name, kind, orientation, sigma_u, sigma_alpha, t_end, lambda6):
    return {
        "system": {"name": name},
        "normal_form": {"kind": kind},
        "tau": {"policy": "trainable", "value": 1.0},
        "sampling": {"sigma_u": sigma_u, "sigma_alpha": sigma_alpha,
                     "n_train": 500, "n_test": 20, "seed": 0},
        "grid": {"t0": 0.0, "t_end": t_end, "n_points": 101},
        "trim": 0,
        "loss_weights": [1.0, 1e-2, 1e-2, 1e-2, 0.0, lambda6],
        "network": dict(_SCALAR_NETWORK, orientation=orientation),
        "training": dict(_SCALAR_TRAINING),
    }


PRESETS = {
    "lorenz96": {
        "system": {"name": "lorenz96", "params": {"n": 64}, "alpha_c": 0.84975},
        "normal_form": {"kind": "hopf", "omega": 1.0},
        "tau": {"policy": "fixed", "value": 0.825},
        "sampling": {"sigma_u": 0.1, "sigma_alpha": 0.5, "n_train": 1000, "n_test": 20, "seed": 0},
        "grid": {"t0": 0.0, "t_end": 80.0, "n_points": 500},
        "trim": 200,
        "loss_weights": [1.0, 1e-2, 1e-3, 1e-3, 0.0, 1e-1],
        "network": {"phi1_hidden": [32, 16], "psi1_hidden": [16, 32],
                    "phi2_hidden": [16, 16], "psi2_hidden": [16, 16],
                    "activation": "tanh", "orientation": 1, "sign_eps": 1e-2},
        "training": {"epochs": 1000, "batch_size": 100, "learning_rate": 1e-4, "seed": 0},
    },
    "neuralfield": {
        "system": {"name": "neuralfield", "params": {"x_min": -6.0, "x_max": 6.0, "n_points": 64},
                   "alpha_c": 0.8040},
        "normal_form": {"kind": "hopf", "omega": 1.0},
        "tau": {"policy": "fixed", "value": 1.4},
        "sampling": {"sigma_u": 0.1, "sigma_alpha": 0.5, "n_train": 1000, "n_test": 20, "seed": 0},
        "grid": {"t0": 0.0, "t_end": 100.0, "n_points": 250},
        "trim": 50,
        "loss_weights": [1.0, 1e-2, 1e-4, 0.0, 1e-3, 0.0],
        "network": {"phi1_hidden": [64, 32], "psi1_hidden": [32, 64],
                    "phi2_hidden": [16, 16], "psi2_hidden": [16, 16],
                    "activation": "tanh", "orientation": 1, "sign_eps": 1e-2},
        "training": {"epochs": 2000, "batch_size": 250, "learning_rate": 1e-4, "seed": 0},
    },
    "navierstokes-pod": {
        "system": {"name": "external", "alpha_c": 44.6},
        "normal_form": {"kind": "hopf", "omega": 1.0},
        "tau": {"policy": "fixed", "value": 0.6},
        "sampling": {"sigma_u": 1e-2, "n_train": 220, "n_test": 20, "seed": 0},
        "grid": {"t0": 0.0, "t_end": 77.0, "n_points": 6180},
        "trim": 3250,
        "pod": {"m": 4, "stride": 10, "gamma": "cylinder"},
        "loss_weights": [1.0, 1.0, 1e-4, 1e-4, 0.0, 1e-1],
        "network": {"phi1_hidden": [20, 20, 30], "psi1_hidden": [20, 20, 20],
                    "phi2_hidden": [10, 10], "psi2_hidden": [10, 10],
                    "activation": "tanh", "orientation": 1, "sign_eps": 1e-2},
        "training": {"epochs": 2700, "batch_size": 110, "learning_rate": 1e-3, "seed": 0},
    },
    "scalar-sn": _scalar("scalar-sn", "saddle-node", -1, 0.1, 0.1, 1.0, 1e-2),
    "scalar-pf": _scalar("scalar-pf", "pitchfork", 1, 0.1, 0.5, 10.0, 1e-2),
    "scalar-tc": _scalar("scalar-tc", "transcritical", -1, 0.01, 0.5, 10.0, 0.0),
}

DEFAULTS = {
    "validation": {"n_ensemble": 20, "spread": 0.05, "seed": 0, "max_plots": 20},
    "paths": {},
}


def preset(name):
    """A deep copy of the named preset."""
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def deep_merge(base, override):
    """Recursively merge ``override`` into a copy of ``base``; lists are replaced."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(config):
    """Expand ``config["preset"]`` and fill defaults."""
    if not isinstance(config, dict):
        raise ConfigError("a run config must be a JSON object")
    base = deep_merge(DEFAULTS, preset(config["preset"])) if "preset" in config else DEFAULTS
    merged = deep_merge(base, {k: v for k, v in config.items() if k != "preset"})
    if "preset" in config:
        merged["preset"] = config["preset"]
    return merged


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from err
    return resolve(raw)
