import json

import pytest

from normform.exceptions import ConfigError
from normform.presets import PRESETS, deep_merge, load_config, preset, resolve


def test_lorenz96_table_values():
    p = preset("lorenz96")
    assert p["system"]["alpha_c"] == 0.84975 and p["system"]["params"]["n"] == 64
    assert p["tau"] == {"policy": "fixed", "value": 0.825}
    assert p["loss_weights"] == [1.0, 1e-2, 1e-3, 1e-3, 0.0, 1e-1]
    assert p["network"]["phi1_hidden"] == [32, 16] and p["network"]["psi1_hidden"] == [16, 32]
    assert p["training"] == {"epochs": 1000, "batch_size": 100, "learning_rate": 1e-4, "seed": 0}
    assert (p["grid"]["t_end"], p["grid"]["n_points"], p["trim"]) == (80.0, 500, 200)


def test_neural_field_table_values():
    p = preset("neuralfield")
    assert p["system"]["alpha_c"] == 0.8040 and p["tau"]["value"] == 1.4
    assert p["loss_weights"] == [1.0, 1e-2, 1e-4, 0.0, 1e-3, 0.0]
    assert p["training"]["epochs"] == 2000 and p["training"]["batch_size"] == 250
    assert (p["grid"]["t_end"], p["grid"]["n_points"], p["trim"]) == (100.0, 250, 50)


def test_cylinder_table_values():
    p = preset("navierstokes-pod")
    assert p["system"]["alpha_c"] == 44.6 and p["tau"]["value"] == 0.6
    assert p["pod"] == {"m": 4, "stride": 10, "gamma": "cylinder"}
    assert (p["grid"]["n_points"], p["trim"]) == (6180, 3250)
    assert p["network"]["phi1_hidden"] == [20, 20, 30]
    assert p["training"] == {"epochs": 2700, "batch_size": 110, "learning_rate": 1e-3, "seed": 0}


@pytest.mark.parametrize("name", ["scalar-sn", "scalar-pf", "scalar-tc"])
def test_scalar_recipes(name):
    p = preset(name)
    assert p["tau"]["policy"] == "trainable"
    assert p["system"]["name"] == name
    if name == "scalar-tc":
        assert p["loss_weights"][5] == 0.0


def test_preset_copies_are_independent():
    a = preset("lorenz96")
    a["training"]["epochs"] = 1
    assert PRESETS["lorenz96"]["training"]["epochs"] == 1000


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("nope")


def test_merge_replaces_lists_and_merges_dicts():
    out = deep_merge({"a": {"x": 1, "y": 2}, "l": [1, 2]}, {"a": {"y": 3}, "l": [9]})
    assert out == {"a": {"x": 1, "y": 3}, "l": [9]}


def test_resolve_and_load(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"preset": "scalar-pf", "training": {"epochs": 7}}))
    cfg = load_config(path)
    assert cfg["training"]["epochs"] == 7 and cfg["training"]["batch_size"] == 10
    assert cfg["validation"]["n_ensemble"] == 20 and cfg["preset"] == "scalar-pf"
    with pytest.raises(ConfigError):
        resolve([1, 2])
