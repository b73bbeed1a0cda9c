import json
import math

import pytest

from rtegrad.core.errors import ConfigurationError
from rtegrad.models.presets import PROFILES, get_profile
from rtegrad.models.schemas import deep_merge, load_config, validate_config


@pytest.mark.parametrize("name", sorted(PROFILES))
def test_shipped_profiles_validate(name):
    """Test every shipped profile validates"""
    config = load_config(profile=name)
    assert config.name == name
    assert len(config.geometry.bounds) == len(config.grids.cells)


def test_profiles_are_copied():
    """Test profiles are handed out as deep copies"""
    profile = get_profile("control-1d")
    profile["control"]["center"][0] = 9.0
    assert PROFILES["control-1d"]["control"]["center"] == [0.5]
    with pytest.raises(KeyError):
        get_profile("inverse-3d")


def test_deep_merge_leaves_inputs_alone():
    """Test merging configs leaves both inputs unchanged"""
    base = {"time": {"T": 1.0, "dt": 0.1}, "N": 10}
    merged = deep_merge(base, {"time": {"dt": 0.05}})
    assert merged == {"time": {"T": 1.0, "dt": 0.05}, "N": 10}
    assert base["time"]["dt"] == 0.1


def test_toml_overrides_profile(tmp_path):
    """Test keys from the file win over the profile they name"""
    path = tmp_path / "run.toml"
    path.write_text(
        'profile = "inverse-1d"\nN = 5000\n\n[grids]\ncells = [20]\n'
        "velocity_cells = 8\n\n[time]\nT = 0.2\ndt = 0.05\n"
    )
    config = load_config(path)
    assert config.N == 5000
    assert config.grids.cells == [20]
    assert config.time.T == 0.2
    assert config.objective == "J1"
    assert config.measurement.center == [0.6]


def test_argument_profile_and_overrides(tmp_path):
    """Test profile and override arguments win over the file"""
    path = tmp_path / "run.toml"
    path.write_text("N = 300\n")
    config = load_config(path, profile="control-1d", overrides={"seeds": [4, 5]})
    assert (config.N, config.seeds, config.objective) == (300, [4, 5], "J2")


def test_missing_and_malformed_files(tmp_path):
    """Test missing and unparsable config files raise configuration errors"""
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("N = = 3\n")
    with pytest.raises(ConfigurationError):
        load_config(bad)
    with pytest.raises(ConfigurationError):
        load_config()


def test_unknown_profile_names_the_key():
    """Test unknown keys and profiles are reported by name"""
    with pytest.raises(ConfigurationError) as info:
        load_config(profile="inverse-3d")
    assert info.value.key == "profile"
    assert info.value.exit_code == 2


@pytest.mark.parametrize(
    "override, key",
    [
        ({"time": {"dt": 0.0}}, "time.dt"),
        ({"grids": {"cellz": [10]}}, "grids.cellz"),
        ({"seeds": [-1]}, "seeds"),
        ({"seeds": [1 << 64]}, "seeds"),
        ({"seeds": []}, "seeds"),
        ({"method": "adjoint"}, "method"),
        ({"N": 0}, "N"),
    ],
)
def test_invalid_values_report_dotted_key(override, key):
    """Test invalid values are reported with their dotted key"""
    with pytest.raises(ConfigurationError) as info:
        load_config(profile="inverse-1d", overrides=override)
    assert info.value.key == key
    assert str(info.value).startswith(key)


def test_full_seed_counts():
    """Test the long-run seed counts per profile and method"""
    assert load_config(profile="inverse-2d").full_seed_count() == 100
    assert load_config(profile="control-1d").full_seed_count() is None
    control = load_config(profile="control-2d", overrides={"method": "dto"})
    assert control.full_seed_count() == 300


def test_canonical_json_is_stable():
    """Test the canonical config JSON is sorted, compact and stable"""
    a = validate_config(get_profile("inverse-1d"))
    b = validate_config(get_profile("inverse-1d"))
    assert a.canonical_json() == b.canonical_json()
    data = json.loads(a.canonical_json())
    assert list(data) == sorted(data)
    assert " " not in a.canonical_json().replace("inverse-1d", "")
    c = validate_config(deep_merge(get_profile("inverse-1d"), {"N": 7}))
    assert c.canonical_json() != a.canonical_json()


def test_convergence_seed_defaults():
    """Test convergence seed lists and their validation"""
    assert load_config(profile="inverse-1d").convergence.seeds == [1, 2, 3, 4, 5]
    assert load_config(profile="control-1d").convergence.seeds is None
    with pytest.raises(ConfigurationError) as info:
        load_config(profile="inverse-1d", overrides={"convergence": {"seeds": [-3]}})
    assert info.value.key.startswith("convergence.seeds")


PROFILE_SNAPSHOTS = {
    "inverse-1d": {
        "geometry": {"bounds": [(-2.0, 2.0)], "velocity": "interval"},
        "grids": {"cells": [100], "velocity_cells": 64, "gradient_cells": None},
        "time": {"T": 2.0, "dt": 0.01},
        "sigma": {"kind": "constant", "value": 2.0, "values": None},
        "initial": {"a": 2.0 / math.sqrt(math.pi), "c": 4.0},
        "objective": "J1",
        "measurement": {
            "a": math.sqrt(5.0) / math.sqrt(math.pi),
            "c": 5.0,
            "center": [0.6],
        },
        "control": None,
        "reference": {"refine": 16, "velocity_cells": None, "checkpoint": None},
    },
    "inverse-2d": {
        "geometry": {
            "bounds": [(-1.0, 1.0), (-1.0, 1.0)],
            "velocity": "circle",
        },
        "grids": {"cells": [40, 40], "velocity_cells": 32, "gradient_cells": None},
        "time": {"T": 0.5, "dt": 0.01},
        "sigma": {"kind": "constant", "value": 2.0, "values": None},
        "initial": {"a": 4.0 / math.pi, "c": 4.0},
        "objective": "J1",
        "measurement": {"a": 5.0 / math.pi, "c": 5.0, "center": [0.3, -0.3]},
        "control": None,
        "reference": {"refine": 2, "velocity_cells": None, "checkpoint": None},
    },
    "control-1d": {
        "geometry": {"bounds": [(-2.0, 2.0)], "velocity": "interval"},
        "grids": {"cells": [100], "velocity_cells": 64, "gradient_cells": None},
        "time": {"T": 0.5, "dt": 0.005},
        "sigma": {"kind": "constant", "value": 2.0, "values": None},
        "initial": {"a": 2.0 / math.sqrt(math.pi), "c": 4.0},
        "objective": "J2",
        "measurement": None,
        "control": {
            "speed": "v2",
            "value": 1.0,
            "indicator": True,
            "center": [0.5],
            "half_width": [0.25],
            "sharpness": 40.0,
        },
        "reference": {"refine": 16, "velocity_cells": None, "checkpoint": None},
    },
    "control-2d": {
        "geometry": {
            "bounds": [(-1.5, 1.5), (-1.5, 1.5)],
            "velocity": "circle",
        },
        "grids": {"cells": [60, 60], "velocity_cells": 32, "gradient_cells": None},
        "time": {"T": 0.2, "dt": 0.005},
        "sigma": {"kind": "constant", "value": 2.0, "values": None},
        "initial": {"a": 4.0 / math.pi, "c": 4.0},
        "objective": "J2",
        "measurement": None,
        "control": {
            "speed": "v1sq",
            "value": 1.0,
            "indicator": True,
            "center": [0.4, 0.0],
            "half_width": [0.25, 0.25],
            "sharpness": 30.0,
        },
        "reference": {"refine": 2, "velocity_cells": None, "checkpoint": None},
    },
}


@pytest.mark.parametrize("name", sorted(PROFILE_SNAPSHOTS))
def test_profile_parameters(name):
    """Test every shipped profile carries exactly its published parameters"""
    expected = PROFILE_SNAPSHOTS[name]
    data = load_config(profile=name).model_dump()
    for key, value in expected.items():
        if key == "initial":
            assert data["initial"]["kind"] == "gauss"
            assert data["initial"]["a"] == value["a"]
            assert data["initial"]["c"] == value["c"]
        else:
            assert data[key] == value, key
    assert data["N"] == 1_000_000
    assert data["seeds"] == [1]
