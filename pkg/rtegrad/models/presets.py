"""Shipped experiment profiles.

Each profile is a plain config dict in the same layout as a TOML config file.
"""

import copy
import math
from typing import Any, Dict

INVERSE_1D: Dict[str, Any] = {
    "name": "inverse-1d",
    "geometry": {"bounds": [[-2.0, 2.0]], "velocity": "interval"},
    "grids": {"cells": [100], "velocity_cells": 64},
    "reference": {"refine": 16},
    "time": {"T": 2.0, "dt": 0.01},
    "sigma": {"kind": "constant", "value": 2.0},
    "initial": {"kind": "gauss", "a": 2.0 / math.sqrt(math.pi), "c": 4.0},
    "objective": "J1",
    "measurement": {
        "a": math.sqrt(5.0) / math.sqrt(math.pi),
        "c": 5.0,
        "center": [0.6],
    },
    "method": "otd",
    "N": 1_000_000,
    "seeds": [1],
    "convergence": {
        "n_values": [1_000, 10_000, 100_000, 1_000_000],
        "seeds": [1, 2, 3, 4, 5],
    },
}

INVERSE_2D: Dict[str, Any] = {
    "name": "inverse-2d",
    "geometry": {"bounds": [[-1.0, 1.0], [-1.0, 1.0]], "velocity": "circle"},
    "grids": {"cells": [40, 40], "velocity_cells": 32},
    "reference": {"refine": 2},
    "time": {"T": 0.5, "dt": 0.01},
    "sigma": {"kind": "constant", "value": 2.0},
    "initial": {"kind": "gauss", "a": 4.0 / math.pi, "c": 4.0},
    "objective": "J1",
    "measurement": {"a": 5.0 / math.pi, "c": 5.0, "center": [0.3, -0.3]},
    "method": "otd",
    "N": 1_000_000,
    "seeds": [1],
    "full_seeds": 100,
}

CONTROL_1D: Dict[str, Any] = {
    "name": "control-1d",
    "geometry": {"bounds": [[-2.0, 2.0]], "velocity": "interval"},
    "grids": {"cells": [100], "velocity_cells": 64},
    "reference": {"refine": 16},
    "time": {"T": 0.5, "dt": 0.005},
    "sigma": {"kind": "constant", "value": 2.0},
    "initial": {"kind": "gauss", "a": 2.0 / math.sqrt(math.pi), "c": 4.0},
    "objective": "J2",
    "control": {
        "speed": "v2",
        "center": [0.5],
        "half_width": [0.25],
        "sharpness": 40.0,
    },
    "method": "otd",
    "N": 1_000_000,
    "seeds": [1],
}

CONTROL_2D: Dict[str, Any] = {
    "name": "control-2d",
    "geometry": {"bounds": [[-1.5, 1.5], [-1.5, 1.5]], "velocity": "circle"},
    "grids": {"cells": [60, 60], "velocity_cells": 32},
    "reference": {"refine": 2},
    "time": {"T": 0.2, "dt": 0.005},
    "sigma": {"kind": "constant", "value": 2.0},
    "initial": {"kind": "gauss", "a": 4.0 / math.pi, "c": 4.0},
    "objective": "J2",
    "control": {
        "speed": "v1sq",
        "center": [0.4, 0.0],
        "half_width": [0.25, 0.25],
        "sharpness": 30.0,
    },
    "method": "otd",
    "N": 1_000_000,
    "seeds": [1],
    # seed-averaging depth of the long runs, per method
    "full_seeds": {"otd": 100, "dto": 300},
}

PROFILES: Dict[str, Dict[str, Any]] = {
    "inverse-1d": INVERSE_1D,
    "inverse-2d": INVERSE_2D,
    "control-1d": CONTROL_1D,
    "control-2d": CONTROL_2D,
}


def get_profile(name: str) -> Dict[str, Any]:
    """Deep copy of a shipped profile; raises KeyError for unknown names."""
    return copy.deepcopy(PROFILES[name])
