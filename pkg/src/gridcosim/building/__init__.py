"""Building thermal models, model reduction, HVAC control and the DR-aware module."""

from .hvac import HvacConfig, HvacState, ShedTable, building_step_semantics, check_fraction, cooling_limit, pi_output
from .module import BuildingModule, BuildingThermal
from .rc import (
    DISTURBANCES,
    FACADES,
    StateSpaceModel,
    WallSpec,
    ZoneSpec,
    assemble_rc,
    shift_inputs,
    strip_hvac_inputs,
)
from .reduction import LYAPUNOV_TOL, hankel_singular_values, reduce_model
from .spec import BuildingSpec, building_from_dict, building_to_dict, load_building
from .synthetic import disturbance_matrix, ten_zone_building, weather_profiles

__all__ = [
    "HvacConfig", "HvacState", "ShedTable", "building_step_semantics", "check_fraction", "cooling_limit",
    "pi_output", "BuildingModule", "BuildingThermal", "DISTURBANCES", "FACADES", "StateSpaceModel", "WallSpec",
    "ZoneSpec", "assemble_rc", "shift_inputs", "strip_hvac_inputs", "LYAPUNOV_TOL", "hankel_singular_values",
    "reduce_model", "BuildingSpec", "building_from_dict", "building_to_dict", "load_building",
    "disturbance_matrix", "ten_zone_building", "weather_profiles",
]
