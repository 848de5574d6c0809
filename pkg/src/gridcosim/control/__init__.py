"""Discrete-time grid controllers."""

from .controllers import (
    ControllerConfig,
    GridSnapshot,
    ShedDecision,
    SlopeRequest,
    VoltVarConfig,
    VoltVarResult,
    check_cadence,
    line_capacity_control,
    monitored_loading,
    slope_control,
    volt_var_control,
)
from .module import ControllerModule

__all__ = [
    "ControllerConfig", "GridSnapshot", "ShedDecision", "SlopeRequest", "VoltVarConfig", "VoltVarResult",
    "check_cadence", "line_capacity_control", "monitored_loading", "slope_control", "volt_var_control",
    "ControllerModule",
]
