"""Radial distribution feeder: load flow, voltage-drop relation, kernel module."""

from .module import (
    Binding,
    Injection,
    NetworkSpec,
    PowerFlowModule,
    load_network,
    network_from_dict,
    network_to_dict,
)
from .network import (
    MAX_ITERATIONS,
    TOLERANCE,
    Branch,
    Bus,
    ConvergenceError,
    FeederNetwork,
    LoadFlowResult,
    NetworkError,
    loading_report,
    path_impedance,
    solve_load_flow,
)
from .voltdrop import UnreachableTargetError, VoltageCollapseError, solve_reactive_power, volt_drop_equation

__all__ = [
    "Binding", "Injection", "NetworkSpec", "PowerFlowModule", "load_network", "network_from_dict",
    "network_to_dict", "MAX_ITERATIONS", "TOLERANCE", "Branch", "Bus", "ConvergenceError",
    "FeederNetwork", "LoadFlowResult", "NetworkError", "loading_report", "path_impedance",
    "solve_load_flow", "UnreachableTargetError", "VoltageCollapseError", "solve_reactive_power",
    "volt_drop_equation",
]
