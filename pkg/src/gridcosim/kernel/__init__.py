"""Discrete-event master algorithm and module plumbing."""

from .engine import AlgebraicLoopError, EventRecord, Kernel, SimulationTrace, plain_value
from .library import Function, QssModule, SignalSource
from .module import Module
from .ports import MODULE_KINDS, VALUE_KINDS, ModuleDescriptor, PortRef, PortSpec, inp, out
from .time import NS_PER_S, SimTime, ns_ceil, ns_round

__all__ = [
    "AlgebraicLoopError",
    "EventRecord",
    "Function",
    "Kernel",
    "MODULE_KINDS",
    "Module",
    "ModuleDescriptor",
    "NS_PER_S",
    "PortRef",
    "PortSpec",
    "QssModule",
    "SignalSource",
    "SimTime",
    "SimulationTrace",
    "VALUE_KINDS",
    "inp",
    "ns_ceil",
    "ns_round",
    "out",
    "plain_value",
]
