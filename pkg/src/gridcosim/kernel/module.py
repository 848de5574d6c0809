"""Base class for module behaviours driven by the kernel."""

from __future__ import annotations

import math
from typing import Any, Callable, Mapping, Optional

from .ports import ModuleDescriptor
from .time import SimTime

Outputs = dict[str, Any]


class Module:
    """Behaviour half of a registered module.

    Subclasses build their :class:`ModuleDescriptor` in ``describe`` and
    override whichever hooks their kind needs. All hooks return a mapping of
    output port -> new value (only the ports that changed). Message ports
    carry lists of messages.
    """

    def __init__(self, module_id: str):
        self.module_id = module_id
        self._log: Optional[Callable[[str, Any, Optional[str]], None]] = None

    def describe(self) -> ModuleDescriptor:
        raise NotImplementedError

    # wiring done by the kernel
    def bind(self, log: Callable[[str, Any, Optional[str]], None]) -> None:
        self._log = log

    def log(self, event: str, value: Any = None, port: Optional[str] = None) -> None:
        """Append a module-level record to the event log."""
        if self._log is not None:
            self._log(event, value, port)

    # hooks
    def initialize(self, now: SimTime, inputs: Mapping[str, Any]) -> Outputs:
        return {}

    def next_event_time(self) -> float:
        """Seconds of the next internal event (inf when none)."""
        return math.inf

    def on_internal(self, now: SimTime) -> Outputs:
        return {}

    def on_inputs(self, changed: Mapping[str, Any], now: SimTime) -> Outputs:
        return {}

    def on_tick(self, now: SimTime, inputs: Mapping[str, Any]) -> Outputs:
        """Discrete-time modules: outputs to publish one period later."""
        return {}

    def finalize(self, now: SimTime) -> Outputs:
        """Values to record at the end of the run (no propagation)."""
        return {}
