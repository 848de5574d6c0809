"""Small reusable modules: signal sources, algebraic blocks, QSS-integrated ODEs."""

from __future__ import annotations

import math
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from ..polynomial import PolynomialSegment, value_at
from ..qss import OdeSystem, QssIntegrator
from ..timeseries import TimeSeries
from .module import Module, Outputs
from .ports import ModuleDescriptor, inp, out
from .time import SimTime, ns_ceil, ns_ceil_array


class SignalSource(Module):
    """Replays a :class:`TimeSeries` (or a constant) on output ``y``.

    Linear series are published as first-order segments at each breakpoint,
    held series as constants. Co-simulation kind with time events only.
    """

    def __init__(self, module_id: str, series, logged: bool = False):
        super().__init__(module_id)
        self.series = series
        self.logged = logged
        self._next = math.inf

    def describe(self) -> ModuleDescriptor:
        return ModuleDescriptor(self.module_id, "co-simulation", [out("y", logged=self.logged)], feedthrough={})

    def _value(self, t: float):
        if isinstance(self.series, TimeSeries):
            seg = self.series.segment_at(t)
            nxt = self.series.next_change(t)
            self._next = math.inf if nxt is None else nxt
            return seg if seg.order > 0 else seg.coefficients[0]
        return float(self.series)

    def initialize(self, now, inputs) -> Outputs:
        return {"y": self._value(now.seconds)}

    def next_event_time(self) -> float:
        return self._next

    def on_internal(self, now: SimTime) -> Outputs:
        return {"y": self._value(now.seconds)}


class Function(Module):
    """Memoryless co-simulation block ``outputs = fn(inputs, t)``.

    All declared outputs feed through from all declared inputs.
    """

    def __init__(
        self,
        module_id: str,
        fn: Callable[[Mapping[str, float], float], Mapping[str, Any]],
        inputs: Sequence[str],
        outputs: Sequence[str],
        defaults: Optional[Mapping[str, float]] = None,
    ):
        super().__init__(module_id)
        self.fn = fn
        self.input_names = list(inputs)
        self.output_names = list(outputs)
        self.defaults = dict(defaults or {})
        self.values: dict[str, float] = {}
        self.n_evaluations = 0

    def describe(self) -> ModuleDescriptor:
        ports = [inp(n, default=self.defaults.get(n)) for n in self.input_names]
        ports += [out(n) for n in self.output_names]
        ft = {n: set(self.output_names) for n in self.input_names}
        return ModuleDescriptor(self.module_id, "co-simulation", ports, feedthrough=ft)

    def _eval(self, t: float) -> Outputs:
        self.n_evaluations += 1
        args = {k: value_at(v, t) for k, v in self.values.items()}
        return dict(self.fn(args, t))

    def initialize(self, now, inputs) -> Outputs:
        self.values = dict(inputs)
        return self._eval(now.seconds)

    def on_inputs(self, changed, now) -> Outputs:
        self.values.update(changed)
        return self._eval(now.seconds)


class QssModule(Module):
    """An :class:`OdeSystem` integrated by QSS as a model-exchange module.

    ``input_ports`` name the system inputs in order; each may be wired or left
    at its default (the value found in ``system.inputs``). ``outputs`` maps an
    output port to a state index; the published value is the quantized
    segment, and ``finalize`` records the continuous state model instead.
    """

    def __init__(
        self,
        module_id: str,
        system: OdeSystem,
        method: str = "QSS2",
        quantum_mode: str = "max",
        grouped: bool = True,
        input_ports: Sequence[str] = (),
        outputs: Optional[Mapping[str, int]] = None,
    ):
        super().__init__(module_id)
        self.system = system
        self.method = method
        self.quantum_mode = quantum_mode
        self.grouped = grouped
        self.input_ports = list(input_ports)
        if len(self.input_ports) > len(system.inputs):
            raise ValueError("more input ports than system inputs")
        self.outputs = dict(outputs) if outputs is not None else {f"x{j}": j for j in range(system.dimension)}
        self.integ: Optional[QssIntegrator] = None
        self._signals: list[tuple[int, Any]] = []
        self._next_in: dict[int, Optional[float]] = {}

    def describe(self) -> ModuleDescriptor:
        ports = []
        for k, name in enumerate(self.input_ports):
            default = self.system.inputs[k]
            ports.append(inp(name, default=0.0 if hasattr(default, "segment_at") else default))
        ports += [out(name, logged=False) for name in self.outputs]
        return ModuleDescriptor(
            self.module_id, "model-exchange", ports, feedthrough={}, n_states=self.system.dimension
        )

    def initialize(self, now: SimTime, inputs) -> Outputs:
        t = now.seconds
        self.integ = QssIntegrator(self.system, self.method, self.quantum_mode, self.grouped, t0=t)
        wired = {self.input_ports.index(n): v for n, v in inputs.items() if n in self.input_ports}
        if wired:
            self.integ.set_inputs(wired, t)
        self._signals = [
            (k, s) for k, s in enumerate(self.system.inputs)
            if hasattr(s, "next_change") and k >= len(self.input_ports)
        ]
        self._next_in = {k: s.next_change(t) for k, s in self._signals}
        return self._all_outputs()

    def _all_outputs(self) -> Outputs:
        return {name: self.integ.quantized_segment(j) for name, j in self.outputs.items()}

    def next_event_time(self) -> float:
        t = self.integ.next_time()
        for v in self._next_in.values():
            if v is not None and v < t:
                t = v
        return t

    def on_internal(self, now: SimTime) -> Outputs:
        t = now.seconds
        changed = {k: s.segment_at(t) for k, s in self._signals
                   if self._next_in[k] is not None and ns_ceil(self._next_in[k]) <= now.ns}
        if changed:
            self.integ.set_inputs(changed, t)
            for k in changed:
                self._next_in[k] = self.system.inputs[k].next_change(t)
        due = np.nonzero(ns_ceil_array(self.integ.tp) <= now.ns)[0]
        self.integ.requantize_indices(due, t)
        due_set = set(due.tolist())
        return {name: self.integ.quantized_segment(j) for name, j in self.outputs.items() if j in due_set}

    def on_inputs(self, changed, now: SimTime) -> Outputs:
        vals = {self.input_ports.index(n): v for n, v in changed.items()}
        self.integ.set_inputs(vals, now.seconds)
        return {}

    def finalize(self, now: SimTime) -> Outputs:
        x = self.integ.state_at(now.seconds)
        return {name: float(x[j]) for name, j in self.outputs.items()}
