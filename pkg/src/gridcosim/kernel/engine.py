"""Discrete-event master algorithm.

One logical timeline on an integer-nanosecond grid with microsteps. Each
microstep runs, in order: kernel-scheduled events (discrete-time emissions
and sampled forwards), internal events of due modules (by registration
index), then propagation of output changes. Propagation visits receiving
modules in topological order of the feedthrough graph, so a co-simulation
module recomputes once per microstep after all its upstream changes. Any
work that lands on the current instant (a zero delay, a quantization at the
current time) runs in the next microstep. Discrete-time modules sample their
settled inputs once the instant is exhausted.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from ..errors import ConfigError, SimulationError
from ..polynomial import PolynomialSegment
from ..timeseries import format_time, write_series_csv
from .module import Module, Outputs
from .ports import ModuleDescriptor, PortRef
from .time import NEVER, NS_PER_S, SimTime, ns_ceil, ns_round

log = logging.getLogger(__name__)


class AlgebraicLoopError(ConfigError):
    pass


def plain_value(value: Any, t: float) -> Any:
    """Port value reduced to something loggable."""
    if isinstance(value, PolynomialSegment):
        return value(t)
    if isinstance(value, (list, tuple)):
        return [plain_value(v, t) for v in value]
    if hasattr(value, "to_record"):
        return value.to_record()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


@dataclass(frozen=True)
class EventRecord:
    time: SimTime
    source: str
    event: str
    value: Any = None

    def to_json(self) -> str:
        body = json.dumps(
            {"microstep": self.time.microstep, "source": self.source, "event": self.event, "value": self.value},
            separators=(",", ":"),
            allow_nan=True,
        )
        return '{"t":' + format_time(self.time.seconds) + "," + body[1:]


@dataclass
class SimulationTrace:
    t_end: float
    events: list[EventRecord] = field(default_factory=list)
    signals: dict[str, tuple[list, list]] = field(default_factory=dict)
    stats: dict[str, Any] = field(default_factory=dict)

    def signal(self, key: str) -> tuple[np.ndarray, np.ndarray]:
        t, v = self.signals[key]
        return np.asarray(t, dtype=float), np.asarray(v, dtype=float)

    def final_value(self, key: str) -> float:
        return float(self.signals[key][1][-1])

    def events_of(self, event: Optional[str] = None, source: Optional[str] = None) -> list[EventRecord]:
        return [
            e for e in self.events
            if (event is None or e.event == event) and (source is None or e.source == source)
        ]

    def event_log_text(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def write_event_log(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for e in self.events:
                fh.write(e.to_json() + "\n")

    def write_traces(self, directory) -> list[Path]:
        directory = Path(directory)
        written = []
        for key, (t, v) in self.signals.items():
            p = directory / f"{key}.csv"
            write_series_csv(p, t, v)
            written.append(p)
        return written


@dataclass
class _Entry:
    desc: ModuleDescriptor
    behavior: Module
    index: int
    rank: int = 0
    inputs: dict = field(default_factory=dict)


class Kernel:
    def __init__(self, max_microsteps: int = 10_000):
        self._modules: dict[str, _Entry] = {}
        self._order: list[_Entry] = []
        # (module, input) -> (module, output)
        self._source_of: dict[tuple[str, str], tuple[str, str]] = {}
        self._targets: dict[tuple[str, str], list[tuple[str, str]]] = {}
        self._sampled: dict[tuple[str, str], int] = {}
        self._recorded: list[str] = []
        self.max_microsteps = max_microsteps

    # -- registration and wiring ----------------------------------------------
    def register_module(self, descriptor: ModuleDescriptor, behavior: Module) -> str:
        mid = descriptor.module_id
        if mid in self._modules:
            raise ConfigError(f"duplicate module id {mid!r}")
        entry = _Entry(descriptor, behavior, len(self._order))
        self._modules[mid] = entry
        self._order.append(entry)
        behavior.bind(lambda ev, val, port, _m=mid: self._module_log(_m, ev, val, port))
        return mid

    def add(self, behavior: Module) -> str:
        return self.register_module(behavior.describe(), behavior)

    @property
    def module_ids(self) -> list[str]:
        return [e.desc.module_id for e in self._order]

    def module(self, module_id: str) -> Module:
        return self._entry(module_id).behavior

    def _entry(self, module_id: str) -> _Entry:
        try:
            return self._modules[module_id]
        except KeyError:
            raise ConfigError(f"unknown module {module_id!r}") from None

    def _resolve(self, ref, direction: str) -> PortRef:
        if isinstance(ref, str):
            mid, _, port = ref.partition(".")
            if not port:
                raise ConfigError(f"port reference {ref!r} must look like 'module.port'")
        else:
            mid, port = ref.module, ref.port
        pr = self._entry(mid).desc.ref(port)
        if pr.direction != direction:
            raise ConfigError(f"{pr.key} is an {pr.direction}, expected an {direction}")
        return pr

    def connect(self, src, dst) -> None:
        a = self._resolve(src, "output")
        b = self._resolve(dst, "input")
        if a.kind != b.kind:
            raise ConfigError(f"cannot connect {a.key} ({a.kind}) to {b.key} ({b.kind})")
        key_b = (b.module, b.port)
        if key_b in self._source_of:
            raise ConfigError(f"input {b.key} is already driven by {'.'.join(self._source_of[key_b])}")
        self._source_of[key_b] = (a.module, a.port)
        self._targets.setdefault((a.module, a.port), []).append(key_b)
        cycle = self._find_loop()
        if cycle:
            del self._source_of[key_b]
            self._targets[(a.module, a.port)].remove(key_b)
            raise AlgebraicLoopError(f"algebraic loop through direct feedthrough: {' -> '.join(cycle)}")

    def sample_and_forward(self, port, period: float) -> None:
        if not period > 0:
            raise ConfigError(f"sampling period must be positive, got {period!r}")
        p = self._resolve(port, "output")
        self._sampled[(p.module, p.port)] = ns_round(period)

    def record(self, *ports: str) -> None:
        for p in ports:
            ref = self._resolve(p, "output")
            if ref.key not in self._recorded:
                self._recorded.append(ref.key)

    def record_all(self) -> None:
        for e in self._order:
            for name, spec in e.desc.outputs.items():
                if spec.kind != "message":
                    self.record(f"{e.desc.module_id}.{name}")

    # -- graph analysis ---------------------------------------------------------
    def _port_graph(self) -> dict[str, list[str]]:
        g: dict[str, list[str]] = {}
        for (sm, sp), targets in self._targets.items():
            g.setdefault(f"{sm}.{sp}", []).extend(f"{m}.{p}" for m, p in targets)
        for e in self._order:
            mid = e.desc.module_id
            for i, outs in e.desc.feedthrough.items():
                g.setdefault(f"{mid}.{i}", []).extend(f"{mid}.{o}" for o in sorted(outs))
        return g

    def _find_loop(self) -> Optional[list[str]]:
        g = self._port_graph()
        state: dict[str, int] = {}
        stack: list[str] = []

        def visit(n):
            state[n] = 1
            stack.append(n)
            for m in g.get(n, ()):
                s = state.get(m, 0)
                if s == 1:
                    return stack[stack.index(m):] + [m]
                if s == 0:
                    found = visit(m)
                    if found:
                        return found
            stack.pop()
            state[n] = 2
            return None

        for n in sorted(g):
            if state.get(n, 0) == 0:
                found = visit(n)
                if found:
                    return found
        return None

    def _rank_modules(self) -> None:
        """Topological order over modules linked through feedthrough outputs."""
        succ: dict[str, set] = {e.desc.module_id: set() for e in self._order}
        for (sm, sp), targets in self._targets.items():
            if sp in self._modules[sm].desc.feedthrough_outputs() or (sm, sp) in self._sampled:
                for tm, _ in targets:
                    if tm != sm:
                        succ[sm].add(tm)
        indeg = {m: 0 for m in succ}
        for m, ss in succ.items():
            for s in ss:
                indeg[s] += 1
        heap = [(self._modules[m].index, m) for m, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        rank = 0
        while heap:
            _, m = heapq.heappop(heap)
            self._modules[m].rank = rank
            rank += 1
            for s in succ[m]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    heapq.heappush(heap, (self._modules[s].index, s))
        if rank < len(self._order):
            # port-level acyclic but module-level cyclic: fall back to registration order
            # for the remainder; such modules may recompute more than once per microstep
            for e in self._order:
                if indeg[e.desc.module_id] > 0:
                    e.rank = rank + e.index

    # -- run ---------------------------------------------------------------------
    def run(self, t_end: float, t0: float = 0.0) -> SimulationTrace:
        if t_end < t0:
            raise ConfigError(f"t_end={t_end} lies before the start time {t0}")
        self._check_inputs()
        self._rank_modules()
        self._trace = SimulationTrace(t_end=t_end)
        self._trace.signals = {k: ([], []) for k in self._recorded}
        self._values: dict[tuple[str, str], Any] = {}
        self._heap: list = []
        self._seq = 0
        self._pending_tick: dict[str, Outputs] = {}
        self._pending: dict[str, dict] = {}
        self._last_forward: dict[tuple[str, str], Any] = {}
        self._now = SimTime(ns_round(t0))
        end_ns = ns_round(t_end)
        start_ns = self._now.ns

        for e in self._order:
            if e.desc.kind == "discrete-time":
                self._schedule(start_ns, ("tick", e.desc.module_id))
        for key, period_ns in self._sampled.items():
            self._schedule(start_ns, ("forward", key, period_ns))

        self._initialize()
        n_instants = 0
        while True:
            t_ns = self._next_instant()
            if t_ns is None or t_ns > end_ns:
                break
            self._run_instant(t_ns)
            n_instants += 1
        final = SimTime(end_ns, 0)
        self._now = final
        for e in self._order:
            outs = self._call(e, "finalize", final) or {}
            for port, val in outs.items():
                self._record_value(e.desc.module_id, port, val, final.seconds)
        for key in self._recorded:
            t, v = self._trace.signals[key]
            if t and t[-1] < t_end:
                t.append(t_end)
                v.append(v[-1])
        self._trace.stats["instants"] = n_instants
        return self._trace

    def _check_inputs(self) -> None:
        for e in self._order:
            for name, spec in e.desc.inputs.items():
                key = (e.desc.module_id, name)
                e.inputs[name] = [] if spec.kind == "message" else spec.default
                if key not in self._source_of and spec.default is None and spec.kind != "message":
                    raise ConfigError(f"input {e.desc.module_id}.{name} is neither wired nor given a default")

    def _schedule(self, ns: int, item: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (ns, self._seq, item))

    def _module_next_ns(self, e: _Entry) -> int:
        t = self._call(e, "next_event_time")
        return ns_ceil(t) if t is not None else NEVER

    def _next_instant(self) -> Optional[int]:
        if self._pending:
            return self._now.ns
        best = self._heap[0][0] if self._heap else NEVER
        for e in self._order:
            best = min(best, self._module_next_ns(e))
        if best >= NEVER:
            return None
        if best < self._now.ns:
            raise SimulationError(f"event scheduled in the past ({best} ns < {self._now.ns} ns)")
        return best

    def _call(self, e: _Entry, hook: str, *args):
        try:
            return getattr(e.behavior, hook)(*args)
        except (ConfigError, SimulationError) as exc:
            if str(exc).startswith(f"[{e.desc.module_id}]"):
                raise
            raise type(exc)(f"[{e.desc.module_id}] {exc}") from exc
        except Exception as exc:  # attribute any module failure
            raise SimulationError(f"[{e.desc.module_id}] {hook} failed: {exc!r}") from exc

    def _initialize(self) -> None:
        now = self._now
        seen: dict[str, dict] = {}
        for e in sorted(self._order, key=lambda x: x.rank):
            mid = e.desc.module_id
            inputs = self._gather_inputs(e)
            seen[mid] = dict(inputs)
            outs = self._call(e, "initialize", now, inputs) or {}
            self._publish(e, outs, propagate=False)
            for port in outs:
                if (mid, port) in self._sampled:
                    self._forward((mid, port), deliver=False)
        # deliver values produced after a reader was initialised
        for e in self._order:
            mid = e.desc.module_id
            for name in e.desc.inputs:
                src = self._source_of.get((mid, name))
                if src is None:
                    continue
                store = self._last_forward if src in self._sampled else self._values
                if src in store and store[src] is not seen[mid].get(name):
                    cur = store[src]
                    if e.desc.port(name).kind == "message":
                        continue
                    self._pending.setdefault(mid, {})[name] = cur

    def _gather_inputs(self, e: _Entry) -> dict:
        mid = e.desc.module_id
        out = {}
        for name, spec in e.desc.inputs.items():
            src = self._source_of.get((mid, name))
            if spec.kind == "message":
                out[name] = []
            elif src is not None and src in self._values and src not in self._sampled:
                out[name] = self._values[src]
            elif src is not None and src in self._sampled and src in self._last_forward:
                out[name] = self._last_forward[src]
            else:
                out[name] = e.inputs.get(name, spec.default)
        return out

    def _run_instant(self, t_ns: int) -> None:
        m = 0
        ticking: list[_Entry] = []
        while True:
            self._now = SimTime(t_ns, m)
            # 1. kernel-scheduled events
            while self._heap and self._heap[0][0] <= t_ns:
                _, _, item = heapq.heappop(self._heap)
                if item[0] == "tick":
                    e = self._modules[item[1]]
                    outs = self._pending_tick.pop(item[1], None)
                    if outs:
                        self._publish(e, outs)
                    ticking.append(e)
                    self._schedule(t_ns + ns_round(e.desc.period), item)
                else:
                    _, key, period_ns = item
                    self._forward(key)
                    self._schedule(t_ns + period_ns, item)
            # 2. internal events of due modules
            for e in self._order:
                if self._module_next_ns(e) <= t_ns:
                    outs = self._call(e, "on_internal", self._now) or {}
                    self._publish(e, outs)
            # 3. propagation through feedthrough
            self._propagate()
            if not self._work_at(t_ns):
                break
            m += 1
            if m > self.max_microsteps:
                raise SimulationError(
                    f"more than {self.max_microsteps} microsteps at t={t_ns / NS_PER_S:.9f}s; "
                    "a module keeps scheduling events at the current instant"
                )
        # end of instant: discrete-time modules sample settled inputs
        for e in ticking:
            outs = self._call(e, "on_tick", self._now, self._gather_inputs(e)) or {}
            bad = set(outs) - set(e.desc.outputs)
            if bad:
                raise SimulationError(f"[{e.desc.module_id}] unknown outputs {sorted(bad)}")
            self._pending_tick[e.desc.module_id] = outs

    def _work_at(self, t_ns: int) -> bool:
        if self._pending:
            return True
        if self._heap and self._heap[0][0] <= t_ns:
            return True
        return any(self._module_next_ns(e) <= t_ns for e in self._order)

    def _forward(self, key, deliver: bool = True) -> None:
        if key not in self._values:
            return
        t = self._now.seconds
        val = plain_value(self._values[key], t)
        if key in self._last_forward and self._last_forward[key] == val:
            return
        self._last_forward[key] = val
        self._log_record(f"{key[0]}.{key[1]}", "forward", val)
        if not deliver:
            return
        for tm, tp in self._targets.get(key, ()):
            self._pending.setdefault(tm, {})[tp] = val

    def _propagate(self) -> None:
        while self._pending:
            mid = min(self._pending, key=lambda k: self._modules[k].rank)
            changed = self._pending.pop(mid)
            e = self._modules[mid]
            for name, val in changed.items():
                e.inputs[name] = val
            outs = self._call(e, "on_inputs", changed, self._now) or {}
            if outs:
                allowed = set()
                for name in changed:
                    allowed |= e.desc.feedthrough.get(name, set())
                extra = set(outs) - allowed
                if extra:
                    raise SimulationError(
                        f"[{mid}] outputs {sorted(extra)} changed on input {sorted(changed)} "
                        "without declared feedthrough"
                    )
                self._publish(e, outs)

    def _publish(self, e: _Entry, outs: Outputs, propagate: bool = True) -> None:
        mid = e.desc.module_id
        t = self._now.seconds
        for port, val in outs.items():
            spec = e.desc.outputs.get(port)
            if spec is None:
                raise SimulationError(f"[{mid}] unknown output {port!r}")
            key = (mid, port)
            if spec.kind == "message":
                msgs = list(val) if isinstance(val, (list, tuple)) else [val]
                if not msgs:
                    continue
                for msg in msgs:
                    self._log_record(f"{mid}.{port}", "message", plain_value(msg, t))
                if propagate:
                    for tm, tp in self._targets.get(key, ()):
                        self._pending.setdefault(tm, {}).setdefault(tp, []).extend(msgs)
                continue
            self._values[key] = val
            if spec.logged:
                self._log_record(f"{mid}.{port}", "output", plain_value(val, t))
            self._record_value(mid, port, val, t)
            if propagate and key not in self._sampled:
                for tm, tp in self._targets.get(key, ()):
                    self._pending.setdefault(tm, {})[tp] = val

    def _record_value(self, mid: str, port: str, val: Any, t: float) -> None:
        key = f"{mid}.{port}"
        if key not in self._trace.signals:
            return
        ts, vs = self._trace.signals[key]
        v = float(plain_value(val, t))
        if ts and ts[-1] == t:
            vs[-1] = v
        else:
            ts.append(t)
            vs.append(v)

    def _log_record(self, source: str, event: str, value: Any) -> None:
        self._trace.events.append(EventRecord(self._now, source, event, value))

    def _module_log(self, mid: str, event: str, value: Any, port: Optional[str]) -> None:
        src = f"{mid}.{port}" if port else mid
        self._log_record(src, event, plain_value(value, self._now.seconds))

