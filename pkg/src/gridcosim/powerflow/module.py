"""Kernel wrapper around the load-flow solver, plus the network file loader."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import yaml

from ..errors import ConfigError
from ..kernel.module import Module, Outputs
from ..kernel.ports import ModuleDescriptor, inp, out
from ..kernel.time import SimTime
from ..polynomial import value_at
from ..timeseries import TimeSeries
from .network import Branch, Bus, FeederNetwork, NetworkError, solve_load_flow

BINDING_KINDS = ("constant", "profile", "port")


@dataclass
class Binding:
    kind: str
    value: float = 0.0
    series: Optional[TimeSeries] = None
    scale: float = 1.0
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in BINDING_KINDS:
            raise NetworkError(f"unknown binding kind {self.kind!r}")
        if self.kind == "profile" and self.series is None:
            raise NetworkError("profile binding needs a series")

    def at(self, t: float) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "profile":
            return self.scale * float(self.series(t))
        raise ValueError("port bindings are read from inputs")


@dataclass
class Injection:
    """A load or generator at a bus. ``q`` may be derived from ``power_factor``.

    With ``generator=True`` the bound values are infeed (positive = into the
    grid) and enter the load flow negated.
    """

    name: str
    bus: str
    p: Optional[Binding] = None
    q: Optional[Binding] = None
    power_factor: Optional[float] = None
    generator: bool = False

    def __post_init__(self):
        if self.power_factor is not None:
            if not 0 < self.power_factor <= 1:
                raise NetworkError(f"injection {self.name!r}: power factor must be in (0, 1]")
            if self.q is not None:
                raise NetworkError(f"injection {self.name!r}: give either q or power_factor")
            if self.p is None:
                raise NetworkError(f"injection {self.name!r}: power_factor needs p")

    @property
    def tan_phi(self) -> float:
        return 0.0 if self.power_factor is None else math.tan(math.acos(self.power_factor))

    def ports(self) -> list[str]:
        names = []
        if self.p is not None and self.p.kind == "port":
            names.append(f"{self.name}_P")
        if self.q is not None and self.q.kind == "port":
            names.append(f"{self.name}_Q")
        return names


@dataclass
class NetworkSpec:
    network: FeederNetwork
    injections: list[Injection] = field(default_factory=list)
    source: Optional[str] = None

    def __post_init__(self):
        seen = set()
        for inj in self.injections:
            if inj.name in seen:
                raise NetworkError(f"duplicate injection {inj.name!r}")
            seen.add(inj.name)
            if inj.bus not in self.network._bus:
                raise NetworkError(f"injection {inj.name!r} at unknown bus {inj.bus!r}")

    def solve(self, values: Mapping[str, tuple[float, float]]):
        """Load flow for per-injection (P, Q) in load convention; missing ones are zero."""
        p: dict[str, float] = {}
        q: dict[str, float] = {}
        for inj in self.injections:
            pi, qi = values.get(inj.name, (0.0, 0.0))
            p[inj.bus] = p.get(inj.bus, 0.0) + pi
            q[inj.bus] = q.get(inj.bus, 0.0) + qi
        return solve_load_flow(self.network.with_injections(p, q)), p, q

    def injection(self, name: str) -> Injection:
        for inj in self.injections:
            if inj.name == name:
                return inj
        raise KeyError(name)


def _binding(raw, base: Path, what: str) -> Optional[Binding]:
    if raw is None:
        return None
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return Binding("constant", float(raw))
    if raw == "port":
        return Binding("port")
    if isinstance(raw, Mapping) and "profile" in raw:
        path = base / raw["profile"]
        if not path.exists():
            raise ConfigError(f"{what}: profile file not found: {path}")
        series = TimeSeries.from_csv(path, raw.get("interpolation", "linear"))
        return Binding("profile", series=series, scale=float(raw.get("scale", 1.0)), path=str(raw["profile"]))
    raise NetworkError(f"{what}: expected a number, 'port' or {{profile: file}}, got {raw!r}")


def network_from_dict(data: Mapping, base_dir=".") -> NetworkSpec:
    base = Path(base_dir)
    try:
        buses = [Bus(str(b["id"]), float(b["kv"]), b.get("kind", "PQ")) for b in data["buses"]]
        branches = [
            Branch(str(b["id"]), str(b["from"]), str(b["to"]), float(b["r"]), float(b["x"]),
                   float(b["rating"]), b.get("kind", "line"))
            for b in data["branches"]
        ]
    except KeyError as exc:
        raise NetworkError(f"network file: missing field {exc}") from None
    net = FeederNetwork(buses, branches, slack_voltage=float(data.get("slack_voltage", 1.0)),
                        base_mva=float(data.get("base_mva", 1.0)))
    injections = []
    for raw in data.get("injections", []) or []:
        name = str(raw["name"])
        injections.append(Injection(
            name, str(raw["bus"]),
            _binding(raw.get("p"), base, f"injection {name} p"),
            _binding(raw.get("q"), base, f"injection {name} q"),
            raw.get("power_factor"),
            bool(raw.get("generator", False)),
        ))
    return NetworkSpec(net, injections)


def network_to_dict(spec: NetworkSpec) -> dict:
    net = spec.network

    def bdict(b: Optional[Binding]):
        if b is None:
            return None
        if b.kind == "constant":
            return b.value
        if b.kind == "port":
            return "port"
        return {"profile": b.path, "scale": b.scale, "interpolation": b.series.interpolation}

    out_inj = []
    for inj in spec.injections:
        d: dict[str, Any] = {"name": inj.name, "bus": inj.bus}
        if inj.p is not None:
            d["p"] = bdict(inj.p)
        if inj.q is not None:
            d["q"] = bdict(inj.q)
        if inj.power_factor is not None:
            d["power_factor"] = inj.power_factor
        if inj.generator:
            d["generator"] = True
        out_inj.append(d)
    return {
        "base_mva": net.base_mva,
        "slack_voltage": net.slack_voltage,
        "buses": [{"id": b.id, "kv": b.kv, "kind": b.kind} for b in net.buses],
        "branches": [{"id": b.id, "from": b.from_bus, "to": b.to_bus, "r": b.r, "x": b.x,
                      "rating": b.rating, "kind": b.kind} for b in net.branches],
        "injections": out_inj,
    }


def load_network(path) -> NetworkSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f":{mark.line + 1}:{mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}{where}: {getattr(exc, 'problem', exc)}") from None
    spec = network_from_dict(data or {}, path.parent)
    spec.source = str(path)
    return spec


class PowerFlowModule(Module):
    """Co-simulation module: electrical inputs in, voltages and loadings out.

    The load flow is re-solved whenever an electrical input changes and at
    the breakpoints of profile-bound injections. Outputs:
    ``V_<bus>`` (pu), ``Pbus_<bus>``/``Qbus_<bus>`` (net load, kW/kvar),
    ``Pinj_<name>``/``Qinj_<name>`` (load convention), ``loading_<branch>``
    (%), ``max_loading`` and ``slack_P``/``slack_Q``.
    """

    def __init__(self, module_id: str, spec: NetworkSpec, logged: Sequence[str] = ("max_loading",),
                 step: Optional[float] = None):
        super().__init__(module_id)
        self.spec = spec
        self.net = spec.network
        self.logged = set(logged)
        if step is not None and not step > 0:
            raise ConfigError("power-flow step must be positive")
        self.step = step
        self._inputs: dict[str, Any] = {}
        self._last: dict[str, float] = {}
        self._next = math.inf
        self.n_solves = 0
        self.result = None

    def describe(self) -> ModuleDescriptor:
        ins = [inp(name, "real", 0.0) for inj in self.spec.injections for name in inj.ports()]
        names = (
            [f"V_{b.id}" for b in self.net.buses]
            + [f"Pbus_{b.id}" for b in self.net.buses]
            + [f"Qbus_{b.id}" for b in self.net.buses]
            + [f"Pinj_{i.name}" for i in self.spec.injections]
            + [f"Qinj_{i.name}" for i in self.spec.injections]
            + [f"loading_{br.id}" for br in self.net.branches]
            + ["max_loading", "slack_P", "slack_Q"]
        )
        unknown = self.logged - set(names)
        if unknown:
            raise ConfigError(f"{self.module_id}: cannot log unknown outputs {sorted(unknown)}")
        outs = [out(n, "real", logged=n in self.logged) for n in names]
        ft = {p.name: {o.name for o in outs} for p in ins}
        return ModuleDescriptor(self.module_id, "co-simulation", ins + outs, feedthrough=ft)

    def injection_values(self, t: float) -> dict[str, tuple[float, float]]:
        vals = {}
        for inj in self.spec.injections:
            p = q = 0.0
            if inj.p is not None:
                p = float(value_at(self._inputs.get(f"{inj.name}_P", 0.0), t)) if inj.p.kind == "port" else inj.p.at(t)
            if inj.q is not None:
                q = float(value_at(self._inputs.get(f"{inj.name}_Q", 0.0), t)) if inj.q.kind == "port" else inj.q.at(t)
            elif inj.power_factor is not None:
                q = p * inj.tan_phi
            vals[inj.name] = (-p, -q) if inj.generator else (p, q)
        return vals

    def solve_at(self, t: float, overrides: Optional[Mapping[str, tuple[float, float]]] = None):
        vals = self.injection_values(t)
        if overrides:
            vals.update(overrides)
        res, p, q = self.spec.solve(vals)
        return res, vals, p, q

    def _schedule(self, t: float) -> None:
        nxt = math.inf
        for inj in self.spec.injections:
            for b in (inj.p, inj.q):
                if b is not None and b.kind == "profile":
                    c = b.series.next_change(t)
                    if c is not None:
                        nxt = min(nxt, c)
        if self.step is not None:
            nxt = min(nxt, (math.floor(t / self.step + 1e-9) + 1) * self.step)
        self._next = nxt

    def _outputs(self, t: float, force: bool = False) -> Outputs:
        res, vals, p, q = self.solve_at(t)
        self.n_solves += 1
        self.result = res
        new: dict[str, float] = {}
        for b in self.net.buses:
            new[f"V_{b.id}"] = res.voltage[b.id]
            new[f"Pbus_{b.id}"] = p.get(b.id, 0.0)
            new[f"Qbus_{b.id}"] = q.get(b.id, 0.0)
        for name, (pi, qi) in vals.items():
            new[f"Pinj_{name}"] = pi
            new[f"Qinj_{name}"] = qi
        for bid, ld in res.loading.items():
            new[f"loading_{bid}"] = ld
        new["max_loading"] = max(res.loading.values(), default=0.0)
        new["slack_P"] = res.slack_p
        new["slack_Q"] = res.slack_q
        changed = {k: v for k, v in new.items() if force or self._last.get(k) != v}
        self._last.update(changed)
        self._schedule(t)
        return changed

    def initialize(self, now: SimTime, inputs) -> Outputs:
        self._inputs = dict(inputs)
        return self._outputs(now.seconds, force=True)

    def next_event_time(self) -> float:
        return self._next

    def on_internal(self, now: SimTime) -> Outputs:
        return self._outputs(now.seconds)

    def on_inputs(self, changed, now: SimTime) -> Outputs:
        self._inputs.update(changed)
        return self._outputs(now.seconds)

    def stats(self) -> dict:
        return {"load_flows": self.n_solves}
