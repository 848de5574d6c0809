"""Radial feeder description and backward-forward sweep load flow.

Per-unit on ``base_mva`` and each bus's nominal kV. Branch impedances are
ohms referred to the voltage level of the branch's sending (upstream) bus.
Injections are loads: positive P/Q consume, negative P generates.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

import numpy as np

from ..errors import ConfigError, SimulationError

MAX_ITERATIONS = 50
TOLERANCE = 1e-8


class NetworkError(ConfigError):
    pass


class ConvergenceError(SimulationError):
    pass


@dataclass(frozen=True)
class Bus:
    id: str
    kv: float
    kind: str = "PQ"

    def __post_init__(self):
        if self.kind not in ("slack", "PQ"):
            raise NetworkError(f"bus {self.id!r}: kind must be 'slack' or 'PQ'")
        if not self.kv > 0:
            raise NetworkError(f"bus {self.id!r}: nominal kV must be positive")


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    rating: float
    kind: str = "line"

    def __post_init__(self):
        if not self.rating > 0:
            raise NetworkError(f"branch {self.id!r}: rating must be positive")
        if self.r < 0:
            raise NetworkError(f"branch {self.id!r}: resistance cannot be negative")
        if self.kind not in ("line", "transformer"):
            raise NetworkError(f"branch {self.id!r}: kind must be 'line' or 'transformer'")


@dataclass
class FeederNetwork:
    buses: list[Bus]
    branches: list[Branch]
    p: dict = field(default_factory=dict)  # kW per bus
    q: dict = field(default_factory=dict)  # kvar per bus
    slack_voltage: float = 1.0
    base_mva: float = 1.0

    def __post_init__(self):
        self._bus = {}
        for b in self.buses:
            if b.id in self._bus:
                raise NetworkError(f"duplicate bus {b.id!r}")
            self._bus[b.id] = b
        ids = [br.id for br in self.branches]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate branch ids")
        slack = [b.id for b in self.buses if b.kind == "slack"]
        if len(slack) != 1:
            raise NetworkError(f"a feeder needs exactly one slack bus, found {len(slack)}")
        self.slack = slack[0]
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in self._bus:
                    raise NetworkError(f"branch {br.id!r} references unknown bus {end!r}")
        for k in list(self.p) + list(self.q):
            if k not in self._bus:
                raise NetworkError(f"injection at unknown bus {k!r}")
        self._build_tree()

    def _build_tree(self) -> None:
        if len(self.branches) != len(self.buses) - 1:
            raise NetworkError(
                f"not a radial tree: {len(self.buses)} buses need {len(self.buses) - 1} branches, "
                f"got {len(self.branches)}"
            )
        adj: dict[str, list[tuple[Branch, str]]] = {b.id: [] for b in self.buses}
        for br in self.branches:
            if br.from_bus == br.to_bus:
                raise NetworkError(f"branch {br.id!r} is a self-loop")
            adj[br.from_bus].append((br, br.to_bus))
            adj[br.to_bus].append((br, br.from_bus))
        order = [self.slack]
        parent: dict[str, tuple[Branch, str]] = {}
        seen = {self.slack}
        queue = deque([self.slack])
        while queue:
            u = queue.popleft()
            for br, v in adj[u]:
                if v in seen:
                    if parent.get(u, (None,))[0] is not br:
                        raise NetworkError(f"not a radial tree: loop through branch {br.id!r}")
                    continue
                seen.add(v)
                parent[v] = (br, u)
                order.append(v)
                queue.append(v)
        if len(seen) != len(self.buses):
            missing = sorted(set(self._bus) - seen)
            raise NetworkError(f"buses not connected to the slack: {missing}")
        self.order = order
        self.parent = parent
        self._index = {b: i for i, b in enumerate(order)}

    def bus(self, bus_id: str) -> Bus:
        return self._bus[bus_id]

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def with_injections(self, p: Optional[Mapping] = None, q: Optional[Mapping] = None) -> "FeederNetwork":
        return replace(self, p=dict(p if p is not None else self.p), q=dict(q if q is not None else self.q))

    def upstream_bus(self, br: Branch) -> str:
        return self.parent[br.to_bus][1] if self.parent.get(br.to_bus, (None,))[0] is br else br.to_bus

    def z_pu(self, br: Branch) -> complex:
        z_base = self._bus[self.upstream_bus(br)].kv ** 2 / self.base_mva
        return complex(br.r, br.x) / z_base

    def path(self, bus_id: str) -> list[Branch]:
        """Branches from the slack down to ``bus_id``."""
        out = []
        b = bus_id
        while b != self.slack:
            br, b = self.parent[b]
            out.append(br)
        return out[::-1]


@dataclass
class LoadFlowResult:
    voltage: dict[str, float]
    angle: dict[str, float]
    flow_kva: dict[str, float]
    flow_p: dict[str, float]
    flow_q: dict[str, float]
    loading: dict[str, float]
    slack_p: float
    slack_q: float
    losses_p: float
    losses_q: float
    iterations: int
    complex_voltage: dict[str, complex] = field(default_factory=dict, repr=False)

    def max_loading(self) -> tuple[str, float]:
        return loading_report(self)[0] if self.loading else ("", 0.0)


def solve_load_flow(net: FeederNetwork, tol: float = TOLERANCE, max_iter: int = MAX_ITERATIONS) -> LoadFlowResult:
    """Backward-forward sweep with constant-PQ loads."""
    order = net.order
    idx = net._index
    n = len(order)
    s_base_kva = net.base_mva * 1e3
    s = np.array([complex(net.p.get(b, 0.0), net.q.get(b, 0.0)) / s_base_kva for b in order])
    if not np.all(np.isfinite(s)):
        raise NetworkError("injections must be finite")
    par = np.full(n, -1)
    z = np.zeros(n, dtype=complex)
    branch_of = [None] * n
    for b in order[1:]:
        br, up = net.parent[b]
        i = idx[b]
        par[i] = idx[up]
        z[i] = complex(br.r, br.x) / (net.bus(up).kv ** 2 / net.base_mva)
        branch_of[i] = br
    v = np.full(n, complex(net.slack_voltage, 0.0))
    j = np.zeros(n, dtype=complex)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        load_i = np.conj(s / v)
        j[:] = load_i
        for i in range(n - 1, 0, -1):
            j[par[i]] += j[i]
        v_new = v.copy()
        for i in range(1, n):
            v_new[i] = v_new[par[i]] - z[i] * j[i]
        delta = np.max(np.abs(v_new - v)) if n > 1 else 0.0
        v = v_new
        if not np.all(np.isfinite(v)):
            raise ConvergenceError("load flow diverged (voltage collapse)")
        if delta < tol:
            break
    else:
        raise ConvergenceError(f"load flow did not converge in {max_iter} iterations (last |dV|={delta:.2e})")
    # final branch currents consistent with the converged voltages
    j[:] = np.conj(s / v)
    for i in range(n - 1, 0, -1):
        j[par[i]] += j[i]
    flow_kva, flow_p, flow_q, loading = {}, {}, {}, {}
    losses = 0j
    for i in range(1, n):
        br = branch_of[i]
        sf = v[par[i]] * np.conj(j[i]) * s_base_kva
        flow_kva[br.id] = float(abs(sf))
        flow_p[br.id] = float(sf.real)
        flow_q[br.id] = float(sf.imag)
        loading[br.id] = float(100.0 * abs(sf) / br.rating)
        losses += z[i] * abs(j[i]) ** 2 * s_base_kva
    s_slack = v[0] * np.conj(j[0]) * s_base_kva
    # the slack's own load is part of j[0]; report the grid infeed
    return LoadFlowResult(
        voltage={b: float(abs(v[idx[b]])) for b in order},
        angle={b: float(np.angle(v[idx[b]])) for b in order},
        flow_kva=flow_kva, flow_p=flow_p, flow_q=flow_q, loading=loading,
        slack_p=float(s_slack.real), slack_q=float(s_slack.imag),
        losses_p=float(losses.real), losses_q=float(losses.imag),
        iterations=iterations,
        complex_voltage={b: complex(v[idx[b]]) for b in order},
    )


def loading_report(result: LoadFlowResult) -> list[tuple[str, float]]:
    """Branches by descending loading, ties broken by branch id."""
    return sorted(result.loading.items(), key=lambda kv: (-kv[1], kv[0]))


def path_impedance(net: FeederNetwork, branch_ids: Iterable[str]) -> tuple[float, float]:
    """Series R, X (ohms) of the listed branches."""
    r = x = 0.0
    for bid in branch_ids:
        br = net.branch(bid)
        r += br.r
        x += br.x
    return r, x
