"""Controller rules on sampled grid state: line capacity, volt-var, slope."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from ..errors import ConfigError
from ..powerflow.voltdrop import UnreachableTargetError, solve_reactive_power

SIGNAL_PREFIXES = ("V", "Pbus", "Qbus", "Pinj", "Qinj", "loading")


@dataclass(frozen=True)
class VoltVarConfig:
    """Track ``target_bus`` voltage (or a fixed setpoint) at ``controlled_bus``.

    ``path_r``/``path_x`` are the series ohms from the sending bus to the
    controlled bus, ``base_kv`` their voltage level. P/Q at the controlled bus
    are the net load there; ``battery`` names the injection being steered.
    """

    sending_bus: str
    controlled_bus: str
    battery: str
    path_r: float
    path_x: float
    base_kv: float
    target_bus: Optional[str] = None
    setpoint: Optional[float] = None
    q_min: float = -500.0
    q_max: float = 500.0
    refine_iterations: int = 10
    refine_tol: float = 1e-6  # kvar

    def __post_init__(self):
        if (self.target_bus is None) == (self.setpoint is None):
            raise ConfigError("volt-var: give exactly one of target_bus or setpoint")
        if not self.q_min <= self.q_max:
            raise ConfigError("volt-var: q_min must not exceed q_max")
        if self.path_r < 0 or self.path_x < 0 or self.base_kv <= 0:
            raise ConfigError("volt-var: path impedance must be >= 0 and base_kv > 0")


@dataclass(frozen=True)
class ControllerConfig:
    period: float = 60.0
    threshold: float = 55.0
    shed_fraction: Optional[float] = 0.20
    shed_kw: Optional[float] = None
    hysteresis: float = 0.0
    branches: Optional[tuple] = None  # None: every monitored loading
    slope_limits: Mapping[str, float] = field(default_factory=dict)
    building: str = "b71"  # injection carrying the building load
    volt_var: Optional[VoltVarConfig] = None
    line_capacity: bool = True

    def __post_init__(self):
        if not self.period > 0:
            raise ConfigError(f"controller period must be > 0, got {self.period!r}")
        if not 0 < self.threshold <= 100:
            raise ConfigError(f"threshold must be in (0, 100], got {self.threshold!r}")
        if self.shed_kw is None:
            if self.shed_fraction is None or not 0 < self.shed_fraction <= 1:
                raise ConfigError(f"shed fraction must be in (0, 1], got {self.shed_fraction!r}")
        elif not self.shed_kw > 0:
            raise ConfigError("shed_kw must be positive")
        if self.hysteresis < 0:
            raise ConfigError("hysteresis must be >= 0")
        for name, lim in self.slope_limits.items():
            if not lim > 0:
                raise ConfigError(f"slope limit for {name!r} must be > 0")


def check_cadence(period: float, sample_period: Optional[float]) -> None:
    """The controller grid must line up with the snapshot sampling grid."""
    if sample_period is None:
        return
    ratio = period / sample_period
    if not sample_period > 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigError(
            f"controller period {period} s is not a multiple of the snapshot period {sample_period} s"
        )


@dataclass
class GridSnapshot:
    t: float
    V: dict = field(default_factory=dict)
    P: dict = field(default_factory=dict)
    Q: dict = field(default_factory=dict)
    loadings: dict = field(default_factory=dict)
    injections: dict = field(default_factory=dict)  # name -> (P, Q), load convention

    @classmethod
    def from_signals(cls, t: float, signals: Mapping[str, float]) -> "GridSnapshot":
        snap = cls(t)
        inj_p, inj_q = {}, {}
        for name, val in signals.items():
            prefix, _, ident = name.partition("_")
            if not ident:
                continue
            target = {"V": snap.V, "Pbus": snap.P, "Qbus": snap.Q, "loading": snap.loadings,
                      "Pinj": inj_p, "Qinj": inj_q}.get(prefix)
            if target is not None:
                target[ident] = float(val)
        for k in set(inj_p) | set(inj_q):
            snap.injections[k] = (inj_p.get(k, 0.0), inj_q.get(k, 0.0))
        return snap

    def signal(self, name: str) -> float:
        prefix, _, ident = name.partition("_")
        table = {"V": self.V, "Pbus": self.P, "Qbus": self.Q, "loading": self.loadings}
        if prefix in ("Pinj", "Qinj"):
            return self.injections[ident][0 if prefix == "Pinj" else 1]
        return table[prefix][ident]


# -- line capacity -----------------------------------------------------------------

@dataclass(frozen=True)
class ShedDecision:
    fraction: float
    branch: str
    loading: float

    @property
    def is_release(self) -> bool:
        return self.fraction == 0.0


def monitored_loading(snap: GridSnapshot, cfg: ControllerConfig) -> tuple[str, float]:
    names = cfg.branches if cfg.branches is not None else tuple(sorted(snap.loadings))
    if not names:
        return "", 0.0
    worst = max(names, key=lambda b: (snap.loadings[b], b))
    return worst, snap.loadings[worst]


def shed_amount(snap: GridSnapshot, cfg: ControllerConfig) -> float:
    if cfg.shed_kw is None:
        return float(cfg.shed_fraction)
    load = snap.injections.get(cfg.building, (0.0, 0.0))[0]
    return 1.0 if load <= cfg.shed_kw else cfg.shed_kw / load


def line_capacity_control(snap: GridSnapshot, cfg: ControllerConfig, shedding: bool = False) -> ShedDecision:
    """Shed when any monitored loading is strictly above the threshold, else release.

    While a shed is active, release waits until the loading falls to
    ``threshold - hysteresis``.
    """
    branch, loading = monitored_loading(snap, cfg)
    if loading > cfg.threshold:
        return ShedDecision(shed_amount(snap, cfg), branch, loading)
    if shedding and loading > cfg.threshold - cfg.hysteresis:
        return ShedDecision(shed_amount(snap, cfg), branch, loading)
    return ShedDecision(0.0, branch, loading)


# -- volt-var ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VoltVarResult:
    q_setpoint: float  # battery reactive infeed, kvar
    delta_q: float
    target: float
    saturated: bool
    unreachable: bool = False
    residual: Optional[float] = None  # closed-loop voltage error after refinement


def voltvar_target(voltages: Mapping[str, float], cfg: VoltVarConfig) -> float:
    return voltages[cfg.target_bus] if cfg.target_bus is not None else float(cfg.setpoint)


def volt_var_control(
    snap: GridSnapshot,
    cfg: VoltVarConfig,
    previous_q: float = 0.0,
    resolve: Optional[Callable[[float], Mapping[str, float]]] = None,
) -> VoltVarResult:
    """Battery Q infeed that puts the controlled bus voltage on target.

    ``P`` and ``Q`` are the controlled bus's net load with the battery's
    reactive part taken out. ``resolve(q_bat)`` optionally re-runs the load
    flow and returns bus voltages; the setpoint is then refined by
    fixed-point iteration on the sending and target voltages.
    """
    if cfg.sending_bus not in snap.V or cfg.controlled_bus not in snap.V:
        raise ConfigError("volt-var: snapshot lacks the monitored voltages")
    if cfg.battery in snap.injections:
        bat_q_load = snap.injections[cfg.battery][1]
    else:
        bat_q_load = -previous_q
    p_net = snap.P[cfg.controlled_bus]
    q_other = snap.Q[cfg.controlled_bus] - bat_q_load

    def solve(volts: Mapping[str, float]) -> tuple[float, bool]:
        target = voltvar_target(volts, cfg)
        try:
            q_need = solve_reactive_power(volts[cfg.sending_bus], target, p_net, cfg.path_r, cfg.path_x,
                                          base_kv=cfg.base_kv)
        except UnreachableTargetError:
            return (cfg.q_max if target > volts[cfg.controlled_bus] else cfg.q_min), True
        return q_other - q_need, False

    volts = snap.V
    q_bat, unreachable = solve(volts)
    if resolve is not None and not unreachable:
        for _ in range(cfg.refine_iterations):
            volts = resolve(min(max(q_bat, cfg.q_min), cfg.q_max))
            q_next, unreachable = solve(volts)
            converged = abs(q_next - q_bat) < cfg.refine_tol
            q_bat = q_next
            if unreachable or converged:
                break
    saturated = unreachable or q_bat < cfg.q_min or q_bat > cfg.q_max
    q_bat = min(max(q_bat, cfg.q_min), cfg.q_max)
    residual = None
    if resolve is not None:
        volts = resolve(q_bat)
        residual = volts[cfg.controlled_bus] - voltvar_target(volts, cfg)
    return VoltVarResult(q_bat, q_bat - previous_q, voltvar_target(volts, cfg), saturated, unreachable, residual)


# -- slope -------------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeRequest:
    signal: str
    slope: float
    limit: float
    excess: float  # signal units over one period that should be removed
    ramp_fraction: float  # share of the observed ramp to cancel


def slope_control(prev: Optional[GridSnapshot], snap: GridSnapshot, cfg: ControllerConfig) -> list[SlopeRequest]:
    """Proportional correction for signals whose rate of change exceeds its limit."""
    if prev is None or not cfg.slope_limits:
        return []
    dt = snap.t - prev.t
    if not dt > 0:
        raise ConfigError("slope control needs two snapshots at distinct times")
    out = []
    for name in sorted(cfg.slope_limits):
        limit = cfg.slope_limits[name]
        if math.isinf(limit):
            continue
        slope = (snap.signal(name) - prev.signal(name)) / dt
        if abs(slope) > limit:
            out.append(SlopeRequest(name, slope, limit, math.copysign((abs(slope) - limit) * dt, slope),
                                    1.0 - limit / abs(slope)))
    return out
