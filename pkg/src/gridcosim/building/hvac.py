"""HVAC, PI control and demand-response setpoint logic.

Sign conventions: ``error = T_RET - T_setpoint`` (positive when too warm);
the PI output ``u`` lowers the HVAC setpoint below the zone setpoint,
``T_hvac = T_setpoint - u``, and cooling is ``gain * (T_RET - T_hvac)``
clipped to [0, capacity]. Powers are in W inside this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError


@dataclass
class ShedTable:
    """Shed fraction -> setpoint increase (K), linear between entries."""

    fractions: Sequence[float] = (0.0, 0.1, 0.2, 0.3)
    offsets: Sequence[float] = (0.0, 1.0, 2.0, 3.5)

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=float)
        if self.fractions.shape != self.offsets.shape or self.fractions.size < 1:
            raise ConfigError("shed table needs matching fraction/offset lists")
        if np.any(np.diff(self.fractions) <= 0):
            raise ConfigError("shed table fractions must be strictly increasing")

    def __call__(self, fraction: float) -> float:
        check_fraction(fraction)
        return float(np.interp(fraction, self.fractions, self.offsets))

    @classmethod
    def from_mapping(cls, table: dict) -> "ShedTable":
        items = sorted((float(k), float(v)) for k, v in table.items())
        if not items or items[0][0] != 0.0:
            items = [(0.0, 0.0)] + items
        return cls([k for k, _ in items], [v for _, v in items])


def check_fraction(fraction: float) -> None:
    if not (0.0 <= fraction <= 1.0) or math.isnan(fraction):
        raise ConfigError(f"shed fraction must lie in [0, 1], got {fraction!r}")


@dataclass
class HvacConfig:
    nominal_setpoint: float = 293.0
    kp: float = 2.0
    ki: float = 2.0 / 1800.0
    u_max: float = 10.0
    gain: float = 150e3
    capacity: float = 1.5e6
    cop: float = 3.0
    power_factor: float = 0.96
    shed_table: ShedTable = field(default_factory=ShedTable)
    power_cap: bool = True

    def __post_init__(self):
        if self.gain <= 0 or self.capacity < 0 or self.cop <= 0 or self.u_max < 0:
            raise ConfigError("HVAC gain and COP must be positive, capacity and u_max non-negative")
        if not 0 < self.power_factor <= 1:
            raise ConfigError(f"power factor must lie in (0, 1], got {self.power_factor}")
        if self.kp < 0 or self.ki < 0:
            raise ConfigError("PI gains cannot be negative")

    @property
    def tan_phi(self) -> float:
        return math.tan(math.acos(self.power_factor))

    def setpoint(self, shed: float) -> float:
        return self.nominal_setpoint + self.shed_table(shed)


@dataclass
class HvacState:
    T_setpoint: float
    T_hvac: float
    cooling: float
    P: float
    Q: float
    shed: float
    capped: bool = False


def pi_output(cfg: HvacConfig, t_ret: float, t_sp: float, integral: float) -> float:
    return min(max(cfg.kp * (t_ret - t_sp) + cfg.ki * integral, 0.0), cfg.u_max)


def cooling_limit(cfg: HvacConfig, shed: float, base_power: float, baseline_power: Optional[float]) -> float:
    """Cooling allowed by the shed commitment, ``P <= (1 - shed) * baseline``."""
    if not cfg.power_cap or shed <= 0.0 or baseline_power is None:
        return cfg.capacity
    return min(cfg.capacity, max(0.0, cfg.cop * ((1.0 - shed) * baseline_power - base_power)))


def building_step_semantics(
    cfg: HvacConfig,
    shed: float,
    t_ret: float,
    integral: float,
    base_power: float,
    baseline_power: Optional[float] = None,
) -> HvacState:
    """HVAC state for a given shed fraction, return temperature and PI integral.

    ``baseline_power`` is the concurrently computed no-shed electric power;
    when given, cooling is also limited so the electric power honours the
    shed fraction.
    """
    check_fraction(shed)
    t_sp = cfg.setpoint(shed)
    u = pi_output(cfg, t_ret, t_sp, integral)
    t_hvac = t_sp - u
    demand = min(max(cfg.gain * (t_ret - t_hvac), 0.0), cfg.capacity)
    limit = cooling_limit(cfg, shed, base_power, baseline_power)
    cooling = min(demand, limit)
    p = base_power + cooling / cfg.cop
    return HvacState(t_sp, t_hvac, cooling, p, p * cfg.tan_phi, shed, capped=demand > limit)


def integral_rate(cfg: HvacConfig, t_ret: float, t_sp: float, integral: float, capped: bool = False) -> float:
    """dI/dt with conditional integration (frozen while the output saturates)."""
    e = t_ret - t_sp
    raw = cfg.kp * e + cfg.ki * integral
    if e > 0 and (raw >= cfg.u_max or capped):
        return 0.0
    if e < 0 and raw <= 0.0:
        return 0.0
    return e
