"""A synthetic two-storey, ten-zone office/lab building and daily profiles.

Each floor has four perimeter zones (N, E, S, W) around a core. Perimeter
zones carry a three-layer exterior wall with windows; ground-floor zones sit
on a three-layer slab, top-floor zones under a three-layer roof; floors are
separated by two-layer slabs and zones by two-layer partitions. That gives
116 states.
"""

from __future__ import annotations

import numpy as np

from ..timeseries import TimeSeries
from .rc import WallSpec, ZoneSpec

RHO_CP_AIR = 1.2 * 1005.0


def _layer(rho_c: float, k: float, thickness: float, area: float) -> tuple[float, float]:
    """(capacitance J/K, resistance K/W) of a homogeneous slab."""
    return rho_c * thickness * area, thickness / (k * area)


CONCRETE = (2300 * 900.0, 1.7)
INSULATION = (30 * 1400.0, 0.04)
GYPSUM = (800 * 1090.0, 0.25)
BLOCK = (1400 * 840.0, 0.5)
MEMBRANE = (1100 * 1500.0, 0.17)


def exterior_wall(facade: str, area: float = 100.0) -> WallSpec:
    return WallSpec(
        layers=[_layer(*GYPSUM, 0.0125, area), _layer(*INSULATION, 0.08, area), _layer(*CONCRETE, 0.15, area)],
        boundary="exterior", facade=facade, area=area, solar_ext=0.6, solar_int=0.05,
        r_inside=1.0 / (8.0 * area), r_outside=1.0 / (25.0 * area),
    )


def roof(area: float) -> WallSpec:
    return WallSpec(
        layers=[_layer(*CONCRETE, 0.12, area), _layer(*INSULATION, 0.12, area), _layer(*MEMBRANE, 0.01, area)],
        boundary="exterior", area=area, r_inside=1.0 / (6.0 * area), r_outside=1.0 / (25.0 * area),
    )


def ground_slab(area: float) -> WallSpec:
    return WallSpec(
        layers=[_layer(*CONCRETE, 0.15, area), _layer(*INSULATION, 0.05, area), _layer(*CONCRETE, 0.3, area)],
        boundary="ground", area=area, r_inside=1.0 / (6.0 * area), r_outside=0.5 / area,
    )


def partition(other: str, area: float) -> WallSpec:
    half = _layer(*BLOCK, 0.05, area)
    return WallSpec(layers=[half, half], boundary=other, area=area, r_inside=1.0 / (8.0 * area),
                    r_outside=1.0 / (8.0 * area))


def floor_slab(other: str, area: float, upward: bool) -> WallSpec:
    layers = [_layer(*CONCRETE, 0.1, area), _layer(*GYPSUM, 0.02, area)]
    return WallSpec(layers=layers if upward else layers[::-1], boundary=other, area=area)


def ten_zone_building(
    floor_area: float = 500.0,
    height: float = 3.5,
    window_area: float = 40.0,
    window_u: float = 2.5,
    shgc: float = 0.4,
) -> list[ZoneSpec]:
    """Zone specs of the synthetic acceptance building."""
    perimeter = ("N", "E", "S", "W")
    ring = {"N": ("E", "W"), "E": ("N", "S"), "S": ("E", "W"), "W": ("N", "S")}
    volume = floor_area * height
    zones = []
    for level in (1, 2):
        for pos in perimeter + ("C",):
            name = f"L{level}{pos}"
            walls = []
            if pos in perimeter:
                walls.append(exterior_wall(pos))
                walls.append(partition(f"L{level}C", 60.0))
                for nb in ring[pos]:
                    walls.append(partition(f"L{level}{nb}", 30.0))
            else:
                walls += [partition(f"L{level}{p}", 60.0) for p in perimeter]
            if level == 1:
                walls.append(ground_slab(floor_area))
                walls.append(floor_slab(f"L2{pos}", floor_area, upward=False))
            else:
                walls.append(roof(floor_area))
                walls.append(floor_slab(f"L1{pos}", floor_area, upward=True))
            zones.append(ZoneSpec(
                name=name, volume=volume, c_air=RHO_CP_AIR * volume * 1.3,
                c_im=8.8e4 * floor_area, r_im=1.0 / (6.0 * floor_area),
                walls=walls, im_split=0.5,
                ua_window=window_u * window_area if pos in perimeter else 0.0,
                window_aperture={pos: shgc * window_area} if pos in perimeter else {},
            ))
    return zones


def _daily(t, base, peak, start_h, end_h, ramp_h=1.0):
    """Smooth office-hours pulse between ``base`` and ``peak``."""
    h = (np.asarray(t) / 3600.0) % 24.0
    rise = np.clip((h - start_h) / ramp_h, 0, 1)
    fall = np.clip((end_h - h) / ramp_h, 0, 1)
    shape = np.minimum(rise, fall)
    shape = 0.5 - 0.5 * np.cos(np.pi * shape)
    return base + (peak - base) * shape


def weather_profiles(
    t_end: float = 86400.0,
    step: float = 900.0,
    t_min: float = 287.0,
    t_max: float = 299.0,
    ground: float = 288.0,
    solar_peak: float = 700.0,
    gains_night: float = 150e3,
    gains_day: float = 750e3,
) -> dict[str, TimeSeries]:
    """A clear summer day on a 15-minute grid (linear interpolation)."""
    t = np.arange(0.0, t_end + step / 2, step)
    h = (t / 3600.0) % 24.0
    t_amb = 0.5 * (t_min + t_max) - 0.5 * (t_max - t_min) * np.cos(2 * np.pi * (h - 3.0) / 24.0)
    sun = np.clip(np.sin(np.pi * (h - 6.0) / 13.0), 0, None)
    facade = {
        "S_E": solar_peak * sun * np.clip(np.cos(np.pi * (h - 9.0) / 10.0), 0.15, None) * (h < 14),
        "S_W": solar_peak * sun * np.clip(np.cos(np.pi * (h - 16.0) / 10.0), 0.15, None) * (h > 10),
        "S_N": 0.15 * solar_peak * sun,
        "S_S": 0.6 * solar_peak * sun,
    }
    out = {
        "Q_IHG": TimeSeries(t, _daily(t, gains_night, gains_day, 8.0, 19.0), name="Q_IHG"),
        "T_AMB": TimeSeries(t, t_amb, name="T_AMB"),
        "T_GND": TimeSeries(t, np.full_like(t, ground), name="T_GND"),
    }
    for k, v in facade.items():
        out[k] = TimeSeries(t, v, name=k)
    return out


def disturbance_matrix(profiles: dict[str, TimeSeries], times) -> np.ndarray:
    from .rc import DISTURBANCES

    return np.column_stack([np.interp(times, profiles[k].times, profiles[k].values) for k in DISTURBANCES])
