"""Building spec files: zones/walls/layers (or the synthetic building), HVAC,
reduction order, solver settings and disturbance schedules."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from ..errors import ConfigError
from ..timeseries import TimeSeries
from .hvac import HvacConfig, ShedTable
from .module import BuildingModule
from .rc import DISTURBANCES, StateSpaceModel, WallSpec, ZoneSpec, assemble_rc, strip_hvac_inputs
from .reduction import reduce_model
from .synthetic import ten_zone_building, weather_profiles

SYNTHETIC = {"ten-zone": ten_zone_building}
_WALL_KEYS = {"layers", "boundary", "facade", "area", "solar_int", "solar_ext", "r_inside", "r_outside"}
_ZONE_KEYS = {"name", "volume", "c_air", "c_im", "r_im", "walls", "gain_share", "im_split", "ua_window",
              "window_aperture"}
_HVAC_KEYS = {"nominal_setpoint", "kp", "ki", "u_max", "gain", "capacity", "cop", "power_factor", "power_cap"}
_SOLVER_KEYS = {"method", "abs_tol", "rel_tol", "quantum_mode", "integral_tol"}


def _unknown(section: str, data: Mapping, allowed: set) -> None:
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"{section}: unknown keys {sorted(extra)}")


def _zones(raw) -> list[ZoneSpec]:
    if isinstance(raw, str):
        if raw not in SYNTHETIC:
            raise ConfigError(f"unknown synthetic building {raw!r}; known: {sorted(SYNTHETIC)}")
        return SYNTHETIC[raw]()
    zones = []
    for z in raw:
        _unknown(f"zone {z.get('name')!r}", z, _ZONE_KEYS)
        walls = []
        for w in z.get("walls", []):
            _unknown(f"zone {z.get('name')!r} wall", w, _WALL_KEYS)
            walls.append(WallSpec(**{**w, "layers": [tuple(layer) for layer in w["layers"]]}))
        zones.append(ZoneSpec(**{**z, "walls": walls}))
    return zones


def _signal(raw, base: Path, what: str) -> Union[float, TimeSeries]:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    if isinstance(raw, Mapping) and "profile" in raw:
        path = base / raw["profile"]
        if not path.exists():
            raise ConfigError(f"{what}: profile file not found: {path}")
        ts = TimeSeries.from_csv(path, raw.get("interpolation", "linear"))
        scale = float(raw.get("scale", 1.0))
        if scale != 1.0:
            ts = TimeSeries(ts.times, ts.values * scale, ts.interpolation, ts.name)
        return ts
    raise ConfigError(f"{what}: expected a number or {{profile: file}}, got {raw!r}")


@dataclass
class BuildingSpec:
    """Parsed building description; ``data`` keeps the file content for round trips."""

    data: dict
    base_dir: Path = field(default_factory=Path)
    source: Optional[str] = None
    _model: Optional[StateSpaceModel] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        d = self.data
        _unknown("building", d, {"zones", "reduced_order", "t_ref", "hvac", "base_power", "disturbances",
                                 "weather", "solver", "accept", "shadow"})
        if "zones" not in d:
            raise ConfigError("building: 'zones' is required")
        self.zones = _zones(d["zones"])
        self.order = d.get("reduced_order", 8)
        self.t_ref = float(d.get("t_ref", 293.0))
        hv = dict(d.get("hvac", {}) or {})
        table = hv.pop("shed_table", None)
        _unknown("hvac", hv, _HVAC_KEYS)
        self.hvac = HvacConfig(**hv, **({"shed_table": ShedTable.from_mapping(table)} if table else {}))
        solver = dict(d.get("solver", {}) or {})
        _unknown("solver", solver, _SOLVER_KEYS)
        self.solver = solver
        self.base_power = _signal(d.get("base_power", 80e3), self.base_dir, "building base_power")
        self.disturbances = self._disturbances()

    def _disturbances(self) -> dict:
        d = self.data
        out: dict[str, Any] = {}
        if "weather" in d:
            params = d["weather"] or {}
            if not isinstance(params, Mapping):
                raise ConfigError("building weather: expected a mapping of synthetic-weather parameters")
            out.update(weather_profiles(**params))
        for name, raw in (d.get("disturbances") or {}).items():
            if name not in DISTURBANCES:
                raise ConfigError(f"unknown disturbance {name!r}; expected one of {DISTURBANCES}")
            out[name] = _signal(raw, self.base_dir, f"disturbance {name}")
        return out

    def model(self) -> StateSpaceModel:
        if self._model is None:
            full = strip_hvac_inputs(assemble_rc(self.zones))
            self._model = full if self.order in (None, 0) else reduce_model(full, int(self.order))
        return self._model

    def full_model(self) -> StateSpaceModel:
        return strip_hvac_inputs(assemble_rc(self.zones))

    def make_module(self, module_id: str) -> BuildingModule:
        return BuildingModule(
            module_id, self.model(), self.hvac, self.disturbances, base_power=self.base_power, t_ref=self.t_ref,
            accept=bool(self.data.get("accept", True)), shadow=bool(self.data.get("shadow", True)),
            **self.solver,
        )


def building_from_dict(data: Mapping, base_dir=".") -> BuildingSpec:
    return BuildingSpec(copy.deepcopy(dict(data)), Path(base_dir))


def building_to_dict(spec: BuildingSpec) -> dict:
    return copy.deepcopy(spec.data)


def load_building(path) -> BuildingSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f":{mark.line + 1}:{mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}{where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping at top level")
    spec = BuildingSpec(dict(data), path.parent, str(path))
    return spec
