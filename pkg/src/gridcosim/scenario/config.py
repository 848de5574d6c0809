"""Scenario files: module declarations, wiring, sampling, recording."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from ..building.spec import BuildingSpec, load_building
from ..comms import ChannelState, CommsModule
from ..control import ControllerConfig, ControllerModule, VoltVarConfig, check_cadence
from ..errors import ConfigError
from ..kernel import Kernel, QssModule, SignalSource
from ..powerflow import NetworkSpec, PowerFlowModule, load_network, path_impedance
from ..qss import METHODS, OdeSystem
from ..qss.quantum import normalize_mode
from ..timeseries import TimeSeries, TimeSeriesError

MODULE_TYPES = ("signal", "ode", "building", "powerflow", "comms", "controller")
TOP_KEYS = {"name", "t_end", "seed", "output", "modules", "connections", "samples", "record", "summary"}
SCENARIO_FILE = "scenario.yaml"


def _yaml_load(path: Path):
    try:
        return yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f":{mark.line + 1}:{mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}{where}: {getattr(exc, 'problem', None) or exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _unknown(section: str, data: Mapping, allowed: set) -> None:
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"{section}: unknown keys {sorted(extra)}")


def parse_connection(item) -> tuple[str, str]:
    if isinstance(item, str) and "->" in item:
        a, b = (s.strip() for s in item.split("->", 1))
        return a, b
    if isinstance(item, (list, tuple)) and len(item) == 2:
        return str(item[0]), str(item[1])
    raise ConfigError(f"connection must be 'src.port -> dst.port', got {item!r}")


@dataclass
class Scenario:
    """A validated scenario. ``data`` is the file content; files resolve against ``base_dir``."""

    data: dict
    base_dir: Path
    source: Optional[str] = None
    buildings: dict = field(default_factory=dict, repr=False)
    networks: dict = field(default_factory=dict, repr=False)

    @property
    def name(self) -> str:
        return str(self.data.get("name") or (Path(self.source).parent.name if self.source else "scenario"))

    @property
    def t_end(self) -> float:
        return float(self.data["t_end"])

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    @property
    def modules(self) -> list[dict]:
        return self.data["modules"]

    def module_decl(self, module_id: str) -> dict:
        for m in self.modules:
            if m["id"] == module_id:
                return m
        raise KeyError(module_id)

    def modules_of(self, kind: str) -> list[dict]:
        return [m for m in self.modules if m["type"] == kind]

    def output_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        return self.base_dir / str(self.data.get("output", "out"))

    def with_overrides(self, seed: Optional[int] = None, t_end: Optional[float] = None) -> "Scenario":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["seed"] = int(seed)
        if t_end is not None:
            data["t_end"] = float(t_end)
        return scenario_from_dict(data, self.base_dir, self.source)

    # -- kernel construction ----------------------------------------------------------
    def build(self) -> tuple[Kernel, dict]:
        """Fresh kernel with every module registered, wired, sampled and recorded."""
        k = Kernel()
        behaviours: dict[str, Any] = {}
        for decl in self.modules:
            try:
                behaviours[decl["id"]] = self._make(decl, behaviours)
            except ConfigError:
                raise
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"module {decl['id']}: {exc}") from None
            k.add(behaviours[decl["id"]])
        explicit = [parse_connection(c) for c in self.data.get("connections", []) or []]
        driven = {b for _, b in explicit}
        for a, b in explicit:
            k.connect(a, b)
        for decl in self.modules_of("controller"):
            grid = decl.get("grid")
            if grid is None:
                continue
            ctl = behaviours[decl["id"]]
            for sig in ctl.signals:
                dst = f"{decl['id']}.{sig}"
                if dst not in driven:
                    k.connect(f"{grid}.{sig}", dst)
        sample_periods = {}
        for s in self.data.get("samples", []) or []:
            if not isinstance(s, Mapping) or "port" not in s or "period" not in s:
                raise ConfigError(f"samples entries need 'port' and 'period', got {s!r}")
            k.sample_and_forward(s["port"], float(s["period"]))
            sample_periods[s["port"]] = float(s["period"])
        for decl in self.modules_of("controller"):
            ctl = behaviours[decl["id"]]
            for sig in ctl.signals:
                src = k._source_of.get((decl["id"], sig))
                if src is not None:
                    check_cadence(ctl.cfg.period, sample_periods.get(f"{src[0]}.{src[1]}"))
        rec = self.data.get("record", "all")
        if rec == "all":
            k.record_all()
        else:
            k.record(*rec)
        return k, behaviours

    def _channel(self, raw: Mapping, seed: int) -> ChannelState:
        raw = dict(raw or {})
        _unknown("comms channel", raw, {"base", "bandwidth", "loss", "rto", "seed"})
        bw = raw.get("bandwidth", 5000.0)
        bw = float("inf") if bw in (None, "inf") else float(bw)
        return ChannelState(base=float(raw.get("base", 0.1)), bandwidth=bw, loss=float(raw.get("loss", 0.0)),
                            rto=float(raw.get("rto", 1.0)), seed=int(raw.get("seed", seed)))

    def _make(self, decl: dict, built: dict):
        mid, kind = decl["id"], decl["type"]
        opts = {k: v for k, v in decl.items() if k not in ("id", "type")}
        if kind == "signal":
            _unknown(f"module {mid}", opts, {"profile", "value", "interpolation", "logged", "scale"})
            if "profile" in opts:
                series = self._series(opts["profile"], opts.get("interpolation", "linear"), f"module {mid}")
                if "scale" in opts:
                    series = TimeSeries(series.times, series.values * float(opts["scale"]), series.interpolation)
                return SignalSource(mid, series, bool(opts.get("logged", False)))
            if "value" in opts:
                return SignalSource(mid, float(opts["value"]), bool(opts.get("logged", False)))
            raise ConfigError(f"module {mid}: a signal needs 'profile' or 'value'")
        if kind == "ode":
            _unknown(f"module {mid}", opts, {"matrix", "offset", "x0", "method", "abs_tol", "rel_tol",
                                              "quantum_mode", "grouped", "outputs"})
            A = np.atleast_2d(np.asarray(opts.get("matrix"), dtype=float))
            x0 = np.atleast_1d(np.asarray(opts.get("x0"), dtype=float))
            if A.shape != (x0.size, x0.size):
                raise ConfigError(f"module {mid}: matrix must be {x0.size}x{x0.size}")
            b = np.zeros(x0.size) if opts.get("offset") is None else np.asarray(opts["offset"], dtype=float)
            system = OdeSystem(lambda q, mu, t, A=A, b=b: A @ q + b, x0,
                               float(opts.get("abs_tol", 1e-3)), float(opts.get("rel_tol", 1e-3)))
            if opts.get("method", "QSS2") not in METHODS:
                raise ConfigError(f"module {mid}: unknown method {opts['method']!r}; expected one of {METHODS}")
            normalize_mode(opts.get("quantum_mode", "max"))
            names = opts.get("outputs") or [f"x{j}" for j in range(x0.size)]
            return QssModule(mid, system, opts.get("method", "QSS2"), opts.get("quantum_mode", "max"),
                             bool(opts.get("grouped", True)), outputs={n: j for j, n in enumerate(names)})
        if kind == "building":
            _unknown(f"module {mid}", opts, {"spec"})
            spec = self.buildings.get(mid) or load_building(self._file(opts.get("spec"), f"module {mid} spec"))
            self.buildings[mid] = spec
            return spec.make_module(mid)
        if kind == "powerflow":
            _unknown(f"module {mid}", opts, {"network", "logged", "step"})
            net = self.networks.get(mid) or load_network(self._file(opts.get("network"), f"module {mid} network"))
            self.networks[mid] = net
            return PowerFlowModule(mid, net, logged=opts.get("logged", ["max_loading"]), step=opts.get("step"))
        if kind == "comms":
            _unknown(f"module {mid}", opts, {"downlink", "uplink", "polling_period", "vtn", "ven", "log"})
            down = self._channel(opts.get("downlink"), 2 * self.seed)
            up = self._channel(opts.get("uplink", opts.get("downlink")), 2 * self.seed + 1)
            return CommsModule(mid, down, up, vtn=opts.get("vtn", "vtn"), ven=opts.get("ven", "ven"),
                               polling_period=opts.get("polling_period"), log_deliveries=bool(opts.get("log", True)))
        if kind == "controller":
            return self._controller(mid, opts, built)
        raise ConfigError(f"module {mid}: unknown type {kind!r}; expected one of {MODULE_TYPES}")

    def _controller(self, mid: str, opts: dict, built: dict) -> ControllerModule:
        allowed = {"period", "threshold", "shed_fraction", "shed_kw", "hysteresis", "branches", "building",
                   "slope_limits", "volt_var", "line_capacity", "signals", "grid", "ven"}
        _unknown(f"module {mid}", opts, allowed)
        grid_id = opts.get("grid")
        net: Optional[NetworkSpec] = None
        if grid_id is not None:
            if grid_id not in self.networks:
                raise ConfigError(f"module {mid}: grid {grid_id!r} is not a powerflow module declared earlier")
            net = self.networks[grid_id]
        vv = None
        if opts.get("volt_var"):
            raw = dict(opts["volt_var"])
            _unknown(f"module {mid} volt_var", raw, {"sending_bus", "controlled_bus", "battery", "target_bus",
                                                    "setpoint", "q_min", "q_max", "path", "path_r", "path_x",
                                                    "base_kv"})
            if "path" in raw:
                if net is None:
                    raise ConfigError(f"module {mid}: volt_var path needs a grid")
                try:
                    raw["path_r"], raw["path_x"] = path_impedance(net.network, raw.pop("path"))
                except KeyError as exc:
                    raise ConfigError(f"module {mid}: unknown branch {exc} in volt_var path") from None
            if "base_kv" not in raw and net is not None:
                raw["base_kv"] = net.network.bus(raw["controlled_bus"]).kv
            try:
                vv = VoltVarConfig(**raw)
            except TypeError as exc:
                raise ConfigError(f"module {mid} volt_var: {exc}") from None
        cfg_keys = {"period", "threshold", "shed_fraction", "shed_kw", "hysteresis", "slope_limits", "building",
                    "line_capacity"}
        kw = {k: opts[k] for k in cfg_keys if k in opts}
        if "branches" in opts and opts["branches"] is not None:
            kw["branches"] = tuple(opts["branches"])
        cfg = ControllerConfig(volt_var=vv, **kw)
        signals = opts.get("signals", "auto")
        if signals == "auto":
            if net is None:
                raise ConfigError(f"module {mid}: signals: auto needs a grid")
            signals = self._auto_signals(cfg, net)
        return ControllerModule(mid, cfg, signals, network=net, ven=opts.get("ven", "ven"))

    @staticmethod
    def _auto_signals(cfg: ControllerConfig, net: NetworkSpec) -> list[str]:
        sig = []
        if cfg.line_capacity:
            branches = cfg.branches if cfg.branches is not None else [b.id for b in net.network.branches]
            sig += [f"loading_{b}" for b in branches]
        for inj in net.injections:
            if inj.name == cfg.building:
                sig += [f"Pinj_{inj.name}"]
        vv = cfg.volt_var
        if vv is not None:
            buses = [vv.sending_bus, vv.controlled_bus] + ([vv.target_bus] if vv.target_bus else [])
            sig += [f"V_{b}" for b in buses]
            sig += [f"Pbus_{vv.controlled_bus}", f"Qbus_{vv.controlled_bus}"]
            for inj in net.injections:
                sig += [f"Pinj_{inj.name}", f"Qinj_{inj.name}"]
        for name in cfg.slope_limits:
            sig.append(name)
        return list(dict.fromkeys(sig))

    def _file(self, rel, what: str) -> Path:
        if rel is None:
            raise ConfigError(f"{what}: missing file reference")
        p = self.base_dir / rel
        if not p.exists():
            raise ConfigError(f"{what}: file not found: {p}")
        return p

    def _series(self, rel, interpolation: str, what: str) -> TimeSeries:
        try:
            return TimeSeries.from_csv(self._file(rel, what), interpolation)
        except TimeSeriesError as exc:
            raise ConfigError(str(exc)) from None


def scenario_from_dict(data: Mapping, base_dir=".", source: Optional[str] = None) -> Scenario:
    if not isinstance(data, Mapping):
        raise ConfigError("scenario: expected a mapping at top level")
    data = copy.deepcopy(dict(data))
    _unknown("scenario", data, TOP_KEYS)
    if "t_end" not in data:
        raise ConfigError("scenario: 't_end' is required")
    if not float(data["t_end"]) > 0:
        raise ConfigError("scenario: t_end must be positive")
    mods = data.get("modules")
    if not mods:
        raise ConfigError("scenario: at least one module is required")
    seen = set()
    for i, m in enumerate(mods):
        if not isinstance(m, Mapping) or "id" not in m or "type" not in m:
            raise ConfigError(f"modules[{i}]: every module needs 'id' and 'type'")
        if m["id"] in seen:
            raise ConfigError(f"modules[{i}]: duplicate module id {m['id']!r}")
        if m["type"] not in MODULE_TYPES:
            raise ConfigError(f"modules[{i}]: unknown type {m['type']!r}; expected one of {MODULE_TYPES}")
        seen.add(m["id"])
    sc = Scenario(data, Path(base_dir), source)
    sc.build()  # resolves files, ports and connection types
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    if path.is_dir():
        path = path / SCENARIO_FILE
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    return scenario_from_dict(_yaml_load(path), path.parent, str(path))


def scenario_to_dict(s: Scenario) -> dict:
    return copy.deepcopy(s.data)


def save_scenario(s: Scenario, path) -> None:
    """Write the scenario so it reloads identically from ``path``'s directory.

    File references are rewritten relative to the new location.
    """
    path = Path(path)
    data = scenario_to_dict(s)
    for m in data["modules"]:
        for key in ("spec", "network", "profile"):
            if key in m:
                m[key] = _relocate(s.base_dir / m[key], path.parent)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")


def _relocate(target: Path, new_dir: Path) -> str:
    import os

    return os.path.relpath(target.resolve(), new_dir.resolve())
