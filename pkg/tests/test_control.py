import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcosim.control import (
    ControllerConfig, ControllerModule, GridSnapshot, VoltVarConfig, check_cadence, line_capacity_control,
    slope_control, volt_var_control,
)
from gridcosim.errors import ConfigError
from gridcosim.kernel import Kernel, SignalSource
from gridcosim.powerflow import network_from_dict
from gridcosim.timeseries import TimeSeries


def snap_with_loading(x, t=0.0):
    return GridSnapshot(t, loadings={"CBL": x, "TX": 10.0})


# -- line capacity ------------------------------------------------------------

def test_overload_requests_shed():
    d = line_capacity_control(snap_with_loading(56.0), ControllerConfig())
    assert d.fraction == 0.20 and d.branch == "CBL"


def test_below_threshold_releases():
    assert line_capacity_control(snap_with_loading(54.9), ControllerConfig()).is_release


def test_threshold_is_strict():
    assert line_capacity_control(snap_with_loading(55.0), ControllerConfig()).is_release


def test_optional_hysteresis():
    cfg = ControllerConfig(hysteresis=1.0)
    assert line_capacity_control(snap_with_loading(54.5), cfg, shedding=True).fraction == 0.2
    assert line_capacity_control(snap_with_loading(53.9), cfg, shedding=True).is_release
    assert line_capacity_control(snap_with_loading(54.5), cfg, shedding=False).is_release


def test_shed_in_kw():
    cfg = ControllerConfig(shed_kw=50.0, shed_fraction=None)
    snap = GridSnapshot(0.0, loadings={"CBL": 60.0}, injections={"b71": (250.0, 70.0)})
    assert line_capacity_control(snap, cfg).fraction == pytest.approx(0.2)


@pytest.mark.parametrize("kw", [dict(period=0), dict(threshold=0), dict(threshold=101), dict(shed_fraction=0.0),
                                dict(shed_fraction=1.5), dict(hysteresis=-1)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ControllerConfig(**kw)


def test_cadence_mismatch():
    check_cadence(60.0, 30.0)
    check_cadence(60.0, None)
    with pytest.raises(ConfigError):
        check_cadence(60.0, 45.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.floats(1, 100))
def test_decision_matches_strict_rule(loading, thr):
    d = line_capacity_control(snap_with_loading(loading), ControllerConfig(threshold=thr))
    assert (d.fraction > 0) == (max(loading, 10.0) > thr)


# -- volt-var -------------------------------------------------------------------------

def chain_network(q_bat=0.0):
    data = {
        "buses": [{"id": "PCC", "kv": 12, "kind": "slack"}, {"id": "A6", "kv": 12}, {"id": "N1", "kv": 12},
                  {"id": "B71", "kv": 12}],
        "branches": [
            {"id": "TX", "from": "PCC", "to": "A6", "r": 0.3, "x": 1.5, "rating": 10000, "kind": "transformer"},
            {"id": "BANK", "from": "A6", "to": "N1", "r": 0.2, "x": 1.2, "rating": 2000, "kind": "transformer"},
            {"id": "CBL", "from": "N1", "to": "B71", "r": 0.15, "x": 0.1, "rating": 2000},
        ],
        "injections": [
            {"name": "agg", "bus": "A6", "p": 3000.0, "power_factor": 0.94},
            {"name": "b71", "bus": "B71", "p": 600.0, "power_factor": 0.96},
            {"name": "pv", "bus": "B71", "p": 150.0, "generator": True},
            {"name": "bat", "bus": "B71", "q": q_bat, "generator": True},
        ],
    }
    return network_from_dict(data)


def snapshot_of(spec, t=0.0, values=None):
    vals = values or {}
    for inj in spec.injections:
        if inj.name not in vals:
            p = inj.p.value if inj.p is not None else 0.0
            q = inj.q.value if inj.q is not None else p * inj.tan_phi
            vals[inj.name] = (-p, -q) if inj.generator else (p, q)
    res, p, q = spec.solve(vals)
    return GridSnapshot(t, V=dict(res.voltage), P=p, Q=q, loadings=dict(res.loading), injections=vals), res


VV = VoltVarConfig("A6", "B71", "bat", path_r=0.35, path_x=1.3, base_kv=12, target_bus="A6",
                   q_min=-1000.0, q_max=1000.0)


def test_fixed_point_gives_zero_delta():
    spec = chain_network()
    snap, _ = snapshot_of(spec)
    first = volt_var_control(snap, VV, 0.0, resolve=None)
    # apply the setpoint, measure, and ask again
    snap2, res2 = snapshot_of(spec, values={"bat": (0.0, -first.q_setpoint)})
    spec_v = res2.voltage
    second = volt_var_control(snap2, VV, first.q_setpoint)
    # the sending voltage moved slightly once Q changed; apply the refinement
    resolve = lambda q: spec.solve({**snap.injections, "bat": (0.0, -q)})[0].voltage
    refined = volt_var_control(snap, VV, 0.0, resolve=resolve)
    snap3, res3 = snapshot_of(spec, values={"bat": (0.0, -refined.q_setpoint)})
    assert abs(res3.voltage["B71"] - res3.voltage["A6"]) < 1e-9
    third = volt_var_control(snap3, VV, refined.q_setpoint)
    assert abs(third.delta_q) < 1e-6
    assert abs(second.delta_q) < abs(first.delta_q)


def test_two_bus_closed_loop():
    data = {
        "buses": [{"id": "S", "kv": 12, "kind": "slack"}, {"id": "L", "kv": 12}],
        "branches": [{"id": "l", "from": "S", "to": "L", "r": 0.4, "x": 0.8, "rating": 3000}],
        "injections": [{"name": "ld", "bus": "L", "p": 900.0, "q": 200.0},
                       {"name": "bat", "bus": "L", "q": 0.0, "generator": True}],
    }
    spec = network_from_dict(data)
    snap, _ = snapshot_of(spec)
    cfg = VoltVarConfig("S", "L", "bat", 0.4, 0.8, 12.0, setpoint=0.999, q_min=-2000, q_max=2000)
    res = volt_var_control(snap, cfg)
    _, lf = snapshot_of(spec, values={"bat": (0.0, -res.q_setpoint)})
    assert abs(lf.voltage["L"] - 0.999) < 1e-4
    assert not res.saturated


def test_target_above_limit_saturates():
    spec = chain_network()
    snap, _ = snapshot_of(spec)
    cfg = VoltVarConfig("A6", "B71", "bat", 0.35, 1.3, 12.0, setpoint=1.05, q_min=-50, q_max=50)
    res = volt_var_control(snap, cfg)
    assert res.saturated and res.q_setpoint == 50


def test_unreachable_target_clamps():
    spec = chain_network()
    snap, _ = snapshot_of(spec)
    cfg = VoltVarConfig("A6", "B71", "bat", 0.35, 1e-6, 12.0, setpoint=1.6, q_min=-50, q_max=80)
    res = volt_var_control(snap, cfg)
    assert res.unreachable and res.saturated and res.q_setpoint == 80


def test_voltvar_config_needs_one_target():
    with pytest.raises(ConfigError):
        VoltVarConfig("A", "B", "bat", 1, 1, 12)
    with pytest.raises(ConfigError):
        VoltVarConfig("A", "B", "bat", 1, 1, 12, target_bus="A", setpoint=1.0)


# -- slope ----------------------------------------------------------------------------

def test_constant_signals_no_request():
    cfg = ControllerConfig(slope_limits={"Pbus_B71": 1.0})
    a = GridSnapshot(0.0, P={"B71": 300.0})
    b = GridSnapshot(60.0, P={"B71": 300.0})
    assert slope_control(a, b, cfg) == []


def test_ramp_twice_the_limit_halves():
    cfg = ControllerConfig(slope_limits={"Pbus_B71": 1.0})
    a = GridSnapshot(0.0, P={"B71": 300.0})
    b = GridSnapshot(60.0, P={"B71": 420.0})  # 2 kW/s
    (req,) = slope_control(a, b, cfg)
    assert req.ramp_fraction == pytest.approx(0.5)
    assert req.excess == pytest.approx(60.0)


def test_infinite_limit_is_inert():
    cfg = ControllerConfig(slope_limits={"Pbus_B71": math.inf})
    assert slope_control(GridSnapshot(0.0, P={"B71": 0.0}), GridSnapshot(60.0, P={"B71": 1e6}), cfg) == []


# -- module in the kernel -------------------------------------------------------------

def run_controller(loading_series, t_end=900.0, **cfg):
    k = Kernel()
    k.add(SignalSource("grid", loading_series))
    ctl = ControllerModule("ctl", ControllerConfig(**cfg), ["loading_CBL"])
    k.add(ctl)
    k.connect("grid.y", "ctl.loading_CBL")
    k.record("ctl.shed_fraction")
    return k.run(t_end), ctl


def test_one_period_delay():
    series = TimeSeries(np.array([0.0, 600.0]), np.array([50.0, 56.0]), "hold")
    tr, ctl = run_controller(series)
    msgs = [e for e in tr.events if e.source == "ctl.dr" and e.event == "message"]
    assert len(msgs) == 1
    assert msgs[0].time.seconds == pytest.approx(660.0)
    assert ctl.decisions[0]["t"] == 600.0
    # the output never shares the instant of its snapshot
    for d in ctl.decisions:
        assert all(m.time.seconds != d["t"] for m in msgs)


def test_no_change_no_new_request():
    series = TimeSeries(np.array([0.0, 100.0]), np.array([60.0, 60.0]), "hold")
    tr, ctl = run_controller(series, t_end=1200.0)
    assert len(ctl.decisions) == 1
    assert tr.final_value("ctl.shed_fraction") == 0.2


def test_alternation_near_threshold():
    t = np.arange(0, 1201, 60.0)
    series = TimeSeries(t, np.where(np.arange(t.size) % 2, 55.5, 54.5), "hold")
    tr, ctl = run_controller(series, t_end=1200.0)
    kinds = [d["fraction"] > 0 for d in ctl.decisions]
    assert len(kinds) >= 4 and all(a != b for a, b in zip(kinds, kinds[1:]))
