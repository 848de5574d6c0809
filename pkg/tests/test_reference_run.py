"""Closed-loop DR run against a fixed-step (1 s) scripted reference.

The reference integrates the same building equations by RK4, solves the
feeder only at controller instants and applies the threshold rule by hand.
Shed requests in the event-driven run must appear exactly when the reference
sees a loading above the threshold.
"""

import copy
from pathlib import Path

import numpy as np
import pytest

from gridcosim.building.module import IDX_SHED
from gridcosim.scenario import load_scenario, scenario_from_dict, simulate
from gridcosim.timeseries import TimeSeries

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
T_END = 50400.0
TIE_BAND = 0.05  # % loading; closer calls may legitimately flip between integrators


def direct_dr(t_end):
    sc = load_scenario(SCENARIOS / "dr_overload")
    d = copy.deepcopy(sc.data)
    d["t_end"] = t_end
    d["modules"] = [m for m in d["modules"] if m["type"] != "comms"]
    d["connections"] = ["b71.P -> grid.b71_P", "b71.Q -> grid.b71_Q", "ctl.dr -> b71.dr",
                        "b71.reply -> ctl.replies"]
    return scenario_from_dict(d, sc.base_dir)


def reference_decisions(building, spec, cfg, t_end, h=1.0):
    th = building.thermal
    n = int(round(t_end / h))
    half = np.arange(0, 2 * n + 1) * (h / 2)

    def sample(s):
        if isinstance(s, TimeSeries):
            return np.interp(half, s.times, s.values) if s.interpolation == "linear" else s(half)
        return np.full(half.size, float(s))

    mu = np.column_stack([sample(s) for s in building.signals])
    x = building.system.x0.copy()
    period = int(round(cfg.period / h))
    fixed = {}
    for inj in spec.injections:
        if inj.p is not None and inj.p.kind != "port":
            fixed[inj.name] = inj
    applied, decided, pending = 0.0, 0.0, None
    decisions, margins = [], []
    for i in range(n + 1):
        t = i * h
        if pending is not None and pending[0] == i:
            applied, pending = pending[1], None
        mu[2 * i:, IDX_SHED] = applied
        if i % period == 0:
            vals = {}
            for name, inj in fixed.items():
                p = inj.p.at(t)
                q = p * inj.tan_phi if inj.q is None else (0.0 if inj.q.kind == "port" else inj.q.at(t))
                vals[name] = (-p, -q) if inj.generator else (p, q)
            hv, _, _ = th.hvac_state(x, mu[2 * i])
            vals[cfg.building] = (hv.P / 1e3, hv.Q / 1e3)
            res, _, _ = spec.solve(vals)
            loading = max(res.loading.values())
            want = cfg.shed_fraction if loading > cfg.threshold else 0.0
            if want != decided:
                decisions.append((t, want))
                margins.append(abs(loading - cfg.threshold))
                decided, pending = want, (i + period, want)
        if i == n:
            break
        m0, m1, m2 = mu[2 * i], mu[2 * i + 1], mu[2 * i + 2]
        k1 = th.derivative(x, m0)
        k2 = th.derivative(x + 0.5 * h * k1, m1)
        k3 = th.derivative(x + 0.5 * h * k2, m1)
        k4 = th.derivative(x + h * k3, m2)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return decisions, margins


@pytest.fixture(scope="module")
def runs():
    sc = direct_dr(T_END)
    res = simulate(sc)
    ctl = res.modules["ctl"]
    ref, margins = reference_decisions(res.modules["b71"], sc.networks["grid"], ctl.cfg, T_END)
    return res, ref, margins


def test_shed_requests_exactly_when_reference_loading_exceeds_threshold(runs):
    res, ref, margins = runs
    got = [(d["t"], d["fraction"]) for d in res.modules["ctl"].decisions]
    for k, (a, b) in enumerate(zip(got, ref)):
        if a != b:
            assert margins[k] < TIE_BAND, f"decision {k} differs: {a} vs reference {b}"
            return  # trajectories legitimately diverge after a tie
    assert len(got) == len(ref)


def test_reference_sees_both_episodes(runs):
    _, ref, _ = runs
    times = [t for t, _ in ref]
    assert times[0] == 0.0
    assert any(30000 < t < 33000 for t in times) and any(44000 < t < 47000 for t in times)
