import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcosim.errors import ConfigError, SimulationError
from gridcosim.kernel import (
    AlgebraicLoopError,
    Function,
    Kernel,
    Module,
    ModuleDescriptor,
    QssModule,
    SignalSource,
    SimTime,
    inp,
    ns_ceil,
    out,
)
from gridcosim.qss import OdeSystem
from gridcosim.timeseries import TimeSeries


class Ticker(Module):
    """Discrete-time: output = 2 * sampled input."""

    def __init__(self, mid, period):
        super().__init__(mid)
        self.period = period
        self.samples = []

    def describe(self):
        return ModuleDescriptor(self.module_id, "discrete-time", [inp("u", default=0.0), out("y")],
                                period=self.period)

    def initialize(self, now, inputs):
        return {"y": 0.0}

    def on_tick(self, now, inputs):
        self.samples.append((now, inputs["u"]))
        return {"y": 2.0 * float(inputs["u"])}


class Delay(Module):
    """Delay channel for real values with a fixed latency."""

    def __init__(self, mid, delay):
        super().__init__(mid)
        self.delay = delay
        self.queue = []

    def describe(self):
        return ModuleDescriptor(self.module_id, "delay-channel", [inp("u", default=0.0), out("y")])

    def initialize(self, now, inputs):
        return {"y": inputs["u"]}

    def on_inputs(self, changed, now):
        self.queue.append((now.seconds + self.delay, changed["u"]))
        return {}

    def next_event_time(self):
        return self.queue[0][0] if self.queue else math.inf

    def on_internal(self, now):
        outs = {}
        while self.queue and ns_ceil(self.queue[0][0]) <= now.ns:
            outs["y"] = self.queue.pop(0)[1]
        return outs


class Chatter(Module):
    """Schedules an event at the current instant forever."""

    def describe(self):
        return ModuleDescriptor(self.module_id, "co-simulation", [out("y")], feedthrough={})

    def next_event_time(self):
        return 1.0

    def on_internal(self, now):
        return {"y": float(now.microstep)}


def gain(mid, k=2.0, inputs=("u",), outputs=("y",)):
    return Function(mid, lambda a, t: {o: k * sum(a.values()) for o in outputs}, inputs, outputs,
                    defaults={i: 0.0 for i in inputs})


def step_source(mid, times, values, interpolation="hold"):
    return SignalSource(mid, TimeSeries(times, values, interpolation), logged=True)


# -- time ------------------------------------------------------------------------

def test_simtime_order_and_conversion():
    assert SimTime(5, 0) < SimTime(5, 1) < SimTime(6, 0)
    assert SimTime.from_seconds(1.5).ns == 1_500_000_000
    assert ns_ceil(1e-3) == 1_000_000
    assert ns_ceil(1.0000000001) == 1_000_000_001
    with pytest.raises(ValueError):
        SimTime(-1)


# -- registration ------------------------------------------------------------------

def test_register_power_like_module_with_full_feedthrough():
    k = Kernel()
    mid = k.add(gain("power", inputs=("p1", "p2"), outputs=("v", "loading")))
    assert mid == "power"
    desc = ModuleDescriptor("b", "model-exchange", [inp("shed", default=0.0), out("P")], feedthrough={},
                            n_states=3)
    assert k.register_module(desc, Module("b")) == "b"


def test_register_errors():
    k = Kernel()
    k.add(gain("g"))
    with pytest.raises(ConfigError, match="duplicate"):
        k.add(gain("g"))
    with pytest.raises(ConfigError, match="unknown output"):
        ModuleDescriptor("x", "co-simulation", [inp("u"), out("y")], feedthrough={"u": {"z"}})
    with pytest.raises(ConfigError, match="unknown input"):
        ModuleDescriptor("x", "co-simulation", [inp("u"), out("y")], feedthrough={"w": {"y"}})
    with pytest.raises(ConfigError, match="declare feedthrough"):
        ModuleDescriptor("x", "co-simulation", [out("y")])
    with pytest.raises(ConfigError, match="period"):
        ModuleDescriptor("x", "discrete-time", [out("y")], period=0.0)
    with pytest.raises(ConfigError, match="state"):
        ModuleDescriptor("x", "model-exchange", [out("y")])
    with pytest.raises(ConfigError, match="feedthrough"):
        ModuleDescriptor("x", "delay-channel", [inp("u"), out("y")], feedthrough={"u": {"y"}})


# -- wiring ---------------------------------------------------------------------------

def test_connect_kind_mismatch_and_double_driver():
    k = Kernel()
    k.add(gain("a"))
    k.add(gain("b"))
    desc = ModuleDescriptor("m", "co-simulation", [inp("msg", kind="message"), out("y")], feedthrough={})
    k.register_module(desc, Module("m"))
    with pytest.raises(ConfigError, match="cannot connect"):
        k.connect("a.y", "m.msg")
    k.connect("a.y", "b.u")
    with pytest.raises(ConfigError, match="already driven"):
        k.connect("b.y", "b.u")
    with pytest.raises(ConfigError):
        k.connect("a.u", "b.u")


def test_two_cosim_modules_both_ways_is_a_loop():
    k = Kernel()
    k.add(gain("a"))
    k.add(gain("b"))
    k.connect("a.y", "b.u")
    with pytest.raises(AlgebraicLoopError):
        k.connect("b.y", "a.u")
    # the rejected wire is not kept
    k.run(1.0)


def test_cycle_through_state_module_accepted():
    k = Kernel()
    sys_ = OdeSystem(lambda q, mu, t: -q + mu[0], [1.0], inputs=[0.0])
    k.add(QssModule("building", sys_, input_ports=["shed"], outputs={"P": 0}))
    k.add(gain("power", k=1.0, inputs=("load",), outputs=("loading",)))
    k.add(Ticker("control", 60.0))
    k.add(Delay("comms", 0.5))
    k.connect("building.P", "power.load")
    k.connect("power.loading", "control.u")
    k.connect("control.y", "comms.u")
    k.connect("comms.y", "building.shed")
    tr = k.run(300.0)
    assert tr.t_end == 300.0


# -- run -----------------------------------------------------------------------------------

def test_run_exponential_module():
    k = Kernel()
    k.add(QssModule("exp", OdeSystem(lambda q, mu, t: -q, [1.0], 1e-3, 1e-3), "QSS2", "min",
                    outputs={"x": 0}))
    k.record("exp.x")
    tr = k.run(3.0)
    t, v = tr.signal("exp.x")
    assert t[-1] == 3.0
    assert abs(v[-1] - math.exp(-3)) < 5e-4


def test_run_no_modules():
    tr = Kernel().run(10.0)
    assert tr.events == [] and tr.signals == {}


def test_run_rejects_unwired_input_without_default():
    k = Kernel()
    desc = ModuleDescriptor("m", "co-simulation", [inp("u"), out("y")], feedthrough={"u": {"y"}})
    k.register_module(desc, Module("m"))
    with pytest.raises(ConfigError, match="neither wired"):
        k.run(1.0)


def test_feedthrough_chain_settles_in_one_microstep():
    k = Kernel()
    k.add(step_source("src", [0.0, 2.0], [1.0, 5.0]))
    k.add(gain("g1"))
    k.add(gain("g2"))
    k.add(gain("g3"))
    # register out of order on purpose: g3 <- g2 <- g1 <- src
    k.connect("g2.y", "g3.u")
    k.connect("g1.y", "g2.u")
    k.connect("src.y", "g1.u")
    k.record("g3.y")
    tr = k.run(5.0)
    at2 = [e for e in tr.events if e.time.ns == 2_000_000_000]
    assert {e.time.microstep for e in at2} == {0}
    # each block evaluated once per change
    assert [e.source for e in at2] == ["src.y", "g1.y", "g2.y", "g3.y"]
    assert k.module("g3").n_evaluations == 2
    assert tr.final_value("g3.y") == 40.0


@pytest.mark.parametrize("extra", [0, 1])
def test_undeclared_feedthrough_is_an_error(extra):
    class Liar(Module):
        def describe(self):
            return ModuleDescriptor(self.module_id, "co-simulation", [inp("u", default=0.0), out("y")],
                                    feedthrough={})

        def on_inputs(self, changed, now):
            return {"y": 1.0}

    k = Kernel()
    k.add(step_source("src", [0.0, 1.0], [0.0, 1.0]))
    k.add(Liar("liar"))
    k.connect("src.y", "liar.u")
    with pytest.raises(SimulationError, match="feedthrough"):
        k.run(2.0 + extra)


def test_zero_delay_delivers_next_microstep():
    k = Kernel()
    k.add(step_source("src", [0.0, 1.0], [0.0, 3.0]))
    k.add(Delay("ch", 0.0))
    k.add(gain("g"))
    k.connect("src.y", "ch.u")
    k.connect("ch.y", "g.u")
    tr = k.run(2.0)
    recs = {e.source: e.time for e in tr.events if e.time.ns == 1_000_000_000}
    assert recs["src.y"] == SimTime(1_000_000_000, 0)
    assert recs["ch.y"] == SimTime(1_000_000_000, 1)
    assert recs["g.y"] == SimTime(1_000_000_000, 1)


def test_delay_channel_shifts_by_latency():
    k = Kernel()
    k.add(step_source("src", [0.0, 1.0], [0.0, 3.0]))
    k.add(Delay("ch", 0.25))
    k.connect("src.y", "ch.u")
    k.record("ch.y")
    tr = k.run(2.0)
    t, v = tr.signal("ch.y")
    assert v[np.searchsorted(t, 1.25)] == 3.0
    assert v[np.searchsorted(t, 1.2) - 1] == 0.0


def test_discrete_tick_one_period_delay():
    k = Kernel()
    k.add(step_source("src", [0.0, 600.0], [0.0, 1.0]))
    k.add(Ticker("ctl", 60.0))
    k.connect("src.y", "ctl.u")
    k.record("ctl.y")
    tr = k.run(900.0)
    ys = [(e.time, e.value) for e in tr.events if e.source == "ctl.y"]
    first_two = next(tm for tm, v in ys if v == 2.0)
    # the change at 600 s is sampled at the end of that instant and seen at 660 s
    assert first_two == SimTime(660 * 10**9, 0)
    # one-period causality: no output shares the instant of the sample it came from
    ctl = k.module("ctl")
    assert all(s[0].ns % (60 * 10**9) == 0 for s in ctl.samples)
    assert ctl.samples[10][1] == 1.0 and ctl.samples[9][1] == 0.0


def test_microstep_guard():
    k = Kernel(max_microsteps=50)
    k.add(Chatter("c"))
    with pytest.raises(SimulationError, match="microsteps"):
        k.run(2.0)


def test_module_errors_are_attributed():
    def boom(a, t):
        if t > 0.5:
            raise ZeroDivisionError("bad")
        return {"y": 0.0}

    k = Kernel()
    k.add(step_source("src", [0.0, 1.0], [0.0, 1.0]))
    k.add(Function("fn", boom, ["u"], ["y"]))
    k.connect("src.y", "fn.u")
    with pytest.raises(SimulationError, match=r"\[fn\]"):
        k.run(2.0)


# -- sampling --------------------------------------------------------------------------------

def _sampled_run(series, period, t_end):
    k = Kernel()
    k.add(SignalSource("load", series))
    k.add(gain("power", k=1.0))
    k.connect("load.y", "power.u")
    k.sample_and_forward("load.y", period)
    tr = k.run(t_end)
    return k, tr


def test_sample_and_forward_rate():
    times = np.arange(0, 86400 + 1, 60.0)
    series = TimeSeries(times, np.sin(times / 5000.0), "linear")
    k, tr = _sampled_run(series, 900.0, 86400.0)
    steps = [e.time.seconds for e in tr.events if e.source == "power.y"]
    assert len(steps) == 1 + 86400 // 900
    assert np.all(np.diff(steps) >= 900.0 - 1e-9)


def test_sample_period_equal_to_run_length():
    series = TimeSeries([0.0, 100.0], [0.0, 1.0], "linear")
    _, tr = _sampled_run(series, 100.0, 100.0)
    assert len(tr.events_of("forward")) == 2


def test_sample_constant_signal_forwards_once():
    _, tr = _sampled_run(4.0, 10.0, 100.0)
    assert len(tr.events_of("forward")) == 1
    assert len(tr.events_of("output", "power.y")) == 1


def test_sample_period_must_be_positive():
    k = Kernel()
    k.add(SignalSource("s", 1.0))
    with pytest.raises(ConfigError):
        k.sample_and_forward("s.y", 0.0)


# -- outputs ---------------------------------------------------------------------------------

def test_event_log_and_trace_files(tmp_path):
    k = Kernel()
    k.add(step_source("src", [0.0, 1.5], [1.0, 2.0]))
    k.add(gain("g"))
    k.connect("src.y", "g.u")
    k.record("g.y")
    tr = k.run(3.0)
    tr.write_event_log(tmp_path / "events.jsonl")
    lines = (tmp_path / "events.jsonl").read_text(encoding="utf-8").splitlines()
    recs = [json.loads(line) for line in lines]
    assert set(recs[0]) == {"t", "microstep", "source", "event", "value"}
    assert '"t":1.500000000' in lines[-1]
    paths = tr.write_traces(tmp_path / "traces")
    text = paths[0].read_text()
    assert text.splitlines()[0] == "time_s,value"
    assert text.splitlines()[1].split(",")[0] == "0.000000000"
    back = TimeSeries.from_csv(paths[0])
    assert back(3.0) == 4.0


def _random_network(seed):
    rng = np.random.default_rng(seed)
    k = Kernel()
    n_src = int(rng.integers(1, 4))
    for i in range(n_src):
        times = np.sort(rng.choice(np.arange(1, 100), size=5, replace=False)).astype(float)
        times = np.concatenate([[0.0], times])
        k.add(step_source(f"s{i}", times, rng.normal(size=times.size)))
    k.add(Delay("d", float(rng.choice([0.0, 0.5, 3.0]))))
    k.add(Ticker("t", float(rng.choice([5.0, 7.0]))))
    k.add(gain("g", inputs=("a", "b")))
    k.connect("s0.y", "g.a")
    k.connect(f"s{n_src - 1}.y" if n_src > 1 else "t.y", "g.b")
    k.connect("g.y", "d.u")
    k.connect("d.y", "t.u")
    sys_ = OdeSystem(lambda q, mu, t: -q + mu[0], [0.0], 1e-2, 1e-2, inputs=[0.0])
    k.add(QssModule("x", sys_, input_ports=["u"], outputs={"x": 0}))
    k.connect("t.y", "x.u")
    return k


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_event_monotonicity_and_determinism(seed):
    a = _random_network(seed).run(120.0)
    times = [e.time for e in a.events]
    assert all(x <= y for x, y in zip(times, times[1:]))
    b = _random_network(seed).run(120.0)
    assert a.event_log_text() == b.event_log_text()
