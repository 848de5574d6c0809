import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcosim.comms import ChannelState, CommsModule, DrNodeRole, expected_retransmission_delay
from gridcosim.errors import ConfigError, SimulationError
from gridcosim.kernel import Kernel, Module, ModuleDescriptor
from gridcosim.kernel.ports import inp, out
from gridcosim.kernel.time import ns_ceil
from gridcosim.messages import MessageFactory, NetMessage, shed_reply, shed_request


class Script(Module):
    """Emits given messages at given times on port ``out``; collects ``inbox``."""

    def __init__(self, mid, schedule=()):
        super().__init__(mid)
        self.schedule = sorted(schedule, key=lambda s: s[0])
        self.factory = MessageFactory(mid)
        self.received = []

    def describe(self):
        return ModuleDescriptor(self.module_id, "co-simulation",
                                [inp("inbox", "message"), out("out", "message")], feedthrough={})

    def next_event_time(self):
        return self.schedule[0][0] if self.schedule else math.inf

    def on_internal(self, now):
        msgs = []
        while self.schedule and ns_ceil(self.schedule[0][0]) <= now.ns:
            _, kind, payload = self.schedule.pop(0)
            msgs.append(self.factory.make(kind, "peer", **payload))
        return {"out": msgs}

    def on_inputs(self, changed, now):
        for m in changed.get("inbox") or []:
            self.received.append((now.seconds, m))
        return {}


class Replier(Module):
    """VEN stand-in: answers every request at once."""

    def __init__(self, mid, accept=True):
        super().__init__(mid)
        self.factory = MessageFactory(mid)
        self.accept = accept
        self.received = []

    def describe(self):
        return ModuleDescriptor(self.module_id, "co-simulation",
                                [inp("dr", "message"), out("reply", "message")], feedthrough={"dr": {"reply"}})

    def on_inputs(self, changed, now):
        msgs = changed.get("dr") or []
        self.received.extend((now.seconds, m) for m in msgs)
        return {"reply": [shed_reply(self.factory, m, self.accept) for m in msgs]}


def wire(schedule, polling=None, accept=True, **chan):
    k = Kernel()
    vtn = Script("ctrl", schedule)
    ven = Replier("bld", accept)
    down = ChannelState(**chan)
    up = ChannelState(**{**chan, "seed": (chan.get("seed", 0) or 0) + 1})
    comms = CommsModule("net", down, up, polling_period=polling)
    for m in (vtn, comms, ven):
        k.add(m)
    k.connect("ctrl.out", "net.vtn_in")
    k.connect("net.to_ven", "bld.dr")
    k.connect("bld.reply", "net.ven_in")
    k.connect("net.to_vtn", "ctrl.inbox")
    return k, vtn, ven, comms


def msg(kind="ShedLoadRequest", i=1, size=None):
    return NetMessage(kind, "a", "b", (("fraction", 0.2),), i, size)


# -- channel arithmetic -------------------------------------------------------

def test_delay_example():
    ch = ChannelState(base=0.1, bandwidth=5000.0)
    stamped = ch.inject(msg(size=2000), 10.0)
    assert stamped.delay == pytest.approx(0.5)
    assert stamped.deliver_time == pytest.approx(10.5)
    assert stamped.retransmissions == 0


def test_back_to_back_queueing():
    ch = ChannelState(base=0.1, bandwidth=5000.0)
    a = ch.inject(msg(i=1, size=1000), 0.0)
    b = ch.inject(msg(i=2, size=1000), 0.0)
    assert b.delay == pytest.approx(a.delay + 1000 / 5000.0)
    assert ch.backlog(0.0) == pytest.approx(2000.0)
    assert ch.backlog(1.0) == 0.0


def test_delay_is_immutable():
    stamped = ChannelState().inject(msg(), 0.0)
    with pytest.raises(ValueError, match="cannot change"):
        stamped.scheduled(1.0, 0.3)


def test_retransmission_mean_monte_carlo():
    p, rto = 0.5, 1.0
    ch = ChannelState(base=0.0, bandwidth=math.inf, loss=p, rto=rto, seed=11)
    extra = np.array([ch.inject(msg(i=i), float(i)).delay for i in range(10_000)])
    assert abs(extra.mean() - expected_retransmission_delay(p, rto)) < 0.1 * expected_retransmission_delay(p, rto)


def test_no_loss_no_retransmissions():
    ch = ChannelState(loss=0.0, seed=3)
    assert all(ch.inject(msg(i=i), i * 10.0).retransmissions == 0 for i in range(100))


@pytest.mark.parametrize("kw", [dict(loss=1.0), dict(loss=-0.1), dict(bandwidth=0.0), dict(base=-1.0)])
def test_channel_validation(kw):
    with pytest.raises(ConfigError):
        ChannelState(**kw)


def test_polling_zero_is_config_error():
    with pytest.raises(ConfigError):
        DrNodeRole("ven", "VEN", 0.0)
    with pytest.raises(ConfigError):
        CommsModule("c", ChannelState(), ChannelState(), polling_period=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.integers(100, 5000)), min_size=1, max_size=40),
       st.floats(0, 0.9), st.integers(0, 1000))
def test_latency_floor_and_fifo(sends, loss, seed):
    ch = ChannelState(base=0.2, bandwidth=2000.0, loss=loss, rto=0.5, seed=seed)
    finish_prev = -math.inf
    for i, (t, size) in enumerate(sorted(sends)):
        backlog = ch.backlog(t)
        m = ch.inject(msg(i=i, size=size), t)
        assert m.delay >= 0.2
        # serialisation never overlaps the previous message
        assert ch.free_at >= finish_prev
        assert ch.free_at == pytest.approx(t + (backlog + size) / 2000.0)
        finish_prev = ch.free_at


# -- module in the kernel -----------------------------------------------------------

def test_polling_delivery_time():
    k, vtn, ven, comms = wire([(10.0, "ShedLoadRequest", {"fraction": 0.2})], polling=30.0,
                              base=0.1, bandwidth=5000.0)
    k.run(100.0)
    assert [t for t, _ in ven.received] == [pytest.approx(30.5)]
    # reply: 1 kB at 5 kB/s plus base
    assert [t for t, _ in vtn.received] == [pytest.approx(30.8)]
    assert vtn.received[0][1].get("accept") is True


def test_request_on_poll_instant_is_fetched_by_that_poll():
    k, vtn, ven, comms = wire([(60.0, "ShedLoadRequest", {"fraction": 0.2})], polling=30.0)
    k.run(100.0)
    assert [t for t, _ in ven.received] == [pytest.approx(60.5)]


def test_only_latest_pending_request_is_fetched():
    sched = [(5.0, "ShedLoadRequest", {"fraction": 0.2}), (10.0, "ShedLoadRequest", {"fraction": 0.0})]
    k, vtn, ven, comms = wire(sched, polling=30.0)
    tr = k.run(100.0)
    assert [m.get("fraction") for _, m in ven.received] == [0.0]
    assert comms.n_superseded == 1
    assert len(tr.events_of("comm_superseded")) == 1


def test_no_pending_request_no_event():
    k, vtn, ven, comms = wire([], polling=30.0)
    tr = k.run(300.0)
    assert not tr.events_of(source="net")
    assert ven.received == []


def test_decline_reply_reaches_controller():
    k, vtn, ven, comms = wire([(1.0, "ShedLoadRequest", {"fraction": 0.2})], accept=False)
    k.run(10.0)
    assert vtn.received[0][1].get("accept") is False


def test_reply_without_request_is_error():
    comms = CommsModule("c", ChannelState(), ChannelState())
    k = Kernel()
    bogus = Script("x", [(1.0, "ShedReply", {"accept": True, "request": 99})])
    k.add(bogus)
    k.add(comms)
    k.connect("x.out", "c.ven_in")
    with pytest.raises(SimulationError, match="never delivered"):
        k.run(5.0)


def test_reply_under_backlog_is_slower():
    # flood the uplink via many reports, then a reply shares the queue
    sched = [(1.0, "ShedLoadRequest", {"fraction": 0.2})]
    k, vtn, ven, comms = wire(sched, base=0.1, bandwidth=5000.0)
    k.run(10.0)
    quiet = vtn.received[0][0] - ven.received[0][0]
    comms2 = CommsModule("c", ChannelState(base=0.1, bandwidth=5000.0), ChannelState(base=0.1, bandwidth=5000.0))
    comms2.up.inject(msg("Consumption", 500, size=10_000), 1.5)  # 2 s of backlog on the uplink
    k2 = Kernel()
    vtn2, ven2 = Script("ctrl", sched), Replier("bld")
    for m in (vtn2, comms2, ven2):
        k2.add(m)
    k2.connect("ctrl.out", "c.vtn_in")
    k2.connect("c.to_ven", "bld.dr")
    k2.connect("bld.reply", "c.ven_in")
    k2.connect("c.to_vtn", "ctrl.inbox")
    k2.run(10.0)
    busy = vtn2.received[0][0] - ven2.received[0][0]
    assert busy > quiet + 1.0
    assert len(vtn2.received) == 1


def test_exactly_once_and_determinism():
    rng = np.random.default_rng(5)
    sched = [(float(t), "ShedLoadRequest", {"fraction": 0.1}) for t in np.sort(rng.uniform(0, 5000, 10_000))]

    def run():
        k, vtn, ven, comms = wire(list(sched), base=0.05, bandwidth=1e6, loss=0.1, rto=0.3, seed=42)
        tr = k.run(6000.0)
        return tr, vtn, ven, comms

    tr, vtn, ven, comms = run()
    ids = [m.msg_id for _, m in ven.received]
    assert sorted(ids) == list(range(1, 10_001))
    assert len(vtn.received) == 10_000
    for rec in comms.delivery_log:
        assert rec["deliver_t"] - rec["inject_t"] >= 0.05 - 1e-9
    tr2, *_ = run()
    assert tr.event_log_text() == tr2.event_log_text()
