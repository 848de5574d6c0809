"""Communications module: VTN/VEN message flows over two delay channels."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Optional

from ..errors import ConfigError, SimulationError
from ..kernel.module import Module, Outputs
from ..kernel.ports import ModuleDescriptor, inp, out
from ..kernel.time import SimTime, ns_ceil
from ..messages import NetMessage
from .channel import ChannelState

ROLES = ("VTN", "VEN")


@dataclass(frozen=True)
class DrNodeRole:
    name: str
    role: str
    polling_period: Optional[float] = None  # VEN only; None means push delivery

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"node {self.name!r}: role must be VTN or VEN")
        if self.polling_period is not None:
            if self.role != "VEN":
                raise ConfigError(f"node {self.name!r}: only a VEN polls")
            if not self.polling_period > 0:
                raise ConfigError(f"node {self.name!r}: polling period must be > 0, got {self.polling_period!r}")


class CommsModule(Module):
    """Delay channel between one VTN (controller side) and one VEN (building side).

    Ports: ``vtn_in`` -> ``to_ven`` downstream, ``ven_in`` -> ``to_vtn``
    upstream. Requests from the VTN wait at the server until the VEN polls
    (only the most recent is fetched) and then cross the downlink. Messages
    from the VEN are pushed on the uplink at once.
    """

    def __init__(self, module_id: str, downlink: ChannelState, uplink: ChannelState,
                 vtn: str = "vtn", ven: str = "ven", polling_period: Optional[float] = None,
                 log_deliveries: bool = True):
        super().__init__(module_id)
        self.down = downlink
        self.up = uplink
        self.vtn = DrNodeRole(vtn, "VTN")
        self.ven = DrNodeRole(ven, "VEN", polling_period)
        self.log_deliveries = log_deliveries
        self._queue: list = []
        self._seq = itertools.count()
        self._pending: Optional[NetMessage] = None
        self._poll_at = math.inf
        self._delivered_to_ven: set[int] = set()
        self.delivery_log: list[dict] = []
        self.n_superseded = 0

    def describe(self) -> ModuleDescriptor:
        return ModuleDescriptor(self.module_id, "delay-channel", [
            inp("vtn_in", "message"), inp("ven_in", "message"),
            out("to_ven", "message"), out("to_vtn", "message"),
        ])

    @property
    def polling_period(self) -> Optional[float]:
        return self.ven.polling_period

    def poll_time(self, t: float) -> float:
        """First polling instant at or after ``t``."""
        p = self.polling_period
        k = math.ceil(t / p - 1e-9)
        return k * p

    def _send(self, channel: ChannelState, port: str, msg: NetMessage, t: float) -> None:
        stamped = channel.inject(msg, t)
        heapq.heappush(self._queue, (ns_ceil(stamped.deliver_time), next(self._seq), port, stamped))
        if self.log_deliveries:
            self.log("comm_inject", stamped.to_record(), port)

    def _fetch(self, t: float) -> None:
        msg, self._pending = self._pending, None
        self._poll_at = math.inf
        self._send(self.down, "to_ven", msg, t)

    def initialize(self, now, inputs) -> Outputs:
        return {}

    def on_inputs(self, changed, now: SimTime) -> Outputs:
        t = now.seconds
        for msg in changed.get("vtn_in", None) or []:
            if self.polling_period is None:
                self._send(self.down, "to_ven", msg, t)
            else:
                if self._pending is not None:
                    self.n_superseded += 1
                    if self.log_deliveries:
                        self.log("comm_superseded", self._pending.to_record())
                self._pending = msg
                self._poll_at = self.poll_time(t)
                if ns_ceil(self._poll_at) <= now.ns:
                    # posted on a polling instant: that poll sees it
                    self._fetch(t)
        for msg in changed.get("ven_in", None) or []:
            if msg.kind == "ShedReply" and msg.get("request") not in self._delivered_to_ven:
                raise SimulationError(f"reply to request {msg.get('request')} which was never delivered")
            self._send(self.up, "to_vtn", msg, t)
        return {}

    def next_event_time(self) -> float:
        nxt = self._queue[0][0] / 1e9 if self._queue else math.inf
        if self._pending is not None:
            nxt = min(nxt, self._poll_at)
        return nxt

    def on_internal(self, now: SimTime) -> Outputs:
        t = now.seconds
        if self._pending is not None and ns_ceil(self._poll_at) <= now.ns:
            self._fetch(t)
        outs: dict[str, list] = {}
        while self._queue and self._queue[0][0] <= now.ns:
            _, _, port, msg = heapq.heappop(self._queue)
            outs.setdefault(port, []).append(msg)
            if port == "to_ven":
                self._delivered_to_ven.add(msg.msg_id)
            rec = msg.to_record()
            self.delivery_log.append(rec)
            if self.log_deliveries:
                self.log("comm_deliver", rec, port)
        return outs
