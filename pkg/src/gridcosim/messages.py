"""Demand-response message types exchanged by control, comms and buildings."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any, Optional

MESSAGE_KINDS = ("Consumption", "DRPotential", "ShedLoadRequest", "ShedReply")

DEFAULT_SIZES = {"ShedLoadRequest": 2000, "ShedReply": 1000, "Consumption": 1000, "DRPotential": 1000}


@dataclass(frozen=True)
class NetMessage:
    """A typed message. Delay fields are filled once by the channel and then frozen."""

    kind: str
    source: str
    destination: str
    payload: tuple = ()
    msg_id: int = 0
    size: Optional[int] = None
    inject_time: Optional[float] = None
    delay: Optional[float] = None
    retransmissions: int = 0

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        if isinstance(self.payload, dict):
            object.__setattr__(self, "payload", tuple(sorted(self.payload.items())))

    @property
    def data(self) -> dict:
        return dict(self.payload)

    def get(self, key: str, default: Any = None) -> Any:
        return self.data.get(key, default)

    @property
    def nbytes(self) -> int:
        return self.size if self.size is not None else DEFAULT_SIZES[self.kind]

    @property
    def deliver_time(self) -> Optional[float]:
        if self.inject_time is None or self.delay is None:
            return None
        return self.inject_time + self.delay

    def scheduled(self, inject_time: float, delay: float, retransmissions: int = 0) -> "NetMessage":
        if self.delay is not None:
            raise ValueError(f"message {self.msg_id} already has a delay; it cannot change")
        return replace(self, inject_time=inject_time, delay=delay, retransmissions=retransmissions)

    def to_record(self) -> dict:
        rec = {"kind": self.kind, "id": self.msg_id, "from": self.source, "to": self.destination}
        rec.update(self.data)
        if self.delay is not None:
            rec["inject_t"] = round(self.inject_time, 9)
            rec["deliver_t"] = round(self.deliver_time, 9)
            rec["k"] = self.retransmissions
        return rec


class MessageFactory:
    """Sequential message ids per sender, so logs are reproducible."""

    def __init__(self, sender: str):
        self.sender = sender
        self._ids = itertools.count(1)

    def make(self, kind: str, destination: str, **payload) -> NetMessage:
        return NetMessage(kind, self.sender, destination, tuple(sorted(payload.items())), next(self._ids))


def shed_request(factory: MessageFactory, destination: str, fraction: float) -> NetMessage:
    return factory.make("ShedLoadRequest", destination, fraction=float(fraction))


def shed_reply(factory: MessageFactory, request: NetMessage, accept: bool) -> NetMessage:
    return factory.make("ShedReply", request.source, accept=bool(accept), request=request.msg_id,
                        fraction=request.get("fraction", 0.0))
