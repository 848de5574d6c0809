"""Delay/loss channel: latency from base delay, queueing and retransmissions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..messages import NetMessage


@dataclass
class ChannelState:
    """One direction of a link.

    The transmitter serialises messages FIFO: ``free_at`` is when the bytes
    queued so far finish transmitting, so the backlog at time t is
    ``(free_at - t) * bandwidth``. Lost transmissions add a fixed
    retransmission timeout each and never drop the message.
    """

    base: float = 0.1
    bandwidth: float = 5000.0  # bytes/s, inf for no serialisation delay
    loss: float = 0.0
    rto: float = 1.0
    seed: Optional[int] = 0
    free_at: float = field(default=-math.inf, init=False)
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not self.base >= 0:
            raise ConfigError(f"base latency must be >= 0, got {self.base!r}")
        if not self.bandwidth > 0:
            raise ConfigError(f"bandwidth must be > 0, got {self.bandwidth!r}")
        if not 0 <= self.loss < 1:
            raise ConfigError(f"loss probability must be in [0, 1), got {self.loss!r}")
        if not self.rto >= 0:
            raise ConfigError(f"retransmission timeout must be >= 0, got {self.rto!r}")
        self.rng = np.random.default_rng(self.seed)

    def backlog(self, t: float) -> float:
        """Bytes still waiting to leave the transmitter at ``t``."""
        if math.isinf(self.bandwidth):
            return 0.0
        return max(0.0, self.free_at - t) * self.bandwidth

    def draw_retransmissions(self) -> int:
        # failures before the first success
        return int(self.rng.geometric(1.0 - self.loss)) - 1

    def delay_for(self, size: float, t: float) -> tuple[float, int]:
        queued = self.backlog(t) + size
        k = self.draw_retransmissions()
        return self.base + queued / self.bandwidth + k * self.rto, k

    def inject(self, msg: NetMessage, t: float) -> NetMessage:
        """Stamp ``msg`` with its immutable delay and occupy the transmitter."""
        queued = self.backlog(t) + msg.nbytes
        delay, k = self.delay_for(msg.nbytes, t)
        if not math.isinf(self.bandwidth):
            self.free_at = t + queued / self.bandwidth
        return msg.scheduled(t, delay, k)


def expected_retransmission_delay(loss: float, rto: float) -> float:
    return rto * loss / (1.0 - loss)
