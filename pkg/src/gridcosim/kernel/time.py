"""Superdense simulation time on an integer-nanosecond grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NS_PER_S = 1_000_000_000
# float noise allowance (ns per second of magnitude) when mapping a real
# time onto the grid; covers the round trip ns -> seconds -> ns
_SLACK = 1e-6


def ns_ceil(seconds: float) -> int:
    """Earliest grid instant not before ``seconds`` (inf maps to a huge int)."""
    if not math.isfinite(seconds):
        return NEVER
    return int(math.ceil(seconds * NS_PER_S - _SLACK * (1.0 + abs(seconds))))


def ns_ceil_array(seconds: np.ndarray) -> np.ndarray:
    """Vectorised :func:`ns_ceil`; non-finite entries become ``NEVER``."""
    out = np.full(seconds.shape, float(NEVER))
    finite = np.isfinite(seconds)
    s = seconds[finite]
    out[finite] = np.ceil(s * NS_PER_S - _SLACK * (1.0 + np.abs(s)))
    return out


def ns_round(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


NEVER = 2**62


@dataclass(frozen=True, order=True)
class SimTime:
    """Instant ``ns`` nanoseconds after the origin, ``microstep`` within it."""

    ns: int
    microstep: int = 0

    def __post_init__(self):
        if self.ns < 0 or self.microstep < 0:
            raise ValueError("simulation time cannot be negative")

    @classmethod
    def from_seconds(cls, seconds: float, microstep: int = 0) -> "SimTime":
        return cls(ns_round(seconds), microstep)

    @property
    def seconds(self) -> float:
        return self.ns / NS_PER_S

    def next_microstep(self) -> "SimTime":
        return SimTime(self.ns, self.microstep + 1)

    def __str__(self) -> str:
        return f"{self.ns // NS_PER_S}.{self.ns % NS_PER_S:09d}s#{self.microstep}"
