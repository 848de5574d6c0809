"""Exact two-bus voltage-drop relation and its inverse for Q.

U1 is the sending voltage, U2 the receiving voltage, and P/Q the power
drawn at the receiving end. In physical units (kV, MW, Mvar, ohm):

    U1^2 = (U2 + (R P + X Q)/U2)^2 + ((X P - R Q)/U2)^2

Voltages are passed in per unit on ``base_kv``. Powers are kW/kvar.
"""

from __future__ import annotations

import math

from ..errors import SimulationError


class VoltageCollapseError(SimulationError):
    """The forward relation has no real solution for U2."""


class UnreachableTargetError(SimulationError):
    """No real Q reaches the requested receiving voltage."""


def _check(u1: float, base_kv: float) -> None:
    if not u1 > 0:
        raise ValueError(f"sending voltage must be positive, got {u1!r}")
    if not base_kv > 0:
        raise ValueError(f"base_kv must be positive, got {base_kv!r}")


def volt_drop_equation(u1: float, p: float, q: float, r: float, x: float, *, base_kv: float) -> float:
    """Receiving-end voltage (pu) for power P+jQ drawn through R+jX."""
    _check(u1, base_kv)
    v1 = u1 * base_kv
    pm, qm = p * 1e-3, q * 1e-3
    a = r * pm + x * qm
    b = x * pm - r * qm
    # w = U2^2 solves w^2 + (2a - U1^2) w + a^2 + b^2 = 0; take the high-voltage root
    half = 0.5 * v1 * v1 - a
    disc = half * half - (a * a + b * b)
    if disc < 0:
        raise VoltageCollapseError(
            f"no steady-state solution: {p:g} kW / {q:g} kvar exceeds the transfer limit of the path"
        )
    w = half + math.sqrt(disc)
    if w <= 0:
        raise VoltageCollapseError("receiving voltage would be non-positive")
    return math.sqrt(w) / base_kv


def solve_reactive_power(u1: float, u2: float, p: float, r: float, x: float, *, base_kv: float) -> float:
    """Receiving-end Q (kvar) that yields voltage ``u2`` (pu) at active load ``p``.

    Of the two real roots, the one with the smaller magnitude is returned.
    """
    _check(u1, base_kv)
    if not u2 > 0:
        raise ValueError(f"target voltage must be positive, got {u2!r}")
    v1, v2 = u1 * base_kv, u2 * base_kv
    w = v2 * v2
    pm = p * 1e-3
    z2 = r * r + x * x
    c = (w + r * pm) ** 2 + (x * pm) ** 2 - v1 * v1 * w
    if z2 == 0.0:
        if abs(v1 - v2) <= 1e-12 * v1:
            return 0.0
        raise UnreachableTargetError("zero-impedance path: receiving voltage equals sending voltage")
    bq = 2.0 * x * w
    disc = bq * bq - 4.0 * z2 * c
    if disc < 0:
        raise UnreachableTargetError(
            f"target {u2:.6f} pu is not reachable from {u1:.6f} pu at P={p:g} kW"
        )
    sq = math.sqrt(disc)
    # stable pair of roots
    k = -0.5 * (bq + math.copysign(sq, bq)) if bq != 0 else 0.5 * sq
    roots = [k / z2] + ([c / k] if k != 0 else [-k / z2])
    q = min(roots, key=abs)
    return q * 1e3
