"""Piecewise polynomial segments shared by the solver, kernel and signal sources."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class PolynomialSegment:
    """``sum(c[i] * (t - anchor) ** i)`` valid from ``anchor`` onwards.

    ``anchor`` is in seconds. The order is ``len(coefficients) - 1``.
    """

    coefficients: tuple[float, ...]
    anchor: float = 0.0

    def __init__(self, coefficients: Sequence[float], anchor: float = 0.0):
        coeffs = tuple(float(c) for c in coefficients)
        if not coeffs:
            raise ValueError("a segment needs at least one coefficient")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "anchor", float(anchor))

    @classmethod
    def constant(cls, value: float, anchor: float = 0.0) -> "PolynomialSegment":
        return cls((value,), anchor)

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, t: float) -> float:
        dt = t - self.anchor
        acc = 0.0
        for c in reversed(self.coefficients):
            acc = acc * dt + c
        return acc

    def derivative(self, t: float, n: int = 1) -> float:
        """n-th time derivative at ``t``."""
        dt = t - self.anchor
        total = 0.0
        for i in range(n, len(self.coefficients)):
            fact = 1.0
            for k in range(i - n + 1, i + 1):
                fact *= k
            total += fact * self.coefficients[i] * dt ** (i - n)
        return total

    def shifted(self, new_anchor: float) -> "PolynomialSegment":
        """Same polynomial re-expanded about ``new_anchor``."""
        d = new_anchor - self.anchor
        c = list(self.coefficients)
        m = len(c)
        out = [0.0] * m
        # Taylor re-expansion: out[k] = sum_i C(i, k) c[i] d^(i-k)
        for k in range(m):
            s = 0.0
            binom = 1.0
            for i in range(k, m):
                if i > k:
                    binom = binom * i / (i - k)
                s += binom * c[i] * d ** (i - k)
            out[k] = s
        return PolynomialSegment(out, new_anchor)


def as_segment(value, t: float) -> PolynomialSegment:
    """Coerce a port value (number or segment) to a segment anchored at ``t``."""
    if isinstance(value, PolynomialSegment):
        return value
    return PolynomialSegment.constant(float(value), t)


def value_at(value, t: float) -> float:
    if isinstance(value, PolynomialSegment):
        return value(t)
    return float(value)


def poly_eval(coeffs: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Row-wise Horner evaluation of a coefficient matrix (n x m) at offsets dt."""
    acc = np.zeros(coeffs.shape[0])
    for i in range(coeffs.shape[1] - 1, -1, -1):
        acc = acc * dt + coeffs[:, i]
    return acc
