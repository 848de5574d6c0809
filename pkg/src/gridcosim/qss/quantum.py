"""Quantum selection for QSS components."""

from __future__ import annotations

QUANTUM_MODES = ("max", "min")
_ALIASES = {"standard": "max", "experiment": "min"}


def normalize_mode(mode: str) -> str:
    mode = _ALIASES.get(mode, mode)
    if mode not in QUANTUM_MODES:
        raise ValueError(f"unknown quantum mode {mode!r}; expected one of {QUANTUM_MODES}")
    return mode


def compute_quantum(q0: float, abs_tol: float, rel_tol: float = 0.0, mode: str = "max") -> float:
    """Quantum for a component whose quantized value is ``q0``.

    ``"max"`` mode returns ``max(abs_tol, rel_tol*|q0|)``, the usual QSS rule.
    ``"min"`` mode returns ``min(abs_tol, rel_tol*|q0|)``, so the relative
    term only binds for ``|q0| < abs_tol/rel_tol``. Either way the result is
    floored at ``abs_tol * 1e-6``.
    """
    if not abs_tol > 0:
        raise ValueError(f"abs_tol must be positive, got {abs_tol!r}")
    if rel_tol < 0:
        raise ValueError(f"rel_tol must be non-negative, got {rel_tol!r}")
    mode = normalize_mode(mode)
    rel = rel_tol * abs(q0)
    dq = max(abs_tol, rel) if mode == "max" else min(abs_tol, rel)
    return max(dq, abs_tol * 1e-6)
