"""Balanced truncation (square-root method)."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from ..errors import ConfigError, SimulationError
from .rc import StateSpaceModel

LYAPUNOV_TOL = 1e-10


def _lyap(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve ``A W + W A^T + Q = 0`` (Bartels-Stewart) and check the residual."""
    W = linalg.solve_continuous_lyapunov(A, -Q)
    W = 0.5 * (W + W.T)
    res = np.linalg.norm(A @ W + W @ A.T + Q) / max(np.linalg.norm(Q), 1e-300)
    if not np.isfinite(res) or res > LYAPUNOV_TOL:
        raise SimulationError(f"Lyapunov solve failed: relative residual {res:.2e}")
    return W


def _psd_factor(W: np.ndarray) -> np.ndarray:
    """``L`` with ``W = L L^T`` from the eigen-decomposition (clips round-off)."""
    lam, U = np.linalg.eigh(W)
    lam = np.clip(lam, 0.0, None)
    return U * np.sqrt(lam)


def default_input_scale(model: StateSpaceModel) -> np.ndarray:
    """Per-disturbance scale making each channel's DC gain on the output 1."""
    g = np.abs(model.dc_gain()).max(axis=0)
    scale = np.ones_like(g)
    nz = g > 0
    scale[nz] = 1.0 / g[nz]
    return scale


def hankel_singular_values(model: StateSpaceModel, input_scale: Optional[Sequence[float]] = None) -> np.ndarray:
    B = model.B_v * (default_input_scale(model) if input_scale is None else np.asarray(input_scale))
    Lc = _psd_factor(_lyap(model.A, B @ B.T))
    Lo = _psd_factor(_lyap(model.A.T, model.C.T @ model.C))
    return np.linalg.svd(Lo.T @ Lc, compute_uv=False)


def reduce_model(
    model: StateSpaceModel,
    order: int,
    input_scale: Optional[Sequence[float]] = None,
    normalize_output: bool = True,
) -> StateSpaceModel:
    """Keep the ``order`` states with the largest Hankel singular values.

    Disturbance channels are weighted by ``input_scale`` when forming the
    controllability gramian (default: unit DC gain per channel), since they
    mix W, K and W/m². With ``normalize_output`` each reduced state is scaled
    so its output weight is +-1, which gives every state units of K.
    """
    n = model.n_states
    if not 1 <= order < n:
        raise ConfigError(f"reduced order must satisfy 1 <= r < n={n}, got {order}")
    if not model.is_stable():
        raise ConfigError("cannot reduce an unstable model (A has eigenvalues with Re >= 0)")
    scale = default_input_scale(model) if input_scale is None else np.asarray(input_scale, dtype=float)
    A, B, C = model.A, model.B_v, model.C
    Bs = B * scale
    Lc = _psd_factor(_lyap(A, Bs @ Bs.T))
    Lo = _psd_factor(_lyap(A.T, C.T @ C))
    U, s, Vt = np.linalg.svd(Lo.T @ Lc)
    if s[order - 1] <= 0:
        raise SimulationError(f"only {int(np.sum(s > 0))} nonzero Hankel singular values; cannot keep {order}")
    inv_sqrt = 1.0 / np.sqrt(s[:order])
    T = (Lc @ Vt[:order].T) * inv_sqrt
    Ti = (U[:, :order].T @ Lo.T) * inv_sqrt[:, None]
    Ar, Br, Cr = Ti @ A @ T, Ti @ B, C @ T
    if normalize_output:
        w = np.abs(Cr[0])
        w = np.where(w > 1e-12 * w.max(), w, 1.0)
        Ar = (Ar * w[:, None]) / w[None, :]
        Br = Br * w[:, None]
        Cr = Cr / w[None, :]
    D = model.D_v
    return StateSpaceModel(
        Ar, Br, Cr, D_v=None if D is None else D.copy(),
        state_labels=[f"z{i}" for i in range(order)],
        disturbance_labels=list(model.disturbance_labels),
        output_labels=list(model.output_labels),
        hankel_singular_values=s,
        input_scale=scale,
    )
