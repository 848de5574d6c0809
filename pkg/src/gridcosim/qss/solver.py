"""Quantized state system integration (QSS1, QSS2, LIQSS1).

Each component ``j`` carries a state model (polynomial of order M) and a
quantized model (order M-1). The quantized model is renewed whenever the two
drift apart by the component's quantum; that renewal is broadcast to the
components whose derivative reads ``x_j``, which re-form their state models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ..errors import SimulationError
from ..polynomial import PolynomialSegment, as_segment
from .quantum import compute_quantum, normalize_mode

METHODS = ("QSS1", "QSS2", "LIQSS1")

_EMPTY = np.zeros(0)

Derivative = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class SolverError(SimulationError):
    """Raised when integration cannot proceed (bad configuration, divergence)."""


@dataclass
class OdeSystem:
    """``dx/dt = f(q, mu, t)`` with per-state tolerances.

    ``inputs`` holds one entry per input: a number, a :class:`PolynomialSegment`,
    or a signal exposing ``segment_at(t)`` and ``next_change(t)`` (e.g. a
    :class:`~gridcosim.timeseries.TimeSeries`).

    ``dependencies[j]`` lists the components whose derivative reads ``x_j``;
    ``input_dependencies[k]`` those reading input ``k``. Both default to dense.
    """

    derivative: Derivative
    x0: Sequence[float]
    abs_tol: float | Sequence[float] = 1e-3
    rel_tol: float | Sequence[float] = 1e-3
    inputs: Sequence = ()
    dependencies: Optional[Sequence[Sequence[int]]] = None
    input_dependencies: Optional[Sequence[Sequence[int]]] = None
    labels: Optional[Sequence[str]] = None

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float)).copy()
        n = self.x0.size
        if n < 1:
            raise ValueError("an ODE system needs at least one state")
        self.abs_tol = np.broadcast_to(np.asarray(self.abs_tol, dtype=float), (n,)).copy()
        self.rel_tol = np.broadcast_to(np.asarray(self.rel_tol, dtype=float), (n,)).copy()
        if np.any(self.abs_tol <= 0):
            raise ValueError("absolute tolerances must be positive (zero quantum)")
        if np.any(self.rel_tol < 0):
            raise ValueError("relative tolerances must be non-negative")
        self.inputs = list(self.inputs)
        if self.dependencies is not None and len(self.dependencies) != n:
            raise ValueError("dependencies must have one entry per state")
        if self.input_dependencies is not None and len(self.input_dependencies) != len(self.inputs):
            raise ValueError("input_dependencies must have one entry per input")

    @property
    def dimension(self) -> int:
        return self.x0.size


def _roots_quadratic(a: float, b: float, c: float) -> list[float]:
    """Real roots of a*t^2 + b*t + c, computed without cancellation."""
    if a == 0.0:
        if b == 0.0:
            return []
        return [-c / b]
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return []
    sq = math.sqrt(disc)
    qq = -0.5 * (b + math.copysign(sq, b)) if b != 0.0 else -0.5 * sq
    roots = []
    if qq != 0.0:
        roots.append(qq / a)
        roots.append(c / qq)
    else:
        roots.append(0.0)
    return roots


def _bisect_exit(p0: float, p1: float, p2: float, level: float, hi: float) -> float:
    """First tau in (0, hi] with s*p(tau) = level for the sign reached first."""
    def g(tau):
        return abs(p0 + tau * (p1 + tau * p2)) - level

    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(hi, 1e-300):
            break
    return hi


def first_crossing(p: Sequence[float], dq: float, to_zero: bool = False, scale: float = 0.0) -> float:
    """Smallest ``tau >= 0`` at which ``|p(tau)|`` reaches ``dq``.

    ``p`` holds the coefficients (order <= 2) of state model minus quantized
    model, expanded about the current time. Only outward crossings count.
    With ``to_zero`` the first return to ``p = 0`` from a nonzero value is
    also an exit (linearly implicit methods). ``scale`` is the state
    magnitude used by the degeneracy guard. Returns ``inf`` when the band is
    never left.
    """
    p0 = float(p[0])
    p1 = float(p[1]) if len(p) > 1 else 0.0
    p2 = float(p[2]) if len(p) > 2 else 0.0
    if abs(p0) > dq:
        # round-off right after an offset requantization lands marginally outside
        if abs(p0) > dq * (1.0 + 1e-9):
            return 0.0
        dq = abs(p0)

    def slope(tau):
        return p1 + 2.0 * p2 * tau

    best = math.inf
    for s in (1.0, -1.0):
        for tau in _roots_quadratic(p2, p1, p0 - s * dq):
            if tau < 0.0 or not math.isfinite(tau):
                continue
            if s * slope(tau) > 0.0 and tau < best:
                best = tau
    if to_zero and p0 != 0.0:
        for tau in _roots_quadratic(p2, p1, p0):
            if tau > 0.0 and p0 * slope(tau) < 0.0 and tau < best:
                best = tau
    if math.isfinite(best) and best > 0.0 and p2 != 0.0:
        # guard near-degenerate quadratics: verify the residual, refine by bisection
        degenerate = abs(p2) < 1e-14 * max(abs(scale), abs(p0), 1e-300)
        val = abs(p0 + best * (p1 + best * p2))
        on_zero = to_zero and val < 1e-12 * dq
        if not on_zero and (degenerate or abs(val - dq) > 1e-12 * dq):
            best = _bisect_exit(p0, p1, p2, dq, best * (1.0 + 1e-9) + 1e-300)
    return best


class QssIntegrator:
    """Event-driven integrator over an :class:`OdeSystem`.

    The kernel drives it with :meth:`requantize_due` at the times reported by
    :meth:`next_time`, and with :meth:`set_inputs` when input models change.
    With ``grouped=True`` every state event re-forms all components, as a
    model-exchange unit that exposes only whole-vector derivatives would.
    """

    def __init__(
        self,
        system: OdeSystem,
        method: str = "QSS2",
        quantum_mode: str = "max",
        grouped: bool = False,
        t0: float = 0.0,
    ):
        if method not in METHODS:
            raise ValueError(f"unknown QSS method {method!r}; expected one of {METHODS}")
        self.system = system
        self.method = method
        self.quantum_mode = normalize_mode(quantum_mode)
        self.grouped = grouped
        self.order = 2 if method == "QSS2" else 1
        n = system.dimension
        self.n = n
        self._f = system.derivative
        self.xc = np.zeros((n, self.order + 1))
        self.xa = np.full(n, float(t0))
        self.qc = np.zeros((n, self.order))
        self.qa = np.full(n, float(t0))
        self.dq = np.zeros(n)
        self.tp = np.full(n, math.inf)
        self._a = np.zeros(n)
        self._all = np.arange(n)

        dense = [self._all] * n
        deps = system.dependencies
        self._dependents = dense if deps is None else [np.unique(np.asarray(d, dtype=int)) for d in deps]
        k = len(system.inputs)
        ideps = system.input_dependencies
        self._input_dependents = (
            [self._all] * k if ideps is None else [np.unique(np.asarray(d, dtype=int)) for d in ideps]
        )
        # affected/touched sets for the common single-component event
        self._affected_one = [self._all if grouped else d for d in self._dependents]
        self._touched_one = [np.union1d(a, [j]) for j, a in enumerate(self._affected_one)]
        self.mu_c = np.zeros((k, 3))
        self.mu_a = np.zeros(k)
        for i, item in enumerate(system.inputs):
            seg = item.segment_at(t0) if hasattr(item, "segment_at") else as_segment(item, t0)
            self._store_input(i, seg)

        self.t = float(t0)
        self.n_quantization_events = 0
        self.n_state_events = 0
        self.n_derivative_calls = 0
        self._initialize(float(t0))

    # -- model evaluation ---------------------------------------------------
    def _store_input(self, k: int, seg: PolynomialSegment) -> None:
        if seg.order > 2:
            raise SolverError("input models above order 2 are not supported")
        self.mu_c[k] = 0.0
        self.mu_c[k, : seg.order + 1] = seg.coefficients
        self.mu_a[k] = seg.anchor

    def _mu(self, t: float) -> np.ndarray:
        if self.mu_c.shape[0] == 0:
            return _EMPTY
        d = t - self.mu_a
        return self.mu_c[:, 0] + d * (self.mu_c[:, 1] + d * self.mu_c[:, 2])

    def _q(self, t: float) -> np.ndarray:
        if self.order == 1:
            return self.qc[:, 0].copy()
        return self.qc[:, 0] + (t - self.qa) * self.qc[:, 1]

    def _x(self, idx, t: float) -> np.ndarray:
        c = self.xc[idx]
        d = t - self.xa[idx]
        if self.order == 1:
            return c[:, 0] + d * c[:, 1]
        return c[:, 0] + d * (c[:, 1] + d * c[:, 2])

    def _x_one(self, j: int, t: float) -> float:
        c = self.xc[j]
        d = t - self.xa[j]
        if self.order == 1:
            return c[0] + d * c[1]
        return c[0] + d * (c[1] + d * c[2])

    def _x_slope(self, j: int, t: float) -> float:
        c = self.xc[j]
        d = t - self.xa[j]
        if self.order == 2:
            return c[1] + 2.0 * c[2] * d
        return c[1]

    def _call(self, q, mu, t) -> np.ndarray:
        self.n_derivative_calls += 1
        out = np.asarray(self._f(q, mu, t), dtype=float)
        if out.shape != (self.n,):
            raise SolverError(f"derivative returned shape {out.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(out)):
            raise SolverError(f"non-finite derivative at t={t!r}")
        return out

    def state_at(self, t: float) -> np.ndarray:
        """Continuous state models evaluated at ``t``."""
        return self._x(self._all, t)

    def quantized_at(self, t: float) -> np.ndarray:
        return self._q(t)

    def inputs_at(self, t: float) -> np.ndarray:
        return self._mu(t)

    def next_time(self) -> float:
        return float(self.tp.min()) if self.n else math.inf

    def state_segment(self, j: int) -> PolynomialSegment:
        return PolynomialSegment(self.xc[j], self.xa[j])

    def quantized_segment(self, j: int) -> PolynomialSegment:
        return PolynomialSegment(self.qc[j], self.qa[j])

    # -- the three QSS steps ------------------------------------------------
    def _initialize(self, t0: float) -> None:
        x0 = self.system.x0
        self.qc[:, 0] = x0
        for j in range(self.n):
            self.dq[j] = self._quantum(j, x0[j])
        mu = self._mu(t0)
        if self.method == "LIQSS1":
            f0 = self._call(self.qc[:, 0].copy(), mu, t0)
            for j in range(self.n):
                qp = self.qc[:, 0].copy()
                qp[j] += self.dq[j]
                self._a[j] = (self._call(qp, mu, t0)[j] - f0[j]) / self.dq[j]
            q_now = self.qc[:, 0].copy()
            for j in range(self.n):
                self.qc[j, 0] = self._liqss_level(j, x0[j], f0[j], q_now[j])
        self.xc[:, 0] = x0
        f = self._call(self._q(t0), mu, t0)
        self.xc[:, 1] = f
        if self.order == 2:
            self.qc[:, 1] = f
            self._second_coefficient(self._all, t0, f)
        self.xa[:] = t0
        self.qa[:] = t0
        self.n_quantization_events += self.n
        self._predict(self._all, t0)

    def _quantum(self, j: int, q0: float) -> float:
        return compute_quantum(q0, self.system.abs_tol[j], self.system.rel_tol[j], self.quantum_mode)

    def _second_coefficient(self, idx, t: float, f0: np.ndarray) -> None:
        h = max(1e-8, 1e-8 * abs(t))
        f1 = self._call(self._q(t + h), self._mu(t + h), t + h)
        self.xc[idx, 2] = (f1[idx] - f0[idx]) / (2.0 * h)

    def _reform(self, idx: np.ndarray, t: float) -> np.ndarray:
        """New state models for ``idx``: continuous in value, slope from f."""
        x_now = self._x(idx, t)
        f0 = self._call(self._q(t), self._mu(t), t)
        self.xc[idx] = 0.0
        self.xc[idx, 0] = x_now
        self.xc[idx, 1] = f0[idx]
        if self.order == 2:
            self._second_coefficient(idx, t, f0)
        self.xa[idx] = t
        self.n_state_events += len(idx)
        return f0

    def form_state_model(self, j: int, t: float) -> PolynomialSegment:
        """Re-form component ``j`` alone at ``t`` and re-predict it."""
        idx = np.array([j])
        self._reform(idx, t)
        self._predict(idx, t)
        return self.state_segment(j)

    def _liqss_level(self, j: int, x: float, f_now: float, q_old: float) -> float:
        dq = self.dq[j]
        a = self._a[j]
        up = f_now + a * (x + dq - q_old)
        if up >= 0.0:
            return x + dq
        dn = f_now + a * (x - dq - q_old)
        if dn <= 0.0:
            return x - dq
        q_eq = q_old - f_now / a
        return min(max(q_eq, x - dq), x + dq)

    def _requantize_one(self, j: int, t: float, q_now: np.ndarray, mu: np.ndarray):
        x = float(self._x_one(j, t))
        self.dq[j] = self._quantum(j, x)
        liqss = None
        if self.method == "LIQSS1":
            f_now = float(self._call(q_now, mu, t)[j])
            q_old = float(q_now[j])
            self.qc[j, 0] = self._liqss_level(j, x, f_now, q_old)
            liqss = (f_now, q_old)
        else:
            self.qc[j, 0] = x
            if self.order == 2:
                self.qc[j, 1] = self._x_slope(j, t)
        self.qa[j] = t
        self.n_quantization_events += 1
        return liqss

    def requantize(self, j: int, t: float) -> PolynomialSegment:
        """Quantization event for component ``j`` at ``t`` with propagation."""
        self._process(np.array([j]), t)
        return self.quantized_segment(j)

    def requantize_due(self, t: float, deadline: Optional[float] = None) -> list[int]:
        """Requantize every component predicted at or before ``deadline``."""
        deadline = t if deadline is None else deadline
        due = np.nonzero(self.tp <= deadline)[0]
        if due.size:
            self._process(due, t)
        return due.tolist()

    def requantize_indices(self, idx, t: float) -> None:
        """Quantization events for the components ``idx`` at ``t``."""
        idx = np.asarray(idx, dtype=int)
        if idx.size:
            self._process(idx, t)

    def _process(self, due: np.ndarray, t: float) -> None:
        q_now = self._q(t)
        mu = self._mu(t)
        liqss = {}
        for j in due:
            info = self._requantize_one(int(j), t, q_now, mu)
            if info is not None:
                liqss[int(j)] = info
        if due.size == 1:
            affected = self._affected_one[int(due[0])]
            touched = self._touched_one[int(due[0])]
        else:
            if self.grouped:
                affected = self._all
            else:
                affected = np.unique(np.concatenate([self._dependents[int(j)] for j in due]))
            touched = np.union1d(affected, due)
        f0 = None
        if affected.size:
            f0 = self._reform(affected, t)
        if liqss and f0 is not None:
            for j, (f_old, q_old) in liqss.items():
                dqj = self.qc[j, 0] - q_old
                if abs(dqj) > 1e-14 * max(1.0, abs(q_old)):
                    a = (f0[j] - f_old) / dqj
                    if math.isfinite(a):
                        self._a[j] = a
        self._predict(touched, t)
        self.t = t

    def set_inputs(self, values: Mapping[int, object], t: float) -> None:
        """Replace input models and trigger state events in their readers."""
        if not values:
            return
        for k, v in values.items():
            self._store_input(k, as_segment(v, t))
        if self.grouped:
            affected = self._all
        else:
            affected = np.unique(np.concatenate([self._input_dependents[k] for k in values]))
        if affected.size:
            self._reform(affected, t)
            self._predict(affected, t)
        self.t = max(self.t, t)

    def set_input(self, k: int, value, t: float) -> None:
        self.set_inputs({k: value}, t)

    def predict_quantization_time(self, j: int) -> float:
        """Predicted quantization time of ``j`` from its current models."""
        return float(self.tp[j])

    def _predict(self, idx, now: float) -> None:
        idx = np.atleast_1d(idx)
        if self.method == "LIQSS1" or idx.size <= 6:
            self._predict_scalar(idx, now)
            return
        c = self.xc[idx]
        d = now - self.xa[idx]
        if self.order == 2:
            x0 = c[:, 0] + d * (c[:, 1] + d * c[:, 2])
            e = now - self.qa[idx]
            q0 = self.qc[idx, 0] + e * self.qc[idx, 1]
            p0 = x0 - q0
            p1 = c[:, 1] + 2.0 * d * c[:, 2] - self.qc[idx, 1]
            p2 = c[:, 2]
        else:
            x0 = c[:, 0] + d * c[:, 1]
            p0 = x0 - self.qc[idx, 0]
            p1 = c[:, 1]
            p2 = np.zeros_like(p1)
        tau = _first_crossing_vec(p0, p1, p2, self.dq[idx], x0)
        self.tp[idx] = now + tau

    def _predict_scalar(self, idx, now: float) -> None:
        to_zero = self.method == "LIQSS1"
        for j in idx:
            j = int(j)
            c = self.xc[j]
            d = now - self.xa[j]
            e = now - self.qa[j]
            if self.order == 2:
                x0 = c[0] + d * (c[1] + d * c[2])
                q0 = self.qc[j, 0] + e * self.qc[j, 1]
                p = (x0 - q0, c[1] + 2.0 * d * c[2] - self.qc[j, 1], c[2])
            else:
                x0 = c[0] + d * c[1]
                p = (x0 - self.qc[j, 0], c[1])
            tau = first_crossing(p, self.dq[j], to_zero=to_zero, scale=x0)
            self.tp[j] = now + tau if math.isfinite(tau) else math.inf


def _first_crossing_vec(p0, p1, p2, dq, scale) -> np.ndarray:
    """Vectorised :func:`first_crossing` without the return-to-zero option."""
    out = np.full(p0.shape, math.inf)
    ap0 = np.abs(p0)
    band = np.where(ap0 > dq, ap0, dq)
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = p2 == 0.0
        for s in (1.0, -1.0):
            c = p0 - s * band
            disc = p1 * p1 - 4.0 * p2 * c
            sq = np.sqrt(np.where(disc >= 0.0, disc, np.nan))
            qq = -0.5 * (p1 + np.copysign(sq, p1))
            r_lin = np.where(p1 != 0.0, -c / p1, np.nan)
            cands = (
                np.where(lin, r_lin, qq / p2),
                np.where(lin, np.nan, c / qq),
            )
            for r in cands:
                ok = np.isfinite(r) & (r >= 0.0) & (s * (p1 + 2.0 * p2 * r) > 0.0)
                out = np.where(ok & (r < out), r, out)
        out = np.where(ap0 > dq * (1.0 + 1e-9), 0.0, out)
        quad = np.isfinite(out) & (out > 0.0) & ~lin
        if quad.any():
            val = np.abs(p0 + out * (p1 + out * p2))
            degenerate = np.abs(p2) < 1e-14 * np.maximum(np.abs(scale), ap0)
            bad = quad & (degenerate | ~(np.abs(val - band) <= 1e-12 * band))
            for i in np.nonzero(bad)[0]:
                out[i] = first_crossing((p0[i], p1[i], p2[i]), dq[i], scale=scale[i])
    return out


@dataclass
class QssTrace:
    """Event-by-event record of an integration run."""

    method: str
    times: np.ndarray
    states: np.ndarray
    final_time: float
    final_state: np.ndarray
    n_quantization_events: int
    n_state_events: int
    n_derivative_calls: int
    quanta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def value_at(self, t: float, j: int = 0) -> float:
        """Piecewise-linear reading of the recorded trace (for plotting)."""
        return float(np.interp(t, self.times, self.states[:, j]))


def integrate(
    system: OdeSystem,
    method: str = "QSS2",
    t_end: float = 1.0,
    quantum_mode: str = "max",
    grouped: bool = False,
    t0: float = 0.0,
    record: bool = True,
    max_events: int = 10_000_000,
    on_event: Optional[Callable[[QssIntegrator, float], None]] = None,
) -> QssTrace:
    """Integrate ``system`` from ``t0`` to ``t_end``.

    Each loop iteration advances to the earliest predicted quantization time,
    or to the next input breakpoint when that comes first.
    """
    if t_end < t0:
        raise ValueError(f"t_end={t_end!r} lies before the start time {t0!r}")
    integ = QssIntegrator(system, method, quantum_mode, grouped, t0)
    signals = [(k, s) for k, s in enumerate(system.inputs) if hasattr(s, "next_change")]
    next_in = {k: s.next_change(t0) for k, s in signals}

    times = [t0]
    states = [integ.state_at(t0)] if record else []
    count = 0
    while True:
        t_q = integ.next_time()
        t_in = min((v for v in next_in.values() if v is not None), default=math.inf)
        t = min(t_q, t_in)
        if t > t_end or not math.isfinite(t):
            break
        if t_in <= t:
            changed = {k: s.segment_at(t) for k, s in signals if next_in[k] == t}
            integ.set_inputs(changed, t)
            for k in changed:
                next_in[k] = system.inputs[k].next_change(t)
        integ.requantize_due(t)
        if on_event is not None:
            on_event(integ, t)
        if record:
            times.append(t)
            states.append(integ.state_at(t))
        count += 1
        if count > max_events:
            raise SolverError(f"exceeded {max_events} events before t_end={t_end}")
    final = integ.state_at(t_end)
    if record:
        times.append(t_end)
        states.append(final)
    return QssTrace(
        method=method,
        times=np.asarray(times),
        states=np.asarray(states) if record else np.zeros((0, system.dimension)),
        final_time=t_end,
        final_state=final,
        n_quantization_events=integ.n_quantization_events,
        n_state_events=integ.n_state_events,
        n_derivative_calls=integ.n_derivative_calls,
        quanta=integ.dq.copy(),
    )
