"""Reduced building + HVAC as a QSS-integrated model-exchange module.

The thermal model runs in deviation coordinates around ``t_ref`` so that a
uniform temperature is an exact equilibrium of the reduced model. HVAC
cooling enters the internal-gain channel with negative sign. A second copy
of the thermal model and PI loop runs without shedding; it provides the
concurrent baseline power that the shed commitment is measured against.

States: [z (r), I] for the controlled building, then the same for the
baseline copy.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional, Union

import numpy as np

from ..errors import ConfigError
from ..kernel.module import Module, Outputs
from ..kernel.ports import ModuleDescriptor, inp, out
from ..kernel.time import SimTime, ns_ceil, ns_ceil_array
from ..messages import MessageFactory, NetMessage, shed_reply
from ..polynomial import PolynomialSegment
from ..qss import OdeSystem, QssIntegrator
from ..timeseries import TimeSeries
from .hvac import HvacConfig, building_step_semantics, check_fraction, cooling_limit, integral_rate, pi_output
from .rc import DISTURBANCES, TEMPERATURE_INPUTS, StateSpaceModel

Signal = Union[float, TimeSeries]

OUTPUTS = ("P", "Q", "T_RET", "T_sp", "T_hvac", "cooling", "P_baseline", "T_amb")
FEEDTHROUGH = {"P", "Q", "T_sp", "T_hvac", "cooling", "shed_state", "reply"}
IDX_BASE = len(DISTURBANCES)
IDX_SHED = IDX_BASE + 1


class BuildingThermal:
    """Closed-loop right-hand side shared by the module and the test oracles."""

    def __init__(self, model: StateSpaceModel, hvac: HvacConfig, t_ref: float = 293.0, shadow: bool = True):
        self.model = model
        self.hvac = hvac
        self.t_ref = float(t_ref)
        self.shadow = shadow
        self.r = model.n_states
        self.A = model.A
        self.B = model.B_v
        self.c = model.C[0]
        self.b_gain = model.B_v[:, 0]
        self._sp_cache: dict[float, float] = {}

    @property
    def dimension(self) -> int:
        return 2 * (self.r + 1) if self.shadow else self.r + 1

    def setpoint(self, shed: float) -> float:
        sp = self._sp_cache.get(shed)
        if sp is None:
            sp = self._sp_cache[shed] = self.hvac.setpoint(shed)
        return sp

    def t_ret(self, z) -> float:
        return self.t_ref + float(self.c @ z)

    def _loop(self, z, integ, v, t_sp, base, shed, baseline):
        cfg = self.hvac
        t_ret = self.t_ref + float(self.c @ z)
        u = pi_output(cfg, t_ret, t_sp, integ)
        demand = min(max(cfg.gain * (t_ret - t_sp + u), 0.0), cfg.capacity)
        limit = cooling_limit(cfg, shed, base, baseline)
        cooling = min(demand, limit)
        dz = self.A @ z + self.B @ v - self.b_gain * cooling
        di = integral_rate(cfg, t_ret, t_sp, integ, capped=demand > limit)
        return dz, di, cooling

    def deviation_inputs(self, mu) -> np.ndarray:
        v = np.array(mu[:IDX_BASE], dtype=float)
        v[list(TEMPERATURE_INPUTS)] -= self.t_ref
        return v

    def derivative(self, x, mu, t=0.0) -> np.ndarray:
        r = self.r
        v = self.deviation_inputs(mu)
        base = float(mu[IDX_BASE])
        shed = float(mu[IDX_SHED])
        out = np.empty(self.dimension)
        baseline = None
        if self.shadow:
            zb, ib = x[r + 1: 2 * r + 1], x[2 * r + 1]
            dzb, dib, cool_b = self._loop(zb, ib, v, self.hvac.nominal_setpoint, base, 0.0, None)
            out[r + 1: 2 * r + 1] = dzb
            out[2 * r + 1] = dib
            baseline = base + cool_b / self.hvac.cop
        dz, di, _ = self._loop(x[:r], x[r], v, self.setpoint(shed), base, shed, baseline)
        out[:r] = dz
        out[r] = di
        return out

    def hvac_state(self, x, mu):
        """(controlled HvacState, baseline electric power or None, T_RET)."""
        r = self.r
        base = float(mu[IDX_BASE])
        shed = float(mu[IDX_SHED])
        baseline = None
        if self.shadow:
            hb = building_step_semantics(self.hvac, 0.0, self.t_ret(x[r + 1: 2 * r + 1]), x[2 * r + 1], base)
            baseline = hb.P
        t_ret = self.t_ret(x[:r])
        h = building_step_semantics(self.hvac, shed, t_ret, x[r], base, baseline)
        return h, baseline, t_ret

    def steady_state(self, mu) -> np.ndarray:
        """Closed-loop equilibrium for disturbances frozen at ``mu``."""
        cfg = self.hvac
        v = self.deviation_inputs(mu)
        zf = -np.linalg.solve(self.A, self.B @ v)  # free-floating
        g = float(self.c @ np.linalg.solve(self.A, self.b_gain))  # dT_RET per W of cooling
        x = np.zeros(self.dimension)
        r = self.r
        for offset, shed in ((0, float(mu[IDX_SHED])), (r + 1, 0.0)):
            if offset and not self.shadow:
                break
            t_sp = self.setpoint(shed)
            need = (t_sp - self.t_ret(zf)) / g if g else 0.0
            cooling = min(max(need, 0.0), cfg.capacity)
            z = zf + np.linalg.solve(self.A, self.b_gain) * cooling
            u = cooling / cfg.gain - (self.t_ret(z) - t_sp)
            integ = (min(max(u, 0.0), cfg.u_max)) / cfg.ki if cfg.ki > 0 else 0.0
            x[offset: offset + r] = z
            x[offset + r] = integ
        return x


class BuildingModule(Module):
    """Building 71 stand-in: reduced thermal model, PI-controlled HVAC, DR logic.

    Inputs: ``dr`` (ShedLoadRequest messages) and ``shed`` (a real-valued
    shed fraction, for direct wiring). Outputs are in kW / kvar / K; ``reply``
    carries ShedReply messages back to the requester.
    """

    def __init__(
        self,
        module_id: str,
        model: StateSpaceModel,
        hvac: Optional[HvacConfig] = None,
        disturbances: Optional[Mapping[str, Signal]] = None,
        base_power: Signal = 80e3,
        t_ref: float = 293.0,
        method: str = "QSS2",
        abs_tol: float = 0.01,
        rel_tol: float = 0.0,
        quantum_mode: str = "max",
        integral_tol: Optional[float] = None,
        accept: bool = True,
        shadow: bool = True,
        initial: Union[str, np.ndarray] = "steady",
    ):
        super().__init__(module_id)
        self.hvac = hvac or HvacConfig()
        self.thermal = BuildingThermal(model, self.hvac, t_ref, shadow)
        dist = dict(disturbances or {})
        missing = [k for k in DISTURBANCES if k not in dist]
        if "T_GND" in missing:
            dist["T_GND"] = 288.0
            missing.remove("T_GND")
        for k in missing:
            if k.startswith("S_"):
                dist[k] = 0.0
            else:
                raise ConfigError(f"building {module_id!r}: missing disturbance profile {k!r}")
        self.signals = [dist[k] for k in DISTURBANCES] + [base_power, 0.0]
        self.method = method
        self.quantum_mode = quantum_mode
        r = model.n_states
        # the PI integral is in K*s; its useful resolution is that of u = ki*I
        itol = integral_tol if integral_tol is not None else abs_tol / max(self.hvac.ki, 1e-12) * 0.1
        tol = [abs_tol] * r + [itol]
        self.abs_tol = np.array(tol * (2 if shadow else 1))
        self.rel_tol = rel_tol
        self.accept = accept
        self.initial = initial
        self.shed = 0.0
        self.integ: Optional[QssIntegrator] = None
        self._factory = MessageFactory(module_id)
        self._last: dict[str, float] = {}
        self.n_requests = 0

    def describe(self) -> ModuleDescriptor:
        ports = [inp("dr", "message"), inp("shed", default=0.0)]
        ports += [out(n, logged=False) for n in OUTPUTS]
        ports += [out("shed_state"), out("reply", "message")]
        ft = {"dr": set(FEEDTHROUGH), "shed": set(FEEDTHROUGH) - {"reply"}}
        return ModuleDescriptor(self.module_id, "model-exchange", ports, feedthrough=ft,
                                n_states=self.thermal.dimension)

    # -- setup ------------------------------------------------------------------
    def _system(self, t0: float) -> OdeSystem:
        th = self.thermal
        r = th.r
        n = th.dimension
        if isinstance(self.initial, str):
            if self.initial != "steady":
                raise ConfigError(f"unknown building initial condition {self.initial!r}")
            mu0 = [s(t0) if isinstance(s, TimeSeries) else float(s) for s in self.signals]
            x0 = th.steady_state(mu0)
        else:
            x0 = np.asarray(self.initial, dtype=float)
            if x0.shape != (n,):
                raise ConfigError(f"initial state must have {n} entries")
        deps = [list(range(r + 1)) for _ in range(r + 1)]
        if th.shadow:
            deps = [list(range(r + 1)) for _ in range(r + 1)] + [list(range(n)) for _ in range(r + 1)]
        return OdeSystem(th.derivative, x0, self.abs_tol, self.rel_tol, inputs=list(self.signals),
                         dependencies=deps)

    def initialize(self, now: SimTime, inputs) -> Outputs:
        t = now.seconds
        self.system = self._system(t)
        self.integ = QssIntegrator(self.system, self.method, self.quantum_mode, grouped=False, t0=t)
        self._series = [(k, s) for k, s in enumerate(self.signals) if isinstance(s, TimeSeries)]
        self._next_in = {k: s.next_change(t) for k, s in self._series}
        shed = float(inputs.get("shed") or 0.0)
        if shed:
            self._apply_shed(shed, t)
        return self._outputs(t, force=True)

    # -- outputs -----------------------------------------------------------------
    def state(self, t: float):
        q = self.integ.quantized_at(t)
        mu = self.integ.inputs_at(t)
        return self.thermal.hvac_state(q, mu), mu

    def _outputs(self, t: float, force: bool = False) -> Outputs:
        (h, baseline, t_ret), mu = self.state(t)
        vals = {
            "P": h.P / 1e3,
            "Q": h.Q / 1e3,
            "T_RET": t_ret,
            "T_sp": h.T_setpoint,
            "T_hvac": h.T_hvac,
            "cooling": h.cooling / 1e3,
            "P_baseline": (baseline if baseline is not None else h.P) / 1e3,
            "T_amb": float(mu[1]),
            "shed_state": self.shed,
        }
        if force:
            self._last = dict(vals)
            return vals
        changed = {k: v for k, v in vals.items() if self._last.get(k) != v}
        self._last.update(changed)
        return changed

    # -- event hooks ---------------------------------------------------------
    def next_event_time(self) -> float:
        t = self.integ.next_time()
        for v in self._next_in.values():
            if v is not None and v < t:
                t = v
        return t

    def on_internal(self, now: SimTime) -> Outputs:
        t = now.seconds
        changed = {k: s.segment_at(t) for k, s in self._series
                   if self._next_in[k] is not None and ns_ceil(self._next_in[k]) <= now.ns}
        if changed:
            self.integ.set_inputs(changed, t)
            for k in changed:
                self._next_in[k] = self.signals[k].next_change(t)
        due = np.nonzero(ns_ceil_array(self.integ.tp) <= now.ns)[0]
        self.integ.requantize_indices(due, t)
        return self._outputs(t)

    def _apply_shed(self, fraction: float, t: float) -> None:
        check_fraction(fraction)
        if fraction != self.shed:
            self.shed = fraction
            self.integ.set_input(IDX_SHED, fraction, t)

    def on_inputs(self, changed, now: SimTime) -> Outputs:
        t = now.seconds
        replies = []
        if "shed" in changed:
            self._apply_shed(float(changed["shed"]), t)
        for msg in changed.get("dr", ()):
            if not isinstance(msg, NetMessage) or msg.kind != "ShedLoadRequest":
                continue
            self.n_requests += 1
            fraction = float(msg.get("fraction", 0.0))
            accept = bool(self.accept) or fraction == 0.0
            self.log("dr_accept" if accept else "dr_decline", fraction)
            if accept:
                self._apply_shed(fraction, t)
            replies.append(shed_reply(self._factory, msg, accept))
        outs = self._outputs(t)
        outs.pop("T_RET", None)
        outs.pop("T_amb", None)
        outs.pop("P_baseline", None)
        if replies:
            outs["reply"] = replies
        return outs

    def finalize(self, now: SimTime) -> Outputs:
        return {}

    # -- diagnostics ------------------------------------------------------------
    def stats(self) -> dict:
        return {
            "quantization_events": self.integ.n_quantization_events,
            "state_events": self.integ.n_state_events,
            "derivative_calls": self.integ.n_derivative_calls,
        }
