"""Discrete-time controller module: DR shedding, volt-var and slope rules."""

from __future__ import annotations

from typing import Optional, Sequence

from ..errors import ConfigError
from ..kernel.module import Module, Outputs
from ..kernel.ports import ModuleDescriptor, inp, out
from ..kernel.time import SimTime
from ..messages import MessageFactory, shed_request
from ..powerflow.module import NetworkSpec
from .controllers import (
    SIGNAL_PREFIXES,
    ControllerConfig,
    GridSnapshot,
    line_capacity_control,
    slope_control,
    volt_var_control,
)


class ControllerModule(Module):
    """Samples grid signals every ``period`` and acts one period later.

    ``signals`` names the real input ports (``V_<bus>``, ``Pbus_<bus>``,
    ``loading_<branch>`` ...). Shed decisions leave as messages on ``dr``
    only when they change; ``replies`` takes the VEN's answers. With a
    volt-var config the battery setpoint is published on ``q_bat``.
    """

    def __init__(self, module_id: str, cfg: ControllerConfig, signals: Sequence[str],
                 network: Optional[NetworkSpec] = None, ven: str = "ven"):
        super().__init__(module_id)
        self.cfg = cfg
        self.signals = list(dict.fromkeys(signals))
        for name in self.signals:
            if name.partition("_")[0] not in SIGNAL_PREFIXES:
                raise ConfigError(f"{module_id}: unsupported signal {name!r}")
        self.network = network
        self.ven = ven
        self.factory = MessageFactory(module_id)
        self.shed = 0.0
        self.q_bat = 0.0
        self.prev: Optional[GridSnapshot] = None
        self.decisions: list[dict] = []
        self.voltvar_log: list[dict] = []
        self.replies: list[dict] = []

    def describe(self) -> ModuleDescriptor:
        ports = [inp(name, "real") for name in self.signals]
        ports += [inp("replies", "message"), out("dr", "message"), out("shed_fraction", logged=True)]
        if self.cfg.volt_var is not None:
            ports += [out("q_bat"), out("delta_q"), out("voltvar_saturated", "boolean")]
        return ModuleDescriptor(self.module_id, "discrete-time", ports, feedthrough={}, period=self.cfg.period)

    def initialize(self, now, inputs) -> Outputs:
        outs: Outputs = {"shed_fraction": 0.0}
        if self.cfg.volt_var is not None:
            outs.update(q_bat=0.0, delta_q=0.0, voltvar_saturated=False)
        return outs

    def on_inputs(self, changed, now: SimTime) -> Outputs:
        for msg in changed.get("replies") or []:
            rec = {"t": now.seconds, "request": msg.get("request"), "accept": msg.get("accept"),
                   "fraction": msg.get("fraction")}
            self.replies.append(rec)
            self.log("dr_participation" if msg.get("accept") else "dr_declined", rec)
        return {}

    def _resolver(self, snap: GridSnapshot):
        if self.network is None:
            return None
        vv = self.cfg.volt_var
        values = dict(snap.injections)

        def resolve(q_bat: float):
            vals = dict(values)
            p_bat = vals.get(vv.battery, (0.0, 0.0))[0]
            vals[vv.battery] = (p_bat, -q_bat)
            res, _, _ = self.network.solve(vals)
            return res.voltage

        return resolve

    def on_tick(self, now: SimTime, inputs) -> Outputs:
        t = now.seconds
        snap = GridSnapshot.from_signals(t, {k: inputs[k] for k in self.signals})
        outs: Outputs = {}
        fraction = self.shed
        if self.cfg.line_capacity and snap.loadings:
            decision = line_capacity_control(snap, self.cfg, shedding=self.shed > 0)
            fraction = decision.fraction
            branch, loading = decision.branch, decision.loading
        else:
            branch, loading = "", 0.0
        slope_requests = slope_control(self.prev, snap, self.cfg)
        for req in slope_requests:
            self.log("slope_request", {"signal": req.signal, "slope": req.slope, "limit": req.limit,
                                       "excess": req.excess})
            if req.signal.partition("_")[0] in ("Pbus", "Pinj") and req.excess > 0:
                load = snap.injections.get(self.cfg.building, (0.0, 0.0))[0]
                if load > 0:
                    fraction = max(fraction, min(1.0, req.excess / load))
        if fraction != self.shed:
            msg = shed_request(self.factory, self.ven, fraction)
            outs["dr"] = [msg]
            outs["shed_fraction"] = fraction
            rec = {"t": t, "fraction": fraction, "branch": branch, "loading": loading, "request": msg.msg_id}
            self.decisions.append(rec)
            self.log("shed_request" if fraction > 0 else "shed_release", rec)
            self.shed = fraction
        if self.cfg.volt_var is not None:
            res = volt_var_control(snap, self.cfg.volt_var, self.q_bat, self._resolver(snap))
            rec = {"t": t, "q_bat": res.q_setpoint, "delta_q": res.delta_q, "target": res.target,
                   "saturated": res.saturated, "residual": res.residual}
            self.voltvar_log.append(rec)
            if res.q_setpoint != self.q_bat:
                outs["q_bat"] = res.q_setpoint
            outs["delta_q"] = res.delta_q
            outs["voltvar_saturated"] = res.saturated
            if res.saturated:
                self.log("voltvar_saturated", rec)
            self.q_bat = res.q_setpoint
        self.prev = snap
        return outs
