"""Run a scenario and write its artifacts: event log, traces, summary, plot script."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from ..building.module import BuildingModule
from ..comms import CommsModule
from ..control import ControllerModule
from ..kernel import SimulationTrace
from ..powerflow import PowerFlowModule
from .config import Scenario

log = logging.getLogger(__name__)

SUMMARY_KEYS = ("max_loading_pct", "shed_events", "shed_energy_kwh", "voltage_rmse_pu")
EVENT_LOG = "events.jsonl"
SUMMARY_FILE = "summary.json"
PLOT_FILE = "plots.gp"


@dataclass
class RunResult:
    scenario: Scenario
    trace: SimulationTrace
    modules: dict
    summary: dict = field(default_factory=dict)
    out_dir: Optional[Path] = None

    def of_type(self, cls) -> dict:
        return {k: m for k, m in self.modules.items() if isinstance(m, cls)}


def simulate(scenario: Scenario) -> RunResult:
    """Build a fresh kernel and run it to ``t_end`` (no files written)."""
    kernel, modules = scenario.build()
    log.info("running %s to t=%g s (%d modules)", scenario.name, scenario.t_end, len(modules))
    trace = kernel.run(scenario.t_end)
    result = RunResult(scenario, trace, modules)
    result.summary = summarize(result)
    return result


def run_scenario(scenario: Scenario, out_dir=None) -> RunResult:
    result = simulate(scenario)
    out = scenario.output_dir(out_dir)
    write_artifacts(result, out)
    result.out_dir = out
    return result


def write_artifacts(result: RunResult, out: Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result.trace.write_event_log(out / EVENT_LOG)
    result.trace.write_traces(out / "traces")
    (out / SUMMARY_FILE).write_text(json.dumps(result.summary, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    (out / PLOT_FILE).write_text(plot_script(result), encoding="utf-8")
    log.info("artifacts written to %s", out)


# -- summary ----------------------------------------------------------------------------------

def _intervals(t: np.ndarray, v: np.ndarray, t_end: float) -> list[tuple[float, float]]:
    """[start, end) intervals where a held signal is positive."""
    spans, start = [], None
    for ti, vi in zip(t, v):
        if vi > 0 and start is None:
            start = ti
        elif vi <= 0 and start is not None:
            spans.append((start, ti))
            start = None
    if start is not None:
        spans.append((start, t_end))
    return spans


def _max_over(t: np.ndarray, v: np.ndarray, spans, closed: bool = False) -> Optional[float]:
    """Largest held value of (t, v) inside the spans (end included if ``closed``)."""
    best = None
    for a, b in spans:
        idx = np.searchsorted(t, a, side="right") - 1
        inside = (t > a) & ((t <= b) if closed else (t < b))
        m = float(max([v[max(idx, 0)]] + list(v[inside])))
        best = m if best is None else max(best, m)
    return best


def _alternations(decisions: list[dict]) -> int:
    """Number of shed -> release -> shed reversals."""
    kinds = [d["fraction"] > 0 for d in decisions]
    return sum(1 for a, b in zip(kinds, kinds[1:]) if a != b)


def _tracking_rmse(result: RunResult) -> Optional[float]:
    """RMS of V_controlled - V_target in the running simulation, sampled once a second."""
    tr = result.trace
    grid = next(iter(result.of_type(PowerFlowModule)), None)
    errs = []
    for c in result.of_type(ControllerModule).values():
        vv = c.cfg.volt_var
        if vv is None or vv.target_bus is None or grid is None:
            continue
        kc, kt = f"{grid}.V_{vv.controlled_bus}", f"{grid}.V_{vv.target_bus}"
        if kc not in tr.signals or kt not in tr.signals:
            continue
        g = np.arange(0.0, tr.t_end, 1.0)
        (tc, vc), (tt, vt) = tr.signal(kc), tr.signal(kt)
        held = lambda t, v: v[np.clip(np.searchsorted(t, g, side="right") - 1, 0, None)]
        errs.append(held(tc, vc) - held(tt, vt))
    if not errs:
        return None
    return float(math.sqrt(np.mean(np.square(np.concatenate(errs)))))


def summarize(result: RunResult) -> dict:
    tr = result.trace
    t_end = tr.t_end
    s: dict = {"scenario": result.scenario.name, "seed": result.scenario.seed, "t_end": t_end}

    grids = result.of_type(PowerFlowModule)
    max_loading = None
    for gid in grids:
        key = f"{gid}.max_loading"
        if key in tr.signals and tr.signals[key][0]:
            m = float(np.max(tr.signal(key)[1]))
            max_loading = m if max_loading is None else max(max_loading, m)
    s["max_loading_pct"] = max_loading

    controllers = result.of_type(ControllerModule)
    decisions = [d for c in controllers.values() for d in c.decisions]
    s["shed_events"] = sum(1 for d in decisions if d["fraction"] > 0)

    energy = 0.0
    spans_all = []
    for bid, b in result.of_type(BuildingModule).items():
        kp, kb, ks = f"{bid}.P", f"{bid}.P_baseline", f"{bid}.shed_state"
        if kp in tr.signals and kb in tr.signals:
            tp, p = tr.signal(kp)
            tb, pb = tr.signal(kb)
            grid = np.union1d(tp, tb)
            diff = np.interp(grid, tb, pb) - np.interp(grid, tp, p)
            energy += float(trapezoid(diff, grid)) / 3600.0
        if ks in tr.signals:
            spans_all += _intervals(*tr.signal(ks), t_end)
    s["shed_energy_kwh"] = energy if result.of_type(BuildingModule) else None

    residuals = [r["residual"] for c in controllers.values() for r in c.voltvar_log
                 if r["residual"] is not None and not r["saturated"]]
    s["voltage_rmse_pu"] = float(math.sqrt(np.mean(np.square(residuals)))) if residuals else None
    s["voltage_max_abs_error_pu"] = float(np.max(np.abs(residuals))) if residuals else None
    s["voltage_trace_rmse_pu"] = _tracking_rmse(result)
    s["voltvar_ticks"] = sum(len(c.voltvar_log) for c in controllers.values())
    s["voltvar_saturated_ticks"] = sum(1 for c in controllers.values() for r in c.voltvar_log if r["saturated"])

    # loading while a re-issued shed is in force, up to the decision that releases it
    releases = sorted(d["t"] for d in decisions if d["fraction"] <= 0)
    windows = []
    for a, b in spans_all:
        before = [r for r in releases if r < b]
        if b >= t_end or not before or not releases or a < releases[0]:
            continue
        if before[-1] >= a:
            windows.append((a, before[-1]))
    for gid in grids:
        key = f"{gid}.max_loading"
        if key in tr.signals and spans_all:
            t, v = tr.signal(key)
            s["post_control_max_loading_pct"] = _max_over(t, v, windows, closed=True) if windows else None
            s["shed_in_force_max_loading_pct"] = _max_over(t, v, spans_all)
            break
    s["shed_release_alternations"] = _alternations(decisions)
    s["shed_intervals"] = [[a, b] for a, b in spans_all]
    thresholds = sorted({c.cfg.threshold for c in controllers.values()})
    if thresholds:
        s["threshold_pct"] = thresholds[0] if len(thresholds) == 1 else thresholds

    stats = {"instants": tr.stats.get("instants"), "events": len(tr.events)}
    for mid, m in result.modules.items():
        if hasattr(m, "stats"):
            stats[mid] = m.stats()
    comms = result.of_type(CommsModule)
    for cid, c in comms.items():
        d = [r["deliver_t"] - r["inject_t"] for r in c.delivery_log if "deliver_t" in r]
        stats[cid] = {"delivered": len(d), "superseded": c.n_superseded,
                      "mean_delay_s": float(np.mean(d)) if d else None}
    s["stats"] = stats
    return s


# -- plot script --------------------------------------------------------------------------------

def _plot_block(title: str, ylabel: str, series: list[tuple[str, str]], y2: Optional[list] = None) -> str:
    lines = [f'set title "{title}"', 'set xlabel "time [h]"', f'set ylabel "{ylabel}"']
    parts = [f'"traces/{key}.csv" using ($1/3600):2 with steps title "{label}"' for key, label in series]
    if y2:
        lines += ['set y2tics', 'set ytics nomirror']
        parts += [f'"traces/{key}.csv" using ($1/3600):2 axes x1y2 with steps title "{label}"' for key, label in y2]
    lines.append("plot " + ", \\\n     ".join(parts))
    if y2:
        lines += ["unset y2tics", "set ytics mirror"]
    return "\n".join(lines) + "\n"


def plot_script(result: RunResult) -> str:
    """gnuplot script, run from the output directory, that redraws the main figures."""
    sig = result.trace.signals
    blocks = [
        "# gnuplot script generated by gridcosim; run with: gnuplot -p plots.gp",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set grid",
        "set terminal pngcairo size 1000,600",
    ]
    n = 0

    def add(name: str, block: str) -> None:
        nonlocal n
        n += 1
        blocks.append(f"set output '{n:02d}_{name}.png'\n" + block)

    for gid, g in result.of_type(PowerFlowModule).items():
        loads = [(f"{gid}.loading_{br.id}", br.id) for br in g.net.branches if f"{gid}.loading_{br.id}" in sig]
        if loads:
            add(f"{gid}_loading", _plot_block("Branch loading", "loading [%]", loads))
    for bid in result.of_type(BuildingModule):
        pw = [(f"{bid}.P", "P with DR"), (f"{bid}.P_baseline", "P without DR")]
        pw = [p for p in pw if p[0] in sig]
        if pw:
            add(f"{bid}_power", _plot_block("Building electric power", "P [kW]", pw))
        temps = [(f"{bid}.T_amb", "T_amb"), (f"{bid}.T_RET", "T_RET"), (f"{bid}.T_sp", "T_RET setpoint"),
                 (f"{bid}.T_hvac", "T_hvac")]
        temps = [p for p in temps if p[0] in sig]
        if temps:
            add(f"{bid}_temperatures", _plot_block("Temperatures", "T [K]", temps))
    for cid, c in result.of_type(ControllerModule).items():
        vv = c.cfg.volt_var
        if vv is None:
            continue
        grid = next(iter(result.of_type(PowerFlowModule)), None)
        volts = [(f"{grid}.V_{b}", f"V {b}") for b in (vv.sending_bus, vv.controlled_bus) if grid]
        volts = [p for p in volts if p[0] in sig]
        q = [(f"{cid}.q_bat", "Total Q"), (f"{cid}.delta_q", "Delta Q")]
        q = [p for p in q if p[0] in sig]
        if volts:
            add(f"{cid}_voltage", _plot_block("Voltage tracking", "V [pu]", volts))
        if q:
            add(f"{cid}_reactive", _plot_block("Battery reactive power", "Q [kvar]", q))
    if n == 0:
        series = [(k, k) for k in list(sig)[:8]]
        if series:
            add("signals", _plot_block("Recorded signals", "value", series))
    return "\n".join(blocks) + "\n"


# -- comparisons ---------------------------------------------------------------------------------

COMM_EVENTS = ("comm_inject", "comm_deliver", "comm_superseded")


def settled_events(trace: SimulationTrace, exclude_sources=()) -> list[tuple]:
    """Event log reduced to what is observable at whole instants.

    Microsteps are dropped, ``output`` records keep only the value settled at
    the end of each instant, and records from ``exclude_sources`` (module ids)
    as well as channel bookkeeping are removed. Two runs that differ only in
    how many microsteps a message needed compare equal.
    """
    excl = tuple(exclude_sources)
    settled: dict[tuple, str] = {}
    rows: list[tuple] = []
    for e in trace.events:
        if e.event in COMM_EVENTS or (excl and e.source.partition(".")[0] in excl):
            continue
        val = json.dumps(e.value, sort_keys=True)
        if e.event == "output":
            settled[(e.time.ns, e.source)] = val
        else:
            rows.append((e.time.ns, e.source, e.event, val))
    rows += [(ns, src, "output", val) for (ns, src), val in settled.items()]
    return sorted(rows)
