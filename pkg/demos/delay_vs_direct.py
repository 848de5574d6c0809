"""Compare the DR run over the lossless comms channel with a direct-wired run.

Prints when each request sent over the channel takes effect at the building
(polling wait plus transmission) and the summary metrics of both runs.

    python3 demos/delay_vs_direct.py [--t-end 50400]
"""

import argparse
import copy
from pathlib import Path

from gridcosim.scenario import load_scenario, scenario_from_dict, simulate

SCENARIO = Path(__file__).resolve().parents[1] / "scenarios" / "dr_overload"


def scenarios(t_end):
    sc = load_scenario(SCENARIO)
    d = copy.deepcopy(sc.data)
    d["t_end"] = t_end
    direct = copy.deepcopy(d)
    direct["modules"] = [m for m in d["modules"] if m["type"] != "comms"]
    direct["connections"] = ["b71.P -> grid.b71_P", "b71.Q -> grid.b71_Q",
                             "ctl.dr -> b71.dr", "b71.reply -> ctl.replies"]
    return scenario_from_dict(d, sc.base_dir), scenario_from_dict(direct, sc.base_dir)


def applied(result):
    return [(e.time.seconds, e.value) for e in result.trace.events if e.event == "dr_accept"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=50400.0)
    args = ap.parse_args(argv)
    via, direct = (simulate(s) for s in scenarios(args.t_end))
    a, b = applied(via), applied(direct)
    print(f"activations: comms {len(a)}, direct {len(b)}")
    ctl = via.modules["ctl"]
    for d, (ta, fa) in zip(ctl.decisions, a):
        sent = d["t"] + ctl.cfg.period
        print(f"  fraction {fa:.2f}: decided t={d['t']:8.1f} sent {sent:8.1f} applied {ta:8.1f} (+{ta - sent:5.1f} s)")
    for key in ("shed_events", "shed_release_alternations", "shed_energy_kwh", "max_loading_pct"):
        print(f"{key:28s} comms {via.summary[key]!s:>22}  direct {direct.summary[key]!s:>22}")


if __name__ == "__main__":
    main()
