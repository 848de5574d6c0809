"""How the controller period shapes the DR response on the overload scenario.

Runs the line-capacity controller at several sampling periods (the grid is
re-solved on the same cadence) and prints shed activations, shed/release
alternations, curtailed energy and the worst loading after an effective shed.

    python3 demos/controller_period.py [--t-end 50400] [--periods 30 60 120 300]
"""

import argparse
import copy
from pathlib import Path

from gridcosim.scenario import load_scenario, scenario_from_dict, simulate

SCENARIO = Path(__file__).resolve().parents[1] / "scenarios" / "dr_overload"


def variant(period: float, t_end: float):
    sc = load_scenario(SCENARIO)
    d = copy.deepcopy(sc.data)
    d["t_end"] = t_end
    for m in d["modules"]:
        if m["type"] == "controller":
            m["period"] = period
        if m["type"] == "powerflow":
            m["step"] = period
    return scenario_from_dict(d, sc.base_dir)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=50400.0)
    ap.add_argument("--periods", type=float, nargs="+", default=[30.0, 60.0, 120.0, 300.0])
    args = ap.parse_args(argv)
    print(f"{'period s':>9} {'sheds':>6} {'altern.':>8} {'energy kWh':>11} {'post-ctl %':>11} {'max %':>7}")
    for period in args.periods:
        s = simulate(variant(period, args.t_end)).summary
        post = s["post_control_max_loading_pct"]
        print(f"{period:9.0f} {s['shed_events']:6d} {s['shed_release_alternations']:8d} "
              f"{s['shed_energy_kwh']:11.1f} {post if post is not None else float('nan'):11.2f} "
              f"{s['max_loading_pct']:7.2f}")


if __name__ == "__main__":
    main()
