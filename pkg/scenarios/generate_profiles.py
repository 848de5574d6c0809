"""Write the synthetic 15-minute feeder profiles used by the shipped scenarios.

The building runs once without demand response; the SW-A6 aggregate is then
chosen sample by sample so that the most critical cable (CBL-A1-A6) follows a
target loading curve: above 55 % overnight, well below it late morning, a slow
crossing around t = 45000 s and a higher plateau in the afternoon.

    python3 scenarios/generate_profiles.py
"""

from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from gridcosim.kernel import Kernel
from gridcosim.building import load_building
from gridcosim.powerflow import network_from_dict
from gridcosim.timeseries import write_series_csv

HERE = Path(__file__).resolve().parent
COMMON = HERE / "common"
STEP = 900.0
T = np.arange(0.0, 86400.0 + STEP / 2, STEP)
CRITICAL = "CBL-A1-A6"

# (hour, %) knots of the no-DR loading of the critical cable
TARGET = [(0, 57.0), (4, 56.8), (8.5, 57.2), (9.0, 54.0), (9.5, 47.0), (11.0, 46.0), (12.0, 52.0),
          (12.25, 54.0), (12.5, 55.0), (13.0, 56.5), (14.0, 58.0), (16.0, 59.0), (18.0, 58.5),
          (20.0, 57.0), (24.0, 57.0)]


def pv(t):
    h = (t / 3600.0) % 24
    return 340.0 * np.clip(np.sin(np.pi * (h - 6.0) / 14.0), 0, None) ** 1.5


def aggregate_a1(t):
    h = (t / 3600.0) % 24
    return 3000.0 + 1500.0 * np.clip(np.sin(np.pi * (h - 7.0) / 13.0), 0, None)


def building_power():
    spec = load_building(COMMON / "building.yaml")
    k = Kernel()
    k.add(spec.make_module("b71"))
    k.record("b71.P", "b71.Q")
    tr = k.run(86400.0)
    return np.interp(T, *tr.signal("b71.P")), np.interp(T, *tr.signal("b71.Q"))


def main() -> None:
    prof = COMMON / "profiles"
    prof.mkdir(parents=True, exist_ok=True)
    p_pv, p_a1 = pv(T), aggregate_a1(T)
    write_series_csv(prof / "pv.csv", T, p_pv)
    write_series_csv(prof / "agg_a1.csv", T, p_a1)
    write_series_csv(prof / "agg_a6.csv", T, np.zeros_like(T))  # placeholder so the file loads
    import yaml

    spec = network_from_dict(yaml.safe_load((COMMON / "feeder.yaml").read_text()), COMMON)
    tan = np.tan(np.arccos(0.94))
    pb, qb = building_power()
    hours, pct = np.array(TARGET).T
    target = np.interp(T / 3600.0, hours, pct)
    a6 = np.empty_like(T)
    for i, t in enumerate(T):
        base = {"a1": (p_a1[i], p_a1[i] * tan), "b71": (pb[i], qb[i]), "pv": (-p_pv[i], 0.0), "bat": (0.0, 0.0)}

        def gap(p):
            res, _, _ = spec.solve({**base, "a6": (p, p * tan)})
            return res.loading[CRITICAL] - target[i]

        a6[i] = brentq(gap, 0.0, 20000.0, xtol=1e-6)
    write_series_csv(prof / "agg_a6.csv", T, a6)
    write_series_csv(prof / "b71_nodr.csv", T, pb)
    print(f"wrote profiles to {prof}; SW-A6 aggregate {a6.min():.0f}..{a6.max():.0f} kW")


if __name__ == "__main__":
    main()
