"""Yaw error over time after a deliberate initial offset, 4x2 nodes versus one pair.

Without a magnetometer, yaw is only observable through the lever arms of
several antennas. The single-pair run shows the estimate wandering off.
"""

import argparse
import dataclasses
from pathlib import Path

import numpy as np

from uwbfusion.config import load_config
from uwbfusion.metrics import yaw_errors
from uwbfusion.simulation import run_closed_loop

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "yaw_disambiguation.ini"


def yaw_series(cfg):
    result = run_closed_loop(cfg)
    t = np.array([r.timestamp for r in result.trace]) - result.init_time
    return t, np.degrees(yaw_errors(result.trace)), result


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--offset", type=float, default=None, help="initial yaw error in degrees")
    parser.add_argument("--duration", type=float, default=None, help="simulated seconds")
    args = parser.parse_args()

    cfg = load_config(CONFIG)
    changes = {k: v for k, v in (("initial_yaw_error_deg", args.offset), ("duration", args.duration)) if v is not None}
    cfg = dataclasses.replace(cfg, **changes)
    marks = (0.0, 1.0, 2.0, 5.0, 10.0, 15.0)
    print(f"{'nodes':<12}" + "".join(f"{f't={m:g}s':>9}" for m in marks) + "  outcome")
    for label, c in (("4x2", cfg), ("1x1", dataclasses.replace(cfg, single_pair=True))):
        t, yaw, result = yaw_series(c)
        cells = []
        for m in marks:
            k = int(np.searchsorted(t, m - 1e-9))
            cells.append(f"{yaw[k]:9.2f}" if k < len(yaw) else f"{'-':>9}")
        print(f"{label:<12}" + "".join(cells) + "  " + (result.reason or "completed"))


if __name__ == "__main__":
    main()
