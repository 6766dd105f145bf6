"""Per-axis RMSE table for the shipped scenario configs over a range of seeds.

    python3 scripts/run_scenarios.py --seeds 5
    python3 scripts/run_scenarios.py static_square far_anchor --seeds 20 --duration 60
"""

import argparse
import dataclasses
from pathlib import Path

import numpy as np

from uwbfusion.config import SCENARIO_KINDS, load_config
from uwbfusion.metrics import compute_stats, mean_speed
from uwbfusion.simulation import run_closed_loop

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def sweep(kind: str, seeds: int, duration: float | None):
    base = load_config(CONFIGS / f"{kind}.ini")
    if duration is not None:
        base = dataclasses.replace(base, duration=duration)
    rmse, worst, speed, aborted = [], [], [], 0
    for seed in range(seeds):
        result = run_closed_loop(dataclasses.replace(base, seed=seed))
        aborted += result.aborted
        stats = compute_stats(result.trace)
        rmse.append(stats.rmse)
        worst.append(stats.max_abs)
        speed.append(mean_speed(result.trace))
    return np.median(rmse, axis=0), np.max(worst, axis=0), float(np.mean(speed)), aborted


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("kinds", nargs="*", default=list(SCENARIO_KINDS), help="scenario kinds to run")
    parser.add_argument("--seeds", type=int, default=5, help="seeds per scenario (count)")
    parser.add_argument("--duration", type=float, default=None, help="simulated seconds per run")
    args = parser.parse_args()

    print(f"{'scenario':<20} {'median RMSE x/y/z (m)':>24} {'max |err| x/y/z (m)':>24} {'|v_est|':>8} {'aborted':>8}")
    for kind in args.kinds:
        rmse, worst, speed, aborted = sweep(kind, args.seeds, args.duration)
        print(f"{kind:<20} {' '.join(f'{x:7.3f}' for x in rmse):>24} {' '.join(f'{x:7.3f}' for x in worst):>24} "
              f"{speed:8.3f} {aborted:>8}", flush=True)


if __name__ == "__main__":
    main()
