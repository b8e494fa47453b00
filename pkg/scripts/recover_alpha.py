"""Parameter recovery and model selection on synthetic up-saturating worlds.

Runs 10-fold cross-validation of all four testing models on one or more
seeded worlds and prints held-out errors, the fitted threshold and paired
Wilcoxon p-values.

    python scripts/recover_alpha.py --seeds 1 2 3 --alpha 0.002
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from epitesting.ingest import select_regions_for_validation
from epitesting.simulator import WorldSpec, simulate_world, world_from_config
from epitesting.stats import wilcoxon_signed_rank
from epitesting.validation import validate_all


def run(world):
    t0 = time.perf_counter()
    regions = select_regions_for_validation(simulate_world(world))
    reports = validate_all(regions, k=10, seed=0)
    names = sorted(r.name for r in regions)
    err = {k: np.array([reports[k].per_region_error[n] for n in names]) for k in reports}
    up = reports["up_saturating"]
    print(f"seed {world.seed}: {len(regions)} regions, {time.perf_counter() - t0:.1f}s")
    for k, rep in reports.items():
        extra = f"  alpha median {rep.alpha_median:.3e} CI {rep.alpha_ci}" if rep.alpha_median else ""
        print(f"  {k:<16} delta_av {rep.averaged_error:.4f}{extra}")
    for a, b in (("up_saturating", "limiting"), ("limiting", "adapted"), ("up_saturating", "adapted")):
        print(f"  wilcoxon {a} vs {b}: p = {wilcoxon_signed_rank(err[a], err[b]).p_value:.2e}")
    return up.alpha_median


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[1])
    parser.add_argument("--alpha", type=float, default=0.002)
    parser.add_argument("--regions", type=int, default=20)
    parser.add_argument("--config", help="world config file (overrides the defaults)")
    args = parser.parse_args()
    base = WorldSpec(n_regions=args.regions, alpha=args.alpha)
    if args.config:
        with open(args.config) as fh:
            base = world_from_config(fh)
    medians = []
    for seed in args.seeds:
        medians.append(run(replace(base, seed=seed)))
    rel = np.abs(np.array(medians) / base.alpha - 1)
    print(f"relative alpha error: mean {rel.mean():.1%}, worst {rel.max():.1%}")


if __name__ == "__main__":
    main()
