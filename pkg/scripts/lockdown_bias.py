"""Growth-rate inflation from growing test volume.

Simulates regions whose cases follow the limiting-factor regime while
tests grow at a fixed daily rate, then estimates pre-lockdown growth with
the adapted model (raw cases) and the up-saturating model. The gap between
the two should approach the test growth rate.

    python scripts/lockdown_bias.py --growth 0.13 --regions 13
"""

import argparse
import datetime as dt

import numpy as np

from epitesting.regression import build_windows_first_lockdown, estimate_growth_and_effect
from epitesting.simulator import ScenarioSpec, simulate_region
from epitesting.stats import wilcoxon_signed_rank
from epitesting.testing_models import TestingModel


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--growth", type=float, default=0.13, help="daily test growth rate")
    parser.add_argument("--lambda0", type=float, default=0.07)
    parser.add_argument("--regions", type=int, default=13)
    parser.add_argument("--alpha-up", type=float, default=1710e-6)
    parser.add_argument("--seed", type=int, default=8)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    models = {"adapted": TestingModel("adapted"), "up": TestingModel("up_saturating", alpha=args.alpha_up)}
    rows = []
    for i in range(args.regions):
        spec = ScenarioSpec(I0=float(rng.uniform(500, 2000)), lambda0=args.lambda0, theta0=0.12,
                            t_L=int(rng.integers(30, 41)), days=90, test_initial=float(rng.uniform(1e-6, 4e-6)),
                            test_growth_pre=args.growth, test_growth_post=args.growth,
                            model=TestingModel("limiting", kappa=500.0), seed=100 + i, report_delay=5)
        rec = simulate_region(spec)
        windows = build_windows_first_lockdown(rec, spec.start_date + dt.timedelta(days=spec.t_L))
        rows.append({k: estimate_growth_and_effect(rec, windows, m) for k, m in models.items()})
    for k in models:
        pre = [r[k].lambda_pre for r in rows]
        theta = [r[k].theta for r in rows]
        print(f"{k:<8} median lambda_pre {np.median(pre):.3f}  median theta {np.median(theta):.3f}")
    a = np.array([r["adapted"].lambda_pre for r in rows])
    u = np.array([r["up"].lambda_pre for r in rows])
    print(f"median gap {np.median(a - u):.3f} (test growth {args.growth}); "
          f"paired Wilcoxon p = {wilcoxon_signed_rank(a, u).p_value:.2e}")


if __name__ == "__main__":
    main()
