"""Averaged error as a function of the up-saturating threshold.

Evaluates the training objective on a log-spaced grid of alpha values for
one synthetic world, with Poisson noise or with noise-free expected counts.
Useful for checking that the objective's minimum sits at the generating
alpha and that it is finite over the whole grid.

    python scripts/alpha_landscape.py --noise-free
"""

import argparse

import numpy as np

from epitesting.ingest import build_record, select_regions_for_validation
from epitesting.simulator import (
    WorldSpec,
    draw_scenarios,
    expected_observations,
    simulate_prevalence,
    simulate_region,
    simulate_test_rates,
)
from epitesting.testing_models import TestingModel
from epitesting.validation import prepare_region, region_error


def noise_free_record(spec):
    tests = simulate_test_rates(spec)
    cases, deaths = expected_observations(simulate_prevalence(spec), tests, spec.model, spec.ifr)
    grid = {"new_cases": cases, "new_tests": np.asarray(tests.values) * spec.population, "new_deaths": deaths,
            "total_cases": np.cumsum(cases)}
    return build_record(spec.name, spec.population, spec.start_date, grid)


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--regions", type=int, default=20)
    parser.add_argument("--noise-free", action="store_true")
    args = parser.parse_args()
    world = WorldSpec(n_regions=args.regions, seed=args.seed)
    specs = draw_scenarios(world)
    if args.noise_free:
        records = [noise_free_record(s) for s in specs]
    else:
        records = select_regions_for_validation([simulate_region(s) for s in specs])
    inputs = [r for r in map(prepare_region, records) if r.scored]
    print(f"{len(inputs)} scored regions; generating alpha = {world.alpha}")
    for alpha in np.geomspace(world.alpha / 8, world.alpha * 8, 13):
        model = TestingModel("up_saturating", alpha=float(alpha))
        terms = [region_error(r, model) / r.normalizer for r in inputs]
        print(f"  alpha {alpha:.3e}  delta_av {np.mean(terms):.6f}")


if __name__ == "__main__":
    main()
