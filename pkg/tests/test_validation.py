import dataclasses
import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epitesting.ingest import select_regions_for_validation
from epitesting.simulator import WorldSpec, draw_scenarios, simulate_region
from epitesting.testing_models import TestingModel
from epitesting.timeseries import DailySeries
from epitesting.validation import (
    DegeneratePredictionError,
    ObjectiveUndefinedError,
    assign_folds,
    averaged_error,
    cross_validate,
    fit_model_params,
    log_death_variance,
    predict_region_deaths,
    prediction_error,
    prepare_region,
    region_error,
)

D0 = dt.date(2020, 3, 1)
ALPHA_TRUE = 0.002


def series(values, start=D0):
    return DailySeries(start, values)


class TestPredictionError:
    def test_identical(self):
        obs = series(np.linspace(10, 100, 30))
        assert prediction_error(obs, obs) == 0

    def test_scaled(self):
        obs = series(np.linspace(10, 100, 30))
        assert prediction_error(obs, series(3.7 * obs.values)) == pytest.approx(0, abs=1e-15)

    def test_two_point_population_variance(self):
        assert prediction_error(series([10, 20]), series([10, 10])) == pytest.approx(math.log(2) ** 2 / 4)

    def test_threshold_and_missing(self):
        assert prediction_error(series([5, 9, 11]), series([1, 1, 1])) is None
        assert prediction_error(series([5, 12, 30]), series([1, 2, 3])) == pytest.approx(
            np.var(np.log([12 / 2, 30 / 3])))

    def test_calendar_alignment(self):
        obs = series([10, 20, 40, 80, 160])
        pred = series([20, 40, 80, 160], start=D0 + dt.timedelta(days=1))
        assert prediction_error(obs, pred) == pytest.approx(0, abs=1e-15)

    def test_degenerate_prediction(self):
        with pytest.raises(DegeneratePredictionError):
            prediction_error(series([10, 20]), series([0, 1]))

    def test_scale_invariance_random(self, rng):
        for _ in range(50):
            obs = series(rng.uniform(5, 500, 40))
            pred = series(rng.uniform(1, 100, 40))
            base = prediction_error(obs, pred)
            for c in (1e-3, 1.0, 1e3):
                assert abs(prediction_error(obs, series(c * pred.values)) - base) <= 1e-12


class TestAveragedError:
    def test_single_zero(self):
        obs = {"A": series(np.linspace(10, 100, 20))}
        assert averaged_error({"A": 0.0}, obs) == 0

    def test_mean_of_normalized(self):
        flat = series([50.0] * 10)
        assert averaged_error({"A": 0.1, "B": 0.3}, {"A": flat, "B": flat}) == pytest.approx(0.2)

    def test_constant_deaths_denominator_one(self):
        assert log_death_variance(series([50.0] * 10)) == pytest.approx(0, abs=1e-20)
        assert averaged_error({"A": 0.5}, {"A": series([50.0] * 10)}) == pytest.approx(0.5)

    def test_normalizer(self):
        obs = series([10, 20, 40])
        var = np.var(np.log([10, 20, 40]))
        assert averaged_error({"A": 0.4}, {"A": obs}) == pytest.approx(0.4 / (var + 1))

    def test_no_regions(self):
        with pytest.raises(ObjectiveUndefinedError):
            averaged_error({"A": None}, {"A": series([1, 2])})


class TestRegionScoring:
    def test_invariant_to_kappa(self, world_selected):
        inputs = prepare_region(world_selected[0])
        a = region_error(inputs, TestingModel("up_saturating", alpha=1e-3))
        b = region_error(inputs, TestingModel("up_saturating", kappa=250.0, alpha=1e-3))
        assert b == pytest.approx(a, abs=1e-12)

    def test_invariant_to_ifr(self, world_selected):
        inputs = prepare_region(world_selected[0])
        scaled = dataclasses.replace(inputs, deaths=inputs.deaths * 7.0, qualifying=inputs.qualifying)
        m = TestingModel("limiting")
        assert region_error(scaled, m) == pytest.approx(region_error(inputs, m), abs=1e-12)

    def test_noise_free_truth_scores_zero(self):
        from epitesting.simulator import expected_observations, simulate_prevalence, simulate_test_rates
        from epitesting.timeseries import rolling_mean

        spec = draw_scenarios(WorldSpec(n_regions=1, seed=4))[0]
        inputs = prepare_region(simulate_region(spec))
        tests = simulate_test_rates(spec)
        cases, deaths = expected_observations(simulate_prevalence(spec), tests, spec.model, spec.ifr)
        smoothed = rolling_mean(DailySeries(D0, deaths), 7).values
        clean = dataclasses.replace(inputs, cases=cases, deaths=smoothed, qualifying=smoothed >= 10)
        assert region_error(clean, spec.model) == pytest.approx(0, abs=1e-12)
        assert region_error(clean, TestingModel("up_saturating", alpha=2 * ALPHA_TRUE)) > 1e-4

    @given(st.floats(math.log(1e-6), math.log(1.0)))
    @settings(max_examples=25, deadline=None)
    def test_objective_finite_everywhere(self, log_alpha):
        from tests.conftest import synthetic_world

        inputs = prepare_region(select_regions_for_validation(list(synthetic_world()))[0])
        assert np.isfinite(region_error(inputs, TestingModel("up_saturating", alpha=math.exp(log_alpha))))


class TestFitting:
    def test_parameter_free_rejected(self, world_selected):
        for kind in ("adapted", "limiting"):
            with pytest.raises(ValueError, match="no parameter"):
                fit_model_params(world_selected, kind)

    def test_bad_init(self, world_selected):
        with pytest.raises(ValueError):
            fit_model_params(world_selected, "up", init_alpha=0.0)

    def test_no_qualifying_days(self, world_selected):
        inputs = prepare_region(world_selected[0])
        empty = dataclasses.replace(inputs, qualifying=np.zeros_like(inputs.qualifying))
        with pytest.raises(ObjectiveUndefinedError):
            fit_model_params([empty], "up")

    def test_recovers_alpha_and_descends(self, world_selected):
        fit = fit_model_params(world_selected, "up_saturating", init_alpha=1e-3)
        assert fit.alpha == pytest.approx(ALPHA_TRUE, rel=0.1)
        assert fit.objective <= fit.initial_objective

    def test_covariate_alpha(self):
        world = WorldSpec(n_regions=20, seed=8)
        rng = np.random.default_rng(8)
        regions = []
        for spec in draw_scenarios(world):
            gdp = float(rng.uniform(1e4, 6e4))
            alpha = 5e-4 + 5e-8 * gdp  # 1e-3 .. 3.5e-3
            spec = dataclasses.replace(spec, model=TestingModel("up_saturating", alpha=alpha),
                                       covariates={"gdp_per_capita": gdp})
            regions.append(simulate_region(spec))
        regions = select_regions_for_validation(regions)
        fit = fit_model_params(regions, "up", covariates=["gdp_per_capita"])
        assert fit.covariate_names == ("gdp_per_capita",)
        b0, b1 = fit.beta
        for gdp in (2e4, 5e4):
            assert b0 + b1 * gdp == pytest.approx(5e-4 + 5e-8 * gdp, rel=0.15)
        model = fit.model_for(prepare_region(regions[0]))
        assert model.alpha == pytest.approx(b0 + b1 * regions[0].covariates["gdp_per_capita"])


class TestCrossValidation:
    def test_folds_deterministic_and_order_free(self):
        names = [f"R{i}" for i in range(23)]
        a = assign_folds(names, 10, seed=4)
        assert a == assign_folds(list(reversed(names)), 10, seed=4)
        assert sorted(set(a.values())) == list(range(10))
        assert a != assign_folds(names, 10, seed=5)

    def test_parameter_free_ignores_seed(self, world_selected):
        a = cross_validate(world_selected, "limiting", seed=0)
        b = cross_validate(world_selected, "limiting", seed=99)
        assert a.per_region_error == b.per_region_error
        assert "alpha_median" not in a.to_dict()

    def test_k_checks(self, world_selected):
        with pytest.raises(ValueError):
            cross_validate(world_selected, "up", k=1)
        with pytest.raises(ValueError):
            cross_validate(world_selected[:5], "up", k=10)

    def test_duplicated_regions_equal_alphas(self, world_selected):
        base = world_selected[0]
        copies = [dataclasses.replace(prepare_region(base), name=f"copy {i}") for i in range(6)]
        rep = cross_validate(copies, "up", k=3)
        assert max(rep.per_fold_alpha) == pytest.approx(min(rep.per_fold_alpha), rel=1e-9)
        assert rep.alpha_ci is None  # three folds are too few for a 95% interval

    def test_report_invariants(self, world_selected):
        rep = cross_validate(world_selected, "up", k=10, seed=0)
        assert all(v >= 0 for v in rep.per_region_error.values())
        lo, hi = rep.alpha_ci
        assert lo <= rep.alpha_median <= hi
        d = rep.to_dict(per_million=True)
        assert d["alpha_median"] == pytest.approx(rep.alpha_median * 1e6)

    @pytest.mark.slow
    def test_thirty_region_model_selection(self):
        from tests.conftest import synthetic_world

        regions = select_regions_for_validation(list(synthetic_world(seed=6, n_regions=30)))
        errs = {k: cross_validate(regions, k, k=10).averaged_error for k in ("adapted", "limiting", "up_saturating")}
        assert errs["up_saturating"] < errs["adapted"]
        assert errs["up_saturating"] < errs["limiting"]

    @pytest.mark.slow
    def test_gamma_insensitive_ranking(self, world_selected):
        rankings = []
        for g in (0.15, 0.2, 0.25):
            errs = {k: cross_validate(world_selected, k, k=10, gamma=g).averaged_error
                    for k in ("adapted", "limiting", "up_saturating")}
            rankings.append(sorted(errs, key=errs.get))
        assert rankings[0] == rankings[1] == rankings[2]
