import datetime as dt
import math

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from epitesting.ingest import build_record
from epitesting.regression import (
    LockdownWindows,
    WindowError,
    build_windows_first_lockdown,
    build_windows_second_lockdown,
    detect_second_lockdown,
    estimate_growth_and_effect,
    fit_window,
    poisson_regress,
)
from epitesting.simulator import ScenarioSpec, simulate_region
from epitesting.testing_models import KINDS, TestingModel
from epitesting.timeseries import DailySeries

D0 = dt.date(2020, 3, 1)


def d(day):
    return D0 + dt.timedelta(days=day)


class TestPoissonRegress:
    def test_noise_free_exponential(self):
        t = np.arange(21)
        fit = poisson_regress(np.round(np.exp(1 + 0.2 * t)), t)
        assert fit.slope == pytest.approx(0.2, abs=1e-3)
        assert fit.converged

    def test_constant(self):
        fit = poisson_regress(np.full(10, 17), np.arange(10))
        assert fit.slope == pytest.approx(0, abs=1e-10)
        assert fit.intercept == pytest.approx(math.log(17))

    def test_exposure_cancels_trend(self):
        t = np.arange(30)
        T = 1e-4 * np.exp(0.13 * t)
        counts = np.round(5000 * T / T[0])
        fit = poisson_regress(counts, t, np.log(T))
        assert fit.slope == pytest.approx(0, abs=1e-3)

    def test_matches_statsmodels(self, rng):
        for _ in range(10):
            t = np.arange(25, dtype=float)
            off = rng.normal(0, 0.3, 25)
            y = rng.poisson(np.exp(2 + 0.05 * t + off))
            ours = poisson_regress(y, t, off)
            X = sm.add_constant(t)
            ref = sm.GLM(y, X, family=sm.families.Poisson(), offset=off).fit(tol=1e-12)
            assert (ours.intercept, ours.slope) == pytest.approx(tuple(ref.params), rel=1e-6, abs=1e-8)
            assert ours.standard_errors == pytest.approx(tuple(ref.bse), rel=1e-5)
            assert ours.log_likelihood == pytest.approx(ref.llf, rel=1e-9)

    @given(st.floats(-20, 20))
    @settings(max_examples=25, deadline=None)
    def test_offset_shift(self, c):
        t = np.arange(15)
        y = np.array([3, 4, 4, 7, 9, 8, 12, 15, 14, 20, 22, 30, 28, 35, 41])
        a = poisson_regress(y, t)
        b = poisson_regress(y, t, np.full(15, c))
        assert b.slope == pytest.approx(a.slope, abs=1e-8)
        assert b.intercept == pytest.approx(a.intercept - c, abs=1e-7)

    @pytest.mark.parametrize("counts,t,msg", [
        ([0, 0, 0], [0, 1, 2], "zero"),
        ([1, 2, 3], [1, 1, 1], "collinear"),
        ([1, 2], [0, 1], "three"),
    ])
    def test_errors(self, counts, t, msg):
        with pytest.raises(ValueError, match=msg):
            poisson_regress(counts, t)

    def test_rounds_interpolated_counts(self):
        t = np.arange(5)
        assert poisson_regress([1.2, 2.4, 2.6, 4.0, 5.1], t) == poisson_regress([1, 2, 3, 4, 5], t)


def lockdown_record(mobility, n=60, cases_start=10):
    cases = np.cumsum(np.full(n, 3.0)) + cases_start - 3
    grid = {"total_cases": cases, "total_tests": np.cumsum(np.full(n, 100.0)), "mobility": np.asarray(mobility, float)}
    return build_record("R", 10**6, D0, grid)


class TestWindows:
    def test_first_lockdown_windows(self):
        n = 60
        mob = np.zeros(n)
        mob[12:40] = -60.0
        mob[40:] = -10.0
        rec = lockdown_record(mob, n)
        w = build_windows_first_lockdown(rec, dt.date(2020, 3, 13))
        assert w.pre == (D0, dt.date(2020, 3, 18))
        assert w.during[0] == dt.date(2020, 3, 23)
        weekly = np.array([np.mean(mob[max(0, i - 6): i + 1]) for i in range(n)])
        drop = 40 + int(np.argmax(-weekly[40:] < 48))
        assert w.during[1] == d(drop - 1)

    def test_during_ends_before_drop_below_80_percent(self):
        n = 80
        mob = np.zeros(n)
        mob[10:] = -60.0
        mob[50:] = -40.0  # below 48: weekly mean crosses 48 a few days later
        w = build_windows_first_lockdown(lockdown_record(mob, n), d(10))
        weekly = np.array([np.mean(mob[max(0, i - 6): i + 1]) for i in range(n)])
        end = w.during[1] - D0
        assert -weekly[end.days] >= 48 and -weekly[end.days + 1] < 48

    def test_first_lockdown_needs_cases(self):
        mob = np.full(60, -50.0)
        with pytest.raises(WindowError):
            build_windows_first_lockdown(lockdown_record(mob, cases_start=0.5), d(3))
        rec = build_record("R", 10**6, D0, {"total_cases": np.arange(60.0)})
        with pytest.raises(WindowError, match="mobility"):
            build_windows_first_lockdown(rec, d(20))

    def test_detect_second(self):
        s = DailySeries(dt.date(2020, 10, 1), [40, 45, 55, 60])
        assert detect_second_lockdown(s) == dt.date(2020, 10, 3)
        with pytest.raises(WindowError):
            detect_second_lockdown(DailySeries(dt.date(2020, 10, 1), [60] * 30))

    def test_second_windows(self):
        rec = build_record("R", 10**6, D0, {"total_cases": np.arange(90.0), "stringency_index": np.r_[np.full(40, 30), np.full(50, 70)]})
        w = build_windows_second_lockdown(rec)
        L = d(40)
        assert w.lockdown == L
        assert w.pre == (L - dt.timedelta(days=21), L - dt.timedelta(days=1))
        assert w.during == (L + dt.timedelta(days=10), L + dt.timedelta(days=30))
        assert build_windows_second_lockdown(rec, lockdown_date=d(50)).lockdown == d(50)

    def test_window_validation(self):
        with pytest.raises(WindowError):
            LockdownWindows((d(0), d(3)), (d(10), d(20)))
        with pytest.raises(WindowError):
            LockdownWindows((d(0), d(12)), (d(10), d(20)))


def scenario(**kw):
    base = dict(I0=500.0, lambda0=0.2, theta0=0.3, t_L=25, days=60, test_initial=1e-3, test_growth_pre=0.0,
                test_growth_post=0.0, model=TestingModel("limiting", kappa=50.0), seed=3)
    base.update(kw)
    return ScenarioSpec(**base)


class TestEffects:
    @pytest.mark.parametrize("kind", KINDS)
    def test_theta_with_constant_tests(self, kind):
        spec = scenario()
        rec = simulate_region(spec)
        w = LockdownWindows((d(5), d(24)), (d(30), d(50)), d(25))
        model = TestingModel(kind, alpha=1e-3 if kind in ("up_saturating", "down_saturating") else None)
        est = estimate_growth_and_effect(rec, w, model)
        assert est.theta == pytest.approx(0.3, abs=0.02)
        assert est.theta == est.lambda_pre - est.lambda_during

    def test_noise_free_recovery(self):
        # expected counts fed straight in: matching model recovers the slopes
        spec = scenario(test_growth_pre=0.1, test_growth_post=0.05, test_initial=1e-4)
        from epitesting.simulator import expected_observations, simulate_prevalence, simulate_test_rates

        prev, tests = simulate_prevalence(spec), simulate_test_rates(spec)
        cases, _ = expected_observations(prev, tests, spec.model, 0.0)
        rec = build_record("R", spec.population, D0, {"new_cases": cases * 1e3,
                                                       "new_tests": np.asarray(tests.values) * spec.population})
        w = LockdownWindows((d(2), d(24)), (d(26), d(55)))
        scaled = TestingModel("limiting")
        est = estimate_growth_and_effect(rec, w, scaled)
        assert est.lambda_pre == pytest.approx(0.2, abs=1e-3)
        assert est.lambda_during == pytest.approx(-0.1, abs=1e-3)

    def test_kappa_invariance(self):
        rec = simulate_region(scenario(test_growth_pre=0.05))
        w = LockdownWindows((d(5), d(24)), (d(30), d(50)))
        for kind, alpha in (("limiting", None), ("up_saturating", 2e-3), ("down_saturating", 1e-4)):
            a = estimate_growth_and_effect(rec, w, TestingModel(kind, alpha=alpha))
            b = estimate_growth_and_effect(rec, w, TestingModel(kind, kappa=37.0, alpha=alpha))
            assert b.theta == pytest.approx(a.theta, abs=1e-8)

    def test_zero_test_days_dropped(self):
        n = 20
        tests = np.full(n, 100.0)
        tests[3:6] = 0
        rec = build_record("R", 10**6, D0, {"new_cases": np.arange(10.0, 30.0), "new_tests": tests})
        fit = fit_window(rec, (d(0), d(19)), TestingModel("limiting"))
        assert fit.n_obs == 17
        tests[:] = 0
        tests[:2] = 100
        rec = build_record("R", 10**6, D0, {"new_cases": np.arange(10.0, 30.0), "new_tests": tests})
        with pytest.raises(WindowError):
            fit_window(rec, (d(0), d(19)), TestingModel("limiting"))

    def test_window_beyond_data(self):
        rec = build_record("R", 10**6, D0, {"new_cases": np.arange(10.0)})
        with pytest.raises(WindowError):
            fit_window(rec, (d(5), d(20)), TestingModel("adapted"))

    def test_deterministic_windows(self):
        rec = simulate_region(scenario())
        assert build_windows_first_lockdown(rec, d(25)) == build_windows_first_lockdown(rec, d(25))
