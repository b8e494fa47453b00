"""Log-linear Poisson regression with testing-model exposure offsets.

Growth rates are slopes of ``log E[Y(t)] = a + b t + log f(T(t))`` fitted
separately before and during a lockdown; their difference is the
estimated effect of the measures on the growth rate.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .testing_models import TestingModel, eval_f
from .timeseries import DailySeries, rolling_mean

MIN_WINDOW_DAYS = 5


class WindowError(ValueError):
    """A lockdown window cannot be constructed for a region."""


@dataclass(frozen=True)
class PoissonFit:
    intercept: float
    slope: float
    standard_errors: tuple[float, float]
    log_likelihood: float
    converged: bool
    n_iter: int = 0
    n_obs: int = 0


def _loglik(y, eta):
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1)))


def poisson_regress(counts, t, offset=None, tol: float = 1e-9, max_iter: int = 100) -> PoissonFit:
    """Fit ``log mu = a + b t + offset`` to counts by IRLS.

    Non-integral counts are rounded. Iterates until the relative change in
    log-likelihood drops below ``tol``; halves the step whenever an update
    would lower the likelihood. Standard errors come from the inverse
    information matrix at the optimum (observed and expected information
    coincide for the canonical log link).
    """
    y = np.rint(np.asarray(counts, dtype=float))
    t = np.asarray(t, dtype=float)
    off = np.zeros_like(t) if offset is None else np.asarray(offset, dtype=float)
    if not (len(y) == len(t) == len(off)):
        raise ValueError("counts, t and offset must have equal length")
    if len(y) < 3:
        raise ValueError("need at least three observations")
    if np.any(y < 0) or np.isnan(y).any():
        raise ValueError("counts must be non-negative and present")
    if not np.all(np.isfinite(off)):
        raise ValueError("offset must be finite")
    if np.all(y == 0):
        raise ValueError("all counts are zero")
    if np.ptp(t) == 0:
        raise ValueError("design is collinear: all time points equal")

    # centre time for conditioning; the intercept is mapped back at the end
    tc = t.mean()
    X = np.column_stack([np.ones_like(t), t - tc])
    beta = np.array([math.log(y.mean() + 1.0) - off.mean(), 0.0])
    eta = X @ beta + off
    ll = _loglik(y, eta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.exp(eta)
        z = eta - off + (y - mu) / mu
        XtW = X.T * mu
        step = np.linalg.solve(XtW @ X, XtW @ z) - beta
        scale = 1.0
        while True:
            cand = beta + scale * step
            eta_c = X @ cand + off
            ll_c = _loglik(y, eta_c) if np.all(eta_c < 700) else -np.inf
            if ll_c >= ll or scale < 1e-8:
                break
            scale *= 0.5
        change = abs(ll_c - ll) / max(abs(ll), 1.0)
        beta, eta, ll = cand, eta_c, ll_c
        if change < tol:
            converged = True
            break

    mu = np.exp(eta)
    cov = np.linalg.inv((X.T * mu) @ X)
    a = beta[0] - beta[1] * tc
    # var(a) = var(b0) + tc^2 var(b1) - 2 tc cov(b0, b1)
    var_a = cov[0, 0] + tc * tc * cov[1, 1] - 2 * tc * cov[0, 1]
    se = (math.sqrt(max(var_a, 0.0)), math.sqrt(max(cov[1, 1], 0.0)))
    return PoissonFit(float(a), float(beta[1]), se, ll, converged, it, len(y))


@dataclass(frozen=True)
class LockdownWindows:
    """Calendar windows (inclusive) for the pre- and during-lockdown fits."""

    pre: tuple[dt.date, dt.date]
    during: tuple[dt.date, dt.date]
    lockdown: dt.date | None = None

    def __post_init__(self):
        for name, (a, b) in (("pre", self.pre), ("during", self.during)):
            if (b - a).days + 1 < MIN_WINDOW_DAYS:
                raise WindowError(f"{name} window {a}..{b} is shorter than {MIN_WINDOW_DAYS} days")
        if self.pre[1] > self.during[0]:
            raise WindowError("pre window must end before the during window starts")


def mobility_reduction(mobility: DailySeries) -> np.ndarray:
    """Weekly-averaged mobility drop (positive when mobility is below baseline)."""
    return -np.asarray(rolling_mean(mobility, 7).values)


def build_windows_first_lockdown(record, lockdown_date: dt.date, mobility: DailySeries | None = None) -> LockdownWindows:
    """Windows around a lockdown with a known onset date.

    The pre window runs from the first day with at least 10 cumulative
    cases to 5 days after onset. The during window starts 10 days after
    onset and ends on the last day before the weekly mobility reduction
    falls below 80% of its maximum.
    """
    mobility = record.mobility if mobility is None else mobility
    if mobility is None:
        raise WindowError(f"{record.name}: no mobility series")
    cum = record.total_cases
    ten = np.flatnonzero(np.nan_to_num(cum.values, nan=-1) >= 10)
    if not len(ten):
        raise WindowError(f"{record.name}: never reaches 10 cumulative cases")
    first10 = cum.start_date + dt.timedelta(days=int(ten[0]))
    if first10 > lockdown_date - dt.timedelta(days=7):
        raise WindowError(f"{record.name}: fewer than 10 cases 7 days before lockdown")

    present = ~mobility.missing
    if not present.any():
        raise WindowError(f"{record.name}: mobility series is empty")
    idx = np.flatnonzero(present)
    mob = mobility.slice(int(idx[0]), int(idx[-1]) + 1)
    if not mob.is_complete():
        raise WindowError(f"{record.name}: mobility series has gaps")
    red = mobility_reduction(mob)
    start = max(mob.index_of(lockdown_date), 0)
    if start >= len(red) or np.max(red[start:]) <= 0:
        raise WindowError(f"{record.name}: mobility shows no reduction after lockdown")
    peak = start + int(np.argmax(red[start:]))
    threshold = 0.8 * red[peak]
    after = np.flatnonzero(red[peak:] < threshold)
    end_idx = peak + int(after[0]) - 1 if len(after) else len(red) - 1

    pre = (first10, lockdown_date + dt.timedelta(days=5))
    during = (lockdown_date + dt.timedelta(days=10), mob.start_date + dt.timedelta(days=end_idx))
    if (pre[1] - pre[0]).days + 1 < MIN_WINDOW_DAYS:
        raise WindowError(f"{record.name}: pre window shorter than {MIN_WINDOW_DAYS} days")
    return LockdownWindows(pre, during, lockdown_date)


def detect_second_lockdown(stringency: DailySeries, search_from: dt.date | None = None) -> dt.date:
    """First day the stringency index exceeds 50 after having been at or below 50."""
    s = stringency if search_from is None else stringency.slice(max(stringency.index_of(search_from), 0))
    vals = np.asarray(s.values)
    below = np.flatnonzero(vals <= 50)
    if not len(below):
        raise WindowError("stringency never drops to 50 or below in the analysis period")
    above = np.flatnonzero(vals[below[0]:] > 50)
    if not len(above):
        raise WindowError("stringency never rises above 50 after dropping")
    return s.start_date + dt.timedelta(days=int(below[0] + above[0]))


def build_windows_second_lockdown(record, stringency: DailySeries | None = None, search_from: dt.date | None = None,
                                  lockdown_date: dt.date | None = None) -> LockdownWindows:
    """Three-week windows before and (from day 10) during a stringency-defined lockdown."""
    if lockdown_date is None:
        stringency = record.stringency if stringency is None else stringency
        if stringency is None:
            raise WindowError(f"{record.name}: no stringency series")
        lockdown_date = detect_second_lockdown(stringency, search_from)
    pre = (lockdown_date - dt.timedelta(days=21), lockdown_date - dt.timedelta(days=1))
    during = (lockdown_date + dt.timedelta(days=10), lockdown_date + dt.timedelta(days=30))
    return LockdownWindows(pre, during, lockdown_date)


@dataclass(frozen=True)
class CausalEstimate:
    region: str
    model: str
    lambda_pre: float
    lambda_during: float
    theta: float
    se_pre: float
    se_during: float

    @classmethod
    def from_fits(cls, region, model, pre: PoissonFit, during: PoissonFit):
        return cls(region, model, pre.slope, during.slope, pre.slope - during.slope,
                   pre.standard_errors[1], during.standard_errors[1])


def fit_window(record, window: tuple[dt.date, dt.date], model: TestingModel) -> PoissonFit:
    """Poisson fit of daily cases over one window with a ``log f(T)`` offset."""
    first, last = window
    if (last - first).days + 1 < 1:
        raise WindowError("window is empty")
    y = record.new_cases.window(first, last).values
    n = len(y)
    if n < (last - first).days + 1:
        raise WindowError(f"{record.name}: window {first}..{last} extends beyond the data")
    t = np.arange(n, dtype=float)
    keep = ~np.isnan(y)
    if model.kind == "adapted":
        offset = np.zeros(n)
    else:
        if record.new_tests is None:
            raise WindowError(f"{record.name}: no test data")
        T = record.new_tests.window(first, last).values / record.population
        if len(T) < n:
            raise WindowError(f"{record.name}: tests do not cover window {first}..{last}")
        f = np.asarray(eval_f(model, np.where(np.isnan(T), 0.0, T)))
        keep &= ~np.isnan(T) & (f > 0)
        offset = np.log(np.where(f > 0, f, 1.0))
    if keep.sum() < 3:
        raise WindowError(f"{record.name}: fewer than 3 usable days in {first}..{last}")
    return poisson_regress(y[keep], t[keep], offset[keep])


def estimate_growth_and_effect(record, windows: LockdownWindows, model: TestingModel) -> CausalEstimate:
    """Growth rates before and during lockdown and their difference."""
    pre = fit_window(record, windows.pre, model)
    during = fit_window(record, windows.during, model)
    return CausalEstimate.from_fits(record.name, model.kind, pre, during)
