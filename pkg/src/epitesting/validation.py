"""Death-based validation of testing models.

A testing model turns cases and tests into a prevalence estimate, which is
converted to incidence and convolved with the infection-to-death delay to
predict the death curve. The prediction error of a region is the variance
of the log ratio between smoothed observed deaths and that prediction, so
it ignores any constant scale (fatality ratio, ``kappa``). Saturation
thresholds are fitted by minimizing the averaged, normalized error over
training regions, and scored on held-out regions by cross-validation.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .mortality import (
    DEFAULT_GAMMA,
    OnsetToDeathPMF,
    build_onset_to_death_pmf,
    incidence_from_prevalence,
    predict_death_curve,
)
from .stats import median_ci
from .testing_models import (
    KINDS,
    PARAMETER_FREE,
    SATURATING,
    TestingModel,
    alpha_from_covariates,
    canonical_kind,
    estimate_prevalence,
)
from .timeseries import DailySeries, rolling_mean

log = logging.getLogger(__name__)

MIN_DEATHS_PER_DAY = 10.0
SMOOTHING_DAYS = 7
FD_STEP = 1e-4
GTOL = 1e-6
MAX_ITER = 200

_DEFAULT_PMF = None


def default_pmf() -> OnsetToDeathPMF:
    global _DEFAULT_PMF
    if _DEFAULT_PMF is None:
        _DEFAULT_PMF = build_onset_to_death_pmf()
    return _DEFAULT_PMF


class DegeneratePredictionError(ValueError):
    """The predicted death curve is not positive where deaths were observed."""


class ObjectiveUndefinedError(ValueError):
    """No region has enough qualifying days to score a model."""


def _log_residual_variance(observed, predicted, mask):
    if mask.sum() < 2:
        return None
    if np.any(predicted[mask] <= 0) or np.any(np.isnan(predicted[mask])):
        raise DegeneratePredictionError("predicted deaths must be positive on qualifying days")
    resid = np.log(observed[mask]) - np.log(predicted[mask])
    return float(np.var(resid))


def prediction_error(observed_deaths: DailySeries, predicted: DailySeries, threshold: float = MIN_DEATHS_PER_DAY):
    """Variance of ``ln(observed) - ln(predicted)`` over days with ``observed >= threshold``.

    ``observed_deaths`` should already be smoothed. Series are aligned by
    calendar date. Returns ``None`` when fewer than two days qualify.
    """
    first = max(observed_deaths.start_date, predicted.start_date)
    last = min(observed_deaths.end_date, predicted.end_date)
    if last < first:
        return None
    obs = np.asarray(observed_deaths.window(first, last).values)
    pred = np.asarray(predicted.window(first, last).values)
    mask = ~np.isnan(obs) & (np.nan_to_num(obs, nan=-1.0) >= threshold)
    return _log_residual_variance(obs, pred, mask)


def log_death_variance(observed_deaths: DailySeries, threshold: float = MIN_DEATHS_PER_DAY) -> float | None:
    """Population variance of ``ln(observed)`` over qualifying days."""
    obs = np.asarray(observed_deaths.values)
    mask = ~np.isnan(obs) & (np.nan_to_num(obs, nan=-1.0) >= threshold)
    if mask.sum() < 2:
        return None
    return float(np.var(np.log(obs[mask])))


def averaged_error(per_region: dict, observed: dict, threshold: float = MIN_DEATHS_PER_DAY) -> float:
    """Mean over regions of ``delta / (Var(ln D) + 1)``.

    Regions whose error is ``None`` are skipped.
    """
    terms = []
    for name, delta in per_region.items():
        if delta is None:
            continue
        var = log_death_variance(observed[name], threshold)
        terms.append(delta / ((var or 0.0) + 1.0))
    if not terms:
        raise ObjectiveUndefinedError("no region has a defined prediction error")
    return float(np.mean(terms))


@dataclass(frozen=True, eq=False)
class RegionInputs:
    """Arrays needed to score a region, precomputed once.

    ``tests`` is in tests per person per day; ``deaths`` is the smoothed
    observed death rate; ``qualifying`` marks days with enough deaths.
    """

    name: str
    start_date: object
    cases: np.ndarray
    tests: np.ndarray
    deaths: np.ndarray
    qualifying: np.ndarray
    log_var: float | None
    covariates: dict = field(default_factory=dict)

    @property
    def scored(self) -> bool:
        return self.qualifying.sum() >= 2

    @property
    def normalizer(self) -> float:
        return (self.log_var or 0.0) + 1.0


def _longest_complete_run(mask):
    best = (0, 0)
    start = None
    for i, ok in enumerate(list(mask) + [False]):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    return best


def prepare_region(record, threshold: float = MIN_DEATHS_PER_DAY) -> RegionInputs:
    """Extract aligned cases, test rates and smoothed deaths from a record.

    Uses the longest run of days on which cases, tests and deaths are all
    present.
    """
    if isinstance(record, RegionInputs):
        return record
    if record.new_tests is None or record.new_deaths is None:
        raise ValueError(f"{record.name}: validation needs tests and deaths")
    mask = ~(record.new_cases.missing | record.new_tests.missing | record.new_deaths.missing)
    lo, hi = _longest_complete_run(mask)
    if hi - lo < 2:
        raise ValueError(f"{record.name}: no overlapping cases, tests and deaths")
    cases = np.asarray(record.new_cases.values[lo:hi])
    tests = np.asarray(record.new_tests.values[lo:hi]) / record.population
    deaths = rolling_mean(record.new_deaths.slice(lo, hi), SMOOTHING_DAYS).values
    qualifying = deaths >= threshold
    log_var = float(np.var(np.log(deaths[qualifying]))) if qualifying.sum() >= 2 else None
    return RegionInputs(
        name=record.name,
        start_date=record.new_cases.start_date + dt.timedelta(days=lo),
        cases=cases,
        tests=tests,
        deaths=np.asarray(deaths),
        qualifying=qualifying,
        log_var=log_var,
        covariates=dict(record.covariates),
    )


def _fill_gaps(values):
    """Linear interpolation over NaN days; constant extension at the ends."""
    bad = np.isnan(values)
    if not bad.any():
        return values
    good = np.flatnonzero(~bad)
    if not len(good):
        return None
    out = values.copy()
    out[bad] = np.interp(np.flatnonzero(bad), good, values[good])
    return out


def predict_region_deaths(inputs: RegionInputs, model: TestingModel, pmf: OnsetToDeathPMF | None = None,
                          gamma: float = DEFAULT_GAMMA) -> np.ndarray | None:
    """Smoothed death curve (up to scale) implied by a testing model for one region."""
    pmf = default_pmf() if pmf is None else pmf
    prevalence = _fill_gaps(np.asarray(estimate_prevalence(inputs.cases, inputs.tests, model), dtype=float))
    if prevalence is None:
        return None
    series = DailySeries(inputs.start_date, prevalence)
    predicted = predict_death_curve(incidence_from_prevalence(series, gamma), pmf)
    # same trailing window as the observed deaths, so the smoothing lag cancels
    return np.asarray(rolling_mean(predicted, SMOOTHING_DAYS).values)


def region_error(inputs: RegionInputs, model: TestingModel, pmf=None, gamma: float = DEFAULT_GAMMA) -> float | None:
    if not inputs.scored:
        return None
    predicted = predict_region_deaths(inputs, model, pmf, gamma)
    if predicted is None:
        raise DegeneratePredictionError(f"{inputs.name}: no usable prevalence estimate")
    return _log_residual_variance(inputs.deaths, predicted, inputs.qualifying)


class _CovariateMap:
    """Standardized covariates so the optimizer works on comparable scales.

    Parameters ``z`` map to ``alpha = scale * (z0 + sum z_i * x_std_i)``; the
    equivalent raw-unit coefficients are returned by :meth:`beta`.
    """

    def __init__(self, names, regions, scale):
        self.names = list(names)
        X = np.array([[r.covariates[c] for c in self.names] for r in regions], dtype=float)
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.sd = np.where(sd > 0, sd, 1.0)
        self.scale = scale

    def alpha(self, z, inputs):
        x = (np.array([inputs.covariates[c] for c in self.names]) - self.mean) / self.sd
        return self.scale * (z[0] + z[1:] @ x)

    def beta(self, z):
        b = self.scale * z[1:] / self.sd
        b0 = self.scale * z[0] - b @ self.mean
        return (float(b0), *map(float, b))


@dataclass(frozen=True)
class FitResult:
    kind: str
    alpha: float | None
    beta: tuple | None
    objective: float
    initial_objective: float
    n_iter: int
    converged: bool
    covariate_names: tuple = ()

    def model_for(self, inputs=None) -> TestingModel:
        """Testing model with the fitted threshold (per-region when covariates are used)."""
        if self.beta is None:
            return TestingModel(self.kind, alpha=self.alpha)
        x = [inputs.covariates[c] for c in self.covariate_names]
        return TestingModel(self.kind, alpha=alpha_from_covariates(self.beta, x), beta=self.beta)


def _central_gradient(fun, x, step=FD_STEP):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


def fit_model_params(regions, kind: str, init_alpha: float = 1e-3, covariates=None, pmf=None,
                     gamma: float = DEFAULT_GAMMA) -> FitResult:
    """Fit the saturation threshold of a saturating model to training regions.

    Minimizes the averaged normalized error over ``log(alpha)`` (or over
    covariate coefficients when ``covariates`` names are given) with BFGS
    and central finite-difference gradients. Returns the best point seen.

    Raises
    ------
    ValueError
        For parameter-free kinds or a non-positive ``init_alpha``.
    ObjectiveUndefinedError
        When no region has qualifying days or the objective is not finite
        at the starting point.
    """
    kind = canonical_kind(kind)
    if kind not in SATURATING:
        raise ValueError(f"{kind} model has no parameter to fit")
    if not init_alpha > 0:
        raise ValueError("init_alpha must be positive")
    pmf = default_pmf() if pmf is None else pmf
    inputs = [prepare_region(r) for r in regions]
    inputs = [r for r in inputs if r.scored]
    if not inputs:
        raise ObjectiveUndefinedError("no region has at least two qualifying days")

    if covariates:
        cmap = _CovariateMap(covariates, inputs, init_alpha)

        def alphas(x):
            return [cmap.alpha(x, r) for r in inputs]

        x0 = np.zeros(len(cmap.names) + 1)
        x0[0] = 1.0
    else:
        cmap = None

        def alphas(x):
            return [math.exp(x[0])] * len(inputs)

        x0 = np.array([math.log(init_alpha)])

    best = {"f": np.inf, "x": x0.copy()}

    def objective(x):
        total = 0.0
        for r, a in zip(inputs, alphas(x)):
            if not (a > 0 and np.isfinite(a)):
                return np.inf
            try:
                delta = region_error(r, TestingModel(kind, alpha=a), pmf, gamma)
            except DegeneratePredictionError:
                return np.inf
            total += delta / r.normalizer
        f = total / len(inputs)
        if f < best["f"]:
            best["f"], best["x"] = f, np.array(x, copy=True)
        return f

    f0 = objective(x0)
    if not np.isfinite(f0):
        raise ObjectiveUndefinedError("objective is not finite at the initial parameters")

    def jac(x):
        g = _central_gradient(objective, x)
        return np.where(np.isfinite(g), g, 0.0)

    res = minimize(objective, x0, jac=jac, method="BFGS", options={"gtol": GTOL, "maxiter": MAX_ITER})
    x = best["x"]
    if cmap is not None:
        beta = cmap.beta(x)
        alpha = float(np.median(alphas(x)))
        names = tuple(cmap.names)
    else:
        beta, alpha, names = None, float(math.exp(x[0])), ()
    return FitResult(kind, alpha, beta, float(best["f"]), float(f0), int(res.nit), bool(res.success), names)


@dataclass
class ValidationReport:
    """Cross-validated errors and fitted thresholds for one testing model.

    Thresholds are in tests per person per day. ``predictions`` holds the
    held-out predicted death curve per region (not serialized).
    """

    kind: str
    per_region_error: dict
    averaged_error: float
    folds: dict = field(default_factory=dict)
    per_fold_alpha: list = field(default_factory=list)
    per_fold_beta: list = field(default_factory=list)
    alpha_median: float | None = None
    alpha_ci: tuple | None = None
    predictions: dict = field(default_factory=dict, repr=False)

    def to_dict(self, per_million: bool = False) -> dict:
        scale = 1e6 if per_million else 1.0
        out = {
            "kind": self.kind,
            "per_region_error": dict(self.per_region_error),
            "averaged_error": self.averaged_error,
        }
        if self.kind in SATURATING:
            out["per_fold_alpha"] = [a * scale for a in self.per_fold_alpha]
            out["alpha_median"] = None if self.alpha_median is None else self.alpha_median * scale
            out["alpha_ci"] = None if self.alpha_ci is None else [v * scale for v in self.alpha_ci]
            if self.per_fold_beta:
                out["per_fold_beta"] = [list(b) for b in self.per_fold_beta]
            out["alpha_units"] = "tests per million per day" if per_million else "tests per person per day"
        return out


def assign_folds(names, k: int, seed: int) -> dict:
    """Deterministic fold index per region from the seed and the sorted names."""
    names = sorted(names)
    order = np.random.default_rng(seed).permutation(len(names))
    return {names[j]: int(pos % k) for pos, j in enumerate(order)}


def cross_validate(regions, kind: str, k: int = 10, seed: int = 0, init_alpha: float = 1e-3, covariates=None,
                   pmf=None, gamma: float = DEFAULT_GAMMA, confidence: float = 0.95) -> ValidationReport:
    """k-fold cross-validation of a testing model across regions.

    For saturating kinds the threshold is refitted on each training split
    and every region is scored with the threshold fitted without it.
    Parameter-free kinds are scored directly on every region.
    """
    kind = canonical_kind(kind)
    pmf = default_pmf() if pmf is None else pmf
    inputs = {r.name: prepare_region(r) for r in regions}
    names = sorted(inputs)

    per_region, predictions, folds = {}, {}, {}
    fold_alpha, fold_beta = [], []
    if kind in PARAMETER_FREE:
        model = TestingModel(kind)
        for n in names:
            per_region[n] = region_error(inputs[n], model, pmf, gamma)
            predictions[n] = predict_region_deaths(inputs[n], model, pmf, gamma)
    else:
        if k < 2:
            raise ValueError("need at least two folds for a parametric model")
        if len(names) < k:
            raise ValueError(f"need at least {k} regions for {k}-fold cross-validation, got {len(names)}")
        folds = assign_folds(names, k, seed)
        for f in range(k):
            held = [n for n in names if folds[n] == f]
            train = [inputs[n] for n in names if folds[n] != f]
            fit = fit_model_params(train, kind, init_alpha, covariates, pmf, gamma)
            log.info("fold %d: %s alpha=%.4g objective=%.4g", f, kind, fit.alpha, fit.objective)
            fold_alpha.append(fit.alpha)
            if fit.beta is not None:
                fold_beta.append(fit.beta)
            for n in held:
                model = fit.model_for(inputs[n])
                try:
                    per_region[n] = region_error(inputs[n], model, pmf, gamma)
                except DegeneratePredictionError:
                    per_region[n] = None
                predictions[n] = predict_region_deaths(inputs[n], model, pmf, gamma)
        per_region = {n: per_region[n] for n in names}

    terms = [per_region[n] / inputs[n].normalizer for n in names if per_region[n] is not None]
    if not terms:
        raise ObjectiveUndefinedError("no region has a defined prediction error")
    report = ValidationReport(kind, per_region, float(np.mean(terms)), folds, fold_alpha, fold_beta,
                              predictions=predictions)
    if fold_alpha:
        report.alpha_median = float(np.median(fold_alpha))
        try:
            _, lo, hi = median_ci(fold_alpha, confidence)
            report.alpha_ci = (lo, hi)
        except ValueError:
            report.alpha_ci = None
    return report


def validate_all(regions, kinds=KINDS, **kwargs) -> dict:
    """Cross-validation report for each requested kind, on identical folds."""
    return {canonical_kind(k): cross_validate(regions, k, **kwargs) for k in kinds}
