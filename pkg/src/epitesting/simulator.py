"""Synthetic surveillance data with known ground truth.

Prevalence follows a piecewise exponential (growth rate ``lambda0``, reduced
by ``theta0`` from the lockdown day ``t_L``), test rates grow exponentially
at different rates before and after ``t_L``, and daily cases and deaths are
Poisson draws around the expectations implied by a chosen testing regime
and the infection-to-death delay.

Random streams use numpy's PCG64 generator seeded per scenario; Poisson
variates use numpy's sampler (inversion for small means, transformed
rejection for large ones), so a seed fully determines the output.

The module also houses a risk-structured population: individuals carry a
risk score, the ``T`` highest-risk individuals are tested, and the number
of infectious among them can be computed analytically or by sampling.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.optimize import brentq

from .ingest import RegionRecord, build_record
from .mortality import DEFAULT_GAMMA, build_onset_to_death_pmf, incidence_from_prevalence, predict_death_curve
from .testing_models import TestingModel, eval_f
from .timeseries import DailySeries

MAX_EXPECTED = 1e12
DEFAULT_POPULATION = 10_000_000


class ScenarioError(ValueError):
    """A scenario specification is invalid or cannot be parsed."""


@dataclass(frozen=True)
class ScenarioSpec:
    """One synthetic region.

    Rates are per day; ``test_initial`` is in tests per person per day.
    ``report_delay`` shifts the prevalence seen in cases and deaths by that
    many days, mimicking the lag between infection and reporting.
    """

    I0: float
    lambda0: float
    theta0: float
    t_L: int
    days: int
    test_initial: float
    test_growth_pre: float
    test_growth_post: float
    model: TestingModel
    ifr: float = 0.01
    seed: int = 0
    name: str = "region"
    population: int = DEFAULT_POPULATION
    start_date: dt.date = dt.date(2020, 3, 1)
    report_delay: int = 0
    mobility_drop: float = 60.0
    mobility_hold: int = 40
    stringency_before: float = 30.0
    stringency_after: float = 70.0
    covariates: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.I0 > 0:
            raise ScenarioError("I0 must be positive")
        if self.t_L < 0 or self.days < self.t_L + 15:
            raise ScenarioError(f"days ({self.days}) must be at least t_L + 15 ({self.t_L + 15})")
        if not self.test_initial > 0:
            raise ScenarioError("test_initial must be positive")
        if not 0 <= self.ifr <= 1:
            raise ScenarioError("ifr must lie in [0, 1]")
        if not self.population > 0:
            raise ScenarioError("population must be positive")
        if self.report_delay < 0:
            raise ScenarioError("report_delay must be non-negative")


def _log_prevalence(spec: ScenarioSpec, t):
    t = np.asarray(t, dtype=float)
    after = np.clip(t - spec.t_L, 0.0, None)
    return math.log(spec.I0) + spec.lambda0 * t - spec.theta0 * after


def simulate_prevalence(spec: ScenarioSpec) -> DailySeries:
    """Infectious individuals ``I0 * exp(lambda0 t - theta0 (t - t_L)^+)``."""
    return DailySeries(spec.start_date, np.exp(_log_prevalence(spec, np.arange(spec.days))))


def simulate_test_rates(spec: ScenarioSpec) -> DailySeries:
    """Tests per person per day, rounded to whole tests for the region."""
    t = np.arange(spec.days, dtype=float)
    log_rate = (math.log(spec.test_initial) + spec.test_growth_pre * np.minimum(t, spec.t_L)
                + spec.test_growth_post * np.clip(t - spec.t_L, 0.0, None))
    counts = np.maximum(np.rint(np.exp(log_rate) * spec.population), 1.0)
    return DailySeries(spec.start_date, counts / spec.population)


def simulate_mobility(spec: ScenarioSpec) -> DailySeries:
    """Summed mobility change: drops over a week after ``t_L``, holds, then recovers over 30 days."""
    t = np.arange(spec.days, dtype=float) - spec.t_L
    down = np.clip(t / 7.0, 0.0, 1.0)
    up = np.clip((t - 7.0 - spec.mobility_hold) / 30.0, 0.0, 1.0)
    return DailySeries(spec.start_date, -spec.mobility_drop * down * (1.0 - up), signed=True)


def simulate_stringency(spec: ScenarioSpec) -> DailySeries:
    t = np.arange(spec.days)
    return DailySeries(spec.start_date, np.where(t < spec.t_L, spec.stringency_before, spec.stringency_after))


def expected_observations(prevalence: DailySeries, tests: DailySeries, model: TestingModel, ifr: float,
                          pmf=None, gamma: float = DEFAULT_GAMMA):
    """Expected daily cases ``I f(T)`` and deaths ``ifr (pmf * i)``."""
    pmf = build_onset_to_death_pmf() if pmf is None else pmf
    cases = np.asarray(prevalence.values) * np.asarray(eval_f(model, tests.values))
    deaths = ifr * np.asarray(predict_death_curve(incidence_from_prevalence(prevalence, gamma), pmf).values)
    return cases, deaths


def _poisson(rng, mean):
    mean = np.asarray(mean, dtype=float)
    if np.any(mean > MAX_EXPECTED):
        raise OverflowError(f"expected count exceeds {MAX_EXPECTED:g}")
    return rng.poisson(mean).astype(float)


def simulate_observations(prevalence: DailySeries, tests: DailySeries, model: TestingModel, ifr: float, seed,
                          pmf=None, gamma: float = DEFAULT_GAMMA):
    """Poisson-sampled daily cases and deaths; identical output for identical seeds."""
    exp_cases, exp_deaths = expected_observations(prevalence, tests, model, ifr, pmf, gamma)
    rng = np.random.Generator(np.random.PCG64(seed))
    cases = _poisson(rng, exp_cases)
    deaths = _poisson(rng, exp_deaths)
    return DailySeries(prevalence.start_date, cases), DailySeries(prevalence.start_date, deaths)


def simulate_region(spec: ScenarioSpec, pmf=None) -> RegionRecord:
    """Full synthetic record in the same form the CSV parser produces."""
    delay = spec.report_delay
    # prevalence as seen by reporting: I(t - delay), extended before day 0 by the same exponential
    seen = DailySeries(spec.start_date, np.exp(_log_prevalence(spec, np.arange(spec.days) - delay)))
    tests = simulate_test_rates(spec)
    cases, deaths = simulate_observations(seen, tests, spec.model, spec.ifr, spec.seed, pmf)
    test_counts = np.rint(np.asarray(tests.values) * spec.population)
    grid = {
        "new_cases": np.asarray(cases.values),
        "total_cases": np.cumsum(cases.values),
        "new_tests": test_counts,
        "total_tests": np.cumsum(test_counts),
        "new_deaths": np.asarray(deaths.values),
        "total_deaths": np.cumsum(deaths.values),
        "stringency_index": np.asarray(simulate_stringency(spec).values),
        "mobility": np.asarray(simulate_mobility(spec).values),
    }
    for key, value in spec.covariates.items():
        grid[key] = np.full(spec.days, float(value))
    return build_record(spec.name, int(spec.population), spec.start_date, grid)


@dataclass(frozen=True)
class WorldSpec:
    """A set of synthetic regions whose parameters are drawn from ranges.

    Every numeric field is either a scalar or a ``(low, high)`` pair from
    which each region draws uniformly (log-uniformly for ``I0`` and
    ``test_initial``).
    """

    n_regions: int = 20
    days: int = 150
    I0: object = (1000.0, 4000.0)
    lambda0: object = (0.06, 0.12)
    theta0: object = (0.10, 0.18)
    t_L: object = (45, 70)
    test_initial: object = (2e-5, 1e-4)
    test_growth_pre: object = (0.03, 0.06)
    test_growth_post: object = (0.0, 0.02)
    model: str = "up_saturating"
    alpha: float | None = 0.002
    kappa: float = 1.0
    ifr: float = 0.01
    seed: int = 0
    population: int = DEFAULT_POPULATION
    start_date: dt.date = dt.date(2020, 3, 1)
    report_delay: int = 0
    mobility_drop: float = 60.0
    mobility_hold: object = 40
    name_prefix: str = "Region"

    LOG_UNIFORM = ("I0", "test_initial")
    INTEGER = ("t_L", "mobility_hold", "days")

    def testing_model(self) -> TestingModel:
        alpha = self.alpha if self.model in ("up_saturating", "down_saturating") else None
        return TestingModel(self.model, kappa=self.kappa, alpha=alpha)


def _draw(rng, name, value):
    if isinstance(value, (tuple, list)):
        lo, hi = value
        if name in WorldSpec.LOG_UNIFORM:
            x = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        else:
            x = rng.uniform(lo, hi)
    else:
        x = value
    return int(round(x)) if name in WorldSpec.INTEGER else float(x)


def draw_scenarios(world: WorldSpec) -> list[ScenarioSpec]:
    """Per-region scenarios; parameters and noise streams derive from ``world.seed``."""
    model = world.testing_model()
    rng = np.random.Generator(np.random.PCG64(world.seed))
    children = np.random.SeedSequence(world.seed).spawn(world.n_regions)
    width = len(str(world.n_regions))
    specs = []
    for i in range(world.n_regions):
        params = {name: _draw(rng, name, getattr(world, name))
                  for name in ("I0", "lambda0", "theta0", "t_L", "test_initial", "test_growth_pre",
                               "test_growth_post", "mobility_hold")}
        specs.append(ScenarioSpec(
            days=int(world.days), model=model, ifr=world.ifr,
            seed=int(children[i].generate_state(1)[0]),
            name=f"{world.name_prefix} {i + 1:0{width}d}",
            population=world.population, start_date=world.start_date,
            report_delay=world.report_delay, mobility_drop=world.mobility_drop,
            **params,
        ))
    return specs


def simulate_world(world: WorldSpec) -> list[RegionRecord]:
    pmf = build_onset_to_death_pmf()
    return [simulate_region(s, pmf) for s in draw_scenarios(world)]


def _parse_value(key, text, kind):
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return (float(lo), float(hi))
    if kind is dt.date:
        return dt.date.fromisoformat(text)
    if kind is str:
        return text
    if kind is int:
        return int(text)
    if text.lower() in ("none", ""):
        return None
    return float(text)


_WORLD_KINDS = {
    "n_regions": int, "seed": int, "population": int, "report_delay": int,
    "model": str, "name_prefix": str, "start_date": dt.date,
}


def parse_config(lines) -> dict:
    """``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ScenarioError(f"line {lineno}: empty key")
        out[key] = value
    return out


def world_from_config(lines) -> WorldSpec:
    """Build a :class:`WorldSpec` from config-file lines.

    Ranges are written ``low..high``. Unknown keys are rejected.
    """
    raw = parse_config(lines)
    known = {f.name for f in fields(WorldSpec)}
    kwargs = {}
    for key, text in raw.items():
        if key not in known:
            raise ScenarioError(f"unknown scenario key {key!r}")
        try:
            kwargs[key] = _parse_value(key, text, _WORLD_KINDS.get(key, float))
        except ValueError as exc:
            raise ScenarioError(f"{key}: {exc}") from None
    world = WorldSpec(**kwargs)
    try:
        world.testing_model()
        draw_scenarios(replace(world, n_regions=max(world.n_regions, 1)))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    return world


def world_to_dict(world: WorldSpec) -> dict:
    out = asdict(world)
    out["start_date"] = world.start_date.isoformat()
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


@dataclass(frozen=True)
class RiskPopulationSpec:
    """Risk-structured population used to check the saturating testing functions.

    Non-infectious individuals (``N0`` of them) have risk density ``nu0`` on
    ``[0, r_max]``. In the ``"up"`` variant infectious individuals have
    density ``nu1 * omega0**2 / (r_max - r + omega0)**2``; in the ``"flat"``
    variant they have constant density ``nu1`` plus a point mass ``delta``
    at ``r_max``. Densities default to normalized values. Mass not covered
    by a density sits below every risk score (tested last).
    """

    N0: int
    I: int
    omega0: float = 0.1
    r_max: float = 1.0
    nu0: float | None = None
    nu1: float | None = None
    delta: float = 0.0
    variant: str = "up"

    def __post_init__(self):
        if self.variant not in ("up", "flat"):
            raise ValueError("variant must be 'up' or 'flat'")
        if self.N0 <= 0 or self.I < 0:
            raise ValueError("population sizes must be positive")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if self.variant == "up" and not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if self.nu0 is None:
            object.__setattr__(self, "nu0", 1.0 / self.r_max)
        if self.nu1 is None:
            if self.variant == "up":
                nu1 = (self.r_max + self.omega0) / (self.omega0 * self.r_max)
            else:
                nu1 = (1.0 - self.delta) / self.r_max
            object.__setattr__(self, "nu1", nu1)
        if self.nu0 < 0 or self.nu1 < 0:
            raise ValueError("densities must be non-negative")
        if self.nu0 * self.r_max > 1 + 1e-12 or self.infectious_mass_above(0.0) > 1 + 1e-12:
            raise ValueError("density mass exceeds one")

    @property
    def mu0(self) -> float:
        """Non-infectious to infectious density ratio in the flat variant."""
        return self.nu0 / self.nu1

    def infectious_mass_above(self, rho: float) -> float:
        """Fraction of infectious individuals with risk at least ``rho``."""
        x = self.r_max - rho
        if self.variant == "up":
            return self.nu1 * self.omega0 * x / (x + self.omega0)
        return self.delta + self.nu1 * x

    def tested_above(self, rho: float) -> float:
        return self.N0 * self.nu0 * (self.r_max - rho) + self.I * self.infectious_mass_above(rho)

    def testing_model(self) -> TestingModel:
        """The testing function the derivation predicts, with ``T`` counted in tests."""
        if self.variant == "up":
            return TestingModel("up_saturating", kappa=self.nu1 * self.omega0, alpha=self.N0 * self.nu0 * self.omega0)
        kappa = self.nu1 / (self.N0 * self.nu0)
        if self.delta == 0:
            return TestingModel("limiting", kappa=kappa)
        return TestingModel("down_saturating", kappa=kappa, alpha=self.delta * self.N0 * self.nu0 / self.nu1)

    def sample_risks(self, rng):
        """Risk scores of every individual; returns ``(non_infectious, infectious)``."""
        u0 = rng.random(self.N0)
        r0 = np.where(u0 < self.nu0 * self.r_max, self.r_max - u0 / self.nu0, -1.0)
        u1 = rng.random(self.I)
        if self.variant == "up":
            top = self.nu1 * self.omega0 * self.r_max / (self.r_max + self.omega0)
            with np.errstate(divide="ignore"):
                x = u1 * self.omega0 / (self.nu1 * self.omega0 - u1)
            r1 = np.where(u1 < top, self.r_max - x, -1.0)
        else:
            cont = u1 - self.delta
            r1 = np.where(u1 < self.delta, self.r_max,
                          np.where(cont < self.nu1 * self.r_max, self.r_max - cont / self.nu1, -1.0))
        return r0, r1


@dataclass(frozen=True)
class RiskOutcome:
    tests: int
    threshold: float
    expected_positives: float
    sampled_positives: int | None
    sampling_sd: float


def simulate_risk_population(spec: RiskPopulationSpec, T: int, seed=None) -> RiskOutcome:
    """Positives among the ``T`` highest-risk individuals.

    The risk threshold solves ``T = integral_rho^r_max (N_r + I_r) dr`` (no
    approximation in ``I``); the expectation is the infectious mass above
    it. With a ``seed``, individual risks are also sampled and the top
    ``T`` tested, giving a Monte Carlo count.
    """
    total = spec.N0 + spec.I
    if T < 0:
        raise ValueError("number of tests must be non-negative")
    if T > total:
        raise ValueError(f"{T} tests exceed the population of {total}")
    if T == 0:
        expected, rho = 0.0, spec.r_max
    elif T >= spec.tested_above(0.0):
        rho = 0.0
        expected = spec.I * spec.infectious_mass_above(0.0)
    else:
        rho = brentq(lambda r: spec.tested_above(r) - T, 0.0, spec.r_max, xtol=1e-14, rtol=1e-15)
        expected = spec.I * spec.infectious_mass_above(rho)
    q = expected / spec.I if spec.I else 0.0
    sd = math.sqrt(spec.I * q * (1.0 - q))

    sampled = None
    if seed is not None:
        rng = np.random.Generator(np.random.PCG64(seed))
        r0, r1 = spec.sample_risks(rng)
        risks = np.concatenate([r0, r1])
        infectious = np.concatenate([np.zeros(len(r0), bool), np.ones(len(r1), bool)])
        if T == 0:
            sampled = 0
        else:
            top = np.argpartition(-risks, T - 1)[:T] if T < len(risks) else np.arange(len(risks))
            sampled = int(infectious[top].sum())
    return RiskOutcome(int(T), float(rho), float(expected), sampled, sd)
