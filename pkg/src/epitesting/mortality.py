"""Infection-to-death delay and death-curve prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .special import gamma_cdf
from .timeseries import DailySeries, SeriesError

# two-component Gamma mixture for the infection-to-death delay (days)
ONSET_TO_DEATH_MIXTURE = ((0.5, 4.39, 1.16), (0.5, 8.46, 2.22))
DEFAULT_HORIZON = 120
DEFAULT_GAMMA = 0.2  # 1 / (5.0 day mean generation interval)


@dataclass(frozen=True, eq=False)
class OnsetToDeathPMF:
    """Daily probabilities ``probs[t]`` of dying ``t`` days after infection."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if p.sum() > 1 + 1e-12:
            raise ValueError("probabilities sum to more than one")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def horizon(self) -> int:
        return len(self.probs) - 1

    @property
    def mean(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)


def mixture_cdf(x, components=ONSET_TO_DEATH_MIXTURE):
    return sum(w * gamma_cdf(x, k, theta) for w, k, theta in components)


def build_onset_to_death_pmf(horizon_days: int = DEFAULT_HORIZON) -> OnsetToDeathPMF:
    """Discretize the delay mixture to one point per day.

    ``probs[t] = P(X in [t - 0.5, t + 0.5))``, with ``probs[0]`` covering
    ``[0, 0.5)`` only.
    """
    if horizon_days < 30:
        raise ValueError("horizon must be at least 30 days")
    edges = np.arange(horizon_days + 1) + 0.5
    cdf = mixture_cdf(edges)
    probs = np.diff(np.concatenate([[0.0], cdf]))
    return OnsetToDeathPMF(np.clip(probs, 0.0, None))


@dataclass(frozen=True)
class RecoveryRate:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("recovery rate must lie in (0, 1]")


def incidence_from_prevalence(I: DailySeries, gamma: RecoveryRate | float = DEFAULT_GAMMA) -> DailySeries:
    """New infections per day from prevalence: ``i(t) = I(t) - (1 - gamma) I(t-1)``.

    The first day uses ``gamma * I(start)``. Negative values (prevalence
    dropping faster than recovery allows) are clamped to zero and their
    indices recorded in ``anomalies``.
    """
    g = gamma.gamma if isinstance(gamma, RecoveryRate) else RecoveryRate(gamma).gamma
    vals = np.asarray(I.values, dtype=float)
    if np.isnan(vals).any():
        raise SeriesError("prevalence series must be complete")
    inc = np.empty_like(vals)
    if len(vals):
        inc[0] = g * vals[0]
        inc[1:] = vals[1:] - (1.0 - g) * vals[:-1]
    bad = np.flatnonzero(inc < 0)
    inc[bad] = 0.0
    return DailySeries(I.start_date, inc, anomalies=tuple(bad))


def predict_death_curve(incidence: DailySeries, pmf: OnsetToDeathPMF) -> DailySeries:
    """Expected deaths up to the (omitted) fatality ratio: ``(pmf * incidence)(t)``."""
    vals = np.asarray(incidence.values, dtype=float)
    if np.isnan(vals).any():
        raise SeriesError("incidence series must be complete")
    deaths = np.convolve(vals, pmf.probs)[: len(vals)]
    return DailySeries(incidence.start_date, np.clip(deaths, 0.0, None))
