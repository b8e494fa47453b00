"""Rank tests and a median confidence interval.

Exact Wilcoxon p-values come from the permutation distribution of the
signed-rank sum, built by dynamic programming over doubled (hence integer)
ranks so that tied, half-integer ranks stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .special import chi2_sf

EXACT_MAX_N = 25


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    statistic: float
    p_value: float
    n_effective: int
    method: str  # "exact", "normal_approx" or "chi_square"
    degenerate: bool = False

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n_effective": self.n_effective,
            "method": self.method,
        }


def _signed_rank_null(doubled_ranks):
    """Counts of each attainable doubled rank sum under random signs."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in doubled_ranks:
        # each observation either adds its rank (positive sign) or not
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(x, y=None, alternative: str = "two_sided") -> TestResult:
    """Paired Wilcoxon signed-rank test of ``x - y``.

    With ``y`` omitted, tests whether ``x`` is centred on zero. Zero
    differences are dropped; ties get average ranks. The statistic is the
    sum of ranks of positive differences.

    Uses the exact permutation distribution for up to 25 non-zero
    differences and a tie-corrected normal approximation with continuity
    correction beyond that.
    """
    x = np.asarray(x, dtype=float)
    d = x if y is None else x - np.asarray(y, dtype=float)
    if d.ndim != 1 or len(d) < 2:
        raise ValueError("need at least two paired observations")
    if alternative not in ("two_sided", "less", "greater"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero")

    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _signed_rank_null(doubled)
        probs = counts / counts.sum()
        w2 = int(round(2 * w_plus))
        p_le = probs[: w2 + 1].sum()
        p_ge = probs[w2:].sum()
        method = "exact"
    else:
        _, t = np.unique(np.abs(d), return_counts=True)
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - (t**3 - t).sum() / 48.0
        sd = math.sqrt(var)
        p_le = _norm_cdf((w_plus - mean + 0.5) / sd)
        p_ge = 1.0 - _norm_cdf((w_plus - mean - 0.5) / sd)
        method = "normal_approx"

    if alternative == "two_sided":
        p = min(1.0, 2.0 * min(p_le, p_ge))
    elif alternative == "greater":
        p = p_ge
    else:
        p = p_le
    return TestResult(w_plus, float(min(max(p, 0.0), 1.0)), n, method)


def _norm_cdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def kruskal_wallis(groups) -> TestResult:
    """Kruskal-Wallis H test with tie correction and chi-square p-value.

    If every observation is identical H is undefined; the result then has
    ``H = 0``, ``p = 1`` and ``degenerate=True``.
    """
    groups = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("groups must be non-empty")
    pooled = np.concatenate(groups)
    n = len(pooled)
    ranks = rankdata(pooled)
    _, t = np.unique(pooled, return_counts=True)
    tie_term = 1.0 - (t**3 - t).sum() / (n**3 - n)
    if tie_term <= 0:
        return TestResult(0.0, 1.0, n, "chi_square", degenerate=True)

    h = 0.0
    start = 0
    for g in groups:
        r = ranks[start : start + len(g)].sum()
        h += r * r / len(g)
        start += len(g)
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    h /= tie_term
    h = max(h, 0.0)
    return TestResult(float(h), float(chi2_sf(h, len(groups) - 1)), n, "chi_square")


def _binom_half_cdf(k, n):
    return sum(math.comb(n, i) for i in range(k + 1)) / 2.0**n


def median_ci(values, confidence: float = 0.95) -> tuple[float, float, float]:
    """Sample median with an exact order-statistic confidence interval.

    Returns ``(median, lo, hi)`` where ``lo, hi`` are the ``k``-th smallest
    and ``k``-th largest values, ``k`` being the largest integer whose
    binomial(n, 1/2) coverage ``1 - 2 P(B <= k - 1)`` still reaches
    ``confidence``.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    k = 0
    for cand in range(1, n // 2 + 1):
        if 1.0 - 2.0 * _binom_half_cdf(cand - 1, n) >= confidence:
            k = cand
        else:
            break
    if k == 0:
        raise ValueError(f"{n} values are too few for a {confidence:.0%} median interval")
    return float(np.median(x)), float(x[k - 1]), float(x[n - k])
