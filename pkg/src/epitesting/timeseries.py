"""Daily-grid time series used throughout the package.

A :class:`DailySeries` is a start date plus one value per consecutive day.
Missing days are stored as ``NaN`` and never coerced to zero.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np


class SeriesError(ValueError):
    """Raised when a series violates the preconditions of an operation."""


@dataclass(frozen=True, eq=False)
class DailySeries:
    """Contiguous daily values anchored at ``start_date``.

    Parameters
    ----------
    start_date : datetime.date
        Date of ``values[0]``.
    values : array_like
        One value per day; ``NaN`` (or ``None``) marks a missing day.
    cumulative : bool
        Whether the series is a running total. Cumulative series must be
        non-decreasing over their present values.
    anomalies : tuple of int
        Indices where an operation had to clamp a value (e.g. a negative
        daily difference). Empty for clean series.
    signed : bool
        Allow negative values (percent changes such as mobility).
    """

    start_date: dt.date
    values: np.ndarray
    cumulative: bool = False
    anomalies: tuple = field(default=())
    signed: bool = False

    def __post_init__(self):
        vals = np.array(
            [np.nan if v is None else v for v in self.values] if not isinstance(self.values, np.ndarray) else self.values,
            dtype=float,
        ).copy()
        if vals.ndim != 1:
            raise SeriesError("values must be one-dimensional")
        present = vals[~np.isnan(vals)]
        if not self.signed and np.any(present < 0):
            raise SeriesError("values must be non-negative")
        if self.cumulative and np.any(np.diff(present) < 0):
            raise SeriesError("cumulative series decreases")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "anomalies", tuple(int(i) for i in self.anomalies))

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, DailySeries):
            return NotImplemented
        return (
            self.start_date == other.start_date
            and self.cumulative == other.cumulative
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=len(self.values) - 1)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(len(self.values))]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def is_complete(self) -> bool:
        return not self.missing.any()

    def index_of(self, date: dt.date) -> int:
        """Grid index of ``date`` (may fall outside ``[0, len)``)."""
        return (date - self.start_date).days

    def value_at(self, date: dt.date) -> float:
        i = self.index_of(date)
        if not 0 <= i < len(self.values):
            return float("nan")
        return float(self.values[i])

    def slice(self, start: int, stop: int | None = None) -> DailySeries:
        """Sub-series over grid indices ``[start, stop)``."""
        stop = len(self.values) if stop is None else stop
        start = max(start, 0)
        return DailySeries(
            self.start_date + dt.timedelta(days=start),
            self.values[start:stop],
            cumulative=self.cumulative,
            anomalies=tuple(i - start for i in self.anomalies if start <= i < stop),
            signed=self.signed,
        )

    def window(self, first: dt.date, last: dt.date) -> DailySeries:
        """Sub-series covering calendar days ``first`` through ``last`` inclusive."""
        return self.slice(self.index_of(first), self.index_of(last) + 1)

    def with_values(self, values, cumulative: bool | None = None, anomalies=()) -> DailySeries:
        return DailySeries(
            self.start_date,
            values,
            cumulative=self.cumulative if cumulative is None else cumulative,
            anomalies=anomalies,
            signed=self.signed,
        )


def interpolate_missing(cumulative: DailySeries) -> DailySeries:
    """Fill gaps in a cumulative series by linear interpolation of its logarithm.

    Values before the first strictly positive entry cannot be log-interpolated;
    that leading segment is filled with the first present value instead.
    Present values are never modified.
    """
    if not cumulative.cumulative:
        raise SeriesError("interpolate_missing requires a cumulative series")
    vals = np.array(cumulative.values)
    present = ~np.isnan(vals)
    if not present.any():
        raise SeriesError("series has no present values")
    if not (present[0] and present[-1]):
        raise SeriesError("first and last values must be present")
    if present.all():
        return cumulative

    idx = np.flatnonzero(present)
    positive = idx[vals[idx] > 0]
    first_pos = positive[0] if len(positive) else len(vals)

    out = vals.copy()
    # leading non-positive stretch: constant at the first present value
    lead = np.arange(first_pos)
    out[lead] = np.where(present[lead], vals[lead], vals[0])
    if first_pos < len(vals):
        tail = np.arange(first_pos, len(vals))
        known = tail[present[tail]]
        filled = np.exp(np.interp(tail, known, np.log(vals[known])))
        # exp(log(x)) round-off must not step outside the bracketing present values
        lower = vals[known][np.searchsorted(known, tail, side="right") - 1]
        upper = vals[known][np.minimum(np.searchsorted(known, tail, side="left"), len(known) - 1)]
        out[tail] = np.clip(filled, lower, upper)
        out[known] = vals[known]
    return cumulative.with_values(out)


def daily_from_cumulative(cumulative: DailySeries, clamp: bool = True) -> DailySeries:
    """First differences of a complete cumulative series.

    ``output[0]`` is the first cumulative value. Negative differences
    (data revisions) are set to zero and their indices recorded in
    ``anomalies``; pass ``clamp=False`` to keep them (the result is then
    returned as a raw array since it may be negative).
    """
    vals = np.asarray(cumulative.values, dtype=float)
    if np.isnan(vals).any():
        raise SeriesError("daily_from_cumulative requires a complete series")
    diff = np.empty_like(vals)
    if len(vals):
        diff[0] = vals[0]
        diff[1:] = np.diff(vals)
    if not clamp:
        return diff
    bad = np.flatnonzero(diff < 0)
    diff[bad] = 0.0
    return DailySeries(cumulative.start_date, diff, cumulative=False, anomalies=tuple(bad))


def cumulative_from_daily(daily: DailySeries) -> DailySeries:
    """Running total of a complete daily series."""
    if not daily.is_complete():
        raise SeriesError("cumulative_from_daily requires a complete series")
    return DailySeries(daily.start_date, np.cumsum(daily.values), cumulative=True)


def rolling_mean(series: DailySeries, window: int) -> DailySeries:
    """Trailing moving average; the first ``window - 1`` days average what is available."""
    if window < 1:
        raise SeriesError("window must be a positive integer")
    vals = np.asarray(series.values, dtype=float)
    if np.isnan(vals).any():
        raise SeriesError("rolling_mean requires a complete series")
    csum = np.concatenate([[0.0], np.cumsum(vals)])
    i = np.arange(1, len(vals) + 1)
    lo = np.maximum(i - window, 0)
    out = (csum[i] - csum[lo]) / (i - lo)
    # guard against cumsum round-off pushing a mean below the input range
    if len(vals):
        out = np.clip(out, vals.min(), vals.max())
    return DailySeries(series.start_date, out, cumulative=False, signed=series.signed)
