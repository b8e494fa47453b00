"""Surveillance CSV parsing, region selection and lockdown-date fixtures.

Two column schemas are understood: ``world`` (Our World in Data style
names such as ``total_cases``) and ``us_states`` (COVID Tracking Project
names such as ``positive`` and ``totalTestResults``). Both also accept the
canonical ``world`` names. A ``population`` column is always required.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .timeseries import DailySeries, daily_from_cumulative, interpolate_missing

log = logging.getLogger(__name__)

COUNT_GROUPS = {
    "cases": ("new_cases", "total_cases"),
    "tests": ("new_tests", "total_tests"),
    "deaths": ("new_deaths", "total_deaths"),
}
MOBILITY_PARTS = ("mobility_retail", "mobility_transit", "mobility_workplace")
COVARIATES = ("gdp_per_capita", "population_density", "urban_population")
OPTIONAL_COLUMNS = ("stringency_index", "mobility") + MOBILITY_PARTS + COVARIATES

SCHEMA_ALIASES = {
    "world": {},
    "us_states": {
        "state": "location",
        "positive": "total_cases",
        "positiveIncrease": "new_cases",
        "totalTestResults": "total_tests",
        "totalTestResultsIncrease": "new_tests",
        "death": "total_deaths",
        "deathIncrease": "new_deaths",
    },
}

# written in this order by write_surveillance_csv
CANONICAL_ORDER = (
    "new_cases", "total_cases", "new_tests", "total_tests", "new_deaths", "total_deaths",
    "stringency_index", "mobility", *MOBILITY_PARTS, *COVARIATES,
)

MIN_DEATHS = 1000
MIN_CASES_START = 20
MAX_TEST_GAP_DAYS = 7
EXCLUDED_REGIONS = ("China",)


class SchemaError(ValueError):
    """The CSV header does not match the requested schema."""


class DataError(ValueError):
    """A row holds an invalid value (bad date, negative count, duplicate)."""


@dataclass(frozen=True, eq=False)
class RegionRecord:
    """Aligned surveillance series for one region.

    ``new_*`` are reconciled daily counts (interpolated from cumulative
    totals where those exist) and ``total_*`` the matching cumulative
    series. ``raw`` keeps every parsed numeric column exactly as read.
    """

    name: str
    population: int
    new_cases: DailySeries
    total_cases: DailySeries
    new_tests: DailySeries | None = None
    total_tests: DailySeries | None = None
    new_deaths: DailySeries | None = None
    total_deaths: DailySeries | None = None
    stringency: DailySeries | None = None
    mobility: DailySeries | None = None
    covariates: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    warnings: tuple = ()

    def __post_init__(self):
        if not self.population > 0:
            raise DataError(f"{self.name}: population must be positive")
        n, start = len(self.new_cases), self.new_cases.start_date
        for s in self._series().values():
            if len(s) != n or s.start_date != start:
                raise DataError(f"{self.name}: series are not aligned on one date grid")

    def _series(self):
        names = ("new_cases", "total_cases", "new_tests", "total_tests", "new_deaths",
                 "total_deaths", "stringency", "mobility")
        out = {k: getattr(self, k) for k in names if getattr(self, k) is not None}
        out.update({f"raw:{k}": v for k, v in self.raw.items()})
        return out

    @property
    def start_date(self) -> dt.date:
        return self.new_cases.start_date

    @property
    def dates(self) -> list[dt.date]:
        return self.new_cases.dates

    def __len__(self):
        return len(self.new_cases)

    def slice(self, start: int, stop: int | None = None) -> RegionRecord:
        """Restrict every series to grid indices ``[start, stop)``."""
        kw = {k: v.slice(start, stop) for k, v in self._series().items() if not k.startswith("raw:")}
        raw = {k: v.slice(start, stop) for k, v in self.raw.items()}
        return replace(self, raw=raw, **kw)

    def total_deaths_reported(self) -> float:
        if self.total_deaths is not None and not np.all(self.total_deaths.missing):
            return float(np.nanmax(self.total_deaths.values))
        if self.new_deaths is not None:
            return float(np.nansum(self.new_deaths.values))
        return 0.0

    def test_presence(self) -> np.ndarray:
        """Days on which any testing figure was actually reported."""
        present = np.zeros(len(self), dtype=bool)
        for key in ("new_tests", "total_tests"):
            if key in self.raw:
                present |= ~self.raw[key].missing
        return present


def _parse_number(text, column, location, date):
    text = text.strip()
    if text == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{location} {date}: cannot parse {column}={text!r}") from None


def _monotone(values):
    """Backward running minimum over present values (undo downward revisions)."""
    out = values.copy()
    present = np.flatnonzero(~np.isnan(out))
    running = np.inf
    changed = False
    for i in present[::-1]:
        if out[i] > running:
            out[i] = running
            changed = True
        running = out[i]
    return out, changed


def _reconcile(start, total, new, label, warnings):
    """Daily and cumulative series for one count group; cumulative wins."""
    n = len(total) if total is not None else len(new)
    if total is None or np.all(np.isnan(total)):
        daily = np.full(n, np.nan) if new is None else new.copy()
        cum = np.cumsum(daily)  # NaN propagates past the first gap
        return DailySeries(start, daily), DailySeries(start, cum, cumulative=True)

    mono, changed = _monotone(total)
    if changed:
        warnings.append(f"{label}: cumulative series decreases; downward revisions smoothed")
    idx = np.flatnonzero(~np.isnan(mono))
    lo, hi = int(idx[0]), int(idx[-1]) + 1
    span = interpolate_missing(DailySeries(start, mono[lo:hi], cumulative=True))
    cum = np.full(n, np.nan)
    cum[lo:hi] = span.values
    daily = np.full(n, np.nan) if new is None else new.copy()
    derived = np.array(daily_from_cumulative(span).values)
    if lo > 0:
        # backlog on the first reported day cannot be split across earlier days
        derived[0] = daily[lo]
    if new is not None:
        both = ~np.isnan(new[lo:hi]) & ~np.isnan(derived)
        if np.any(np.abs(new[lo:hi][both] - derived[both]) > 0.5):
            warnings.append(f"{label}: daily and cumulative columns disagree; using cumulative")
    daily[lo:hi] = derived
    return DailySeries(start, daily), DailySeries(start, cum, cumulative=True)


def parse_surveillance_csv(stream, schema_name: str = "world", required=("cases", "tests", "deaths")) -> list[RegionRecord]:
    """Read a surveillance CSV into one :class:`RegionRecord` per location.

    Parameters
    ----------
    stream : file-like or str
        Open text stream or path.
    schema_name : {"world", "us_states"}
        Column naming convention.
    required : tuple of str
        Count groups (``cases``, ``tests``, ``deaths``) that must have at
        least one of their daily/cumulative columns.

    Raises
    ------
    SchemaError
        Unknown schema or missing required column.
    DataError
        Duplicate ``(location, date)`` rows, unparseable dates or numbers,
        negative counts, or a non-positive population.
    """
    if schema_name not in SCHEMA_ALIASES:
        raise SchemaError(f"unknown schema {schema_name!r}")
    if isinstance(stream, (str, bytes)) or hasattr(stream, "__fspath__"):
        with open(stream, newline="", encoding="utf-8") as fh:
            return parse_surveillance_csv(fh, schema_name, required)

    aliases = SCHEMA_ALIASES[schema_name]
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty file: header row missing") from None
    columns = [aliases.get(h.strip(), h.strip()) for h in header]
    pos = {c: i for i, c in enumerate(columns)}
    for col in ("date", "location", "population"):
        if col not in pos:
            raise SchemaError(f"missing required column {col!r}")
    for group in required:
        if not any(c in pos for c in COUNT_GROUPS[group]):
            raise SchemaError(f"missing required column: one of {' / '.join(COUNT_GROUPS[group])}")
    numeric = [c for c in CANONICAL_ORDER if c in pos]
    counts = {c for g in COUNT_GROUPS.values() for c in g}

    rows = {}
    populations = {}
    for lineno, row in enumerate(reader, start=2):
        if not any(cell.strip() for cell in row):
            continue
        row = row + [""] * (len(columns) - len(row))
        location = row[pos["location"]].strip()
        try:
            date = dt.date.fromisoformat(row[pos["date"]].strip())
        except ValueError:
            raise DataError(f"line {lineno}: unparseable date {row[pos['date']]!r}") from None
        key = (location, date)
        if key in rows:
            raise DataError(f"line {lineno}: duplicate row for {location} on {date}")
        values = {c: _parse_number(row[pos[c]], c, location, date) for c in numeric}
        for c in counts & values.keys():
            if values[c] < 0:
                raise DataError(f"line {lineno}: negative count {c}={values[c]:g}")
        pop = _parse_number(row[pos["population"]], "population", location, date)
        if not np.isnan(pop):
            populations.setdefault(location, pop)
        rows[key] = values

    by_location = {}
    for (location, date), values in rows.items():
        by_location.setdefault(location, {})[date] = values

    records = []
    for location in sorted(by_location):
        days = by_location[location]
        start, end = min(days), max(days)
        n = (end - start).days + 1
        grid = {c: np.full(n, np.nan) for c in numeric}
        for date, values in days.items():
            i = (date - start).days
            for c, v in values.items():
                grid[c][i] = v
        if location not in populations:
            raise DataError(f"{location}: population missing")
        records.append(build_record(location, int(round(populations[location])), start, grid))
    return records


def build_record(location, population, start, grid) -> RegionRecord:
    """Assemble a record from per-column daily arrays on a common grid."""
    warnings = []
    series = {}
    for group, (new_col, total_col) in COUNT_GROUPS.items():
        total, new = grid.get(total_col), grid.get(new_col)
        if total is None and new is None:
            continue
        daily, cum = _reconcile(start, total, new, f"{location} {group}", warnings)
        series[new_col], series[total_col] = daily, cum

    if "new_cases" not in series:
        n = len(next(iter(grid.values())))
        series["new_cases"] = DailySeries(start, np.full(n, np.nan))
        series["total_cases"] = DailySeries(start, np.full(n, np.nan), cumulative=True)

    mobility = _mobility_series(start, grid)
    stringency = DailySeries(start, grid["stringency_index"]) if "stringency_index" in grid else None

    covariates = {}
    for c in COVARIATES:
        if c in grid and not np.all(np.isnan(grid[c])):
            covariates[c] = float(grid[c][~np.isnan(grid[c])][0])

    raw = {c: signed_series(start, v) for c, v in grid.items()}
    for w in warnings:
        log.warning(w)
    return RegionRecord(
        name=location,
        population=population,
        stringency=stringency,
        mobility=mobility,
        covariates=covariates,
        raw=raw,
        warnings=tuple(warnings),
        **series,
    )


def signed_series(start, values) -> DailySeries:
    """A :class:`DailySeries` that may hold negative values (e.g. mobility changes)."""
    return DailySeries(start, values, signed=True)


def _mobility_series(start, grid):
    # the three indicators are summed when given separately
    if all(p in grid for p in MOBILITY_PARTS):
        return signed_series(start, sum(grid[p] for p in MOBILITY_PARTS))
    if "mobility" in grid:
        return signed_series(start, grid["mobility"])
    return None


def _format_number(x) -> str:
    if np.isnan(x):
        return ""
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_surveillance_csv(records, stream) -> None:
    """Write records in the ``world`` schema using their raw parsed columns.

    ``parse_surveillance_csv(write_surveillance_csv(records))`` reproduces
    every present input value.
    """
    columns = [c for c in CANONICAL_ORDER if any(c in r.raw for r in records)]
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["location", "date", "population", *columns])
    for r in records:
        for i, date in enumerate(r.dates):
            cells = [_format_number(r.raw[c].values[i]) if c in r.raw else "" for c in columns]
            writer.writerow([r.name, date.isoformat(), str(r.population), *cells])


def records_to_csv_text(records) -> str:
    buf = io.StringIO()
    write_surveillance_csv(records, buf)
    return buf.getvalue()


def first_index_at_least(series: DailySeries, threshold: float) -> int | None:
    hits = np.flatnonzero(np.nan_to_num(series.values, nan=-np.inf) >= threshold)
    return int(hits[0]) if len(hits) else None


def max_test_gap(record: RegionRecord) -> float:
    """Longest stretch, in days, between consecutive reported testing figures."""
    idx = np.flatnonzero(record.test_presence())
    if len(idx) < 2:
        return np.inf
    return float(np.diff(idx).max())


def select_regions_for_validation(records) -> list[RegionRecord]:
    """Regions usable for death-based validation, truncated to their analysis start.

    Keeps a region when it has at least 1000 reported deaths, is not
    excluded by name (China), reaches 20 cumulative cases, and, from that
    day on, never goes more than 7 days between testing reports.
    """
    selected = []
    for r in records:
        if r.name in EXCLUDED_REGIONS:
            continue
        if r.total_deaths_reported() < MIN_DEATHS:
            continue
        start = first_index_at_least(r.total_cases, MIN_CASES_START)
        if start is None:
            continue
        trimmed = r.slice(start)
        if max_test_gap(trimmed) > MAX_TEST_GAP_DAYS:
            continue
        selected.append(trimmed)
    return selected


@dataclass(frozen=True)
class LockdownTable(Mapping):
    """Region name to lockdown onset date."""

    name: str
    entries: dict

    def __getitem__(self, region):
        return self.entries[region]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


LOCKDOWN_FIXTURES = ("world_first", "world_second", "us_states")


def read_lockdown_csv(stream, name: str = "custom") -> LockdownTable:
    """Parse a ``region,date`` CSV into a :class:`LockdownTable`."""
    entries = {}
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or not {"region", "date"} <= {f.strip() for f in reader.fieldnames}:
        raise SchemaError("lockdown table needs 'region' and 'date' columns")
    for row in reader:
        region = row["region"].strip()
        if region in entries:
            raise DataError(f"duplicate lockdown entry for {region}")
        try:
            entries[region] = dt.date.fromisoformat(row["date"].strip())
        except ValueError:
            raise DataError(f"{region}: unparseable date {row['date']!r}") from None
    return LockdownTable(name, entries)


def load_lockdown_dates(fixture_name: str) -> LockdownTable:
    """Bundled lockdown onset dates: ``world_first``, ``world_second`` or ``us_states``."""
    if fixture_name not in LOCKDOWN_FIXTURES:
        raise KeyError(f"unknown lockdown fixture {fixture_name!r}; expected one of {LOCKDOWN_FIXTURES}")
    text = resources.files("epitesting").joinpath("data", f"{fixture_name}.csv").read_text(encoding="utf-8")
    return read_lockdown_csv(io.StringIO(text), fixture_name)
