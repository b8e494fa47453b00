"""Command-line front end.

Subcommands::

    epitesting validate  --input data.csv --out DIR [--model all] [--folds 10]
    epitesting adjust    --input data.csv --out DIR [--alpha-up 1710] [--alpha-down 38]
    epitesting lockdown  --input data.csv --out DIR [--lockdown-fixture world_first]
    epitesting simulate  --config world.cfg --out DIR [--seed N]

``simulate`` also writes ``scenario.json`` (every drawn parameter) and
``lockdown.csv`` (true lockdown dates, usable with ``--lockdown-file``).

Test rates at the interface are per million inhabitants per day. Exit
codes: 0 success, 2 usage or configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ingest import (
    LOCKDOWN_FIXTURES,
    DataError,
    SchemaError,
    load_lockdown_dates,
    parse_surveillance_csv,
    read_lockdown_csv,
    select_regions_for_validation,
    write_surveillance_csv,
)
from .regression import (
    WindowError,
    build_windows_first_lockdown,
    build_windows_second_lockdown,
    estimate_growth_and_effect,
)
from .simulator import (
    ScenarioError,
    WorldSpec,
    draw_scenarios,
    parse_config,
    simulate_world,
    world_from_config,
    world_to_dict,
)
from .stats import wilcoxon_signed_rank
from .testing_models import KINDS, PER_MILLION, SATURATING, TestingModel, canonical_kind, estimate_prevalence
from .validation import ObjectiveUndefinedError, prepare_region, validate_all

log = logging.getLogger("epitesting")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
PREDICTION_COLUMNS = {
    "adapted": "predicted_adapted",
    "limiting": "predicted_limiting",
    "up_saturating": "predicted_up",
    "down_saturating": "predicted_down",
}
DEFAULT_ALPHA_UP = 1710.0  # tests per million per day
DEFAULT_ALPHA_DOWN = 38.0
MIN_PAIRED_N = 2


class UsageError(Exception):
    pass


class InputDataError(Exception):
    pass


# ---------------------------------------------------------------- formatting

def fmt(x) -> str:
    """Nine significant digits; empty for missing values."""
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.9g}") if math.isfinite(obj) else None
    if isinstance(obj, dt.date):
        return obj.isoformat()
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2) + "\n", encoding="utf-8")


def _safe_name(region: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in region)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------- inputs

def _load(args, required):
    if not args.input:
        raise UsageError("--input is required")
    try:
        return parse_surveillance_csv(args.input, args.schema, required=required)
    except FileNotFoundError:
        raise UsageError(f"input file not found: {args.input}") from None


def _kinds(model: str):
    return KINDS if model == "all" else (canonical_kind(model),)


def _paired_test(a, b=None) -> dict:
    a = np.asarray(a, dtype=float)
    if len(a) < MIN_PAIRED_N:
        return {"n": int(len(a)), "statistic": None, "p_value": None, "method": None}
    res = wilcoxon_signed_rank(a, b)
    return {"n": res.n_effective, "statistic": res.statistic, "p_value": res.p_value, "method": res.method}


# ---------------------------------------------------------------- validate

def cmd_validate(args) -> int:
    kinds = _kinds(args.model)
    if args.folds < 2 and any(k in SATURATING for k in kinds):
        raise UsageError("--folds must be at least 2 for parametric models")
    records = _load(args, ("cases", "tests", "deaths"))
    selected = select_regions_for_validation(records)
    if not selected:
        raise InputDataError("no region passes the selection criteria")
    if any(k in SATURATING for k in kinds) and len(selected) < args.folds:
        raise InputDataError(f"{len(selected)} regions selected, fewer than --folds {args.folds}")
    try:
        reports = validate_all(selected, kinds, k=args.folds, seed=args.seed)
    except (ObjectiveUndefinedError, ValueError) as exc:
        raise InputDataError(str(exc)) from None

    names = sorted(r.name for r in selected)
    comparisons = []
    for i, a in enumerate(kinds):
        for b in kinds[i + 1:]:
            common = [n for n in names
                      if reports[a].per_region_error.get(n) is not None and reports[b].per_region_error.get(n) is not None]
            test = _paired_test([reports[a].per_region_error[n] for n in common],
                                [reports[b].per_region_error[n] for n in common])
            comparisons.append({"model_a": a, "model_b": b, **test})

    out = Path(args.out)
    (out / "deaths").mkdir(parents=True, exist_ok=True)
    per_million = not args.per_person
    write_json(out / "report.json", {
        "command": "validate",
        "input": str(args.input),
        "schema": args.schema,
        "folds": args.folds,
        "seed": args.seed,
        "regions": names,
        "models": {k: reports[k].to_dict(per_million=per_million) for k in kinds},
        "comparisons": comparisons,
    })

    inputs = {r.name: prepare_region(r) for r in selected}
    for name in names:
        reg = inputs[name]
        columns = {}
        for kind, col in PREDICTION_COLUMNS.items():
            pred = reports[kind].predictions.get(name) if kind in reports else None
            columns[col] = _rescaled(reg, pred)
        rows = []
        for i in range(len(reg.deaths)):
            date = reg.start_date + dt.timedelta(days=i)
            rows.append([date.isoformat(), fmt(reg.deaths[i])] +
                        [fmt(None if v is None else v[i]) for v in columns.values()])
        _write_rows(out / "deaths" / f"{_safe_name(name)}.csv", ["date", "observed", *columns], rows)
    print(f"validated {len(names)} regions; report in {out / 'report.json'}")
    return EXIT_OK


def _rescaled(reg, pred):
    """Prediction scaled to the observed deaths by the mean log ratio over scored days."""
    if pred is None:
        return None
    pred = np.asarray(pred, dtype=float)
    ok = reg.qualifying & (pred > 0)
    if not ok.any():
        return None
    return pred * math.exp(float(np.mean(np.log(reg.deaths[ok]) - np.log(pred[ok]))))


# ---------------------------------------------------------------- adjust

def cmd_adjust(args) -> int:
    if not (args.alpha_up > 0 and args.alpha_down > 0):
        raise UsageError("--alpha-up and --alpha-down must be positive")
    records = _load(args, ("cases",))
    with_tests = [r for r in records if r.new_tests is not None]
    if not with_tests:
        raise InputDataError("no test counts in the input")
    model = TestingModel("up_saturating", alpha=args.alpha_up / PER_MILLION)
    out = Path(args.out) / "adjusted"
    out.mkdir(parents=True, exist_ok=True)
    for r in with_tests:
        T = np.asarray(r.new_tests.values) / r.population
        Y = np.asarray(r.new_cases.values)
        present = ~(np.isnan(T) | np.isnan(Y))
        prev = np.full(len(T), np.nan)
        prev[present] = estimate_prevalence(Y[present], T[present], model)
        tpm = T * PER_MILLION
        in_range = present & (tpm > 0) & (tpm >= args.alpha_down) & (tpm <= args.alpha_up)
        rows = [[d.isoformat(), fmt(Y[i]), fmt(tpm[i]), fmt(prev[i]), fmt(bool(in_range[i]))]
                for i, d in enumerate(r.dates)]
        _write_rows(out / f"{_safe_name(r.name)}.csv",
                    ["date", "cases", "tests_per_million", "prevalence_estimate", "in_linearity_range"], rows)
    print(f"adjusted {len(with_tests)} regions into {out}")
    return EXIT_OK


# ---------------------------------------------------------------- lockdown

def _parse_overrides(items):
    out = {}
    for item in items or ():
        region, sep, date = item.rpartition("=")
        if not sep or not region:
            raise UsageError(f"--lockdown-date expects REGION=YYYY-MM-DD, got {item!r}")
        try:
            out[region.strip()] = dt.date.fromisoformat(date.strip())
        except ValueError:
            raise UsageError(f"bad date in --lockdown-date {item!r}") from None
    return out


def _lockdown_dates(args):
    if args.lockdown_file:
        try:
            with open(args.lockdown_file, newline="", encoding="utf-8") as fh:
                table = read_lockdown_csv(fh, Path(args.lockdown_file).stem)
        except FileNotFoundError:
            raise UsageError(f"lockdown file not found: {args.lockdown_file}") from None
        source = f"file:{table.name}"
    elif args.lockdown_fixture:
        table = load_lockdown_dates(args.lockdown_fixture)
        source = f"fixture:{table.name}"
    else:
        table, source = {}, None
    dates = {k: (v, source) for k, v in table.items()}
    dates.update({k: (v, "user") for k, v in _parse_overrides(args.lockdown_date).items()})
    return dates


def cmd_lockdown(args) -> int:
    if not args.alpha_up > 0:
        raise UsageError("--alpha-up must be positive")
    wave = args.wave or ("second" if args.lockdown_fixture == "world_second" and not args.lockdown_file else "first")
    dates = _lockdown_dates(args)
    records = _load(args, ("cases",))
    models = {"adapted": TestingModel("adapted"),
              "up_saturating": TestingModel("up_saturating", alpha=args.alpha_up / PER_MILLION)}

    rows, estimates, skipped, used = [], {k: {} for k in models}, {}, {}
    for r in records:
        date, source = dates.get(r.name, (None, None))
        try:
            if wave == "first":
                if date is None:
                    raise WindowError("no lockdown date")
                windows = build_windows_first_lockdown(r, date)
            else:
                windows = build_windows_second_lockdown(r, lockdown_date=date)
                if date is None:
                    source = "stringency"
            fits = {k: estimate_growth_and_effect(r, windows, m) for k, m in models.items()}
        except (WindowError, ValueError) as exc:
            skipped[r.name] = str(exc)
            log.info("%s skipped: %s", r.name, exc)
            continue
        used[r.name] = {"date": windows.lockdown, "source": source}
        for k, est in fits.items():
            estimates[k][r.name] = est
            rows.append([r.name, windows.lockdown.isoformat(), source, windows.pre[0].isoformat(),
                         windows.pre[1].isoformat(), windows.during[0].isoformat(), windows.during[1].isoformat(),
                         k, fmt(est.lambda_pre), fmt(est.lambda_during), fmt(est.theta),
                         fmt(est.se_pre), fmt(est.se_during)])
    if not rows:
        raise InputDataError("no region yields valid lockdown windows")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "causal_effects.csv",
                ["region", "lockdown_date", "date_source", "pre_start", "pre_end", "during_start", "during_end",
                 "model", "lambda_pre", "lambda_during", "theta", "se_pre", "se_during"], rows)

    names = sorted(estimates["adapted"])
    quantities = ("lambda_pre", "lambda_during", "theta")
    summary = {"command": "lockdown", "wave": wave, "regions": names, "skipped": skipped,
               "alpha_up_per_million": args.alpha_up, "models": {}, "model_differences": {}}
    for k in models:
        block = {}
        for q in quantities:
            vals = [getattr(estimates[k][n], q) for n in names]
            block[q] = {"median": float(np.median(vals)), "sign_test": _paired_test(vals)}
        summary["models"][k] = block
    for q in quantities:
        a = [getattr(estimates["adapted"][n], q) for n in names]
        b = [getattr(estimates["up_saturating"][n], q) for n in names]
        summary["model_differences"][q] = _paired_test(a, b)
    summary["lockdown_dates"] = {n: used[n] for n in names}
    write_json(out / "summary.json", summary)
    print(f"estimated growth rates for {len(names)} regions ({len(skipped)} skipped); output in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                world = world_from_config(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
    else:
        world = WorldSpec()
    if args.seed is not None:
        world = replace(world, seed=args.seed)
    records = simulate_world(world)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "data.csv", "w", newline="", encoding="utf-8") as fh:
        write_surveillance_csv(records, fh)
    scenarios = []
    for s in draw_scenarios(world):
        scenarios.append({
            "name": s.name, "I0": s.I0, "lambda0": s.lambda0, "theta0": s.theta0, "t_L": s.t_L,
            "lockdown_date": s.start_date + dt.timedelta(days=s.t_L),
            "test_initial_per_million": s.test_initial * PER_MILLION,
            "test_growth_pre": s.test_growth_pre, "test_growth_post": s.test_growth_post,
            "mobility_hold": s.mobility_hold, "seed": s.seed,
        })
    write_json(out / "scenario.json", {"world": world_to_dict(world), "regions": scenarios})
    _write_rows(out / "lockdown.csv", ["region", "date"],
                [[s["name"], s["lockdown_date"].isoformat()] for s in scenarios])
    print(f"simulated {len(records)} regions into {out / 'data.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _run_config_defaults(path):
    """Flag defaults from a ``key = value`` run-configuration file."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = parse_config(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    return {k.replace("-", "_"): v for k, v in raw.items()}


def _convert(action, text):
    if isinstance(action, argparse._StoreTrueAction):
        return text.lower() in ("1", "true", "yes")
    value = (action.type or str)(text)
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"{action.dest}: {value!r} is not one of {sorted(action.choices)}")
    return [value] if isinstance(action, argparse._AppendAction) else value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epitesting", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", help="surveillance CSV")
            p.add_argument("--schema", choices=("world", "us_states"), default="world")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="key = value configuration file")

    p = sub.add_parser("validate", help="cross-validate testing models against death curves")
    common(p)
    p.add_argument("--model", choices=("adapted", "limiting", "up", "down", "all"), default="all")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-person", action="store_true", help="report thresholds per person instead of per million")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("adjust", help="prevalence estimates corrected for test volume")
    common(p)
    p.add_argument("--alpha-up", type=float, default=DEFAULT_ALPHA_UP, help="upper threshold, tests per million")
    p.add_argument("--alpha-down", type=float, default=DEFAULT_ALPHA_DOWN, help="lower threshold, tests per million")
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("lockdown", help="growth rates before and during lockdowns")
    common(p)
    p.add_argument("--lockdown-fixture", choices=LOCKDOWN_FIXTURES, default="world_first")
    p.add_argument("--lockdown-file", help="CSV with region,date columns")
    p.add_argument("--lockdown-date", action="append", metavar="REGION=DATE", help="override one region's date")
    p.add_argument("--wave", choices=("first", "second"), help="window rule (default from the fixture)")
    p.add_argument("--alpha-up", type=float, default=DEFAULT_ALPHA_UP)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_lockdown)

    p = sub.add_parser("simulate", help="write a synthetic surveillance CSV")
    common(p, needs_input=False)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.config and args.command != "simulate":
            defaults = _run_config_defaults(args.config)
            sub = parser._subparsers._group_actions[0].choices[args.command]
            known = {a.dest: a for a in sub._actions}
            unknown = sorted(set(defaults) - set(known))
            if unknown:
                raise UsageError(f"unknown configuration keys: {', '.join(unknown)}")
            sub.set_defaults(**{k: _convert(known[k], v) for k, v in defaults.items()})
            args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, SchemaError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputDataError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
