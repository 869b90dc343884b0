"""Command-line front end: run, sweep, synth, rankhist, inspect.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import pipeline, predictive, verification
from .domain import DataError, format_dataset, load_dataset
from .estimation import EmControl, EstimationError
from .pipeline import InsufficientTraining, RunConfig
from .synth import SynthSpec, generate, two_group_weights

logger = logging.getLogger("ensbma")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
_DEFAULT = RunConfig()
_EM = EmControl()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _date(s: str) -> dt.date:
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {s!r}") from None


def parse_lengths(spec: str) -> list[int]:
    """``10:60`` (inclusive), ``10:60:5`` or ``10,20,33``."""
    try:
        if ":" in spec:
            parts = [int(p) for p in spec.split(":")]
            if len(parts) == 2:
                lo, hi, step = parts[0], parts[1], 1
            elif len(parts) == 3:
                lo, hi, step = parts
            else:
                raise ValueError
            if step < 1 or lo < 1 or hi < lo:
                raise ValueError
            return list(range(lo, hi + 1, step))
        out = [int(p) for p in spec.split(",") if p.strip()]
        if not out or min(out) < 1:
            raise ValueError
        return out
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad window lengths {spec!r}") from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="forecast CSV (date,station,obs,fc,f01..f10; Kelvin)")
    p.add_argument("--config", help="JSON config (report.json or its 'config' object) providing defaults")
    p.add_argument("--scheme", choices=["two", "three"], help=f"exchangeable grouping (default: {_DEFAULT.variant.value})")
    p.add_argument("--bias", choices=["linear", "additive", "none"], help=f"bias correction (default: {_DEFAULT.bias_mode.value})")
    p.add_argument("--window", type=int, help=f"training window in calendar days (default: {_DEFAULT.window_days})")
    p.add_argument("--start", type=_date, help="first evaluation date (default: data start + window)")
    p.add_argument("--end", type=_date, help="last evaluation date (default: data end)")
    p.add_argument("--level", type=float, help=f"central interval level (default: {_DEFAULT.nominal_level!r})")
    p.add_argument("--threshold", type=float, help=f"event threshold in K (default: {_DEFAULT.freezing_threshold})")
    p.add_argument("--side", choices=["below", "above"], help=f"event side (default: {_DEFAULT.event_side})")
    p.add_argument("--seed", type=int, help=f"rank tie-breaking seed (default: {_DEFAULT.seed})")
    p.add_argument("--min-pairs", type=int, help=f"minimum training member pairs (default: {_DEFAULT.min_training_pairs})")
    p.add_argument("--tol", type=float, help=f"EM relative log-likelihood tolerance (default: {_EM.tol})")
    p.add_argument("--max-iter", type=int, help=f"EM iteration cap (default: {_EM.max_iter})")
    p.add_argument("--group-variances", action="store_const", const=True,
                   help="separate variance per group (default: common variance)")
    p.add_argument("--per-station", action="store_const", const=True,
                   help="fit each station separately (default: pooled)")
    p.add_argument("--format", choices=["json", "csv"], default="json", help="stdout summary format (default: json)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ensbma", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="rolling-origin BMA calibration and verification")
    _add_run_flags(run)
    run.add_argument("--out", default="out", help="output directory (default: out)")

    sweep = sub.add_parser("sweep", help="verification scores versus training window length")
    _add_run_flags(sweep)
    sweep.add_argument("--lengths", type=parse_lengths, default=parse_lengths("10:60"),
                       help="window lengths, LO:HI[:STEP] or comma list (default: 10:60)")
    sweep.add_argument("--out", default="out", help="output directory (default: out)")

    syn = sub.add_parser("synth", help="generate a synthetic forecast CSV")
    base = SynthSpec()
    syn.add_argument("--days", type=int, default=base.n_days, help=f"number of days (default: {base.n_days})")
    syn.add_argument("--stations", type=int, default=base.n_stations, help=f"number of stations (default: {base.n_stations})")
    syn.add_argument("--start", type=_date, default=base.start, help=f"first date (default: {base.start})")
    syn.add_argument("--spread", type=float, default=base.spread_factor, help=f"member spread factor (default: {base.spread_factor})")
    syn.add_argument("--scheme", choices=["two", "three"], default=base.variant.value, help="true grouping (default: two)")
    syn.add_argument("--weights", type=lambda s: tuple(float(x) for x in s.split(",")),
                     help="per-member group weights, comma separated (default: uniform 1/11)")
    syn.add_argument("--omega", type=float, help="two-group control weight shortcut (default: unset)")
    syn.add_argument("--sigma", type=float, default=base.sigma, help=f"kernel sd at full spread, K (default: {base.sigma})")
    syn.add_argument("--member-sd", type=float, default=base.member_sd, help=f"member deviation sd, K (default: {base.member_sd})")
    syn.add_argument("--kernel-share", type=float, default=base.kernel_share,
                     help=f"share of unresolved member variance added to the kernel (default: {base.kernel_share})")
    syn.add_argument("--symmetric", action="store_true", help="mirror odd/even perturbations (default: off)")
    syn.add_argument("--shift", action="append", default=[], metavar="DAY:DELTA",
                     help="forecast bias jump of DELTA K from day index DAY; repeatable (default: none)")
    syn.add_argument("--missing-member-days", type=lambda s: tuple(int(x) for x in s.split(",")), default=(),
                     help="day indices with members f03-f05 absent (default: none)")
    syn.add_argument("--missing-days", type=lambda s: tuple(int(x) for x in s.split(",")), default=(),
                     help="day indices with no data (default: none)")
    syn.add_argument("--decimals", type=int, help="round values to this many decimals (default: full precision)")
    syn.add_argument("--seed", type=int, default=base.seed, help=f"random seed (default: {base.seed})")
    syn.add_argument("--out", help="output CSV path (default: stdout)")

    rh = sub.add_parser("rankhist", help="raw-ensemble verification rank histogram")
    rh.add_argument("--data", required=True, help="forecast CSV")
    rh.add_argument("--seed", type=int, default=_DEFAULT.seed, help=f"tie-breaking seed (default: {_DEFAULT.seed})")
    rh.add_argument("--start", type=_date, help="first date (default: data start)")
    rh.add_argument("--end", type=_date, help="last date (default: data end)")
    rh.add_argument("--out", help="write ranks.csv here (default: stdout only)")
    rh.add_argument("--format", choices=["json", "csv"], default="json", help="stdout format (default: json)")

    ins = sub.add_parser("inspect", help="predictive distribution for one (date, station)")
    _add_run_flags(ins)
    ins.add_argument("--date", type=_date, required=True, help="forecast date")
    ins.add_argument("--station", required=True, help="station id")
    return parser


def config_from_args(args) -> RunConfig:
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cfg = RunConfig.from_dict(doc.get("config", doc))
    else:
        cfg = RunConfig()
    em_over = {k: v for k, v in (("tol", args.tol), ("max_iter", args.max_iter),
                                 ("group_variances", args.group_variances)) if v is not None}
    over = {k: v for k, v in (
        ("variant", args.scheme), ("bias_mode", args.bias), ("window_days", args.window),
        ("eval_start", args.start), ("eval_end", args.end), ("nominal_level", args.level),
        ("freezing_threshold", args.threshold), ("event_side", args.side), ("seed", args.seed),
        ("min_training_pairs", args.min_pairs), ("per_station", args.per_station),
    ) if v is not None}
    try:
        if em_over:
            over["em"] = dataclasses.replace(cfg.em, **em_over)
        return dataclasses.replace(cfg, **over)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(obj, fmt: str, stream=None) -> None:
    stream = stream or sys.stdout
    if fmt == "json":
        stream.write(pipeline.dumps(obj))
        return
    rows = obj if isinstance(obj, list) else [obj]
    header = list(rows[0].keys()) if rows else []
    stream.write(",".join(header) + "\n")
    for r in rows:
        stream.write(",".join(pipeline._fmt(r.get(h)) for h in header) + "\n")


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    data = load_dataset(args.data)
    result = pipeline.run_rolling(data, cfg)
    if not any(r.stations for r in result.records):
        raise InsufficientTraining("no evaluation day had enough training data")
    out = pipeline.write_run_outputs(result, cfg, args.out, data_path=args.data)
    rows = [dict(system="bma", **result.bma.csv_row()), dict(system="raw", **result.raw.csv_row())]
    _emit(rows if args.format == "csv" else {"bma": rows[0], "raw": rows[1], "out": str(out)}, args.format)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    data = load_dataset(args.data)
    rows = pipeline.sweep_window(data, cfg, args.lengths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_rows(out / "sweep.csv", rows)
    _emit(rows, args.format)
    return EXIT_OK


def cmd_synth(args) -> int:
    weights = args.weights
    if args.omega is not None:
        if args.scheme != "two":
            raise UsageError("--omega applies to the two-group scheme only")
        weights = two_group_weights(args.omega)
    shifts = []
    for s in args.shift:
        try:
            day, delta = s.split(":")
            shifts.append((int(day), float(delta)))
        except ValueError:
            raise UsageError(f"bad --shift {s!r}; expected DAY:DELTA") from None
    spec = SynthSpec(
        n_days=args.days, n_stations=args.stations, start=args.start, variant=args.scheme,
        weights=weights, sigma=args.sigma, member_sd=args.member_sd, spread_factor=args.spread,
        kernel_share=args.kernel_share, symmetric_perturbations=args.symmetric,
        regime_shifts=tuple(shifts), missing_member_days=args.missing_member_days,
        missing_days=args.missing_days, decimals=args.decimals, seed=args.seed,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = format_dataset(generate(spec))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_rankhist(args) -> int:
    data = load_dataset(args.data)
    first, last = data.date_range
    cases = [c for c in data.cases_between(args.start or first, args.end or last) if c.verified and not c.empty]
    ens = [c.present_values() for c in cases]
    obs = [c.observation for c in cases]
    counts, skipped = verification.rank_histogram(ens, obs, np.random.default_rng(args.seed))
    rows = [{"rank": i + 1, "count": int(c)} for i, c in enumerate(counts)]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        pipeline.write_rows(out / "ranks.csv", rows, ["rank", "count"])
    if args.format == "csv":
        _emit(rows, "csv")
    else:
        _emit({
            "rank_counts": [int(c) for c in counts],
            "skipped_incomplete": skipped,
            "chi2_p": verification.chi2_uniform_p(counts),
            "containment": verification.containment_fraction(ens, obs),
            "seed": args.seed,
        }, "json")
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = config_from_args(args)
    data = load_dataset(args.data)
    case = data.get(args.date, args.station)
    if case is None or case.empty:
        raise DataError(f"no forecasts for {args.date} {args.station}")
    train = pipeline.training_set(data, args.date, cfg.window_days, args.station if cfg.per_station else None)
    params, flags = pipeline._fit_day(train, cfg)
    if params is None:
        raise InsufficientTraining(f"{train.n_pairs} training pairs < {cfg.min_training_pairs}")
    d = predictive.make_predictive(params, case)
    t = cfg.tail
    lo, med, hi = predictive.quantile(d, np.array([t, 0.5, 1 - t]))
    q10, q90 = predictive.quantile(d, np.array([0.1, 0.9]))
    doc = {
        "date": args.date.isoformat(),
        "station": args.station,
        "observation": case.observation,
        "members": {k: v for k, v in zip(("fc",) + tuple(f"f{j:02d}" for j in range(1, 11)),
                                         [None if np.isnan(v) else float(v) for v in case.members()])},
        "params": params.to_dict(),
        "distribution": d.to_dict(),
        "mean": predictive.mean(d),
        "median": float(med),
        "interval": [float(lo), float(hi)],
        "deciles": [float(q10), float(q90)],
        "event_probability": predictive.event_probability(d, cfg.freezing_threshold, cfg.event_side),
        "flags": flags,
    }
    if case.verified:
        doc["crps"] = predictive.crps(d, case.observation)
        doc["pit"] = verification.pit(d, case.observation)
    _emit(doc, "json")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "synth": cmd_synth, "rankhist": cmd_rankhist, "inspect": cmd_inspect}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ensbma: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InsufficientTraining, EstimationError, OSError) as exc:
        print(f"ensbma: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
