"""Rolling-origin evaluation, training-window sweeps and diagnostic series."""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from . import predictive as pred
from . import verification as ver
from .domain import N_MEMBERS, BiasMode, Dataset, GroupScheme, SchemeVariant, slot_name
from .estimation import BmaParameters, EmControl, EmptyTraining, TrainingSet, fit_bma
from .predictive import PredictiveDistribution

logger = logging.getLogger(__name__)

REAL_MIXTURE_MAX_WEIGHT = 0.99


class InsufficientTraining(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    variant: SchemeVariant = SchemeVariant.TWO_GROUP
    bias_mode: BiasMode = BiasMode.LINEAR
    window_days: int = 33
    eval_start: Optional[dt.date] = None
    eval_end: Optional[dt.date] = None
    nominal_level: float = 5.0 / 6.0
    em: EmControl = EmControl()
    freezing_threshold: float = 273.15
    event_side: str = "below"
    seed: int = 0
    min_training_pairs: int = 50
    per_station: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", SchemeVariant(self.variant))
        object.__setattr__(self, "bias_mode", BiasMode(self.bias_mode))
        if self.window_days < 1:
            raise ValueError("window_days must be >= 1")
        if not 0 < self.nominal_level < 1:
            raise ValueError("nominal_level must lie in (0, 1)")
        if self.event_side not in ("below", "above"):
            raise ValueError("event_side must be 'below' or 'above'")

    @property
    def scheme(self) -> GroupScheme:
        return GroupScheme.from_variant(self.variant)

    @property
    def tail(self) -> float:
        return (1.0 - self.nominal_level) / 2.0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        d["bias_mode"] = self.bias_mode.value
        for k in ("eval_start", "eval_end"):
            d[k] = None if d[k] is None else d[k].isoformat()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        for k in ("eval_start", "eval_end"):
            if d.get(k) is not None:
                d[k] = dt.date.fromisoformat(d[k])
        if "em" in d and isinstance(d["em"], dict):
            d["em"] = EmControl(**d["em"])
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class StationForecast:
    station: str
    observation: Optional[float]
    members: np.ndarray
    dist: PredictiveDistribution
    median: float
    mean: float
    lo: float
    hi: float
    crps: Optional[float] = None
    pit: Optional[float] = None
    raw_median: float = math.nan
    raw_mean: float = math.nan
    raw_lo: float = math.nan
    raw_hi: float = math.nan
    raw_crps: Optional[float] = None
    rank: Optional[int] = None

    @property
    def present_members(self) -> np.ndarray:
        return self.members[np.isfinite(self.members)]


@dataclass
class DailyRecord:
    date: dt.date
    params: Optional[BmaParameters]
    stations: list[StationForecast] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    n_train_cases: int = 0
    n_train_pairs: int = 0
    station_params: Optional[dict[str, BmaParameters]] = None


class RollingResult(NamedTuple):
    records: list[DailyRecord]
    bma: ver.VerificationReport
    raw: ver.VerificationReport


def training_set(data: Dataset, day: dt.date, window_days: int, station: Optional[str] = None) -> TrainingSet:
    """Verified cases from the ``window_days`` calendar days before ``day``."""
    tab = data.table
    sl = tab.window(day - dt.timedelta(days=window_days), day - dt.timedelta(days=1))
    obs, members = tab.obs[sl], tab.members[sl]
    if station is not None:
        keep = tab.station[sl] == station
        obs, members = obs[keep], members[keep]
    return TrainingSet.from_arrays(obs, members)


def eval_days(data: Dataset, cfg: RunConfig) -> list[dt.date]:
    if not len(data):
        return []
    first, last = data.date_range
    start = cfg.eval_start or first + dt.timedelta(days=cfg.window_days)
    end = cfg.eval_end or last
    return [d for d in data.dates if start <= d <= end]


def _fit_day(train: TrainingSet, cfg: RunConfig) -> tuple[Optional[BmaParameters], list[str]]:
    if train.n_pairs < cfg.min_training_pairs:
        return None, ["insufficient_training"]
    try:
        params = fit_bma(train, cfg.scheme, cfg.bias_mode, cfg.em)
    except EmptyTraining:
        return None, ["insufficient_training"]
    params.validate(atol=1e-9)
    return params, list(params.fit_meta.flags)


def _raw_summary(sf: StationForecast, tail: float) -> None:
    x = sf.present_members
    sf.raw_median = ver.hf7_quantile(x, 0.5)
    sf.raw_mean = float(np.mean(x))
    sf.raw_lo = ver.hf7_quantile(x, tail)
    sf.raw_hi = ver.hf7_quantile(x, 1.0 - tail)


def run_rolling(data: Dataset, cfg: RunConfig) -> RollingResult:
    """Refit on each day's trailing calendar window and score out of sample.

    Days whose window starts before the data, or holds fewer than
    ``cfg.min_training_pairs`` member pairs, are kept as flagged records and
    excluded from both reports.
    """
    tie_rng = np.random.default_rng(cfg.seed)
    tail = cfg.tail
    records: list[DailyRecord] = []
    bma_acc, raw_acc = ver.ScoreAccumulator(), ver.ScoreAccumulator()
    pits, ensembles, rank_obs = [], [], []
    ranks = np.zeros(N_MEMBERS + 1, dtype=int)
    rank_skipped = 0
    if len(data):
        earliest = data.date_range[0] + dt.timedelta(days=cfg.window_days)

    for day in eval_days(data, cfg):
        todays = [c for c in data.cases_on(day) if not c.empty]
        if not todays:
            continue
        if day < earliest:
            # the window would reach back before the data
            records.append(DailyRecord(day, None, flags=["insufficient_training"]))
            continue
        if cfg.per_station:
            station_params, flags = {}, []
            n_cases = n_pairs = 0
            for st in sorted({c.station_id for c in todays}):
                tr = training_set(data, day, cfg.window_days, st)
                n_cases += tr.n_cases
                n_pairs += tr.n_pairs
                p, fl = _fit_day(tr, cfg)
                flags.extend(f"{st}:{f}" for f in fl)
                if p is not None:
                    station_params[st] = p
            rec = DailyRecord(day, None, flags=flags, n_train_cases=n_cases, n_train_pairs=n_pairs,
                              station_params=station_params)
        else:
            tr = training_set(data, day, cfg.window_days)
            p, fl = _fit_day(tr, cfg)
            rec = DailyRecord(day, p, flags=fl, n_train_cases=tr.n_cases, n_train_pairs=tr.n_pairs)
        records.append(rec)

        for case in todays:
            params = rec.station_params.get(case.station_id) if cfg.per_station else rec.params
            if params is None:
                continue
            d = pred.make_predictive(params, case)
            med, lo, hi = pred.quantile(d, np.array([0.5, tail, 1.0 - tail]))
            sf = StationForecast(case.station_id, case.observation, case.members(), d,
                                 float(med), pred.mean(d), float(lo), float(hi))
            _raw_summary(sf, tail)
            if case.verified:
                y = case.observation
                sf.crps = pred.crps(d, y)
                sf.pit = ver.pit(d, y)
                sf.raw_crps = ver.crps_empirical(sf.present_members, y)
                bma_acc.add(sf.crps, sf.median, sf.mean, sf.lo, sf.hi, y)
                raw_acc.add(sf.raw_crps, sf.raw_median, sf.raw_mean, sf.raw_lo, sf.raw_hi, y)
                pits.append(sf.pit)
                ensembles.append(sf.present_members)
                rank_obs.append(y)
                if sf.present_members.size == N_MEMBERS:
                    sf.rank = ver.rank_of_observation(sf.present_members, y, tie_rng)
                    ranks[sf.rank - 1] += 1
                else:
                    rank_skipped += 1
            rec.stations.append(sf)

    ks_d = ks_p = None
    if pits:
        ks_d, ks_p = ver.ks_uniform_test(pits)
    bma = bma_acc.report(pit_values=pits, ks_d=ks_d, ks_p=ks_p)
    raw = raw_acc.report(
        rank_counts=ranks.tolist(),
        rank_skipped=rank_skipped,
        rank_chi2_p=ver.chi2_uniform_p(ranks) if ranks.sum() else None,
        containment=ver.containment_fraction(ensembles, rank_obs) if ensembles else None,
        tie_seed=cfg.seed,
    )
    return RollingResult(records, bma, raw)


def sweep_window(data: Dataset, cfg: RunConfig, lengths: Sequence[int]) -> list[dict]:
    """Score each training-window length over one shared evaluation range.

    The range starts after the longest window so every length is verified
    on the same days.
    """
    lengths = list(lengths)
    if not lengths:
        return []
    first, last = data.date_range
    start = first + dt.timedelta(days=max(lengths))
    if cfg.eval_start is not None and cfg.eval_start > start:
        start = cfg.eval_start
    end = cfg.eval_end or last
    if start > end:
        raise InsufficientTraining(f"no evaluation days left after a {max(lengths)}-day window")
    rows = []
    for n in lengths:
        c = dataclasses.replace(cfg, window_days=n, eval_start=start, eval_end=end)
        res = run_rolling(data, c)
        b = res.bma
        rows.append({
            "window": n,
            "eval_start": start.isoformat(),
            "eval_end": end.isoformat(),
            "n_cases": b.n_cases,
            "mean_crps": b.mean_crps,
            "mae_median": b.mae_median,
            "rmse_mean": b.rmse_mean,
            "coverage": b.coverage,
            "avg_width": b.avg_width,
        })
    return rows


def relative_sd(values: Iterable[float]) -> float:
    v = np.asarray(list(values), dtype=float)
    return float(np.std(v, ddof=1) / np.mean(v)) if v.size > 1 else 0.0


def weight_series(records: Iterable[DailyRecord]) -> list[dict]:
    """Per-day per-member group weights and the real-mixture indicator.

    A day is a real mixture when no group's total weight exceeds 0.99.
    """
    rows = []
    for rec in records:
        if rec.params is None:
            continue
        p = rec.params
        row: dict = {"date": rec.date.isoformat()}
        totals = p.group_totals
        for g in p.scheme.group_ids:
            row[f"w_{g}"] = p.group_weights[g]
        for g in p.scheme.group_ids:
            row[f"total_{g}"] = totals[g]
        row["sigma2"] = p.sigma2
        row["real_mixture"] = all(t <= REAL_MIXTURE_MAX_WEIGHT for t in totals.values())
        rows.append(row)
    return rows


def real_mixture_fraction(rows: Sequence[dict]) -> float:
    if not rows:
        return math.nan
    return sum(bool(r["real_mixture"]) for r in rows) / len(rows)


def event_series(records: Iterable[DailyRecord], threshold: float, side: str = "below") -> list[dict]:
    """BMA and raw-ensemble probabilities of the observation falling beyond ``threshold``."""
    rows = []
    for rec in records:
        for sf in rec.stations:
            x = sf.present_members
            raw = float(np.mean(x < threshold)) if side == "below" else float(np.mean(x > threshold))
            if sf.observation is None:
                observed = None
            elif side == "below":
                observed = int(sf.observation < threshold)
            else:
                observed = int(sf.observation > threshold)
            rows.append({
                "date": rec.date.isoformat(),
                "station": sf.station,
                "bma_prob": pred.event_probability(sf.dist, threshold, side),
                "raw_prob": raw,
                "observed": observed,
            })
    return rows


def member_errors(data: Dataset, start: dt.date, end: dt.date) -> list[dict]:
    """MAE and RMSE of each individual member over verified cases in ``[start, end]``."""
    tab = data.table
    sl = tab.window(start, end)
    y, f = tab.obs[sl], tab.members[sl]
    rows = []
    for s in range(N_MEMBERS):
        ok = np.isfinite(y) & np.isfinite(f[:, s])
        if not ok.any():
            rows.append({"member": slot_name(s), "n": 0, "mae": None, "rmse": None})
            continue
        rows.append({
            "member": slot_name(s),
            "n": int(ok.sum()),
            "mae": ver.mae(f[ok, s], y[ok]),
            "rmse": ver.rmse(f[ok, s], y[ok]),
        })
    return rows


# ---------------------------------------------------------------- output files

def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def report_document(result: RollingResult, cfg: RunConfig, data_path: Optional[str] = None) -> dict:
    weights = weight_series(result.records)
    return {
        "config": cfg.to_dict(),
        "data": data_path,
        "n_days": len(result.records),
        "n_days_fitted": sum(r.params is not None or bool(r.station_params) for r in result.records),
        "flags": {r.date.isoformat(): r.flags for r in result.records if r.flags},
        "real_mixture_fraction": real_mixture_fraction(weights),
        "bma": result.bma.to_dict(),
        "raw": result.raw.to_dict(),
    }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def write_rows(path: Path, rows: Sequence[dict], header: Optional[Sequence[str]] = None) -> None:
    header = list(header or (rows[0].keys() if rows else []))
    ver.write_values_csv(path, header, ([_fmt(r.get(h)) for h in header] for r in rows))


def daily_rows(records: Iterable[DailyRecord]) -> list[dict]:
    rows = []
    for rec in records:
        for sf in rec.stations:
            p = rec.params if rec.station_params is None else rec.station_params.get(sf.station)
            rows.append({
                "date": rec.date.isoformat(),
                "station": sf.station,
                "obs": sf.observation,
                "bma_median": sf.median,
                "bma_mean": sf.mean,
                "bma_lo": sf.lo,
                "bma_hi": sf.hi,
                "bma_crps": sf.crps,
                "pit": sf.pit,
                "raw_median": sf.raw_median,
                "raw_mean": sf.raw_mean,
                "raw_lo": sf.raw_lo,
                "raw_hi": sf.raw_hi,
                "raw_crps": sf.raw_crps,
                "rank": sf.rank,
                "sigma2": None if p is None else p.sigma2,
                "em_iterations": None if p is None else p.fit_meta.iterations,
                "flags": ";".join(rec.flags),
            })
    return rows


def write_run_outputs(result: RollingResult, cfg: RunConfig, out_dir: str | Path, data_path: Optional[str] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps(report_document(result, cfg, data_path)), encoding="utf-8")
    write_rows(out / "daily.csv", daily_rows(result.records))
    write_rows(out / "weights.csv", weight_series(result.records))
    write_rows(out / "events.csv", event_series(result.records, cfg.freezing_threshold, cfg.event_side),
               ["date", "station", "bma_prob", "raw_prob", "observed"])
    pit_rows = [{"date": r.date.isoformat(), "station": s.station, "pit": s.pit}
                for r in result.records for s in r.stations if s.pit is not None]
    write_rows(out / "pit.csv", pit_rows, ["date", "station", "pit"])
    counts = result.raw.rank_counts or []
    write_rows(out / "ranks.csv", [{"rank": i + 1, "count": c} for i, c in enumerate(counts)], ["rank", "count"])
    return out
