"""Scores and calibration diagnostics for raw ensembles and predictive mixtures."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from . import predictive
from .predictive import PredictiveDistribution


class VerificationError(ValueError):
    pass


class EmptyInput(VerificationError):
    pass


class OutOfRangeValue(VerificationError):
    pass


class MalformedInterval(VerificationError):
    pass


def _errors(forecast, observation) -> np.ndarray:
    f = np.asarray(forecast, dtype=float)
    y = np.asarray(observation, dtype=float)
    if f.size == 0:
        raise EmptyInput("no forecast/observation pairs")
    return f - y


def mae(forecast, observation) -> float:
    return float(np.mean(np.abs(_errors(forecast, observation))))


def rmse(forecast, observation) -> float:
    e = _errors(forecast, observation)
    return float(math.sqrt(np.mean(e * e)))


def crps_empirical(ensemble, y: float) -> float:
    """CRPS of the ensemble's empirical CDF: ``E|X - y| - E|X - X'| / 2``.

    The pairwise term uses the sorted-sample identity
    ``sum_ij |x_i - x_j| = 2 sum_i (2i - m - 1) x_(i)`` (1-based ``i``).
    """
    x = np.sort(np.asarray(ensemble, dtype=float))
    m = x.size
    if m == 0:
        raise EmptyInput("empty ensemble")
    first = np.mean(np.abs(x - y))
    i = np.arange(1, m + 1)
    pair = 2.0 * np.sum((2 * i - m - 1) * x) / (m * m)
    return float(max(first - 0.5 * pair, 0.0))


def rank_of_observation(ensemble, y: float, tie_rng: np.random.Generator) -> int:
    """Rank of ``y`` in 1..m+1 among the ``m`` members, ties broken uniformly at random."""
    x = np.asarray(ensemble, dtype=float)
    if x.size == 0:
        raise EmptyInput("empty ensemble")
    below = int(np.sum(x < y))
    ties = int(np.sum(x == y))
    u = int(tie_rng.integers(0, ties + 1)) if ties else 0
    return 1 + below + u


def rank_histogram(ensembles: Sequence, observations: Sequence[float], tie_rng: np.random.Generator, n_members: Optional[int] = None):
    """Counts of observation ranks, length ``n_members + 1``.

    Only ensembles with exactly ``n_members`` present values (default: the
    largest size seen) are counted; the number skipped is returned second.
    """
    sizes = [np.count_nonzero(np.isfinite(np.asarray(e, dtype=float))) for e in ensembles]
    if not sizes:
        raise EmptyInput("no ensembles")
    m = max(sizes) if n_members is None else n_members
    counts = np.zeros(m + 1, dtype=int)
    skipped = 0
    for e, y, k in zip(ensembles, observations, sizes):
        if k != m:
            skipped += 1
            continue
        e = np.asarray(e, dtype=float)
        counts[rank_of_observation(e[np.isfinite(e)], y, tie_rng) - 1] += 1
    return counts, skipped


def chi2_uniform_p(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    if counts.sum() == 0:
        return float("nan")
    return float(stats.chisquare(counts).pvalue)


def containment_fraction(ensembles: Sequence, observations: Sequence[float]) -> float:
    inside = []
    for e, y in zip(ensembles, observations):
        e = np.asarray(e, dtype=float)
        e = e[np.isfinite(e)]
        inside.append(bool(e.min() <= y <= e.max()))
    if not inside:
        return float("nan")
    return float(np.mean(inside))


def pit(d: PredictiveDistribution, y: float) -> float:
    return float(predictive.cdf(d, y))


def kolmogorov_sf(lam: float, eps: float = 1e-12) -> float:
    """Asymptotic Kolmogorov tail ``Q(lam) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2)``.

    The alternating series is summed until a term falls below ``eps``. For
    ``lam < 1`` it converges slowly, so the equivalent theta-function form
    ``1 - sqrt(2 pi)/lam * sum_k exp(-(2k-1)^2 pi^2 / (8 lam^2))`` is summed there.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        c = math.pi * math.pi / (8.0 * lam * lam)
        s, k = 0.0, 1
        while True:
            t = math.exp(-((2 * k - 1) ** 2) * c)
            s += t
            if t < eps:
                break
            k += 1
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / lam * s))
    s, k = 0.0, 1
    while True:
        t = math.exp(-2.0 * k * k * lam * lam)
        s += t if k % 2 else -t
        if t < eps:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * s))


def ks_uniform_test(values) -> tuple[float, float]:
    """KS statistic against Uniform(0, 1) and its asymptotic p-value."""
    u = np.sort(np.asarray(values, dtype=float))
    n = u.size
    if n == 0:
        raise EmptyInput("no values")
    if np.any((u < 0) | (u > 1)) or np.any(~np.isfinite(u)):
        raise OutOfRangeValue("values must lie in [0, 1]")
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - u), np.max(u - (i - 1) / n)))
    return d, kolmogorov_sf(math.sqrt(n) * d)


def hf7_quantile(sample, p):
    """Sample quantile by linear interpolation between order statistics.

    ``h = (n - 1) p + 1``; ``Q = x_(floor h) + (h - floor h)(x_(floor h + 1) - x_(floor h))``.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    x = x[np.isfinite(x)]
    n = x.size
    if n == 0:
        raise EmptyInput("empty sample")
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise ValueError("p must lie in [0, 1]")
    h = (n - 1) * p_arr + 1.0
    lo = np.clip(np.floor(h).astype(int), 1, n)
    hi = np.clip(lo + 1, 1, n)
    frac = h - lo
    out = x[lo - 1] + frac * (x[hi - 1] - x[lo - 1])
    return float(out) if out.ndim == 0 else out


def central_interval_stats(intervals: Iterable[tuple[float, float, float]]) -> tuple[float, float]:
    arr = np.asarray(list(intervals), dtype=float).reshape(-1, 3)
    if arr.shape[0] == 0:
        raise EmptyInput("no intervals")
    lo, hi, y = arr.T
    if np.any(hi < lo):
        raise MalformedInterval("interval upper bound below lower bound")
    return float(np.mean((lo <= y) & (y <= hi))), float(np.mean(hi - lo))


def brier_score(probabilities, outcomes) -> float:
    p = np.asarray(probabilities, dtype=float)
    o = np.asarray(outcomes, dtype=float)
    if p.size == 0:
        raise EmptyInput("no forecasts")
    return float(np.mean((p - o) ** 2))


@dataclass
class VerificationReport:
    n_cases: int
    mean_crps: float
    mae_median: float
    mae_mean: float
    rmse_median: float
    rmse_mean: float
    coverage: float
    avg_width: float
    pit_values: Optional[list[float]] = None
    ks_d: Optional[float] = None
    ks_p: Optional[float] = None
    rank_counts: Optional[list[int]] = None
    rank_skipped: Optional[int] = None
    rank_chi2_p: Optional[float] = None
    containment: Optional[float] = None
    tie_seed: Optional[int] = None

    SCALAR_FIELDS = (
        "n_cases", "mean_crps", "mae_median", "mae_mean", "rmse_median", "rmse_mean",
        "coverage", "avg_width", "ks_d", "ks_p", "rank_chi2_p", "containment",
    )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def csv_row(self) -> dict:
        return {k: getattr(self, k) for k in self.SCALAR_FIELDS}


@dataclass
class ScoreAccumulator:
    """Per-case scores collected for one forecast system."""

    crps: list[float] = field(default_factory=list)
    median: list[float] = field(default_factory=list)
    mean: list[float] = field(default_factory=list)
    lo: list[float] = field(default_factory=list)
    hi: list[float] = field(default_factory=list)
    obs: list[float] = field(default_factory=list)

    def add(self, crps, median, mean, lo, hi, obs):
        self.crps.append(crps)
        self.median.append(median)
        self.mean.append(mean)
        self.lo.append(lo)
        self.hi.append(hi)
        self.obs.append(obs)

    def report(self, **extra) -> VerificationReport:
        n = len(self.obs)
        if n == 0:
            nan = float("nan")
            return VerificationReport(0, nan, nan, nan, nan, nan, nan, nan, **extra)
        y = np.asarray(self.obs)
        coverage, width = central_interval_stats(zip(self.lo, self.hi, self.obs))
        return VerificationReport(
            n_cases=n,
            mean_crps=float(np.mean(self.crps)),
            mae_median=mae(self.median, y),
            mae_mean=mae(self.mean, y),
            rmse_median=rmse(self.median, y),
            rmse_mean=rmse(self.mean, y),
            coverage=coverage,
            avg_width=width,
            **extra,
        )


def write_values_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
