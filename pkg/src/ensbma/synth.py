"""Synthetic ensemble datasets drawn from the exchangeable-group mixture.

Each case has a centre ``C`` (seasonal cycle + station offset + AR(1)
anomaly). Member deviations ``d_m`` have sd ``member_sd`` at full spread;
published members are ``f_m = C + spread_factor * d_m``. The observation is
then sampled from the mixture with components ``N(b0_g + b1_g f_m, s_eff^2)``
over the published members, where

    s_eff^2 = sigma^2 + kernel_share * (1 - spread_factor^2) * member_sd^2

moves (a share of) the member variance the ensemble fails to resolve into the
kernel. ``spread_factor = 1`` gives kernel sd ``sigma`` and a raw ensemble
close to calibrated; smaller factors give an under-dispersive ensemble while
the mixture stays correctly specified. Regime shifts are added to published
members after the observation is drawn, i.e. they act as forecast bias.
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import (
    N_MEMBERS,
    BiasMode,
    Dataset,
    ForecastCase,
    GroupScheme,
    SchemeVariant,
)
from .estimation import BmaParameters, FitMeta

MISSING_SLOTS_DEFAULT = (3, 4, 5)


@dataclass(frozen=True)
class SynthSpec:
    n_days: int = 200
    n_stations: int = 10
    start: dt.date = dt.date(2010, 10, 1)
    variant: SchemeVariant = SchemeVariant.TWO_GROUP
    # per-member weight of each group, in scheme order; None = uniform
    weights: Optional[tuple[float, ...]] = None
    intercepts: Optional[tuple[float, ...]] = None
    slopes: Optional[tuple[float, ...]] = None
    sigma: float = 2.0
    member_sd: float = 4.2
    # Student-t degrees of freedom of member deviations; None = Gaussian
    member_df: Optional[float] = None
    spread_factor: float = 1.0
    kernel_share: float = 0.7
    symmetric_perturbations: bool = False
    climate_mean: float = 276.0
    seasonal_amplitude: float = 6.0
    station_sd: float = 1.5
    ar_coef: float = 0.8
    ar_sd: float = 2.0
    regime_shifts: tuple[tuple[int, float], ...] = ()
    missing_member_days: tuple[int, ...] = ()
    missing_slots: tuple[int, ...] = MISSING_SLOTS_DEFAULT
    missing_days: tuple[int, ...] = ()
    decimals: Optional[int] = None
    seed: int = 0

    @property
    def scheme(self) -> GroupScheme:
        return GroupScheme.from_variant(self.variant)

    def group_weights(self) -> np.ndarray:
        scheme = self.scheme
        if self.weights is None:
            return np.full(scheme.n_groups, 1.0 / N_MEMBERS)
        return np.asarray(self.weights, dtype=float)

    def validate(self) -> None:
        scheme = self.scheme
        w = self.group_weights()
        if w.shape != (scheme.n_groups,) or np.any(w < 0) or abs(float(w @ scheme.sizes) - 1.0) > 1e-9:
            raise ValueError(f"weights {tuple(w)} invalid for {scheme.variant.value}-group scheme")
        for name in ("intercepts", "slopes"):
            v = getattr(self, name)
            if v is not None and len(v) != scheme.n_groups:
                raise ValueError(f"{name} needs one value per group")
        if not self.sigma > 0 or not self.spread_factor > 0 or not self.member_sd >= 0:
            raise ValueError("sigma and spread_factor must be positive")
        if not self.kernel_variance() > 0:
            raise ValueError("spread_factor too large: effective kernel variance not positive")
        if self.member_df is not None and not self.member_df > 2:
            raise ValueError("member_df must exceed 2 (finite variance)")
        if self.n_days < 1 or self.n_stations < 1:
            raise ValueError("need at least one day and one station")


    def kernel_variance(self) -> float:
        lost = (1.0 - self.spread_factor**2) * self.member_sd**2
        return self.sigma**2 + self.kernel_share * lost


def two_group_weights(omega: float) -> tuple[float, float]:
    """Per-member weights (control, perturbed) for control weight ``omega``."""
    return (omega, (1.0 - omega) / 10.0)


def true_parameters(spec: SynthSpec) -> BmaParameters:
    """The generating mixture expressed as fitted-model parameters."""
    scheme = spec.scheme
    gids = scheme.group_ids
    b0 = spec.intercepts or (0.0,) * scheme.n_groups
    b1 = spec.slopes or (1.0,) * scheme.n_groups
    mode = BiasMode.LINEAR if spec.slopes is not None else (
        BiasMode.ADDITIVE if spec.intercepts is not None else BiasMode.NONE
    )
    return BmaParameters(
        scheme=scheme,
        bias_mode=mode,
        intercepts=dict(zip(gids, map(float, b0))),
        slopes=dict(zip(gids, map(float, b1))),
        group_weights=dict(zip(gids, map(float, spec.group_weights()))),
        sigma2=spec.kernel_variance(),
        fit_meta=FitMeta(),
    )


def _shift_on_day(spec: SynthSpec, day: int) -> float:
    return float(sum(delta for start, delta in spec.regime_shifts if day >= start))


def generate(spec: SynthSpec) -> Dataset:
    spec.validate()
    scheme = spec.scheme
    labels = scheme.labels
    w_member = spec.group_weights()[labels]
    b0 = np.asarray(spec.intercepts or (0.0,) * scheme.n_groups, dtype=float)[labels]
    b1 = np.asarray(spec.slopes or (1.0,) * scheme.n_groups, dtype=float)[labels]

    root = np.random.SeedSequence(spec.seed)
    clim_seq, *day_seqs = root.spawn(spec.n_days + 1)
    clim = np.random.default_rng(clim_seq)
    stations = [f"S{k:02d}" for k in range(spec.n_stations)]
    station_offset = clim.normal(0.0, spec.station_sd, spec.n_stations)
    innov_sd = spec.ar_sd * math.sqrt(1.0 - spec.ar_coef**2)
    anomaly = clim.normal(0.0, spec.ar_sd, spec.n_stations)

    kernel_sd = math.sqrt(spec.kernel_variance())
    missing_days = set(spec.missing_days)
    missing_member_days = set(spec.missing_member_days)
    cases = []
    for day in range(spec.n_days):
        if day > 0:
            anomaly = spec.ar_coef * anomaly + clim.normal(0.0, innov_sd, spec.n_stations)
        date = spec.start + dt.timedelta(days=day)
        rng = np.random.default_rng(day_seqs[day])
        doy = date.timetuple().tm_yday
        seasonal = spec.climate_mean + spec.seasonal_amplitude * math.cos(2 * math.pi * (doy - 15) / 365.25)
        centre = seasonal + station_offset + anomaly
        if spec.member_df is None:
            dev = rng.normal(0.0, spec.member_sd, (spec.n_stations, N_MEMBERS))
        else:
            unit = math.sqrt((spec.member_df - 2.0) / spec.member_df)
            dev = spec.member_sd * unit * rng.standard_t(spec.member_df, (spec.n_stations, N_MEMBERS))
        if spec.symmetric_perturbations:
            # pairs straddle the control: odd = control + delta, even = control - delta
            delta = dev[:, 1::2].copy()
            dev[:, 1::2] = dev[:, :1] + delta
            dev[:, 2::2] = dev[:, :1] - delta
        members = centre[:, None] + spec.spread_factor * dev
        present = np.ones(N_MEMBERS, dtype=bool)
        if day in missing_member_days:
            present[list(spec.missing_slots)] = False
        p = np.where(present, w_member, 0.0)
        p = p / p.sum()
        pick = np.array([rng.choice(N_MEMBERS, p=p) for _ in range(spec.n_stations)])
        mu = b0[pick] + b1[pick] * members[np.arange(spec.n_stations), pick]
        obs = mu + kernel_sd * rng.standard_normal(spec.n_stations)
        published = members + _shift_on_day(spec, day)
        if day in missing_days:
            continue
        if spec.decimals is not None:
            published = np.round(published, spec.decimals)
            obs = np.round(obs, spec.decimals)
        for k, st in enumerate(stations):
            vals = [float(v) if ok else None for v, ok in zip(published[k], present)]
            cases.append(ForecastCase(date, st, float(obs[k]), vals[0], tuple(vals[1:])))
    return Dataset.from_cases(cases)
