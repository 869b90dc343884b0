"""Per-day parameter estimation for the exchangeable-group BMA normal mixture.

Two stages: bias coefficients per group by least squares on the pooled
(member, case) pairs, then weights and the common variance by EM with the
bias coefficients held fixed.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq

from .domain import (
    N_MEMBERS,
    BiasMode,
    ForecastCase,
    GroupScheme,
    SchemeVariant,
    slot_name,
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
TINY = np.finfo(float).tiny


class EstimationError(ValueError):
    pass


class EmptyTraining(EstimationError):
    pass


class DegenerateRegression(EstimationError):
    pass


@dataclass(frozen=True)
class EmControl:
    tol: float = 1e-6
    max_iter: int = 1000
    sigma2_floor: float = 1e-6
    group_variances: bool = False
    record_trace: bool = False


@dataclass(frozen=True)
class TrainingSet:
    """Verified cases from a training window as arrays.

    ``members`` has shape (n_cases, 11) with NaN for absent slots; every row
    has at least one present member.
    """

    obs: np.ndarray
    members: np.ndarray

    def __post_init__(self):
        if self.obs.ndim != 1 or self.members.shape != (self.obs.shape[0], N_MEMBERS):
            raise ValueError("obs must be (n,) and members (n, 11)")

    @classmethod
    def from_arrays(cls, obs, members) -> "TrainingSet":
        obs = np.asarray(obs, dtype=float)
        members = np.asarray(members, dtype=float).reshape(len(obs), N_MEMBERS)
        keep = np.isfinite(obs) & np.isfinite(members).any(axis=1)
        return cls(obs[keep].copy(), members[keep].copy())

    @classmethod
    def from_cases(cls, cases: Iterable[ForecastCase]) -> "TrainingSet":
        cases = [c for c in cases if c.verified and not c.empty]
        if not cases:
            return cls(np.empty(0), np.empty((0, N_MEMBERS)))
        return cls(
            np.array([c.observation for c in cases], dtype=float),
            np.vstack([c.members() for c in cases]),
        )

    @property
    def n_cases(self) -> int:
        return int(self.obs.shape[0])

    @property
    def n_pairs(self) -> int:
        return int(np.isfinite(self.members).sum())


class BiasFit(NamedTuple):
    intercepts: dict[str, float]
    slopes: dict[str, float]
    fallback: tuple[str, ...]


def fit_bias(
    train: TrainingSet, scheme: GroupScheme, mode: BiasMode | str, strict: bool = False
) -> BiasFit:
    """Per-group bias coefficients ``(intercept, slope)``.

    Linear mode is ordinary least squares of observation on forecast over the
    group's pooled pairs. A group whose forecasts are constant (or absent)
    falls back to additive correction and is listed in ``fallback``; with
    ``strict`` it raises :class:`DegenerateRegression` instead.
    """
    mode = BiasMode(mode)
    intercepts, slopes, fallback = {}, {}, []
    for gid, slots in scheme.groups:
        f = train.members[:, list(slots)]
        y = np.broadcast_to(train.obs[:, None], f.shape)
        ok = np.isfinite(f)
        f, y = f[ok], y[ok]
        if mode is BiasMode.NONE:
            intercepts[gid], slopes[gid] = 0.0, 1.0
            continue
        if f.size == 0:
            if strict:
                raise DegenerateRegression(f"group {gid!r} has no training pairs")
            intercepts[gid], slopes[gid] = 0.0, 1.0
            fallback.append(gid)
            continue
        if mode is BiasMode.LINEAR:
            fbar = f.mean()
            df = f - fbar
            sxx = float(df @ df)
            if sxx <= 1e-12 * max(1.0, fbar * fbar) * f.size:
                if strict:
                    raise DegenerateRegression(f"group {gid!r} forecasts are constant")
                logger.warning("group %s: constant forecasts, using additive bias", gid)
                fallback.append(gid)
            else:
                ybar = y.mean()
                b1 = float(df @ (y - ybar)) / sxx
                intercepts[gid], slopes[gid] = float(ybar - b1 * fbar), b1
                continue
        intercepts[gid], slopes[gid] = float(np.mean(y - f)), 1.0
    return BiasFit(intercepts, slopes, tuple(fallback))


@dataclass
class FitMeta:
    iterations: int = 0
    log_likelihood: float = float("nan")
    n_cases: int = 0
    n_pairs: int = 0
    converged: bool = False
    flags: list[str] = field(default_factory=list)
    trace: Optional[list[float]] = None


@dataclass
class BmaParameters:
    """Fitted mixture for one forecast day.

    ``group_weights`` holds the weight of a single member of each group, so
    that ``sum(size_g * group_weights[g]) == 1`` over the full ensemble.
    """

    scheme: GroupScheme
    bias_mode: BiasMode
    intercepts: dict[str, float]
    slopes: dict[str, float]
    group_weights: dict[str, float]
    sigma2: float
    group_sigma2: Optional[dict[str, float]] = None
    fit_meta: FitMeta = field(default_factory=FitMeta)

    def _by_slot(self, values: dict[str, float]) -> np.ndarray:
        per_group = np.array([values[g] for g in self.scheme.group_ids], dtype=float)
        return per_group[self.scheme.labels]

    @property
    def member_weights(self) -> np.ndarray:
        return self._by_slot(self.group_weights)

    @property
    def slot_intercepts(self) -> np.ndarray:
        return self._by_slot(self.intercepts)

    @property
    def slot_slopes(self) -> np.ndarray:
        return self._by_slot(self.slopes)

    @property
    def slot_variances(self) -> np.ndarray:
        if self.group_sigma2 is not None:
            return self._by_slot(self.group_sigma2)
        return np.full(N_MEMBERS, self.sigma2)

    @property
    def weights(self) -> dict[str, float]:
        return {slot_name(s): float(w) for s, w in enumerate(self.member_weights)}

    @property
    def group_totals(self) -> dict[str, float]:
        return {g: float(n * self.group_weights[g]) for g, n in zip(self.scheme.group_ids, self.scheme.sizes)}

    def component_means(self, members: np.ndarray) -> np.ndarray:
        return self.slot_intercepts + self.slot_slopes * members

    def validate(self, atol: float = 1e-12) -> None:
        w = self.member_weights
        if np.any(w < 0) or abs(w.sum() - 1.0) > atol:
            raise EstimationError(f"member weights invalid: sum={w.sum()!r}")
        if not self.sigma2 > 0:
            raise EstimationError("sigma2 must be positive")
        if self.group_sigma2 is not None and not all(v > 0 for v in self.group_sigma2.values()):
            raise EstimationError("group variances must be positive")
        if self.bias_mode is not BiasMode.LINEAR and any(v != 1.0 for v in self.slopes.values()):
            raise EstimationError(f"{self.bias_mode.value} bias requires unit slopes")
        if self.bias_mode is BiasMode.NONE and any(v != 0.0 for v in self.intercepts.values()):
            raise EstimationError("no bias correction requires zero intercepts")

    def to_dict(self) -> dict:
        meta = asdict(self.fit_meta)
        if meta["trace"] is None:
            meta.pop("trace")
        return {
            "scheme": {
                "variant": self.scheme.variant.value,
                "groups": [[g, list(slots)] for g, slots in self.scheme.groups],
            },
            "bias_mode": self.bias_mode.value,
            "intercepts": dict(self.intercepts),
            "slopes": dict(self.slopes),
            "group_weights": dict(self.group_weights),
            "weights": self.weights,
            "sigma2": self.sigma2,
            "group_sigma2": None if self.group_sigma2 is None else dict(self.group_sigma2),
            "fit_meta": meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BmaParameters":
        scheme = GroupScheme(
            SchemeVariant(d["scheme"]["variant"]),
            tuple((g, tuple(slots)) for g, slots in d["scheme"]["groups"]),
        )
        return cls(
            scheme=scheme,
            bias_mode=BiasMode(d["bias_mode"]),
            intercepts=dict(d["intercepts"]),
            slopes=dict(d["slopes"]),
            group_weights=dict(d["group_weights"]),
            sigma2=float(d["sigma2"]),
            group_sigma2=None if d.get("group_sigma2") is None else dict(d["group_sigma2"]),
            fit_meta=FitMeta(**d.get("fit_meta", {})),
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "BmaParameters":
        return cls.from_dict(json.loads(text))


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.sum(np.exp(a - safe[:, None]), axis=1))


def _case_loglik(obs, mu, var, logw, present):
    """Per-case log mixture density with weights renormalised over present members."""
    r2 = (obs[:, None] - mu) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        logphi = -0.5 * (LOG_2PI + np.log(var) + r2 / var)
        logdens = np.where(present, logw + logphi, -np.inf)
        lognum = _logsumexp_rows(logdens)
        logden = _logsumexp_rows(np.where(present, logw, -np.inf))
        ll = lognum - logden
    return ll, logdens, lognum, r2


def log_likelihood(params: BmaParameters, train: TrainingSet) -> float:
    """Sum over training cases of the log predictive density at the observation.

    Each case's density is floored at the smallest positive normal double, so
    the result is always finite.
    """
    total, _ = _floored_loglik(params, train)
    return total


def _floored_loglik(params: BmaParameters, train: TrainingSet) -> tuple[float, bool]:
    if train.n_cases == 0:
        return 0.0, False
    present = np.isfinite(train.members)
    mu = params.component_means(np.where(present, train.members, 0.0))
    with np.errstate(divide="ignore"):
        logw = np.log(params.member_weights)
    var = params.slot_variances
    ll, *_ = _case_loglik(train.obs, mu, var, logw, present)
    floor = math.log(TINY)
    bad = ~(ll >= floor)
    ll = np.where(bad, floor, ll)
    return float(ll.sum()), bool(bad.any())


def _mm_weights(Z: np.ndarray, c: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Per-member group weights maximising the minorising surrogate.

    Solves ``w_g = Z_g / (c_g + lam * n_g)`` with ``sum(n_g * w_g) = 1``.
    """
    active = Z > 0
    w = np.zeros_like(Z)
    if not active.any():
        raise EstimationError("no responsibility mass")

    def excess(lam):
        return float(np.sum(sizes[active] * Z[active] / (c[active] + lam * sizes[active]))) - 1.0

    # excess decreases on (lo, inf): +inf at lo, negative at lo + span
    ratios = -c[active] / sizes[active]
    k = int(np.argmax(ratios))
    lo = float(ratios[k])
    span = float(np.sum(Z[active])) + 1.0
    a = lo + 0.5 * min(float(Z[active][k]), span)
    lam = brentq(excess, a, lo + span, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    w[active] = Z[active] / (c[active] + lam * sizes[active])
    return w / np.sum(sizes * w)


def fit_bma(
    train: TrainingSet,
    scheme: GroupScheme,
    mode: BiasMode | str,
    ctrl: EmControl = EmControl(),
) -> BmaParameters:
    """Fit group weights and variance by EM after per-group bias regression.

    E-step responsibilities are normalised over the members present in each
    case. The weight update is the usual mean-responsibility formula when
    every member is present; with absent members it maximises a minorising
    surrogate of the renormalised-mixture likelihood, which keeps the
    log-likelihood non-decreasing.
    """
    mode = BiasMode(mode)
    if train.n_cases == 0:
        raise EmptyTraining("training set has no verified cases")

    bias = fit_bias(train, scheme, mode)
    flags = [f"bias_fallback:{g}" for g in bias.fallback]
    labels = scheme.labels
    sizes = scheme.sizes.astype(float)
    G = scheme.n_groups
    onehot = np.eye(G)[labels]  # (11, G)

    present = np.isfinite(train.members)
    full = bool(present.all())
    b0 = np.array([bias.intercepts[g] for g in scheme.group_ids])[labels]
    b1 = np.array([bias.slopes[g] for g in scheme.group_ids])[labels]
    mu = np.where(present, b0 + b1 * np.where(present, train.members, 0.0), 0.0)
    y = train.obs
    S = train.n_cases
    n_gs = present.astype(float) @ onehot  # present members per group per case

    r2_all = np.where(present, (y[:, None] - mu) ** 2, 0.0)
    sigma2 = float(r2_all.sum() / present.sum())
    if sigma2 < ctrl.sigma2_floor:
        sigma2 = ctrl.sigma2_floor
        flags.append("variance_floor")
    wg = np.full(G, 1.0 / N_MEMBERS)
    var_g = np.full(G, sigma2) if ctrl.group_variances else None

    trace: list[float] = []
    ll_old = None
    converged = False
    floor = math.log(TINY)
    it = 0
    while True:
        var = var_g[labels] if var_g is not None else np.full(N_MEMBERS, sigma2)
        with np.errstate(divide="ignore"):
            logw = np.log(wg[labels])
        ll_case, logdens, lognum, r2 = _case_loglik(y, mu, var, logw, present)
        if not np.all(ll_case >= floor):
            if "likelihood_floor" not in flags:
                flags.append("likelihood_floor")
            ll_case = np.where(ll_case >= floor, ll_case, floor)
        ll = float(ll_case.sum())
        trace.append(ll)
        if ll_old is not None and abs(ll - ll_old) <= ctrl.tol * max(abs(ll_old), TINY):
            converged = True
            break
        if it >= ctrl.max_iter:
            break
        ll_old = ll
        it += 1

        # E-step
        with np.errstate(invalid="ignore"):
            z = np.exp(logdens - lognum[:, None])
        z = np.where(present & np.isfinite(z), z, 0.0)
        Zg = z.sum(axis=0) @ onehot

        # M-step
        if full:
            wg = Zg / (S * sizes)
            wg = wg / np.sum(sizes * wg)
        else:
            W0 = present.astype(float) @ wg[labels]
            c = (n_gs / W0[:, None]).sum(axis=0)
            wg = _mm_weights(Zg, c, sizes)
        zr2 = (z * np.where(present, r2, 0.0)).sum(axis=0)
        if var_g is not None:
            num = zr2 @ onehot
            var_g = np.where(Zg > 0, num / np.where(Zg > 0, Zg, 1.0), var_g)
            if np.any(var_g < ctrl.sigma2_floor):
                var_g = np.maximum(var_g, ctrl.sigma2_floor)
                if "variance_floor" not in flags:
                    flags.append("variance_floor")
            sigma2 = float(np.sum(zr2) / S)
        else:
            sigma2 = float(np.sum(zr2) / S)
        if sigma2 < ctrl.sigma2_floor:
            sigma2 = ctrl.sigma2_floor
            if "variance_floor" not in flags:
                flags.append("variance_floor")

    if not converged:
        flags.append("non_convergence")
        logger.info("EM hit max_iter=%d (ll=%.6f)", ctrl.max_iter, ll)
    meta = FitMeta(
        iterations=it,
        log_likelihood=ll,
        n_cases=S,
        n_pairs=int(present.sum()),
        converged=converged,
        flags=flags,
        trace=trace if ctrl.record_trace else None,
    )
    gids = scheme.group_ids
    params = BmaParameters(
        scheme=scheme,
        bias_mode=mode,
        intercepts=dict(bias.intercepts),
        slopes=dict(bias.slopes),
        group_weights={g: float(w) for g, w in zip(gids, wg)},
        sigma2=sigma2,
        group_sigma2=None if var_g is None else {g: float(v) for g, v in zip(gids, var_g)},
        fit_meta=meta,
    )
    return params
