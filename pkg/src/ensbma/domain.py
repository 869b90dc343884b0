"""Forecast cases, datasets, CSV ingestion and exchangeable-group schemes.

Member slots are indexed 0..10: slot 0 is the control forecast, slots 1..10
are the perturbed members (odd slot = positive perturbation, even slot =
negative perturbation of the same initial-condition increment).
"""
from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

N_PERTURBED = 10
N_MEMBERS = N_PERTURBED + 1
CONTROL_SLOT = 0

MEMBER_COLUMNS = ("fc",) + tuple(f"f{j:02d}" for j in range(1, N_PERTURBED + 1))
CSV_COLUMNS = ("date", "station", "obs") + MEMBER_COLUMNS

DEFAULT_BOUNDS = (150.0, 350.0)


class DataError(ValueError):
    """Dataset could not be loaded or violates an invariant.

    ``diagnostics`` holds ``(line_number, message)`` pairs, one per bad row.
    """

    def __init__(self, message: str, diagnostics: Sequence[tuple[int, str]] = ()):
        self.diagnostics = list(diagnostics)
        if self.diagnostics:
            shown = "\n".join(f"  line {ln}: {msg}" for ln, msg in self.diagnostics[:20])
            more = len(self.diagnostics) - 20
            if more > 0:
                shown += f"\n  ... {more} more"
            message = f"{message}\n{shown}"
        super().__init__(message)


class SchemaError(DataError):
    pass


class DuplicateKeyError(DataError):
    pass


class OutOfRangeError(DataError):
    pass


class BiasMode(str, enum.Enum):
    LINEAR = "linear"
    ADDITIVE = "additive"
    NONE = "none"


class SchemeVariant(str, enum.Enum):
    TWO_GROUP = "two"
    THREE_GROUP = "three"


@dataclass(frozen=True)
class GroupScheme:
    """Partition of member slots into exchangeable groups."""

    variant: SchemeVariant
    groups: tuple[tuple[str, tuple[int, ...]], ...]

    @classmethod
    def two_group(cls) -> "GroupScheme":
        return cls(
            SchemeVariant.TWO_GROUP,
            (("control", (CONTROL_SLOT,)), ("perturbed", tuple(range(1, N_MEMBERS)))),
        )

    @classmethod
    def three_group(cls) -> "GroupScheme":
        return cls(
            SchemeVariant.THREE_GROUP,
            (
                ("control", (CONTROL_SLOT,)),
                ("odd", tuple(range(1, N_MEMBERS, 2))),
                ("even", tuple(range(2, N_MEMBERS, 2))),
            ),
        )

    @classmethod
    def from_variant(cls, variant: SchemeVariant | str) -> "GroupScheme":
        variant = SchemeVariant(variant)
        if variant is SchemeVariant.TWO_GROUP:
            return cls.two_group()
        return cls.three_group()

    def __post_init__(self):
        seen: list[int] = [s for _, slots in self.groups for s in slots]
        if sorted(seen) != list(range(N_MEMBERS)):
            raise ValueError("every member slot must belong to exactly one group")

    @property
    def group_ids(self) -> tuple[str, ...]:
        return tuple(g for g, _ in self.groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @cached_property
    def labels(self) -> np.ndarray:
        """Group index of each member slot, shape (11,)."""
        out = np.empty(N_MEMBERS, dtype=int)
        for k, (_, slots) in enumerate(self.groups):
            out[list(slots)] = k
        return out

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([len(slots) for _, slots in self.groups], dtype=int)

    def group_of(self, slot: int) -> str:
        return self.groups[int(self.labels[slot])][0]


def slot_name(slot: int) -> str:
    return MEMBER_COLUMNS[slot]


@dataclass(frozen=True)
class ForecastCase:
    """Observation and the 11 ensemble member forecasts for one (date, station)."""

    date: dt.date
    station_id: str
    observation: Optional[float]
    control: Optional[float]
    perturbed: tuple[Optional[float], ...] = (None,) * N_PERTURBED

    def __post_init__(self):
        if len(self.perturbed) != N_PERTURBED:
            raise ValueError(f"expected {N_PERTURBED} perturbed slots, got {len(self.perturbed)}")

    @property
    def key(self) -> tuple[dt.date, str]:
        return (self.date, self.station_id)

    @property
    def empty(self) -> bool:
        return self.control is None and all(v is None for v in self.perturbed)

    @property
    def verified(self) -> bool:
        return self.observation is not None

    def member(self, slot: int) -> Optional[float]:
        return self.control if slot == CONTROL_SLOT else self.perturbed[slot - 1]

    def members(self) -> np.ndarray:
        """Member values as a length-11 float array, NaN for absent slots."""
        vals = [self.control, *self.perturbed]
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

    def present_values(self) -> np.ndarray:
        m = self.members()
        return m[~np.isnan(m)]


def group_members(case: ForecastCase, scheme: GroupScheme) -> list[tuple[str, float]]:
    """Present members of ``case`` tagged with their group, in slot order within groups."""
    out = []
    for gid, slots in scheme.groups:
        for s in slots:
            v = case.member(s)
            if v is not None:
                out.append((gid, v))
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of forecast cases keyed by (date, station)."""

    cases: dict[tuple[dt.date, str], ForecastCase]
    rejected: tuple[tuple[int, str], ...] = ()

    @classmethod
    def from_cases(cls, cases: Iterable[ForecastCase]) -> "Dataset":
        by_key: dict[tuple[dt.date, str], ForecastCase] = {}
        dupes = []
        for c in cases:
            if c.key in by_key:
                dupes.append((0, f"duplicate key {c.date.isoformat()},{c.station_id}"))
            by_key[c.key] = c
        if dupes:
            raise DuplicateKeyError("duplicate (date, station) keys", dupes)
        ordered = dict(sorted(by_key.items()))
        return cls(ordered)

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases.values())

    @cached_property
    def stations(self) -> tuple[str, ...]:
        return tuple(sorted({s for _, s in self.cases}))

    @cached_property
    def dates(self) -> tuple[dt.date, ...]:
        return tuple(sorted({d for d, _ in self.cases}))

    @property
    def date_range(self) -> tuple[dt.date, dt.date]:
        if not self.cases:
            raise DataError("empty dataset has no date range")
        return self.dates[0], self.dates[-1]

    def get(self, date: dt.date, station: str) -> Optional[ForecastCase]:
        return self.cases.get((date, station))

    @cached_property
    def table(self) -> "CaseTable":
        return CaseTable.build(list(self.cases.values()))

    def cases_on(self, date: dt.date) -> list[ForecastCase]:
        return [c for (d, _), c in self.cases.items() if d == date]

    def cases_between(self, start: dt.date, end: dt.date) -> list[ForecastCase]:
        return [c for (d, _), c in self.cases.items() if start <= d <= end]


@dataclass(frozen=True)
class CaseTable:
    """Column arrays for all cases, sorted by (date, station)."""

    ordinal: np.ndarray  # date.toordinal()
    station: np.ndarray  # object array of station ids
    obs: np.ndarray  # NaN when unverified
    members: np.ndarray  # (n, 11), NaN when absent
    cases: tuple[ForecastCase, ...] = field(repr=False)

    @classmethod
    def build(cls, cases: list[ForecastCase]) -> "CaseTable":
        cases = sorted(cases, key=lambda c: c.key)
        n = len(cases)
        members = np.full((n, N_MEMBERS), np.nan)
        obs = np.full(n, np.nan)
        for i, c in enumerate(cases):
            members[i] = c.members()
            if c.observation is not None:
                obs[i] = c.observation
        return cls(
            ordinal=np.array([c.date.toordinal() for c in cases], dtype=np.int64),
            station=np.array([c.station_id for c in cases], dtype=object),
            obs=obs,
            members=members,
            cases=tuple(cases),
        )

    def window(self, first: dt.date, last: dt.date) -> slice:
        lo = np.searchsorted(self.ordinal, first.toordinal(), side="left")
        hi = np.searchsorted(self.ordinal, last.toordinal(), side="right")
        return slice(int(lo), int(hi))


def _parse_float(token: str, missing: set[str]) -> Optional[float]:
    token = token.strip()
    if token in missing:
        return None
    v = float(token)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {token!r}")
    return v


def load_dataset(
    path: str | Path,
    delimiter: str = ",",
    missing_tokens: Iterable[str] = ("", "NA"),
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    strict: bool = True,
) -> Dataset:
    """Read a forecast CSV (``date,station,obs,fc,f01..f10``, Kelvin).

    With ``strict`` any bad row raises :class:`DataError` listing every
    offending line; otherwise bad rows are dropped and kept in
    ``Dataset.rejected``. Duplicate keys and header mismatches always raise.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        text = fh.read()
    return parse_dataset(text, delimiter, missing_tokens, bounds, strict)


def parse_dataset(
    text: str,
    delimiter: str = ",",
    missing_tokens: Iterable[str] = ("", "NA"),
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    strict: bool = True,
) -> Dataset:
    missing = set(missing_tokens)
    lo, hi = bounds
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty file: header required") from None
    if tuple(header) != CSV_COLUMNS:
        raise SchemaError(f"bad header {header}; expected {list(CSV_COLUMNS)}")

    cases: dict[tuple[dt.date, str], ForecastCase] = {}
    first_line: dict[tuple[dt.date, str], int] = {}
    bad: list[tuple[int, str]] = []
    dupes: list[tuple[int, str]] = []
    range_errors: list[tuple[int, str]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(CSV_COLUMNS):
            bad.append((lineno, f"expected {len(CSV_COLUMNS)} fields, got {len(row)}"))
            continue
        try:
            date = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            bad.append((lineno, f"bad date {row[0]!r}"))
            continue
        station = row[1].strip()
        if not station:
            bad.append((lineno, "empty station id"))
            continue
        try:
            values = [_parse_float(tok, missing) for tok in row[2:]]
        except ValueError as exc:
            bad.append((lineno, f"unparseable number: {exc}"))
            continue
        out_of_range = [
            (col, v) for col, v in zip(CSV_COLUMNS[2:], values) if v is not None and not lo <= v <= hi
        ]
        if out_of_range:
            col, v = out_of_range[0]
            range_errors.append((lineno, f"{col}={v} outside [{lo}, {hi}] K"))
            continue
        case = ForecastCase(date, station, values[0], values[1], tuple(values[2:]))
        if case.key in cases:
            dupes.append((lineno, f"duplicate key {date.isoformat()},{station} (first at line {first_line[case.key]})"))
            continue
        cases[case.key] = case
        first_line[case.key] = lineno

    if dupes:
        raise DuplicateKeyError("duplicate (date, station) keys", dupes)
    rejected = bad + range_errors
    if rejected and strict:
        if range_errors and not bad:
            raise OutOfRangeError("values outside sanity bounds", range_errors)
        raise DataError("rejected rows", sorted(rejected))
    return Dataset(dict(sorted(cases.items())), rejected=tuple(sorted(rejected)))


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def format_dataset(data: Dataset | Iterable[ForecastCase], delimiter: str = ",") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    cases = data.cases.values() if isinstance(data, Dataset) else sorted(data, key=lambda c: c.key)
    for c in cases:
        w.writerow([c.date.isoformat(), c.station_id, _fmt(c.observation), _fmt(c.control), *map(_fmt, c.perturbed)])
    return buf.getvalue()


def write_dataset(data: Dataset, path: str | Path, delimiter: str = ",") -> None:
    Path(path).write_text(format_dataset(data, delimiter), encoding="utf-8")
