"""Observational data: units, CSV ingestion, and the treated/control summary."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import BadIndicator, DuplicateId, EmptyGroup, MissingValue, SchemaError
from .numkit import TestResult, two_proportion_diff, welch_t_test


@dataclass(frozen=True)
class Unit:
    id: str
    z: int
    y: int
    x: tuple[float, ...]


@dataclass(frozen=True)
class PotentialOutcomePair:
    y0: int
    y1: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class ObservationalDataset:
    """Immutable collection of units sharing one covariate vector layout.

    Storage is columnar (``ids``, ``z``, ``y``, ``x``) so the analysis code can
    work on arrays; :attr:`units` gives the row view.
    """

    def __init__(self, ids: Sequence[str], z, y, x, covariate_names: Sequence[str]):
        ids = tuple(str(i) for i in ids)
        z = np.asarray(z)
        y = np.asarray(y)
        x = np.asarray(x, dtype=float)
        names = tuple(covariate_names)
        n = len(ids)
        if x.ndim == 1 and n and x.size == 0:
            x = x.reshape(n, 0)
        if x.ndim != 2 or x.shape != (n, len(names)):
            raise SchemaError(
                f"covariate matrix shape {x.shape} does not match {n} units x {len(names)} covariates")
        if z.shape != (n,) or y.shape != (n,):
            raise SchemaError("treatment and outcome must have one entry per unit")
        if len(set(names)) != len(names):
            raise SchemaError("covariate names must be unique")
        if "z" in names:
            raise SchemaError("'z' is reserved for the treatment indicator and cannot name a covariate")
        for label, v in (("z", z), ("y", y)):
            bad = np.flatnonzero((v != 0) & (v != 1))
            if bad.size:
                i = int(bad[0])
                raise BadIndicator(f"unit {ids[i]!r}: {label}={v[i]!r} is not 0 or 1")
        if not np.all(np.isfinite(x)):
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise MissingValue(f"unit {ids[i]!r}: covariate {names[j]!r} is not finite")
        if len(set(ids)) != n:
            seen: set[str] = set()
            for i in ids:
                if i in seen:
                    raise DuplicateId(f"duplicate unit id {i!r}")
                seen.add(i)
        z = z.astype(np.int8)
        n_treated = int(z.sum())
        if n_treated == 0 or n_treated == n:
            raise EmptyGroup(f"need >= 1 treated and >= 1 control unit, got {n_treated} of {n} treated")
        self.ids = ids
        self.z = _readonly(z)
        self.y = _readonly(y.astype(np.int8))
        self.x = _readonly(x.copy())
        self.covariate_names = names

    @classmethod
    def from_units(cls, units: Iterable[Unit], covariate_names: Sequence[str]) -> "ObservationalDataset":
        units = list(units)
        k = len(covariate_names)
        for u in units:
            if len(u.x) != k:
                raise SchemaError(f"unit {u.id!r} has {len(u.x)} covariates, expected {k}")
        x = np.array([u.x for u in units], dtype=float).reshape(len(units), k)
        return cls([u.id for u in units], [u.z for u in units], [u.y for u in units], x, covariate_names)

    @cached_property
    def units(self) -> tuple[Unit, ...]:
        return tuple(
            Unit(i, int(zi), int(yi), tuple(float(v) for v in row))
            for i, zi, yi, row in zip(self.ids, self.z, self.y, self.x)
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ObservationalDataset):
            return NotImplemented
        return (self.ids == other.ids and self.covariate_names == other.covariate_names
                and np.array_equal(self.z, other.z) and np.array_equal(self.y, other.y)
                and np.array_equal(self.x, other.x))

    def __repr__(self) -> str:
        return (f"ObservationalDataset(n={len(self)}, treated={self.n_treated}, "
                f"covariates={list(self.covariate_names)})")

    @property
    def k(self) -> int:
        return len(self.covariate_names)

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())

    @property
    def n_control(self) -> int:
        return len(self) - self.n_treated

    def column(self, name: str) -> np.ndarray:
        return self.x[:, self.covariate_names.index(name)]

    def columns(self) -> dict[str, np.ndarray]:
        """Covariates by name, plus ``z``; the input to design matrices."""
        cols = {name: self.x[:, j] for j, name in enumerate(self.covariate_names)}
        cols["z"] = self.z.astype(float)
        return cols

    def subset(self, mask) -> "ObservationalDataset":
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return ObservationalDataset([self.ids[i] for i in idx], self.z[idx], self.y[idx],
                                    self.x[idx], self.covariate_names)

    def relabeled(self) -> "ObservationalDataset":
        """The same units with treated and control swapped."""
        return ObservationalDataset(self.ids, 1 - self.z, self.y, self.x, self.covariate_names)


# ---------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for :func:`load_csv`.

    ``covariates=None`` means every column not otherwise claimed and not in
    ``ignore``.
    """

    id: str = "id"
    treatment: str = "z"
    outcome: str = "y"
    covariates: Optional[tuple[str, ...]] = None
    ignore: tuple[str, ...] = ()

    @classmethod
    def from_mapping(cls, m: Optional[Mapping]) -> "CsvSchema":
        if not m:
            return cls()
        unknown = set(m) - {"id", "treatment", "outcome", "covariates", "ignore"}
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        cov = m.get("covariates")
        return cls(
            id=m.get("id", "id"),
            treatment=m.get("treatment", "z"),
            outcome=m.get("outcome", "y"),
            covariates=None if cov is None else tuple(cov),
            ignore=tuple(m.get("ignore", ())),
        )


def _parse_indicator(cell: str, row: int, col: str) -> int:
    s = cell.strip()
    if s == "":
        raise MissingValue(f"row {row}, column {col!r}: empty cell")
    try:
        v = float(s)
    except ValueError:
        raise BadIndicator(f"row {row}, column {col!r}: {s!r} is not 0 or 1") from None
    if v not in (0.0, 1.0):
        raise BadIndicator(f"row {row}, column {col!r}: {s!r} is not 0 or 1")
    return int(v)


def _parse_real(cell: str, row: int, col: str) -> float:
    s = cell.strip()
    if s == "":
        raise MissingValue(f"row {row}, column {col!r}: empty cell")
    try:
        v = float(s)
    except ValueError:
        raise MissingValue(f"row {row}, column {col!r}: {s!r} is not a number") from None
    if not math.isfinite(v):
        raise MissingValue(f"row {row}, column {col!r}: {s!r} is not finite")
    return v


def load_csv(path, schema: Optional[CsvSchema | Mapping] = None) -> ObservationalDataset:
    """Read a dataset from a UTF-8 CSV file with a header row.

    Row numbers in error messages are 1-based file line numbers (the header is
    line 1).
    """
    if not isinstance(schema, CsvSchema):
        schema = CsvSchema.from_mapping(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        for required in (schema.id, schema.treatment, schema.outcome):
            if required not in header:
                raise SchemaError(f"{path}: missing required column {required!r}")
        if schema.covariates is None:
            claimed = {schema.id, schema.treatment, schema.outcome, *schema.ignore}
            cov_names = [h for h in header if h not in claimed]
        else:
            cov_names = list(schema.covariates)
            missing = [c for c in cov_names if c not in header]
            if missing:
                raise SchemaError(f"{path}: covariate columns not found: {missing}")
        pos = {h: i for i, h in enumerate(header)}
        i_id, i_z, i_y = pos[schema.id], pos[schema.treatment], pos[schema.outcome]
        i_x = [pos[c] for c in cov_names]

        ids, zs, ys, xs = [], [], [], []
        first_row: dict[str, int] = {}
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise MissingValue(f"row {line}: expected {len(header)} fields, got {len(rec)}")
            uid = rec[i_id].strip()
            if uid == "":
                raise MissingValue(f"row {line}, column {schema.id!r}: empty cell")
            if uid in first_row:
                raise DuplicateId(f"row {line}, column {schema.id!r}: id {uid!r} "
                                  f"already used on row {first_row[uid]}")
            first_row[uid] = line
            ids.append(uid)
            zs.append(_parse_indicator(rec[i_z], line, schema.treatment))
            ys.append(_parse_indicator(rec[i_y], line, schema.outcome))
            xs.append([_parse_real(rec[j], line, c) for j, c in zip(i_x, cov_names)])
    x = np.array(xs, dtype=float).reshape(len(ids), len(cov_names))
    return ObservationalDataset(ids, zs, ys, x, cov_names)


def write_csv(dataset: ObservationalDataset, path) -> None:
    """Write ``dataset`` in the layout :func:`load_csv` reads by default.

    Floats are written with ``repr`` so a reload is bit-identical.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "z", "y", *dataset.covariate_names])
        for uid, zi, yi, row in zip(dataset.ids, dataset.z, dataset.y, dataset.x):
            w.writerow([uid, int(zi), int(yi), *(repr(float(v)) for v in row)])


# ---------------------------------------------------------------------------
# Table-1 style summary


@dataclass(frozen=True)
class SummaryRow:
    variable: str
    treated_n: int
    treated_mean: float
    treated_sd: float
    control_n: int
    control_mean: float
    control_sd: float
    difference: float
    test: Optional[TestResult]

    @property
    def p_value(self) -> Optional[float]:
        return None if self.test is None else self.test.p_value


@dataclass(frozen=True)
class GroupSummary:
    n_treated: int
    n_control: int
    rows: tuple[SummaryRow, ...] = field(default_factory=tuple)

    def row(self, variable: str) -> SummaryRow:
        for r in self.rows:
            if r.variable == variable:
                return r
        raise KeyError(variable)


def _sd(v: np.ndarray) -> float:
    return float(v.std(ddof=1)) if v.size > 1 else 0.0


def summarize(dataset: ObservationalDataset, outcome_name: str = "y") -> GroupSummary:
    """Group means, SDs and mean differences for the outcome and every covariate.

    The outcome difference is tested with the unpooled two-proportion z test,
    covariates with Welch's t test. A group with fewer than two units has no
    test (``test is None``).
    """
    t = dataset.z == 1
    c = ~t
    nt, nc = int(t.sum()), int(c.sum())
    rows = []

    yt, yc = dataset.y[t].astype(float), dataset.y[c].astype(float)
    pt, pc = float(yt.mean()), float(yc.mean())
    rows.append(SummaryRow(outcome_name, nt, pt, _sd(yt), nc, pc, _sd(yc), pt - pc,
                           two_proportion_diff(pt, nt, pc, nc).z_test()))

    for j, name in enumerate(dataset.covariate_names):
        xt, xc = dataset.x[t, j], dataset.x[c, j]
        mt, mc, st, sc = float(xt.mean()), float(xc.mean()), _sd(xt), _sd(xc)
        test = welch_t_test(mt, st, nt, mc, sc, nc) if nt >= 2 and nc >= 2 else None
        rows.append(SummaryRow(name, nt, mt, st, nc, mc, sc, mt - mc, test))
    return GroupSummary(nt, nc, tuple(rows))
