"""Observed and complete (Science) data tables for one-sided non-compliance.

Outcomes are stored as integer categories ``0..K-1`` in an ``(N, J)`` array and
are treated as numeric scores by the test statistics. Covariate cells are small
non-negative integers (e.g. gender coded 0/1).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np


class ComplianceStatus(IntEnum):
    UNKNOWN = -1
    NEVER_TAKER = 0
    COMPLIER = 1
    ALWAYS_TAKER = 2
    DEFIER = 3


ONE_SIDED_STATUSES = frozenset(
    {ComplianceStatus.UNKNOWN, ComplianceStatus.NEVER_TAKER, ComplianceStatus.COMPLIER}
)


class ObservedUnit(NamedTuple):
    id: object
    cell: int
    z: int
    d_obs: int
    y_obs: tuple


class DataError(ValueError):
    """Invalid observed or complete data."""


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ObservedDataset:
    """Per-unit assignment ``z``, receipt ``d``, cell and ``J`` categorical outcomes.

    ``cell`` defaults to a single cell and ``K`` to ``max(y) + 1`` (at least 2).
    Construction validates one-sidedness (``z == 0`` implies ``d == 0``) and the
    outcome ranges. All arrays are read-only.
    """

    z: np.ndarray
    d: np.ndarray
    y: np.ndarray
    cell: np.ndarray | None = None
    K: int | None = None
    ids: np.ndarray | None = None
    cell_count: int | None = None

    def __post_init__(self):
        z = _frozen(self.z, np.int8)
        d = _frozen(self.d, np.int8)
        y = np.asarray(self.y)
        if y.ndim == 1:
            y = y[:, None]
        y = _frozen(y, np.int64)
        n = z.shape[0]
        cell = _frozen(self.cell, np.int64) if self.cell is not None else _frozen(np.zeros(n), np.int64)
        if z.ndim != 1 or d.shape != z.shape or cell.shape != z.shape or y.shape[0] != n:
            raise DataError("z, d, cell and y must all have N rows")
        if self.K is None:
            object.__setattr__(self, "K", max(int(y.max()) + 1 if y.size else 2, 2))
        if self.K < 1:
            raise DataError(f"K must be positive, got {self.K}")
        for name, a in (("z", z), ("d", d)):
            if a.size and not np.isin(a, (0, 1)).all():
                raise DataError(f"{name} must be binary")
        bad = np.flatnonzero((z == 0) & (d == 1))
        if bad.size:
            raise DataError(f"one-sided violation at unit {int(bad[0])}: z=0 with d=1")
        if y.size and (y.min() < 0 or y.max() >= self.K):
            raise DataError(f"outcome categories must lie in 0..{self.K - 1}")
        if cell.size and cell.min() < 0:
            raise DataError("cell indices must be non-negative")
        cell_count = self.cell_count
        if cell_count is None:
            cell_count = int(cell.max()) + 1 if cell.size else 1
        elif cell.size and cell.max() >= cell_count:
            raise DataError("cell index exceeds cell_count")
        ids = self.ids
        if ids is None:
            ids = np.arange(n)
        ids = _frozen(ids, object)
        if ids.shape != (n,):
            raise DataError("ids must have N entries")
        if len(set(ids.tolist())) != n:
            raise DataError("duplicate unit identifiers")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "cell", cell)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "cell_count", int(cell_count))

    @property
    def N(self) -> int:
        return self.z.shape[0]

    @property
    def J(self) -> int:
        return self.y.shape[1]

    @property
    def n1(self) -> int:
        return int(self.z.sum())

    def compliance(self) -> np.ndarray:
        """Compliance status implied by ``(z, d)``; control units are unknown."""
        c = np.full(self.N, ComplianceStatus.UNKNOWN, dtype=np.int8)
        c[(self.z == 1) & (self.d == 1)] = ComplianceStatus.COMPLIER
        c[(self.z == 1) & (self.d == 0)] = ComplianceStatus.NEVER_TAKER
        return c

    def unit(self, i: int) -> ObservedUnit:
        return ObservedUnit(self.ids[i], int(self.cell[i]), int(self.z[i]), int(self.d[i]),
                            tuple(self.y[i].tolist()))

    def __len__(self):
        return self.N


@dataclass(frozen=True, eq=False)
class ScienceTable:
    """Complete potential-outcome table with (known) compliance strata."""

    compliance: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    cell: np.ndarray
    K: int
    cell_count: int | None = None
    ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        comp = _frozen(self.compliance, np.int8)
        y0 = np.asarray(self.y0)
        y1 = np.asarray(self.y1)
        if y0.ndim == 1:
            y0, y1 = y0[:, None], y1[:, None]
        y0, y1 = _frozen(y0, np.int64), _frozen(y1, np.int64)
        n = comp.shape[0]
        cell = _frozen(self.cell if self.cell is not None else np.zeros(n), np.int64)
        if y0.shape != y1.shape or y0.shape[0] != n or cell.shape != (n,):
            raise DataError("compliance, y0, y1 and cell must all have N rows")
        if (comp == ComplianceStatus.UNKNOWN).any():
            raise DataError("complete tables cannot hold unknown compliance")
        if not np.isin(comp, (ComplianceStatus.COMPLIER, ComplianceStatus.NEVER_TAKER)).all():
            raise DataError("only compliers and never-takers exist under one-sided non-compliance")
        cell_count = self.cell_count
        if cell_count is None:
            cell_count = int(cell.max()) + 1 if n else 1
        object.__setattr__(self, "compliance", comp)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "cell", cell)
        object.__setattr__(self, "cell_count", int(cell_count))
        if self.ids is not None:
            object.__setattr__(self, "ids", _frozen(self.ids, object))

    @property
    def N(self) -> int:
        return self.compliance.shape[0]

    @property
    def J(self) -> int:
        return self.y0.shape[1]

    def receipt(self, z: int) -> np.ndarray:
        """Potential receipt ``D(z)``: zero under control, complier indicator under treatment."""
        if z == 0:
            return np.zeros(self.N, dtype=np.int8)
        return (self.compliance == ComplianceStatus.COMPLIER).astype(np.int8)


class CompleteNullTable(ScienceTable):
    """Science table filled in under the sharp null of no effect (``y0 == y1``)."""

    def __post_init__(self):
        super().__post_init__()
        if not np.array_equal(self.y0, self.y1):
            raise DataError("sharp-null table requires y0 == y1 for every unit")

    @property
    def y(self) -> np.ndarray:
        return self.y0


def impute_sharp_null(obs: ObservedDataset, compliance: Sequence[int] | np.ndarray) -> CompleteNullTable:
    """Fill the missing potential outcomes with the observed ones.

    ``compliance`` must be fully imputed; unknown entries are rejected.
    """
    comp = np.asarray(compliance, dtype=np.int8)
    if comp.shape != (obs.N,):
        raise DataError(f"compliance has {comp.shape[0]} entries, expected {obs.N}")
    if (comp == ComplianceStatus.UNKNOWN).any():
        raise DataError("compliance must be imputed before filling the sharp null")
    observed = obs.compliance()
    known = observed != ComplianceStatus.UNKNOWN
    if not np.array_equal(comp[known], observed[known]):
        raise DataError("imputed compliance contradicts observed statuses of treated units")
    return CompleteNullTable(
        compliance=comp, y0=obs.y, y1=obs.y, cell=obs.cell, K=obs.K,
        cell_count=obs.cell_count, ids=obs.ids,
    )


def reobserve(complete: ScienceTable, z_hyp) -> ObservedDataset:
    """Mask ``complete`` as it would have been seen under assignment ``z_hyp``."""
    z = np.asarray(z_hyp, dtype=np.int8)
    if z.shape != (complete.N,):
        raise DataError(f"assignment has length {z.shape[0] if z.ndim else 0}, expected {complete.N}")
    y = np.where(z[:, None] == 1, complete.y1, complete.y0)
    d = (z == 1) & (complete.compliance == ComplianceStatus.COMPLIER)
    return ObservedDataset(
        z=z, d=d, y=y, cell=complete.cell, K=complete.K,
        ids=complete.ids, cell_count=complete.cell_count,
    )


# --------------------------------------------------------------------------- I/O


def parse_schema(text: str) -> dict:
    """Parse ``z=COL,d=COL,cell=COL,y=COL1:COL2,id=COL`` into a column mapping.

    An optional ``c=COL`` names a known-compliance column (1 complier, 0 never-taker).
    """
    schema: dict = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or not value:
            raise DataError(f"bad schema entry {part!r}")
        if key == "y":
            schema["y"] = [c for c in value.split(":") if c]
        elif key in ("z", "d", "cell", "id", "c"):
            schema[key] = value.strip()
        else:
            raise DataError(f"unknown schema key {key!r}")
    for key in ("z", "d", "y"):
        if key not in schema:
            raise DataError(f"schema is missing {key!r}")
    return schema


def load_dataset(
    source: str | bytes | io.IOBase | Iterable[str],
    schema: Mapping | str,
    K: int | None = None,
    delimiter: str | None = None,
) -> ObservedDataset:
    """Read a delimiter-separated table with a header row.

    Parameters
    ----------
    source : text, bytes, or an open file
        The table. The delimiter is sniffed (comma or tab) unless given.
    schema : mapping or str
        Column names for ``z``, ``d``, ``y`` (list) and optionally ``cell`` and
        ``id``. A string is parsed with :func:`parse_schema`.
    K : int, optional
        Categories per outcome; inferred as ``max(y) + 1`` when omitted.

    Errors name the 1-based data row (header is row 0).
    """
    if isinstance(schema, str):
        schema = parse_schema(schema)
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        text = source
    elif hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        text = "\n".join(source)
    lines = text.splitlines()
    if not lines:
        raise DataError("empty input: header row required")
    if delimiter is None:
        delimiter = "\t" if "\t" in lines[0] else ","
    reader = csv.reader(lines, delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    index = {name: i for i, name in enumerate(header)}
    wanted = [schema["z"], schema["d"], *schema["y"]]
    if "cell" in schema:
        wanted.append(schema["cell"])
    if "id" in schema:
        wanted.append(schema["id"])
    missing = [c for c in wanted if c not in index]
    if missing:
        raise DataError(f"columns not in header: {', '.join(missing)}")

    ids, zs, ds, cells, ys = [], [], [], [], []
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise DataError(f"malformed row {row_no}: expected {len(header)} fields, got {len(row)}")
        fields = [f.strip() for f in row]
        if any(fields[index[c]] == "" for c in wanted):
            raise DataError(f"blank field at row {row_no}")
        try:
            z = int(fields[index[schema["z"]]])
            d = int(fields[index[schema["d"]]])
            y = [int(fields[index[c]]) for c in schema["y"]]
            cell = int(fields[index[schema["cell"]]]) if "cell" in schema else 0
        except ValueError:
            raise DataError(f"malformed row {row_no}: non-integer value") from None
        if z not in (0, 1) or d not in (0, 1):
            raise DataError(f"malformed row {row_no}: z and d must be 0 or 1")
        if z == 0 and d == 1:
            raise DataError(f"one-sided violation at row {row_no}: z=0 with d=1")
        if cell < 0:
            raise DataError(f"negative cell index at row {row_no}")
        if any(v < 0 or (K is not None and v >= K) for v in y):
            raise DataError(f"out-of-range category at row {row_no}")
        ids.append(fields[index[schema["id"]]] if "id" in schema else row_no)
        zs.append(z)
        ds.append(d)
        cells.append(cell)
        ys.append(y)

    if "id" in schema:
        seen: dict = {}
        for row_no, uid in enumerate(ids, start=1):
            if uid in seen:
                raise DataError(f"duplicate id {uid!r} at row {row_no} (first at row {seen[uid]})")
            seen[uid] = row_no
    J = len(schema["y"])
    y_arr = np.array(ys, dtype=np.int64).reshape(len(ys), J)
    if K is None:
        K = int(y_arr.max()) + 1 if y_arr.size else 2
        K = max(K, 2)
    return ObservedDataset(
        z=np.array(zs, dtype=np.int8), d=np.array(ds, dtype=np.int8), y=y_arr,
        cell=np.array(cells, dtype=np.int64), K=K, ids=np.array(ids, dtype=object),
    )


def write_dataset(obs: ObservedDataset, fh, outcome_names: Sequence[str] | None = None,
                  delimiter: str = ",") -> None:
    """Write ``obs`` with header ``id,cell,z,d,<outcomes>``."""
    names = list(outcome_names) if outcome_names else [f"y{j + 1}" for j in range(obs.J)]
    w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    w.writerow(["id", "cell", "z", "d", *names])
    for i in range(obs.N):
        w.writerow([obs.ids[i], int(obs.cell[i]), int(obs.z[i]), int(obs.d[i]), *obs.y[i].tolist()])
