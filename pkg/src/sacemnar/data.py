"""Observational data model.

One row per subject: treatment Z, survival S, outcome-observation
indicator R, binary outcome Y (defined only when R = 1), a scalar proxy
covariate A, and a covariate vector C. Deaths never have outcomes, so the
only (S, R) patterns are (0,0), (1,0), (1,1). Datasets are immutable
after construction and safe to share across replication workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

Array = np.ndarray


class SchemaError(ValueError):
    """A CSV file does not match the expected column layout."""


class Stratum(enum.Enum):
    """Principal stratum: joint potential survival under both arms.

    Monotonicity (treatment never harms survival) leaves three strata:
    always-survivors, subjects protected by treatment (survive only if
    treated), and never-survivors.
    """

    ALWAYS_SURVIVOR = "ss"
    PROTECTED = "sb"
    NEVER_SURVIVOR = "nn"


@dataclass(frozen=True)
class ObservationRecord:
    """A single subject; ``y`` is None unless r = 1."""

    z: int
    s: int
    r: int
    y: int | None
    a: float
    c: tuple[float, ...]


@dataclass(frozen=True)
class Dataset:
    """Column-oriented immutable container for a sample.

    ``y`` is stored as a float array with NaN in rows where the outcome is
    undefined or unobserved; the structural rule r = 0 <=> y absent is a
    validation invariant, and estimation code only ever reads y on rows
    with r = 1. Optional latent columns ``g`` (stratum code) and ``ystar``
    carry simulation ground truth and are ignored by every estimator.
    """

    z: Array
    s: Array
    r: Array
    y: Array
    a: Array
    c: Array
    covariate_names: tuple[str, ...] = ()
    g: Array | None = None
    ystar: Array | None = None

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=np.int8)
        s = np.ascontiguousarray(self.s, dtype=np.int8)
        r = np.ascontiguousarray(self.r, dtype=np.int8)
        y = np.ascontiguousarray(self.y, dtype=float)
        a = np.ascontiguousarray(self.a, dtype=float)
        c = np.ascontiguousarray(self.c, dtype=float)
        if c.ndim == 1:
            c = c.reshape(-1, 1)
        n = z.shape[0]
        for name, arr in (("s", s), ("r", r), ("y", y), ("a", a)):
            if arr.shape[0] != n:
                raise ValueError(f"column {name} has {arr.shape[0]} rows, expected {n}")
        if c.shape[0] != n:
            raise ValueError(f"covariate block has {c.shape[0]} rows, expected {n}")
        if c.shape[1] < 1:
            raise ValueError("at least one covariate column is required")
        names = tuple(self.covariate_names) or tuple(f"c{j + 1}" for j in range(c.shape[1]))
        if len(names) != c.shape[1]:
            raise ValueError("covariate_names length does not match covariate columns")
        for attr, val in (
            ("z", z), ("s", s), ("r", r), ("y", y), ("a", a), ("c", c),
            ("covariate_names", names),
        ):
            object.__setattr__(self, attr, val)
        if self.g is not None:
            object.__setattr__(self, "g", np.ascontiguousarray(self.g, dtype=np.int8))
        if self.ystar is not None:
            object.__setattr__(self, "ystar", np.ascontiguousarray(self.ystar, dtype=float))

    @property
    def n(self) -> int:
        return int(self.z.shape[0])

    @property
    def k(self) -> int:
        return int(self.c.shape[1])

    def take(self, indices) -> "Dataset":
        """Row subset / resample; latent columns follow along."""
        idx = np.asarray(indices)
        return Dataset(
            z=self.z[idx],
            s=self.s[idx],
            r=self.r[idx],
            y=self.y[idx],
            a=self.a[idx],
            c=self.c[idx],
            covariate_names=self.covariate_names,
            g=None if self.g is None else self.g[idx],
            ystar=None if self.ystar is None else self.ystar[idx],
        )

    def to_records(self) -> list[ObservationRecord]:
        out = []
        for i in range(self.n):
            y = None if self.r[i] == 0 else int(self.y[i])
            out.append(
                ObservationRecord(
                    z=int(self.z[i]), s=int(self.s[i]), r=int(self.r[i]),
                    y=y, a=float(self.a[i]), c=tuple(float(v) for v in self.c[i]),
                )
            )
        return out

    @staticmethod
    def from_records(
        records: Iterable[ObservationRecord],
        covariate_names: Sequence[str] = (),
    ) -> "Dataset":
        records = list(records)
        if not records:
            raise ValueError("cannot build a dataset from zero records")
        k = len(records[0].c)
        if any(len(rec.c) != k for rec in records):
            raise ValueError("all records must share the covariate dimension")
        y = np.array([np.nan if rec.y is None else float(rec.y) for rec in records])
        return Dataset(
            z=np.array([rec.z for rec in records]),
            s=np.array([rec.s for rec in records]),
            r=np.array([rec.r for rec in records]),
            y=y,
            a=np.array([rec.a for rec in records]),
            c=np.array([rec.c for rec in records]),
            covariate_names=tuple(covariate_names),
        )


def validate(dataset: Dataset) -> list[str]:
    """Check every record- and dataset-level invariant.

    Returns an empty list iff the dataset is valid; each violation names
    the offending row index and rule. Diagnostic only, never raises.
    """
    v: list[str] = []
    z, s, r, y = dataset.z, dataset.s, dataset.r, dataset.y
    for name, col in (("z", z), ("s", s), ("r", r)):
        bad = np.flatnonzero((col != 0) & (col != 1))
        v.extend(f"{name} not binary at row {i}" for i in bad)
    bad = np.flatnonzero((s == 0) & (r == 1))
    v.extend(f"r=1 with s=0 at row {i}" for i in bad)
    y_present = ~np.isnan(y)
    bad = np.flatnonzero((r == 0) & y_present)
    v.extend(f"y present with r=0 at row {i}" for i in bad)
    bad = np.flatnonzero((r == 1) & (s == 1) & ~y_present)
    v.extend(f"y absent with r=1 at row {i}" for i in bad)
    bad = np.flatnonzero(y_present & (y != 0) & (y != 1))
    v.extend(f"y not binary at row {i}" for i in bad)
    bad = np.flatnonzero(~np.isfinite(dataset.a))
    v.extend(f"a not finite at row {i}" for i in bad)
    bad = np.flatnonzero(~np.isfinite(dataset.c).all(axis=1))
    v.extend(f"c not finite at row {i}" for i in bad)
    for arm in (0, 1):
        mask = z == arm
        if not mask.any():
            v.append(f"z={arm} arm is empty")
        elif not (s[mask] == 1).any():
            v.append(f"z={arm} arm has no survivors")
    return v


@dataclass(frozen=True)
class CellSummaryResult:
    """Descriptive table per observed (z, s, r) pattern.

    ``empty_patterns`` flags the structurally possible patterns that have
    count zero and are therefore omitted from the table.
    """

    table: pd.DataFrame
    empty_patterns: tuple[tuple[int, int, int], ...]


# The three admissible (s, r) patterns crossed with both arms.
_PATTERNS = [(z, s, r) for z in (0, 1) for (s, r) in ((0, 0), (1, 0), (1, 1))]


def cell_summary(dataset: Dataset) -> CellSummaryResult:
    """Count, covariate mean/sd, and observed-outcome mean per (z,s,r) cell."""
    rows = []
    empty = []
    cov_cols = [("a", dataset.a)] + [
        (name, dataset.c[:, j]) for j, name in enumerate(dataset.covariate_names)
    ]
    for (z, s, r) in _PATTERNS:
        mask = (dataset.z == z) & (dataset.s == s) & (dataset.r == r)
        count = int(mask.sum())
        if count == 0:
            empty.append((z, s, r))
            continue
        row: dict = {"z": z, "s": s, "r": r, "count": count}
        for name, col in cov_cols:
            vals = col[mask]
            row[f"{name}_mean"] = float(np.mean(vals))
            row[f"{name}_sd"] = float(np.std(vals, ddof=1)) if count > 1 else np.nan
        row["y_mean"] = float(np.mean(dataset.y[mask])) if r == 1 else np.nan
        rows.append(row)
    return CellSummaryResult(table=pd.DataFrame(rows), empty_patterns=tuple(empty))


def write_csv(dataset: Dataset, path) -> None:
    """Write the canonical CSV layout: z,s,r,y,a,c1,...,ck.

    ``y`` is an empty field where the outcome is absent. Latent columns
    g and ystar are appended only when the dataset carries them.
    """
    frame = pd.DataFrame({"z": dataset.z, "s": dataset.s, "r": dataset.r})
    y = pd.array(
        [pd.NA if np.isnan(val) else int(val) for val in dataset.y], dtype="Int64"
    )
    frame["y"] = y
    frame["a"] = dataset.a
    for j, name in enumerate(dataset.covariate_names):
        frame[name] = dataset.c[:, j]
    if dataset.g is not None:
        frame["g"] = dataset.g
    if dataset.ystar is not None:
        frame["ystar"] = dataset.ystar
    frame.to_csv(path, index=False)


def read_csv(
    path,
    a_col: str = "a",
    c_cols: Sequence[str] | None = None,
    kappa: float | None = None,
) -> Dataset:
    """Read a dataset from the canonical CSV layout.

    Parameters
    ----------
    path : str or file-like
    a_col : str
        Name of the proxy covariate column.
    c_cols : sequence of str, optional
        Covariate column names; defaults to every column named c1, c2, ...
        present in the file, in index order.
    kappa : float, optional
        When given, the y column is treated as a raw continuous outcome
        and binarized to 1{y > kappa} on rows where it is present.

    Raises
    ------
    SchemaError
        A required column is missing.
    """
    return from_frame(pd.read_csv(path), a_col=a_col, c_cols=c_cols, kappa=kappa)


def from_frame(
    frame: pd.DataFrame,
    a_col: str = "a",
    c_cols: Sequence[str] | None = None,
    kappa: float | None = None,
) -> Dataset:
    """Build a Dataset from a DataFrame in the canonical column layout."""
    for col in ("z", "s", "r", "y"):
        if col not in frame.columns:
            raise SchemaError(f"missing required column: {col}")
    if a_col not in frame.columns:
        raise SchemaError(f"missing required column: {a_col}")
    if c_cols is None:
        c_cols = sorted(
            (c for c in frame.columns if c.startswith("c") and c[1:].isdigit()),
            key=lambda c: int(c[1:]),
        )
        if not c_cols:
            raise SchemaError("no covariate columns found (expected c1, c2, ...)")
    else:
        c_cols = list(c_cols)
        for col in c_cols:
            if col not in frame.columns:
                raise SchemaError(f"missing required column: {col}")
    y_raw = pd.to_numeric(frame["y"], errors="coerce").to_numpy(dtype=float)
    if kappa is not None:
        present = ~np.isnan(y_raw)
        y = np.full(y_raw.shape, np.nan)
        y[present] = (y_raw[present] > float(kappa)).astype(float)
    else:
        y = y_raw
    return Dataset(
        z=frame["z"].to_numpy(),
        s=frame["s"].to_numpy(),
        r=frame["r"].to_numpy(),
        y=y,
        a=frame[a_col].to_numpy(dtype=float),
        c=frame[list(c_cols)].to_numpy(dtype=float),
        covariate_names=tuple(c_cols),
        g=frame["g"].to_numpy() if "g" in frame.columns else None,
        ystar=frame["ystar"].to_numpy(dtype=float) if "ystar" in frame.columns else None,
    )
