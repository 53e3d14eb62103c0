"""Nonparametric bounds on the survivor average causal effect.

Only randomization and survival monotonicity are assumed. The observed
data bound the treated-survivor outcome probability through the
missingness slack (delta) and the always-survivor share (gamma); the
control side contributes its own slack. Covariate adjustment sharpens
the interval: bounds are computed inside discrete covariate cells and
averaged with weights proportional to each cell's control-arm survival.

All cell quantities are empirical frequencies. Continuous covariates
must be discretized through the cell specification (threshold or
sample-mean binarization); the module deliberately offers no smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .data import Dataset
from .numerics import Array
from .sace import EmptyCell, bootstrap_replicates

# Lower guard on gamma before division; gamma is also capped at 1.
CLIP_EPS = 1e-6

# (column, rule) pairs; rule is a numeric threshold, "mean", or "discrete".
CellRule = float | str | None
CellSpec = Sequence[tuple[str, CellRule]]


class EmptyArm(EmptyCell):
    """An arm (or its survivors) is empty where the bounds need it."""


class EmptyArmInCell(EmptyArm):
    """A covariate cell lacks an arm or lacks survivors in an arm."""


@dataclass(frozen=True)
class CellTable:
    """Empirical ingredients of the covariate-adjusted bounds.

    One row per covariate cell: the discretized pattern, the (z, s, r)
    cell counts, and the derived rates. ``gamma`` is already clipped to
    (CLIP_EPS, 1]; ``xi`` values default to 0 in cells where no survivor
    outcome was observed (the delta factor then zeroes their term).
    """

    columns: tuple[str, ...]
    patterns: Array  # (m, d) int codes; d = 0 collapses to one cell
    n_cells: Array  # rows per cell
    counts: pd.DataFrame  # per-cell (z, s, r) counts
    gamma: Array
    delta1: Array
    delta0: Array
    xi11: Array
    xi01: Array
    p_hat: Array
    phi_num: Array  # pr(S=1 | Z=0, x), the phi-weight numerator
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.patterns.shape[0]

    def to_frame(self) -> pd.DataFrame:
        base = pd.DataFrame(
            self.patterns, columns=[f"cell_{name}" for name in self.columns]
        )
        base["n"] = self.n_cells
        base["p_hat"] = self.p_hat
        base["gamma"] = self.gamma
        base["delta1"] = self.delta1
        base["delta0"] = self.delta0
        base["xi11"] = self.xi11
        base["xi01"] = self.xi01
        base["phi_num"] = self.phi_num
        return base


@dataclass(frozen=True)
class BoundsResult:
    """An identified interval for the survivor contrast."""

    lower: float
    upper: float
    variant: str
    cell_contributions: pd.DataFrame
    ci_lower: tuple[float, float] | None = None
    ci_upper: tuple[float, float] | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lower > self.upper + 1e-12:
            raise ValueError("bound endpoints are out of order")

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _resolve_column(dataset: Dataset, name: str) -> Array:
    if name == "a":
        return dataset.a
    if name in dataset.covariate_names:
        return dataset.c[:, dataset.covariate_names.index(name)]
    raise KeyError(
        f"unknown cell column {name!r}; choose 'a' or one of {list(dataset.covariate_names)}"
    )


def _encode(values: Array, rule: CellRule) -> tuple[Array, dict]:
    if rule == "discrete":
        levels, codes = np.unique(values, return_inverse=True)
        return codes.astype(np.int64), {"kind": "discrete", "levels": levels.tolist()}
    if rule is None or rule == "mean":
        threshold = float(np.mean(values))
    else:
        threshold = float(rule)
    return (values < threshold).astype(np.int64), {"kind": "threshold", "threshold": threshold}


def build_cells(
    dataset: Dataset,
    cell_spec: CellSpec | None,
    policy: str = "merge",
) -> CellTable:
    """Discretize covariates and tabulate every bound ingredient per cell.

    An empty (or None) spec yields the single marginal cell. Cells where
    an arm is missing or has no survivors cannot support the bound
    formulas; ``policy`` decides their fate:

    - "merge" (default): fold the cell into its nearest valid cell by
      Hamming distance on the code pattern, ties going to the larger
      cell, then to the earlier one in code order.
    - "drop": discard the cell and renormalize the cell probabilities
      over the survivors of the cut.
    - "raise": raise EmptyArmInCell immediately.

    Raises EmptyArm if no valid cell remains.
    """
    if policy not in ("merge", "drop", "raise"):
        raise ValueError("policy must be 'merge', 'drop', or 'raise'")
    spec = list(cell_spec or [])
    n = dataset.n

    resolved = []
    if spec:
        code_cols = []
        for name, rule in spec:
            codes, info = _encode(_resolve_column(dataset, name), rule)
            code_cols.append(codes)
            resolved.append({"column": name, **info})
        codes_matrix = np.column_stack(code_cols)
        patterns, assignment = np.unique(codes_matrix, axis=0, return_inverse=True)
    else:
        patterns = np.zeros((1, 0), dtype=np.int64)
        assignment = np.zeros(n, dtype=np.int64)

    columns = tuple(name for name, _ in spec)
    diagnostics: dict = {
        "policy": policy,
        "resolved_spec": resolved,
        "merged": [],
        "dropped": [],
        "gamma_clipped_high": 0,
        "gamma_clipped_low": 0,
        "xi_defaulted": [],
    }

    def tabulate(assign: Array, m: int) -> pd.DataFrame:
        rows = []
        z, s, r, y = dataset.z, dataset.s, dataset.r, dataset.y
        for j in range(m):
            in_cell = assign == j
            z1 = in_cell & (z == 1)
            z0 = in_cell & (z == 0)
            z1s = z1 & (s == 1)
            z0s = z0 & (s == 1)
            z1sr = z1s & (r == 1)
            z0sr = z0s & (r == 1)
            rows.append(
                {
                    "n": int(in_cell.sum()),
                    "n_z1": int(z1.sum()),
                    "n_z0": int(z0.sum()),
                    "n_z1_s1": int(z1s.sum()),
                    "n_z0_s1": int(z0s.sum()),
                    "n_z1_s1_r1": int(z1sr.sum()),
                    "n_z0_s1_r1": int(z0sr.sum()),
                    "y_sum_z1": float(np.nansum(np.where(z1sr, y, 0.0))),
                    "y_sum_z0": float(np.nansum(np.where(z0sr, y, 0.0))),
                }
            )
        return pd.DataFrame(rows)

    counts = tabulate(assignment, patterns.shape[0])
    valid = (
        (counts["n_z1"] > 0)
        & (counts["n_z0"] > 0)
        & (counts["n_z1_s1"] > 0)
        & (counts["n_z0_s1"] > 0)
    ).to_numpy()

    if not valid.any():
        raise EmptyArm("no covariate cell has survivors in both arms")

    if not valid.all():
        bad = np.flatnonzero(~valid)
        if policy == "raise":
            raise EmptyArmInCell(
                f"{bad.size} cell(s) lack an arm or survivors in an arm: "
                f"{patterns[bad].tolist()}"
            )
        if policy == "merge":
            good = np.flatnonzero(valid)
            relabel = np.arange(patterns.shape[0])
            for j in bad:
                distances = np.abs(patterns[good] - patterns[j]).sum(axis=1)
                nearest = distances == distances.min()
                candidates = good[nearest]
                sizes = counts["n"].to_numpy()[candidates]
                target = int(candidates[np.argmax(sizes)])
                relabel[j] = target
                diagnostics["merged"].append(
                    {"from": patterns[j].tolist(), "into": patterns[target].tolist()}
                )
            assignment = relabel[assignment]
            keep = np.flatnonzero(valid)
            remap = -np.ones(patterns.shape[0], dtype=np.int64)
            remap[keep] = np.arange(keep.size)
            assignment = remap[assignment]
            patterns = patterns[keep]
            counts = tabulate(assignment, patterns.shape[0])
        else:  # drop
            keep_rows = valid[assignment]
            diagnostics["dropped"] = [patterns[j].tolist() for j in np.flatnonzero(~valid)]
            keep = np.flatnonzero(valid)
            remap = -np.ones(patterns.shape[0], dtype=np.int64)
            remap[keep] = np.arange(keep.size)
            assignment = remap[assignment[keep_rows]]
            patterns = patterns[keep]
            counts = counts.loc[valid].reset_index(drop=True)
            n = int(keep_rows.sum())

    surv1 = counts["n_z1_s1"].to_numpy() / counts["n_z1"].to_numpy()
    surv0 = counts["n_z0_s1"].to_numpy() / counts["n_z0"].to_numpy()
    gamma_raw = surv0 / surv1
    diagnostics["gamma_clipped_high"] = int(np.sum(gamma_raw > 1.0))
    diagnostics["gamma_clipped_low"] = int(np.sum(gamma_raw < CLIP_EPS))
    gamma = np.clip(gamma_raw, CLIP_EPS, 1.0)

    delta1 = counts["n_z1_s1_r1"].to_numpy() / counts["n_z1_s1"].to_numpy()
    delta0 = counts["n_z0_s1_r1"].to_numpy() / counts["n_z0_s1"].to_numpy()

    with np.errstate(invalid="ignore", divide="ignore"):
        xi11 = np.where(
            counts["n_z1_s1_r1"] > 0,
            counts["y_sum_z1"].to_numpy() / np.maximum(counts["n_z1_s1_r1"].to_numpy(), 1),
            0.0,
        )
        xi01 = np.where(
            counts["n_z0_s1_r1"] > 0,
            counts["y_sum_z0"].to_numpy() / np.maximum(counts["n_z0_s1_r1"].to_numpy(), 1),
            0.0,
        )
    for j in np.flatnonzero(counts["n_z1_s1_r1"].to_numpy() == 0):
        diagnostics["xi_defaulted"].append({"cell": patterns[j].tolist(), "arm": 1})
    for j in np.flatnonzero(counts["n_z0_s1_r1"].to_numpy() == 0):
        diagnostics["xi_defaulted"].append({"cell": patterns[j].tolist(), "arm": 0})

    p_hat = counts["n"].to_numpy() / n
    return CellTable(
        columns=columns,
        patterns=patterns,
        n_cells=counts["n"].to_numpy(),
        counts=counts,
        gamma=gamma,
        delta1=delta1,
        delta0=delta0,
        xi11=xi11,
        xi01=xi01,
        p_hat=p_hat,
        phi_num=surv0,
        diagnostics=diagnostics,
    )


def bound_endpoints(gamma, delta1, delta0, xi11, xi01) -> tuple[Array, Array]:
    """Per-cell lower and upper contributions (before phi-weighting).

    The treated-survivor outcome probability among always-survivors is
    bracketed by worst-case imputation of the missing outcomes and
    worst-case allocation of the protected stratum (the max/min clamps);
    the control side subtracts its own missingness bracket. The clamps
    make lower <= upper algebraically, and both endpoints sit in [-1, 1].
    """
    gamma = np.asarray(gamma, dtype=float)
    pi1_l = np.asarray(delta1, dtype=float) * np.asarray(xi11, dtype=float)
    pi1_u = pi1_l + 1.0 - np.asarray(delta1, dtype=float)
    theta011_l = np.asarray(delta0, dtype=float) * np.asarray(xi01, dtype=float)
    theta011_u = theta011_l + 1.0 - np.asarray(delta0, dtype=float)
    low = np.maximum(0.0, (pi1_l - (1.0 - gamma)) / gamma) - theta011_u
    up = np.minimum(1.0, pi1_u / gamma) - theta011_l
    return low, up


def adjusted_bounds(cells: CellTable) -> BoundsResult:
    """Phi-weighted average of the per-cell bound contributions.

    The weight on cell x is proportional to p_hat(x) times the cell's
    control-arm survival rate, normalized to sum to one; this matches
    weighting by the always-survivor share under monotonicity.
    """
    low, up = bound_endpoints(cells.gamma, cells.delta1, cells.delta0, cells.xi11, cells.xi01)
    weight_num = cells.p_hat * cells.phi_num
    omega = weight_num / weight_num.sum()
    lower = float(np.sum(omega * low))
    upper = float(np.sum(omega * up))
    contributions = cells.to_frame()
    contributions["omega"] = omega
    contributions["lower_contrib"] = low
    contributions["upper_contrib"] = up
    variant = "adjusted" if cells.patterns.shape[1] > 0 else "unadjusted"
    return BoundsResult(
        lower=lower,
        upper=upper,
        variant=variant,
        cell_contributions=contributions,
        diagnostics=dict(cells.diagnostics),
    )


def unadjusted_bounds(dataset: Dataset) -> BoundsResult:
    """Marginal bounds: the single-cell special case, no covariates used."""
    return adjusted_bounds(build_cells(dataset, None))


def bounds_with_ci(
    dataset: Dataset,
    cell_spec: CellSpec | None,
    B: int = 200,
    seed: int = 0,
    policy: str = "merge",
) -> BoundsResult:
    """Adjusted bounds plus percentile bootstrap intervals per endpoint.

    Resamples rows and re-runs the whole construction (including any
    sample-mean thresholds) on each replicate; replicates that lose an
    arm entirely are dropped and counted.
    """
    point = adjusted_bounds(build_cells(dataset, cell_spec, policy))
    if B <= 0:
        return point

    def endpoints(ds: Dataset) -> Array:
        res = adjusted_bounds(build_cells(ds, cell_spec, policy))
        return np.array([res.lower, res.upper])

    stacked, failed = bootstrap_replicates(dataset, endpoints, B, seed)
    if stacked.shape[0] < 0.8 * B:
        diag = dict(point.diagnostics)
        diag["bootstrap_failed"] = failed
        diag["bootstrap_converged"] = int(stacked.shape[0])
        return BoundsResult(
            lower=point.lower,
            upper=point.upper,
            variant=point.variant,
            cell_contributions=point.cell_contributions,
            diagnostics=diag,
        )
    lo_ci = np.percentile(stacked[:, 0], [2.5, 97.5])
    up_ci = np.percentile(stacked[:, 1], [2.5, 97.5])
    diag = dict(point.diagnostics)
    diag["bootstrap_failed"] = failed
    diag["bootstrap_converged"] = int(stacked.shape[0])
    return BoundsResult(
        lower=point.lower,
        upper=point.upper,
        variant=point.variant,
        cell_contributions=point.cell_contributions,
        ci_lower=(float(lo_ci[0]), float(lo_ci[1])),
        ci_upper=(float(up_ci[0]), float(up_ci[1])),
        diagnostics=diag,
    )
