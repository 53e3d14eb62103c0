"""Outcome-dependent missingness model for survivors.

The observation propensity among survivors,

    m1 = pr(R = 1 | S = 1, A, C, Y) = expit(alpha0 + eta*Z + alpha_a*A
                                             + alpha_c' C + alpha_y*Y),

depends on the possibly unobserved outcome itself (missing not at
random). The coefficients alpha are estimated from the moment condition

    mean[ {R / m1 - 1} * S * h1(A, C, Z) ] = 0,

which never needs Y on unobserved rows: survivors with R = 0 contribute
-h1 and deaths contribute nothing. Treatment enters h1 but not m1 (except
through the fixed sensitivity offset eta), which is what identifies the
outcome coefficient. eta is a scan parameter chosen by the analyst; it is
never estimated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset
from .numerics import (
    Array,
    DegenerateLikelihood,
    MOMENT_DEFAULTS,
    NonConvergence,
    SolverConfig,
    expit,
    logistic_mle,
    solve_with_restarts,
)


@dataclass(frozen=True)
class MissingnessParams:
    """Coefficients (alpha0, alpha_a, alpha_c..., alpha_y) plus fixed eta.

    ``alpha is None`` is the complete-case sentinel: m1 is identically 1.
    It is returned when every survivor's outcome is observed and is also
    how the comparator that ignores the missingness mechanism is wired.
    """

    alpha: Array | None
    eta: float = 0.0

    def __post_init__(self):
        if self.alpha is not None:
            arr = np.asarray(self.alpha, dtype=float)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError("alpha must be a finite vector")
            object.__setattr__(self, "alpha", arr)
        if not np.isfinite(self.eta):
            raise ValueError("eta must be finite")

    @property
    def is_complete_case(self) -> bool:
        return self.alpha is None


COMPLETE_CASE = MissingnessParams(alpha=None, eta=0.0)


def propensity(params: MissingnessParams, z, a, c, y):
    """Observation probability m1 for survivors at the given values.

    ``c`` is interpreted row-wise: a scalar is one point with k = 1, a
    flat array is many points with k = 1, and an (n, k) array is n points.
    Scalar inputs give a scalar back.
    """
    z = np.asarray(z, dtype=float)
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    c_arr = np.asarray(c, dtype=float)
    scalar = z.ndim == 0 and a.ndim == 0 and y.ndim == 0 and c_arr.ndim == 0
    if c_arr.ndim == 0:
        c_arr = c_arr.reshape(1, 1)
    elif c_arr.ndim == 1:
        c_arr = c_arr.reshape(-1, 1)
    if params.is_complete_case:
        if scalar:
            return 1.0
        shape = np.broadcast(z, a, y, c_arr[:, 0]).shape
        return np.ones(shape)
    alpha = params.alpha
    k = c_arr.shape[1]
    if alpha.size != k + 3:
        raise ValueError(f"alpha has length {alpha.size}, expected {k + 3}")
    lin = alpha[0] + params.eta * z + alpha[1] * a + c_arr @ alpha[2:2 + k] + alpha[-1] * y
    out = expit(lin)
    if scalar:
        return float(np.asarray(out).reshape(-1)[0])
    return out


def default_h1(dataset: Dataset) -> Array:
    """The auxiliary matrix (1, A, C1..Ck, Z) per row; square with alpha."""
    return np.column_stack(
        [np.ones(dataset.n), dataset.a, dataset.c, dataset.z.astype(float)]
    )


def fit_missingness(
    dataset: Dataset,
    h1_spec: Callable[[Dataset], Array] | None = None,
    eta: float = 0.0,
    cfg: SolverConfig | None = None,
    init: Array | None = None,
) -> MissingnessParams:
    """Solve the missingness moment condition for alpha at fixed eta.

    Parameters
    ----------
    dataset : Dataset
    h1_spec : callable, optional
        Maps the dataset to an (n, 2 + k + 1) auxiliary matrix; defaults
        to rows (1, A, C, Z). The system must stay just-identified.
    eta : float
        Fixed sensitivity offset on Z inside m1 (0 for the identified model).
    cfg : SolverConfig, optional
    init : ndarray, optional
        Starting alpha; defaults to the zero vector.

    Returns
    -------
    MissingnessParams
        Fitted coefficients, or the m1=1 sentinel when every survivor is
        observed (the moment system carries no information in that case).
    """
    surv = dataset.s == 1
    if not surv.any():
        raise ValueError("no survivors; missingness model undefined")
    if np.all(dataset.r[surv] == 1):
        # Every survivor observed: complete-case sentinel.
        return MissingnessParams(alpha=None, eta=float(eta))
    h1 = default_h1(dataset) if h1_spec is None else np.asarray(h1_spec(dataset), dtype=float)
    p = 2 + dataset.k + 1
    if h1.shape != (dataset.n, p):
        raise ValueError(f"h1 must have shape ({dataset.n}, {p}) to keep the system square")
    obs = surv & (dataset.r == 1)
    miss = surv & (dataset.r == 0)
    # Fixed pieces of the moment sum: rows with S=1, R=0 contribute -h1.
    miss_total = h1[miss].sum(axis=0)
    h1_obs = h1[obs]
    design_obs = np.column_stack(
        [np.ones(int(obs.sum())), dataset.a[obs], dataset.c[obs], dataset.y[obs]]
    )
    offset_obs = float(eta) * dataset.z[obs].astype(float)
    n = dataset.n

    def moments(alpha: Array) -> Array:
        m1 = expit(design_obs @ alpha + offset_obs)
        # m1 can underflow to 0 for extreme trial points; the resulting
        # non-finite moments are rejected by the solver's line search.
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return (h1_obs.T @ (1.0 / m1 - 1.0) - miss_total) / n

    start = np.zeros(p) if init is None else np.asarray(init, dtype=float)
    solver_cfg = cfg or MOMENT_DEFAULTS
    alpha = solve_with_restarts(
        moments, [start, *_fallback_starts(dataset, surv, eta, solver_cfg, start)], solver_cfg
    )
    return MissingnessParams(alpha=alpha, eta=float(eta))


def _fallback_starts(
    dataset: Dataset, surv: Array, eta: float, cfg: SolverConfig, primary: Array
) -> list[Array]:
    """Alternative starting points for the moment solve, tried in order.

    The first is the observed-data logistic MLE of R on (1, A, C, Y) among
    survivors, with missing outcomes filled by the observed mean and the
    eta*Z term as a fixed offset; it is usually close to the moment root.
    The zero vector is appended when the primary start was something else.
    """
    starts: list[Array] = []
    a, c, z, r, y = (
        dataset.a[surv],
        dataset.c[surv],
        dataset.z[surv].astype(float),
        dataset.r[surv].astype(float),
        dataset.y[surv],
    )
    y_fill = np.where(np.isnan(y), float(np.nanmean(y)) if np.any(r == 1) else 0.5, y)
    design = np.column_stack([np.ones(r.size), a, c, y_fill])
    try:
        starts.append(logistic_mle(design, r, cfg, param_cap=30.0, offset=eta * z))
    except (NonConvergence, DegenerateLikelihood):
        pass
    if np.any(primary != 0.0):
        starts.append(np.zeros(primary.size))
    return starts
