"""Stratum-specific outcome probability models.

Three logistic models are estimated through inverse-propensity-weighted
moment conditions. In the treated arm survivors are a two-component
mixture of always-survivors and protected subjects, so the observed
outcome mean is matched against the membership-weighted mixture of
mu_1ss(C) and mu_1sb(C); the proxy A is excluded from these two models
(it acts on the outcome only through the stratum), which is exactly what
makes the mixture separable. Control-arm survivors are always-survivors
outright, so mu_0ss(A, C) is fitted directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset, Stratum
from .missingness import MissingnessParams, propensity
from .numerics import (
    Array,
    DegenerateLikelihood,
    MOMENT_DEFAULTS,
    NonConvergence,
    SingularJacobian,
    SolverConfig,
    expit,
    logistic_mle,
    solve_with_restarts,
    solve_with_selection,
)
from .strata import StrataParams, survival_shares

# Mixture collapse threshold: when the protected-stratum share among
# treated survivors never exceeds this, the second mixture component is
# dropped and its coefficients reported as undefined.
COLLAPSE_TOL = 1e-6

# Mixture roots with any coefficient beyond this are saturation escapes
# (the fitted probability is pinned at 0 or 1 over the whole sample), not
# fits; solve_with_selection discards them.
ROOT_CAP = 15.0

_WEAK_PROXY_HINT = (
    "treated-arm mixture fit failed; the proxy may carry no information "
    "about stratum membership (see the relevance diagnostic)"
)


def _mle_or_zeros(design: Array, y: Array, cfg: SolverConfig | None) -> Array:
    """Complete-case logistic start, or zeros when the MLE itself fails."""
    try:
        return logistic_mle(design, y, cfg)
    except (NonConvergence, DegenerateLikelihood):
        return np.zeros(design.shape[1])


class UnsupportedStratumArm(ValueError):
    """The (arm, stratum) outcome model is not part of the pipeline."""


@dataclass(frozen=True)
class OutcomeParams:
    """Coefficients of the three outcome models.

    ``gamma1_ss`` and ``gamma1_sb`` are over (1, C); ``gamma0_ss`` is over
    (1, A, C). ``gamma1_sb`` may be all-NaN when the treated-arm mixture
    collapsed to a single stratum during fitting.
    """

    gamma1_ss: Array
    gamma1_sb: Array
    gamma0_ss: Array

    def __post_init__(self):
        g1ss = np.asarray(self.gamma1_ss, dtype=float)
        g1sb = np.asarray(self.gamma1_sb, dtype=float)
        g0ss = np.asarray(self.gamma0_ss, dtype=float)
        if g1ss.shape != g1sb.shape:
            raise ValueError("treated-arm coefficient vectors must share a shape")
        if g0ss.size != g1ss.size + 1:
            raise ValueError("gamma0_ss must have exactly one more coefficient (for A)")
        if not np.all(np.isfinite(g1ss)) or not np.all(np.isfinite(g0ss)):
            raise ValueError("gamma1_ss and gamma0_ss must be finite")
        object.__setattr__(self, "gamma1_ss", g1ss)
        object.__setattr__(self, "gamma1_sb", g1sb)
        object.__setattr__(self, "gamma0_ss", g0ss)

    @property
    def collapsed(self) -> bool:
        return not np.all(np.isfinite(self.gamma1_sb))


def _rows_c(c) -> Array:
    arr = np.asarray(c, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    return arr


def mu(params: OutcomeParams, stratum: Stratum, z: int, a, c):
    """Outcome probability pr(Y=1 | Z=z, G=stratum, covariates).

    Only the three pairs the pipeline ever needs are defined: treated
    always-survivors, treated protected, and control always-survivors.
    ``c`` follows the row convention of the missingness propensity.
    """
    scalar = np.ndim(a) == 0 and np.ndim(c) == 0
    c_arr = _rows_c(c)
    a_arr = np.asarray(a, dtype=float)
    pair = (int(z), stratum)
    if pair == (1, Stratum.ALWAYS_SURVIVOR):
        lin = params.gamma1_ss[0] + c_arr @ params.gamma1_ss[1:]
    elif pair == (1, Stratum.PROTECTED):
        lin = params.gamma1_sb[0] + c_arr @ params.gamma1_sb[1:]
    elif pair == (0, Stratum.ALWAYS_SURVIVOR):
        lin = params.gamma0_ss[0] + params.gamma0_ss[1] * a_arr + c_arr @ params.gamma0_ss[2:]
    else:
        raise UnsupportedStratumArm(
            f"no outcome model for arm z={z}, stratum {stratum.value}"
        )
    out = expit(lin)
    if scalar:
        return float(np.asarray(out).reshape(-1)[0])
    return out


def fit_treated_outcomes(
    dataset: Dataset,
    missingness: MissingnessParams,
    strata_params: StrataParams,
    h2_spec: Callable[[Dataset, StrataParams], Array] | None = None,
    cfg: SolverConfig | None = None,
    init: Array | None = None,
    collapse_tol: float = COLLAPSE_TOL,
) -> tuple[Array, Array]:
    """Fit (gamma1_ss, gamma1_sb) from the treated-arm mixture moments.

    Solves, over all n rows,

        mean[ (R*Z*S / m1) * {Y - sum_g mu_1g(C) * w_g(A,C)} * h2 ] = 0,

    where w_g is the membership probability among treated survivors
    (w_ss = s01, w_sb = 1 - s01) and h2 stacks w_ss*(1, C) and
    w_sb*(1, C), keeping the system square. Start values are the
    complete-case logistic fit for both components unless ``init``
    (stacked) is supplied.

    Mixture systems can admit several exact roots: the two components can
    trade places, and a saturated coefficient escape can zero the moments
    without describing the data. The solver therefore pools the roots
    reached from a ladder of starting points, discards roots with any
    coefficient beyond ``ROOT_CAP``, and keeps the admissible root nearest
    the warm start, so the estimate is the solution continuously
    connected to the single-model fit rather than an artifact of one
    Newton path.

    When the protected share is numerically zero everywhere the mixture
    collapses: only gamma1_ss is solved for and gamma1_sb comes back NaN.

    Raises
    ------
    SingularJacobian, NonConvergence
        The mixture system stalled from every starting point; typically the
        proxy carries no information about stratum membership (see the
        relevance diagnostic).
    """
    mask = (dataset.z == 1) & (dataset.s == 1) & (dataset.r == 1)
    m = int(mask.sum())
    if m == 0:
        raise ValueError("no treated survivors with observed outcomes")
    n = dataset.n
    y = dataset.y[mask]
    xc = np.column_stack([np.ones(m), dataset.c[mask]])
    q = xc.shape[1]
    m1 = np.asarray(
        propensity(missingness, np.ones(m), dataset.a[mask], dataset.c[mask], y), dtype=float
    )
    weight = 1.0 / m1
    _, w_ss = survival_shares(strata_params, dataset.a[mask], dataset.c[mask])
    w_sb = 1.0 - w_ss

    if float(np.max(w_sb)) < collapse_tol:
        # Single-stratum data: the second component is absent, reduce to a
        # weighted logistic score for gamma1_ss alone.
        def reduced(gamma: Array) -> Array:
            resid = y - expit(xc @ gamma) * w_ss
            return (xc * w_ss[:, None]).T @ (weight * resid) / n

        start = _mle_or_zeros(xc, y, cfg) if init is None else np.asarray(init, float)[:q]
        gamma_ss = solve_with_restarts(reduced, [start, np.zeros(q)], cfg or MOMENT_DEFAULTS)
        return gamma_ss, np.full(q, np.nan)

    if h2_spec is None:
        h2 = np.column_stack([xc * w_ss[:, None], xc * w_sb[:, None]])
    else:
        h2_full = np.asarray(h2_spec(dataset, strata_params), dtype=float)
        if h2_full.shape != (n, 2 * q):
            raise ValueError(f"h2 must have shape ({n}, {2 * q}) to keep the system square")
        h2 = h2_full[mask]

    def moments(theta: Array) -> Array:
        mix = expit(xc @ theta[:q]) * w_ss + expit(xc @ theta[q:]) * w_sb
        return h2.T @ (weight * (y - mix)) / n

    base = _mle_or_zeros(xc, y, cfg)
    if init is None:
        start = np.concatenate([base, base])
    else:
        start = np.asarray(init, dtype=float)
        if start.size != 2 * q:
            raise ValueError(f"init must have length {2 * q}")
    # The tilted starts pull the component intercepts apart in both
    # directions so the ladder reaches the label-swapped basin as well as
    # the primary one; zeros is a last-resort cold start.
    tilt = np.zeros(q)
    tilt[0] = 0.5
    starts = [
        start,
        np.concatenate([base + tilt, base - tilt]),
        np.concatenate([base - tilt, base + tilt]),
        np.zeros(2 * q),
    ]
    try:
        theta = solve_with_selection(moments, starts, cfg or MOMENT_DEFAULTS, cap=ROOT_CAP)
    except SingularJacobian as err:
        raise SingularJacobian(_WEAK_PROXY_HINT, err.iteration) from err
    except NonConvergence as err:
        raise NonConvergence(_WEAK_PROXY_HINT, err.final_norm, err.iterations) from err
    return theta[:q], theta[q:]


def fit_control_outcome(
    dataset: Dataset,
    missingness: MissingnessParams,
    h3_spec: Callable[[Dataset], Array] | None = None,
    cfg: SolverConfig | None = None,
    init: Array | None = None,
) -> Array:
    """Fit gamma0_ss from the control-arm moment condition.

    Solves mean[ (R*(1-Z)*S / m1) * {Y - mu_0ss(A, C)} * h3 ] = 0 with the
    default h3 = (1, A, C). Control survivors are all always-survivors, so
    no mixture is involved.
    """
    mask = (dataset.z == 0) & (dataset.s == 1) & (dataset.r == 1)
    m = int(mask.sum())
    if m == 0:
        raise ValueError("no control survivors with observed outcomes")
    n = dataset.n
    y = dataset.y[mask]
    x0 = np.column_stack([np.ones(m), dataset.a[mask], dataset.c[mask]])
    m1 = np.asarray(
        propensity(missingness, np.zeros(m), dataset.a[mask], dataset.c[mask], y), dtype=float
    )
    weight = 1.0 / m1
    if h3_spec is None:
        h3 = x0
    else:
        h3_full = np.asarray(h3_spec(dataset), dtype=float)
        if h3_full.shape != (n, x0.shape[1]):
            raise ValueError(
                f"h3 must have shape ({n}, {x0.shape[1]}) to keep the system square"
            )
        h3 = h3_full[mask]

    def moments(gamma: Array) -> Array:
        resid = y - expit(x0 @ gamma)
        return h3.T @ (weight * resid) / n

    start = _mle_or_zeros(x0, y, cfg) if init is None else np.asarray(init, dtype=float)
    return solve_with_restarts(moments, [start, np.zeros(x0.shape[1])], cfg or MOMENT_DEFAULTS)
