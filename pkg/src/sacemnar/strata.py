"""Principal-strata survival models.

Two logistic components are fitted jointly by maximum likelihood:
``s1(a, c; beta1)`` is the survival probability under treatment, and
``s01(a, c; beta2)`` is the ratio of control-arm to treated-arm survival
probabilities. Because s01 lives in (0, 1), the monotonicity constraint
pr(S=1 | Z=0, x) <= pr(S=1 | Z=1, x) holds by construction, and the three
strata proportions follow directly:

    pr(never-survivor | x)  = 1 - s1(x)
    pr(always-survivor | x) = s1(x) * s01(x)
    pr(protected | x)       = s1(x) * (1 - s01(x))
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from .data import Dataset, Stratum
from .numerics import (
    Array,
    DegenerateLikelihood,
    LOGLIK_DEFAULTS,
    SolverConfig,
    expit,
    logistic_mle,
    maximize_loglik,
)

# Separation guard: no coefficient may exceed this magnitude during the
# joint optimization. Perfect separation has no finite MLE.
PARAM_CAP = 15.0


@dataclass(frozen=True)
class StrataParams:
    """Coefficients of the two survival models, each over (1, A, C)."""

    beta1: Array
    beta2: Array

    def __post_init__(self):
        b1 = np.asarray(self.beta1, dtype=float)
        b2 = np.asarray(self.beta2, dtype=float)
        if b1.shape != b2.shape or b1.ndim != 1:
            raise ValueError("beta1 and beta2 must be vectors of equal length")
        if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
            raise ValueError("strata coefficients must be finite")
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)


@dataclass(frozen=True)
class StrataProbabilities:
    """Strata proportions at one covariate point; sums to one."""

    p_ss: float
    p_sb: float
    p_nn: float


def _design(a: Array, c: Array) -> Array:
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        c = c.reshape(-1, 1)
    return np.column_stack([np.ones(a.shape[0]), a, c])


def make_joint_loglik(
    dataset: Dataset,
) -> tuple[Callable[[Array], float], Callable[[Array], Array], Callable[[Array], Array]]:
    """Mean joint log-likelihood with analytic score and Hessian.

    The parameter vector is theta = (beta1, beta2) stacked. Treated rows
    contribute a plain Bernoulli term in s1; control rows contribute a
    Bernoulli term in the product s1 * s01, which couples both coefficient
    blocks. All three callables share the precomputed design split.
    """
    x = _design(dataset.a, dataset.c)
    n, p = x.shape
    z = dataset.z
    s = dataset.s.astype(float)
    x1, s1rows = x[z == 1], s[z == 1]
    x0 = x[z == 0]
    s0rows = s[z == 0]
    x0s = x0[s0rows == 1]
    x0d = x0[s0rows == 0]

    def unpack(theta: Array) -> tuple[Array, Array]:
        return theta[:p], theta[p:]

    def loglik(theta: Array) -> float:
        b1, b2 = unpack(theta)
        u1 = x1 @ b1
        total = float(np.sum(s1rows * -np.logaddexp(0.0, -u1) + (1.0 - s1rows) * -np.logaddexp(0.0, u1)))
        if x0s.shape[0]:
            total += float(np.sum(-np.logaddexp(0.0, -(x0s @ b1)) - np.logaddexp(0.0, -(x0s @ b2))))
        if x0d.shape[0]:
            t = expit(x0d @ b1)
            # 1 - t*s computed as (1-t) + t(1-s): stable when both shares -> 1
            death_prob = (1.0 - t) + t * expit(-(x0d @ b2))
            total += float(np.sum(np.log(np.maximum(death_prob, 1e-300))))
        return total / n

    def score(theta: Array) -> Array:
        b1, b2 = unpack(theta)
        g1 = x1.T @ (s1rows - expit(x1 @ b1))
        g2 = np.zeros(p)
        if x0s.shape[0]:
            g1 = g1 + x0s.T @ (1.0 - expit(x0s @ b1))
            g2 = g2 + x0s.T @ (1.0 - expit(x0s @ b2))
        if x0d.shape[0]:
            t = expit(x0d @ b1)
            sv = expit(x0d @ b2)
            death_prob = (1.0 - t) + t * (1.0 - sv)
            g1 = g1 + x0d.T @ (-t * (1.0 - t) * sv / death_prob)
            g2 = g2 + x0d.T @ (-t * sv * (1.0 - sv) / death_prob)
        return np.concatenate([g1, g2]) / n

    def hessian(theta: Array) -> Array:
        b1, b2 = unpack(theta)
        t1 = expit(x1 @ b1)
        h11 = -(x1.T * (t1 * (1.0 - t1))) @ x1
        h22 = np.zeros((p, p))
        h12 = np.zeros((p, p))
        if x0s.shape[0]:
            ts = expit(x0s @ b1)
            ss = expit(x0s @ b2)
            h11 = h11 - (x0s.T * (ts * (1.0 - ts))) @ x0s
            h22 = h22 - (x0s.T * (ss * (1.0 - ss))) @ x0s
        if x0d.shape[0]:
            t = expit(x0d @ b1)
            sv = expit(x0d @ b2)
            death_prob = (1.0 - t) + t * (1.0 - sv)
            d2 = death_prob ** 2
            w_uu = -t * (1.0 - t) * sv * ((1.0 - 2.0 * t) * death_prob + t * (1.0 - t) * sv) / d2
            w_vv = -t * sv * (1.0 - sv) * ((1.0 - 2.0 * sv) * death_prob + sv * (1.0 - sv) * t) / d2
            w_uv = -t * (1.0 - t) * sv * (1.0 - sv) / d2
            h11 = h11 + (x0d.T * w_uu) @ x0d
            h22 = h22 + (x0d.T * w_vv) @ x0d
            h12 = h12 + (x0d.T * w_uv) @ x0d
        top = np.hstack([h11, h12])
        bottom = np.hstack([h12.T, h22])
        return np.vstack([top, bottom]) / n

    return loglik, score, hessian


def fit_strata(
    dataset: Dataset,
    cfg: SolverConfig | None = None,
    init: Array | None = None,
) -> StrataParams:
    """Joint MLE of (beta1, beta2).

    The control-arm likelihood couples both coefficient blocks, so the two
    models are fitted jointly rather than in two stages. Start values:
    beta1 from a plain logistic fit of S on (1, A, C) in the treated arm,
    beta2 = 0, unless an explicit ``init`` (stacked theta) is given.

    Raises
    ------
    DegenerateLikelihood
        An arm is missing entirely, an arm has no survivors or no deaths,
        or a coefficient runs beyond the separation cap.
    """
    z, s = dataset.z, dataset.s
    for arm in (0, 1):
        mask = z == arm
        if not mask.any():
            raise DegenerateLikelihood(f"z={arm} arm is empty; both arms are required")
        arm_s = s[mask]
        if arm_s.min() == arm_s.max():
            raise DegenerateLikelihood(
                f"z={arm} arm has survivors only or deaths only; survival model is degenerate"
            )
    p = 2 + dataset.k
    if init is None:
        mask = z == 1
        x1 = _design(dataset.a[mask], dataset.c[mask])
        beta1_start = logistic_mle(x1, s[mask].astype(float), cfg, param_cap=PARAM_CAP)
        theta0 = np.concatenate([beta1_start, np.zeros(p)])
    else:
        theta0 = np.asarray(init, dtype=float)
        if theta0.size != 2 * p:
            raise ValueError(f"init must have length {2 * p}")
    loglik, score, hess = make_joint_loglik(dataset)
    theta = maximize_loglik(
        loglik, theta0, cfg or LOGLIK_DEFAULTS, grad=score, hess=hess, param_cap=PARAM_CAP
    )
    return StrataParams(beta1=theta[:p], beta2=theta[p:])


def survival_shares(params: StrataParams, a, c) -> tuple[Array, Array]:
    """Vectorized (s1, s01) at the given covariate rows."""
    x = _design(np.atleast_1d(a), c)
    return expit(x @ params.beta1), expit(x @ params.beta2)


def strata_prob_arrays(params: StrataParams, a, c) -> tuple[Array, Array, Array]:
    """Vectorized (p_ss, p_sb, p_nn) at the given covariate rows."""
    s1, s01 = survival_shares(params, a, c)
    return s1 * s01, s1 * (1.0 - s01), 1.0 - s1


def strata_probs(params: StrataParams, a: float, c) -> StrataProbabilities:
    """Strata proportions at one covariate point."""
    c_row = np.atleast_1d(np.asarray(c, dtype=float)).reshape(1, -1)
    p_ss, p_sb, p_nn = strata_prob_arrays(params, np.array([a]), c_row)
    return StrataProbabilities(p_ss=float(p_ss[0]), p_sb=float(p_sb[0]), p_nn=float(p_nn[0]))


def membership_given_survival(params: StrataParams, a: float, c, z: int) -> dict[Stratum, float]:
    """Distribution of the stratum among survivors of arm z.

    Control-arm survivors are always-survivors with certainty under
    monotonicity; treated-arm survivors split between always-survivors
    (probability s01) and protected subjects.
    """
    if z not in (0, 1):
        raise ValueError("z must be 0 or 1")
    if z == 0:
        return {Stratum.ALWAYS_SURVIVOR: 1.0, Stratum.PROTECTED: 0.0, Stratum.NEVER_SURVIVOR: 0.0}
    c_row = np.atleast_1d(np.asarray(c, dtype=float)).reshape(1, -1)
    _, s01 = survival_shares(params, np.array([a]), c_row)
    share = float(s01[0])
    return {Stratum.ALWAYS_SURVIVOR: share, Stratum.PROTECTED: 1.0 - share, Stratum.NEVER_SURVIVOR: 0.0}


@dataclass(frozen=True)
class MonotonicityReport:
    """Marginal survival rates per arm; flag raised when z=1 trails z=0."""

    rate_z1: float
    rate_z0: float
    flag: bool
    per_cell: pd.DataFrame | None = None


def monotonicity_diagnostic(dataset: Dataset, max_levels: int = 10) -> MonotonicityReport:
    """Compare survival rates across arms, marginally and per cell.

    Per-cell rates are reported only when every covariate column (A and
    each C component) takes at most ``max_levels`` distinct values, i.e.
    the covariates are discrete.
    """
    z, s = dataset.z, dataset.s
    rate1 = float(s[z == 1].mean()) if (z == 1).any() else np.nan
    rate0 = float(s[z == 0].mean()) if (z == 0).any() else np.nan
    flag = bool(np.isfinite(rate1) and np.isfinite(rate0) and rate1 < rate0)
    cols = [dataset.a] + [dataset.c[:, j] for j in range(dataset.k)]
    per_cell = None
    if all(np.unique(col).size <= max_levels for col in cols):
        key = np.column_stack(cols)
        uniq, inverse = np.unique(key, axis=0, return_inverse=True)
        rows = []
        for cell_id in range(uniq.shape[0]):
            mask = inverse == cell_id
            row: dict = {"a": uniq[cell_id, 0]}
            for j, name in enumerate(dataset.covariate_names):
                row[name] = uniq[cell_id, j + 1]
            for arm in (0, 1):
                arm_mask = mask & (z == arm)
                row[f"rate_z{arm}"] = float(s[arm_mask].mean()) if arm_mask.any() else np.nan
            row["flag"] = bool(
                np.isfinite(row["rate_z1"])
                and np.isfinite(row["rate_z0"])
                and row["rate_z1"] < row["rate_z0"]
            )
            rows.append(row)
        per_cell = pd.DataFrame(rows)
    return MonotonicityReport(rate_z1=rate1, rate_z0=rate0, flag=flag, per_cell=per_cell)


@dataclass(frozen=True)
class RelevanceReport:
    """Variance of the proxy's contribution to stratum membership.

    ``statistic`` is the sample variance, over treated survivors, of the
    difference between pr(always-survivor | survivor, A, C) and its
    A-marginalized counterpart. Near zero means the proxy carries no
    information about the stratum and the treated-arm mixture is not
    identified.
    """

    statistic: float
    threshold: float
    warn: bool


def relevance_diagnostic(
    params: StrataParams,
    dataset: Dataset,
    threshold: float = 1e-3,
    n_grid: int = 32,
) -> RelevanceReport:
    """Assess whether A moves the membership probability among treated survivors.

    The A-marginalized membership probability at each subject's C is
    approximated by averaging s01 over an empirical quantile grid of A
    within the treated-survivor subsample.
    """
    mask = (dataset.z == 1) & (dataset.s == 1)
    a = dataset.a[mask]
    c = dataset.c[mask]
    if a.size == 0:
        return RelevanceReport(statistic=0.0, threshold=threshold, warn=True)
    _, member = survival_shares(params, a, c)
    quantiles = np.quantile(a, (np.arange(n_grid) + 0.5) / n_grid)
    marginal = np.zeros(a.size)
    for q in quantiles:
        _, share_q = survival_shares(params, np.full(a.size, q), c)
        marginal += share_q
    marginal /= n_grid
    statistic = float(np.var(member - marginal))
    return RelevanceReport(statistic=statistic, threshold=threshold, warn=statistic < threshold)
