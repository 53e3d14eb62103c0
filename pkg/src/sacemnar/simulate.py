"""Synthetic data generators and the Monte Carlo study harness.

Four scenarios share one backbone: draw (A, C), randomize Z, draw the
latent stratum G from the two logistic survival models, set survival
deterministically from (G, Z), draw the outcome for the three
(stratum, arm) cells the estimators ever read, then thin the survivor
outcomes with the outcome-dependent missingness model.

- base: A, C independent standard normals.
- mixed_cov: A ~ Bernoulli(0.3), C ~ Uniform[0, 1].
- sensitivity(eta): adds 0.1*eta*A to every outcome logit and eta*Z to
  the missingness logit, so the working model used by the estimators is
  exactly right only at eta = 0.
- bounds_violation: adds 0.02*A to the outcome logits and 0.2*Z to the
  missingness logit (mild violations; the bounds remain valid).

True effect values always come from the Monte Carlo oracle, never from
constants baked into the code.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import pandas as pd

from .data import Dataset
from .numerics import Array, InexactRootWarning, expit, substream_seed
from .sace import (
    EstimationConfig,
    FitReport,
    TooFewReplicates,
    _FIT_ERRORS,
    estimate_sace,
    ignore_mnar_estimate,
    naive_estimate,
)
from .bounds import CellSpec, adjusted_bounds, build_cells, unadjusted_bounds

SCENARIOS = ("base", "mixed_cov", "sensitivity", "bounds_violation")

# Stratum codes in the emitted latent column.
CODE_SS, CODE_SB, CODE_NN = 0, 1, 2

# Backbone constants shared by every scenario.
PR_TREATED = 0.6
SURV1_LOGIT = (0.55, 0.25, 1.0)  # intercept, A, C
SURV_RATIO_LOGIT = (0.45, -0.5, 1.0)
OUTCOME_LOGITS = {
    (1, CODE_SS): (0.9, 0.3),  # intercept, C
    (1, CODE_SB): (0.5, 0.4),
    (0, CODE_SS): (-0.5, 0.3),
}
MISSINGNESS_LOGIT = (1.5, 0.5, 1.1)  # intercept, A, Y*

# Scenario-specific logit insertions.
SENSITIVITY_OUTCOME_A = 0.1  # times eta, on A, in every outcome logit
VIOLATION_OUTCOME_A = 0.02
VIOLATION_MISSING_Z = 0.2

# Default covariate cells for the bounds study: I(C < 0) x I(A < 0).
BOUNDS_CELL_SPEC: CellSpec = (("c1", 0.0), ("a", 0.0))


class TooManyFailures(RuntimeError):
    """More than 5% of study replicates failed for some method."""


@dataclass(frozen=True)
class DgpSpec:
    scenario: str = "base"
    n: int = 2000
    seed: int = 0
    eta: float = 0.0
    emit_latent: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not np.isfinite(self.eta):
            raise ValueError("eta must be finite")


def _draw_covariates(spec: DgpSpec, rng: np.random.Generator, n: int) -> tuple[Array, Array]:
    if spec.scenario == "mixed_cov":
        a = rng.binomial(1, 0.3, size=n).astype(float)
        c = rng.uniform(0.0, 1.0, size=(n, 1))
    else:
        a = rng.standard_normal(n)
        c = rng.standard_normal((n, 1))
    return a, c


def _outcome_logit(spec: DgpSpec, cell: tuple[int, int], a: Array, c1: Array) -> Array:
    intercept, c_coef = OUTCOME_LOGITS[cell]
    lin = intercept + c_coef * c1
    if spec.scenario == "sensitivity":
        lin = lin + SENSITIVITY_OUTCOME_A * spec.eta * a
    elif spec.scenario == "bounds_violation":
        lin = lin + VIOLATION_OUTCOME_A * a
    return lin


def _missingness_logit(spec: DgpSpec, a: Array, ystar: Array, z: Array) -> Array:
    b0, b_a, b_y = MISSINGNESS_LOGIT
    lin = b0 + b_a * a + b_y * ystar
    if spec.scenario == "sensitivity":
        lin = lin + spec.eta * z
    elif spec.scenario == "bounds_violation":
        lin = lin + VIOLATION_MISSING_Z * z
    return lin


def generate(spec: DgpSpec) -> Dataset:
    """Sample one dataset. Fixed draw order: A, C, Z, G, Y*, R.

    Survival is deterministic given (G, Z): the always-survivor stratum
    survives both arms, the protected stratum survives only under
    treatment, the never-survivor stratum survives neither. Y* exists
    only for surviving (stratum, arm) cells; Y is revealed only when
    S = R = 1. Latent codes when emitted: 0 always-survivor,
    1 protected, 2 never-survivor.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n = spec.n
    a, c = _draw_covariates(spec, rng, n)
    c1 = c[:, 0]
    z = (rng.uniform(size=n) < PR_TREATED).astype(np.int8)

    s1 = expit(SURV1_LOGIT[0] + SURV1_LOGIT[1] * a + SURV1_LOGIT[2] * c1)
    s01 = expit(SURV_RATIO_LOGIT[0] + SURV_RATIO_LOGIT[1] * a + SURV_RATIO_LOGIT[2] * c1)
    p_ss = s1 * s01
    p_sb = s1 * (1.0 - s01)
    u_g = rng.uniform(size=n)
    g = np.full(n, CODE_NN, dtype=np.int8)
    g[u_g < p_ss + p_sb] = CODE_SB
    g[u_g < p_ss] = CODE_SS

    s = (((z == 1) & (g != CODE_NN)) | ((z == 0) & (g == CODE_SS))).astype(np.int8)

    u_y = rng.uniform(size=n)
    ystar = np.full(n, np.nan)
    for (arm, code), _ in OUTCOME_LOGITS.items():
        cell = (z == arm) & (g == code) & (s == 1)
        if cell.any():
            p = expit(_outcome_logit(spec, (arm, code), a[cell], c1[cell]))
            ystar[cell] = (u_y[cell] < p).astype(float)

    u_r = rng.uniform(size=n)
    r = np.zeros(n, dtype=np.int8)
    alive = s == 1
    m1 = expit(_missingness_logit(spec, a[alive], ystar[alive], z[alive]))
    r[alive] = (u_r[alive] < m1).astype(np.int8)

    y = np.where(r == 1, ystar, np.nan)
    return Dataset(
        z=z,
        s=s,
        r=r,
        y=y,
        a=a,
        c=c,
        g=g if spec.emit_latent else None,
        ystar=ystar if spec.emit_latent else None,
    )


def true_sace(spec: DgpSpec, n_oracle: int = 10_000_000, seed: int = 0) -> float:
    """Monte Carlo oracle for the survivor contrast under the scenario.

    Integrates w(A,C) * (mu_1ss(C) - mu_0ss(A,C)) over the covariate
    law, with w the always-survivor probability, in fixed-size chunks.
    Use n_oracle of at least 1e6 for the third digit to be trustworthy.
    """
    if n_oracle < 1:
        raise ValueError("n_oracle must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    chunk = 1_000_000
    num = 0.0
    den = 0.0
    remaining = int(n_oracle)
    while remaining > 0:
        m = min(chunk, remaining)
        a, c = _draw_covariates(spec, rng, m)
        c1 = c[:, 0]
        s1 = expit(SURV1_LOGIT[0] + SURV1_LOGIT[1] * a + SURV1_LOGIT[2] * c1)
        s01 = expit(SURV_RATIO_LOGIT[0] + SURV_RATIO_LOGIT[1] * a + SURV_RATIO_LOGIT[2] * c1)
        w = s1 * s01
        mu1 = expit(_outcome_logit(spec, (1, CODE_SS), a, c1))
        mu0 = expit(_outcome_logit(spec, (0, CODE_SS), a, c1))
        num += float(np.sum(w * (mu1 - mu0)))
        den += float(np.sum(w))
        remaining -= m
    return num / den


_METHODS: dict[str, Callable[[Dataset, EstimationConfig], FitReport]] = {
    "proposed": estimate_sace,
    "naive": naive_estimate,
    "ignore_mnar": ignore_mnar_estimate,
}

# Seed-stream offsets so each method's bootstrap is independent of the
# data stream and of the other methods.
_METHOD_OFFSET = {"proposed": 1, "naive": 2, "ignore_mnar": 3}


def normalize_method(name: str) -> str:
    key = name.replace("-", "_").strip().lower()
    if key not in _METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(_METHODS)}")
    return key


@dataclass(frozen=True)
class StudyResult:
    """Aggregated operating characteristics plus the raw replicates."""

    summary: pd.DataFrame  # one row per method
    replicates: pd.DataFrame  # one row per (method, replicate)
    truth: float
    spec: DgpSpec
    reps: int
    B: int
    master_seed: int


def _run_replicate(spec: DgpSpec, methods: tuple[str, ...], B: int, master_seed: int, rep: int) -> list[dict]:
    ds = generate(replace(spec, seed=int(substream_seed(master_seed, rep)), emit_latent=False))
    records = []
    for method in methods:
        cfg = EstimationConfig(
            bootstrap=B,
            seed=int(substream_seed(master_seed, rep, _METHOD_OFFSET[method])),
        )
        try:
            with warnings.catch_warnings():
                # Per-replicate stalled-minimizer warnings are documented
                # solver behavior and would flood long studies.
                warnings.simplefilter("ignore", InexactRootWarning)
                rep_out = _METHODS[method](ds, cfg)
            records.append(
                {
                    "method": method,
                    "rep": rep,
                    "delta": rep_out.delta_hat,
                    "ci_low": rep_out.ci_low,
                    "ci_high": rep_out.ci_high,
                    "failed": False,
                    "error": "",
                }
            )
        except (*_FIT_ERRORS, TooFewReplicates) as err:
            records.append(
                {
                    "method": method,
                    "rep": rep,
                    "delta": np.nan,
                    "ci_low": np.nan,
                    "ci_high": np.nan,
                    "failed": True,
                    "error": f"{type(err).__name__}: {err}",
                }
            )
    return records


def monte_carlo_study(
    spec: DgpSpec,
    methods,
    reps: int,
    B: int = 200,
    master_seed: int = 0,
    truth: float | None = None,
    n_oracle: int = 10_000_000,
    jobs: int = 1,
) -> StudyResult:
    """Replicate-level simulation study with bias/RMSE/coverage summary.

    Replicate r draws its dataset from stream (master_seed, r) and each
    method's bootstrap from stream (master_seed, r, method-offset), so
    the whole study is reproducible and order-independent. Failed
    replicates are dropped from the aggregates and counted.

    ``truth`` overrides the oracle target (used by the sensitivity
    study, which measures coverage of the eta = 0 value). ``jobs`` > 1
    parallelizes replicates over processes.

    Raises
    ------
    TooManyFailures
        Some method failed on more than 5% of replicates.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    methods = tuple(normalize_method(m) for m in methods)
    if truth is None:
        truth = true_sace(spec, n_oracle=n_oracle)

    if jobs > 1:
        from joblib import Parallel, delayed

        chunks = Parallel(n_jobs=jobs)(
            delayed(_run_replicate)(spec, methods, B, master_seed, rep)
            for rep in range(1, reps + 1)
        )
    else:
        chunks = [
            _run_replicate(spec, methods, B, master_seed, rep) for rep in range(1, reps + 1)
        ]
    replicates = pd.DataFrame([rec for chunk in chunks for rec in chunk])

    rows = []
    for method in methods:
        sub = replicates[replicates["method"] == method]
        ok = sub[~sub["failed"]]
        n_ok = len(ok)
        n_fail = len(sub) - n_ok
        if n_fail > 0.05 * reps:
            raise TooManyFailures(
                f"{method} failed on {n_fail} of {reps} replicates; first error: "
                f"{sub[sub['failed']]['error'].iloc[0]}"
            )
        delta = ok["delta"].to_numpy()
        bias = float(np.mean(delta) - truth) if n_ok else np.nan
        rmse = float(np.sqrt(np.mean((delta - truth) ** 2))) if n_ok else np.nan
        covered = (ok["ci_low"] <= truth) & (truth <= ok["ci_high"])
        coverage = float(np.mean(covered.to_numpy())) if n_ok else np.nan
        rows.append(
            {
                "method": method,
                "n": spec.n,
                "bias_x100": 100.0 * bias,
                "rmse_x100": 100.0 * rmse,
                "coverage_x100": 100.0 * coverage,
                "n_converged": n_ok,
                "n_failed": n_fail,
            }
        )
    summary = pd.DataFrame(rows)
    return StudyResult(
        summary=summary,
        replicates=replicates,
        truth=float(truth),
        spec=spec,
        reps=reps,
        B=B,
        master_seed=master_seed,
    )


def bounds_study(
    spec: DgpSpec,
    reps: int,
    master_seed: int = 0,
    cell_spec: CellSpec = BOUNDS_CELL_SPEC,
    jobs: int = 1,
) -> pd.DataFrame:
    """Per-replicate bound endpoints around the point estimate.

    Emits one row per replicate with the five plot-ready columns
    (unadj_lower, adj_lower, point, adj_upper, unadj_upper). Intended
    for the bounds_violation scenario; other scenarios run but are
    flagged with a warning.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if spec.scenario != "bounds_violation":
        warnings.warn(
            f"bounds study is designed for the bounds_violation scenario, got {spec.scenario!r}",
            stacklevel=2,
        )

    def one(rep: int) -> dict:
        ds = generate(replace(spec, seed=int(substream_seed(master_seed, rep)), emit_latent=False))
        row = {"rep": rep, "failed": False, "error": ""}
        try:
            adj = adjusted_bounds(build_cells(ds, cell_spec))
            unadj = unadjusted_bounds(ds)
            point = estimate_sace(ds, EstimationConfig(bootstrap=0))
            row.update(
                unadj_lower=unadj.lower,
                adj_lower=adj.lower,
                point=point.delta_hat,
                adj_upper=adj.upper,
                unadj_upper=unadj.upper,
            )
        except _FIT_ERRORS as err:
            row.update(
                unadj_lower=np.nan,
                adj_lower=np.nan,
                point=np.nan,
                adj_upper=np.nan,
                unadj_upper=np.nan,
                failed=True,
                error=f"{type(err).__name__}: {err}",
            )
        return row

    if jobs > 1:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=jobs)(delayed(one)(rep) for rep in range(1, reps + 1))
    else:
        rows = [one(rep) for rep in range(1, reps + 1)]
    frame = pd.DataFrame(rows)
    n_fail = int(frame["failed"].sum())
    if n_fail > 0.05 * reps:
        raise TooManyFailures(f"bounds study failed on {n_fail} of {reps} replicates")
    return frame
