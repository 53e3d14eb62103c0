"""Acceptance gate: the numbered operating-characteristic criteria.

Run with ``pytest -m acceptance -v`` (or as part of the full suite). One
test per criterion; each prints a ``[criterion N] PASS/FAIL`` line and
appends it to ``acceptance_report.txt`` next to the package root. The
Monte Carlo studies use the default replication sizes, so the full gate
takes a few hours on one core.

Criteria that the implementation cannot meet are asserted at their
stated tolerances anyway and fail visibly; the report records the
measured values.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from sacemnar.bounds import bound_endpoints
from sacemnar.missingness import default_h1, fit_missingness, propensity
from sacemnar.numerics import expit, logit
from sacemnar.simulate import (
    DgpSpec,
    TooManyFailures,
    bounds_study,
    monte_carlo_study,
    true_sace,
)
from sacemnar.strata import StrataParams, strata_probs

pytestmark = pytest.mark.acceptance

REPORT_PATH = Path(__file__).resolve().parent.parent / "acceptance_report.txt"

ETA_GRID = (-2.0, -1.0, 0.0, 1.0, 2.0)
SENS_TARGET = 0.33  # the published target value the scan is anchored to

_LINES: list[str] = []


def _flush() -> None:
    REPORT_PATH.write_text("\n".join(_LINES) + "\n")


def _check(num: str, ok: bool, detail: str) -> None:
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'}: {detail}"
    _LINES.append(line)
    _flush()
    print(line)
    assert ok, line


def _note(text: str) -> None:
    _LINES.append(text)
    _flush()


# -- shared study fixtures (computed once, reused across criteria) -------


def _try(fn):
    # A study that exceeds the replicate failure cap is an honest FAIL for
    # its criterion, not a fixture error.
    try:
        return fn()
    except TooManyFailures as exc:
        return exc


def _require(num: str, *studies):
    for study in studies:
        if isinstance(study, Exception):
            _check(num, False, f"study could not run: {study}")


@pytest.fixture(scope="session")
def truth_base() -> float:
    return true_sace(DgpSpec(scenario="base"))


@pytest.fixture(scope="session")
def study_base_2000(truth_base):
    return _try(
        lambda: monte_carlo_study(
            DgpSpec(scenario="base", n=2000),
            ["proposed", "ignore_mnar"],
            reps=500,
            B=200,
            master_seed=0,
            truth=truth_base,
        )
    )


@pytest.fixture(scope="session")
def study_base_5000(truth_base):
    return _try(
        lambda: monte_carlo_study(
            DgpSpec(scenario="base", n=5000),
            ["proposed", "naive"],
            reps=500,
            B=200,
            master_seed=0,
            truth=truth_base,
        )
    )


@pytest.fixture(scope="session")
def study_mixed_5000():
    return _try(
        lambda: monte_carlo_study(
            DgpSpec(scenario="mixed_cov", n=5000),
            ["proposed"],
            reps=500,
            B=200,
            master_seed=0,
        )
    )


@pytest.fixture(scope="session")
def sensitivity_studies():
    studies = {}
    for eta in ETA_GRID:
        studies[eta] = _try(
            lambda eta=eta: monte_carlo_study(
                DgpSpec(scenario="sensitivity", n=2000, eta=eta),
                ["proposed"],
                reps=200,
                B=200,
                master_seed=0,
                truth=SENS_TARGET,
            )
        )
    return studies


@pytest.fixture(scope="session")
def bounds_frame():
    return _try(
        lambda: bounds_study(DgpSpec(scenario="bounds_violation", n=2000), reps=500, master_seed=0)
    )


def _row(study, method: str):
    summary = study.summary
    return summary[summary["method"] == method].iloc[0]


# -- criteria -------------------------------------------------------------


def test_criterion_01_oracle_truth(truth_base):
    ok = abs(truth_base - 0.330) <= 0.005
    _check("1", ok, f"true_sace(base, 1e7) = {truth_base:.6f}, required 0.330 +/- 0.005")


def test_criterion_02_proposed_operating_characteristics(study_base_2000, study_base_5000):
    _require("2", study_base_2000, study_base_5000)
    r2 = _row(study_base_2000, "proposed")
    r5 = _row(study_base_5000, "proposed")
    checks = [
        (abs(r2["bias_x100"]) <= 1.5, f"n=2000 |bias|x100 = {abs(r2['bias_x100']):.3f} (<= 1.5)"),
        (
            7.5 <= r2["rmse_x100"] <= 10.5,
            f"n=2000 RMSEx100 = {r2['rmse_x100']:.3f} (in [7.5, 10.5])",
        ),
        (
            91.5 <= r2["coverage_x100"] <= 96.5,
            f"n=2000 coverage = {r2['coverage_x100']:.1f}% (in [91.5, 96.5])",
        ),
        (abs(r5["bias_x100"]) <= 1.2, f"n=5000 |bias|x100 = {abs(r5['bias_x100']):.3f} (<= 1.2)"),
        (
            92.0 <= r5["coverage_x100"] <= 97.0,
            f"n=5000 coverage = {r5['coverage_x100']:.1f}% (in [92, 97])",
        ),
    ]
    detail = "; ".join(text for _, text in checks)
    _check("2", all(ok for ok, _ in checks), detail)


def test_criterion_03_naive_bias_and_undercoverage(study_base_5000):
    _require("3", study_base_5000)
    row = _row(study_base_5000, "naive")
    bias_ok = -4.5 <= row["bias_x100"] <= -1.8
    cover_ok = row["coverage_x100"] <= 80.0
    detail = (
        f"n=5000 naive biasx100 = {row['bias_x100']:.3f} (required in [-4.5, -1.8]); "
        f"coverage = {row['coverage_x100']:.1f}% (required <= 80)"
    )
    _check("3", bias_ok and cover_ok, detail)


def test_criterion_04_complete_case_undercoverage(study_base_2000):
    _require("4", study_base_2000)
    row = _row(study_base_2000, "ignore_mnar")
    ok = row["coverage_x100"] <= 20.0
    detail = f"n=2000 complete-case coverage = {row['coverage_x100']:.1f}% (required <= 20)"
    _check("4", ok, detail)


def test_criterion_05_mixed_covariates(study_mixed_5000):
    _require("5", study_mixed_5000)
    row = _row(study_mixed_5000, "proposed")
    bias_ok = abs(row["bias_x100"]) <= 1.5
    cover_ok = 90.0 <= row["coverage_x100"] <= 97.0
    detail = (
        f"mixed_cov n=5000 |bias|x100 = {abs(row['bias_x100']):.3f} (<= 1.5); "
        f"coverage = {row['coverage_x100']:.1f}% (in [90, 97]); "
        f"oracle = {study_mixed_5000.truth:.6f}"
    )
    _check("5", bias_ok and cover_ok, detail)


def test_criterion_06_sensitivity_scan(sensitivity_studies):
    _require("6", *sensitivity_studies.values())
    rows = {eta: _row(sensitivity_studies[eta], "proposed") for eta in ETA_GRID}
    cover_parts = []
    cover_ok = True
    for eta in ETA_GRID:
        cov = rows[eta]["coverage_x100"]
        cover_ok &= cov >= 90.0
        cover_parts.append(f"eta={eta:+.0f}: {cov:.1f}%")
    bias0 = abs(rows[0.0]["bias_x100"])
    bias_edge = min(abs(rows[-2.0]["bias_x100"]), abs(rows[2.0]["bias_x100"]))
    shape_ok = bias_edge > bias0
    detail = (
        f"coverage of {SENS_TARGET} (>= 90 each): " + ", ".join(cover_parts) + "; "
        f"|bias|x100 at |eta|=2 (min {bias_edge:.3f}) vs eta=0 ({bias0:.3f})"
    )
    _check("6", cover_ok and shape_ok, detail)


def test_criterion_07_bounds_study(bounds_frame):
    _require("7", bounds_frame)
    ok_rows = bounds_frame[~bounds_frame["failed"]]
    tol = 1e-12
    nested = (ok_rows["adj_lower"] >= ok_rows["unadj_lower"] - tol) & (
        ok_rows["adj_upper"] <= ok_rows["unadj_upper"] + tol
    )
    nested_share = float(nested.mean())
    adj_width = float((ok_rows["adj_upper"] - ok_rows["adj_lower"]).mean())
    unadj_width = float((ok_rows["unadj_upper"] - ok_rows["unadj_lower"]).mean())
    truth = true_sace(DgpSpec(scenario="bounds_violation"))
    covered = (ok_rows["adj_lower"] <= truth) & (truth <= ok_rows["adj_upper"])
    cover_share = float(covered.mean())
    checks = [
        (nested_share >= 0.95, f"adjusted within unadjusted in {100 * nested_share:.1f}% (>= 95%)"),
        (
            adj_width < unadj_width,
            f"mean widths: adjusted {adj_width:.4f} < unadjusted {unadj_width:.4f}",
        ),
        (
            cover_share >= 0.95,
            f"oracle {truth:.6f} inside adjusted bounds in {100 * cover_share:.1f}% (>= 95%)",
        ),
    ]
    detail = "; ".join(text for _, text in checks)
    _check("7", all(ok for ok, _ in checks), detail)


def test_criterion_08_published_interval():
    low, up = bound_endpoints(0.556 / 0.708, 0.708, 0.689, 0.55, 0.44)
    low_ok = abs(float(low) - (-0.388)) <= 0.02
    up_ok = abs(float(up) - 0.567) <= 0.02
    detail = f"endpoints [{float(low):.4f}, {float(up):.4f}] vs published [-0.388, 0.567] +/- 0.02"
    _check("8", low_ok and up_ok, detail)


def test_criterion_09_invariant_spot_checks(base_ds):
    problems = []

    rng = np.random.default_rng(0)
    for _ in range(200):
        params = StrataParams(beta1=rng.normal(size=3) * 3, beta2=rng.normal(size=3) * 3)
        probs = strata_probs(params, float(rng.normal()), float(rng.normal()))
        total = probs.p_ss + probs.p_sb + probs.p_nn
        if abs(total - 1.0) > 1e-12 or min(probs.p_ss, probs.p_sb, probs.p_nn) < 0:
            problems.append(f"stratum probabilities invalid: total={total!r}")
            break

    grid = rng.uniform(size=(500, 5))
    grid[:, 0] = np.maximum(grid[:, 0], 1e-6)
    low, up = bound_endpoints(grid[:, 0], grid[:, 1], grid[:, 2], grid[:, 3], grid[:, 4])
    if not np.all(low <= up + 1e-12):
        problems.append("bound endpoints out of order on random grid")
    if np.min(low) < -1 - 1e-12 or np.max(up) > 1 + 1e-12:
        problems.append("bound endpoints escape [-1, 1]")

    params = fit_missingness(base_ds)
    h1 = default_h1(base_ds)
    obs = (base_ds.s == 1) & (base_ds.r == 1)
    miss = (base_ds.s == 1) & (base_ds.r == 0)
    m1 = np.asarray(
        propensity(params, base_ds.z[obs], base_ds.a[obs], base_ds.c[obs], base_ds.y[obs])
    )
    residual = (h1[obs].T @ (1.0 / m1 - 1.0) - h1[miss].sum(axis=0)) / base_ds.n
    if np.max(np.abs(residual)) > 1e-8:
        problems.append(f"moment residual {np.max(np.abs(residual)):.2e} above 1e-8")

    for p in (1e-6, 0.25, 0.5, 0.9, 1 - 1e-9):
        if abs(expit(logit(p)) - p) > 1e-9:
            problems.append(f"expit/logit roundtrip failed at {p}")
            break

    detail = (
        "probability simplex, endpoint ordering, solved-moment residuals, link roundtrip "
        "(full property suite runs with the unit tests)"
        if not problems
        else "; ".join(problems)
    )
    _check("9", not problems, detail)


@pytest.fixture(scope="session", autouse=True)
def _report_header():
    _LINES.append("acceptance criteria report")
    _LINES.append("==========================")
    yield
    _note("")
    _note("(one line per criterion; FAIL lines carry the measured values)")
