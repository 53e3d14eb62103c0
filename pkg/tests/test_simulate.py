"""Scenario generators, the oracle contrast, and the study harnesses."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sacemnar.data import validate
from sacemnar.numerics import expit
from sacemnar.simulate import (
    SCENARIOS,
    SURV1_LOGIT,
    SURV_RATIO_LOGIT,
    DgpSpec,
    TooManyFailures,
    bounds_study,
    generate,
    monte_carlo_study,
    normalize_method,
    true_sace,
)

TRUTH_BASE = 0.321960911313500
TRUTH_MIXED = 0.326198434436569
TRUTH_BV = 0.321989856151228
PR_SS_BASE = 0.393553342996118
PR_SS_MIXED = 0.516099089294679


def test_spec_validation():
    with pytest.raises(ValueError, match="scenario"):
        DgpSpec(scenario="exotic")
    with pytest.raises(ValueError, match="n must be"):
        DgpSpec(n=0)
    with pytest.raises(ValueError, match="eta"):
        DgpSpec(eta=np.inf)
    assert set(SCENARIOS) == {"base", "mixed_cov", "sensitivity", "bounds_violation"}


def test_generate_deterministic():
    first = generate(DgpSpec(scenario="base", n=500, seed=42))
    again = generate(DgpSpec(scenario="base", n=500, seed=42))
    assert np.array_equal(first.a, again.a)
    assert np.array_equal(first.z, again.z)
    assert np.array_equal(first.y, again.y, equal_nan=True)
    other = generate(DgpSpec(scenario="base", n=500, seed=43))
    assert not np.array_equal(first.a, other.a)


@settings(max_examples=20)
@given(
    scenario=st.sampled_from(SCENARIOS),
    seed=st.integers(min_value=0, max_value=2**31),
    eta=st.floats(min_value=-2.0, max_value=2.0),
)
def test_generated_data_always_validates(scenario, seed, eta):
    ds = generate(DgpSpec(scenario=scenario, n=200, seed=seed, eta=eta))
    assert validate(ds) == []


@pytest.mark.slow
def test_treatment_share():
    ds = generate(DgpSpec(scenario="base", n=1_000_000, seed=21))
    assert float(np.mean(ds.z)) == pytest.approx(0.6, abs=0.002)


@pytest.mark.slow
@pytest.mark.parametrize(
    "scenario,target",
    [("base", PR_SS_BASE), ("mixed_cov", PR_SS_MIXED)],
)
def test_always_survivor_share(scenario, target):
    ds = generate(DgpSpec(scenario=scenario, n=1_000_000, seed=17, emit_latent=True))
    assert float(np.mean(ds.g == 0)) == pytest.approx(target, abs=0.002)


@pytest.mark.slow
def test_survival_mechanism_matches_its_probabilities():
    ds = generate(DgpSpec(scenario="base", n=1_000_000, seed=29, emit_latent=True))
    c1 = ds.c[:, 0]
    s1 = expit(SURV1_LOGIT[0] + SURV1_LOGIT[1] * ds.a + SURV1_LOGIT[2] * c1)
    s01 = expit(SURV_RATIO_LOGIT[0] + SURV_RATIO_LOGIT[1] * ds.a + SURV_RATIO_LOGIT[2] * c1)
    for arm, prob in [(1, s1), (0, s1 * s01)]:
        mask = ds.z == arm
        se = float(np.sqrt(0.25 / mask.sum()))
        assert float(np.mean(ds.s[mask])) == pytest.approx(
            float(np.mean(prob[mask])), abs=4 * se + 1e-4
        )


def test_latent_columns_consistent(base_ds_latent):
    ds = base_ds_latent
    assert ds.g is not None and ds.ystar is not None
    survives = np.where(ds.z == 1, ds.g != 2, ds.g == 0)
    assert np.array_equal(ds.s == 1, survives)
    assert np.array_equal(np.isnan(ds.ystar), ds.s == 0)
    obs = ds.r == 1
    assert np.array_equal(ds.y[obs], ds.ystar[obs])
    assert np.all(np.isnan(ds.y[~obs]))


def test_latent_columns_consistent_under_violation():
    ds = generate(DgpSpec(scenario="sensitivity", n=3000, seed=31, eta=1.5, emit_latent=True))
    survives = np.where(ds.z == 1, ds.g != 2, ds.g == 0)
    assert np.array_equal(ds.s == 1, survives)
    assert np.array_equal(np.isnan(ds.ystar), ds.s == 0)


def test_oracle_requires_positive_draws():
    with pytest.raises(ValueError, match="n_oracle"):
        true_sace(DgpSpec(), n_oracle=0)


def test_sensitivity_at_zero_is_the_base_scenario():
    base = true_sace(DgpSpec(scenario="base"), n_oracle=100_000)
    sens = true_sace(DgpSpec(scenario="sensitivity", eta=0.0), n_oracle=100_000)
    assert base == sens


@pytest.mark.slow
@pytest.mark.parametrize(
    "scenario,eta,target",
    [
        ("base", 0.0, TRUTH_BASE),
        ("mixed_cov", 0.0, TRUTH_MIXED),
        ("bounds_violation", 0.0, TRUTH_BV),
    ],
)
def test_oracle_matches_frozen_values(scenario, eta, target):
    value = true_sace(DgpSpec(scenario=scenario, eta=eta), n_oracle=4_000_000)
    assert value == pytest.approx(target, abs=3e-4)


def test_normalize_method():
    assert normalize_method("ignore-mnar") == "ignore_mnar"
    assert normalize_method(" Proposed ") == "proposed"
    assert normalize_method("NAIVE") == "naive"
    with pytest.raises(ValueError, match="unknown method"):
        normalize_method("oracle")


def test_study_shapes_and_coverage_grid():
    spec = DgpSpec(scenario="base", n=400, seed=0)
    result = monte_carlo_study(spec, ["naive"], reps=2, B=2, master_seed=3, truth=0.0)
    assert result.truth == 0.0
    assert list(result.summary.columns) == [
        "method",
        "n",
        "bias_x100",
        "rmse_x100",
        "coverage_x100",
        "n_converged",
        "n_failed",
    ]
    row = result.summary.iloc[0]
    assert row["method"] == "naive"
    assert row["n"] == 400
    assert row["n_converged"] + row["n_failed"] == 2
    assert row["coverage_x100"] in (0.0, 50.0, 100.0)
    assert len(result.replicates) == 2
    assert result.B == 2 and result.master_seed == 3


def test_study_replicates_draw_distinct_data():
    spec = DgpSpec(scenario="base", n=400, seed=0)
    result = monte_carlo_study(spec, ["naive"], reps=3, B=2, master_seed=1, truth=0.0)
    deltas = result.replicates["delta"].to_numpy()
    assert len(np.unique(deltas[~np.isnan(deltas)])) == len(deltas)


def test_study_accepts_method_aliases():
    spec = DgpSpec(scenario="base", n=400, seed=0)
    result = monte_carlo_study(spec, ["Ignore-MNAR"], reps=2, B=0, master_seed=2, truth=0.0)
    assert result.summary.iloc[0]["method"] == "ignore_mnar"


def test_study_rejects_empty_run():
    with pytest.raises(ValueError, match="reps"):
        monte_carlo_study(DgpSpec(), ["naive"], reps=0, truth=0.0)
    with pytest.raises(ValueError, match="reps"):
        bounds_study(DgpSpec(scenario="bounds_violation"), reps=0)


def test_study_raises_when_failures_pile_up():
    # At n = 8 most draws lack an observed control survivor, so the naive
    # contrast raises on well over 5% of replicates.
    spec = DgpSpec(scenario="base", n=8, seed=0)
    with pytest.raises(TooManyFailures, match="naive failed on"):
        monte_carlo_study(spec, ["naive"], reps=10, B=0, master_seed=0, truth=0.0)


def test_bounds_study_rows_and_determinism():
    spec = DgpSpec(scenario="bounds_violation", n=1500, seed=0)
    frame = bounds_study(spec, reps=3, master_seed=5)
    assert list(frame.columns) == [
        "rep",
        "failed",
        "error",
        "unadj_lower",
        "adj_lower",
        "point",
        "adj_upper",
        "unadj_upper",
    ]
    assert len(frame) == 3
    assert not frame["failed"].any()
    assert np.all(frame["unadj_lower"] <= frame["unadj_upper"])
    assert np.all(frame["adj_lower"] <= frame["adj_upper"])
    again = bounds_study(spec, reps=3, master_seed=5)
    assert np.array_equal(frame["point"].to_numpy(), again["point"].to_numpy())


def test_bounds_study_warns_off_scenario():
    with pytest.warns(UserWarning, match="bounds_violation scenario"):
        bounds_study(DgpSpec(scenario="base", n=1500), reps=1, master_seed=4)
