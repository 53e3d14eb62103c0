"""Configured estimator objects wrapping the functional pipeline."""

from __future__ import annotations

import pandas as pd
import pytest

from sacemnar.data import Dataset, write_csv
from sacemnar.estimators import (
    BoundsEstimator,
    IgnoreMnarEstimator,
    NaiveEstimator,
    NotFittedError,
    SaceEstimator,
    as_dataset,
)
from sacemnar.sace import EstimationConfig, estimate_sace, naive_estimate


def test_get_params_roundtrip():
    est = SaceEstimator(eta=0.5, bootstrap=10, seed=3, ci_method="normal")
    params = est.get_params()
    assert params == {"eta": 0.5, "bootstrap": 10, "seed": 3, "ci_method": "normal"}
    clone = SaceEstimator().set_params(**params)
    assert clone.get_params() == params


def test_bounds_estimator_params():
    est = BoundsEstimator(cells=[("c1", "mean")], bootstrap=5, seed=1, policy="drop")
    assert est.get_params() == {
        "cells": [("c1", "mean")],
        "bootstrap": 5,
        "seed": 1,
        "policy": "drop",
    }


def test_set_params_rejects_unknown():
    with pytest.raises(ValueError, match="invalid parameter 'alpha'"):
        NaiveEstimator().set_params(alpha=1.0)


def test_repr_shows_configuration():
    text = repr(NaiveEstimator(bootstrap=7))
    assert text.startswith("NaiveEstimator(")
    assert "bootstrap=7" in text


def test_fit_returns_self_and_sets_attributes(base_ds):
    est = SaceEstimator(bootstrap=0)
    assert est.fit(base_ds) is est
    assert est.delta_ == est.report_.delta_hat
    assert est.ci_ == (est.report_.ci_low, est.report_.ci_high)
    assert est.fitted_report is est.report_


def test_unfitted_access_raises():
    with pytest.raises(NotFittedError, match="call fit"):
        _ = SaceEstimator().fitted_report
    with pytest.raises(NotFittedError, match="call fit"):
        _ = BoundsEstimator().interval_


def test_estimator_matches_functional_pipeline(base_ds):
    est = SaceEstimator(bootstrap=0).fit(base_ds)
    direct = estimate_sace(base_ds, EstimationConfig(bootstrap=0))
    assert est.delta_ == direct.delta_hat


def test_each_method_maps_to_its_report(base_ds):
    assert SaceEstimator(bootstrap=0).fit(base_ds).report_.method == "proposed"
    assert IgnoreMnarEstimator(bootstrap=0).fit(base_ds).report_.method == "ignore_mnar"
    assert NaiveEstimator(bootstrap=0).fit(base_ds).report_.method == "naive"


def test_naive_estimator_on_dataframe(base_ds, tmp_path):
    path = tmp_path / "ds.csv"
    write_csv(base_ds, path)
    frame = pd.read_csv(path)
    est = NaiveEstimator(bootstrap=0).fit(frame)
    assert est.delta_ == naive_estimate(base_ds, EstimationConfig(bootstrap=0)).delta_hat


def test_bounds_estimator_fit(base_ds):
    est = BoundsEstimator(cells=[("c1", "mean")], bootstrap=0).fit(base_ds)
    assert est.interval_ == (est.lower_, est.upper_)
    assert est.lower_ <= est.upper_
    assert est.result_.variant == "adjusted"


def test_as_dataset_rejects_other_types():
    with pytest.raises(TypeError, match="expected Dataset or DataFrame, got list"):
        as_dataset([1, 2, 3])


def test_as_dataset_rejects_invalid_rows(base_ds):
    z = base_ds.z.copy()
    z[0] = 5
    broken = Dataset(z=z, s=base_ds.s, r=base_ds.r, y=base_ds.y, a=base_ds.a, c=base_ds.c)
    with pytest.raises(ValueError, match="validation problem"):
        as_dataset(broken)
