"""Estimator-object front end with a fit/get_params surface.

Thin wrappers over the functional pipeline for callers that prefer
configured estimator objects: construct with hyperparameters, call
``fit(data)``, read trailing-underscore attributes. ``data`` may be a
Dataset or any DataFrame with the standard columns. There is no predict
or transform: these estimators summarize a sample into one causal
contrast rather than mapping new rows to outputs.
"""

from __future__ import annotations

import inspect

import pandas as pd

from .bounds import CellSpec, bounds_with_ci
from .data import Dataset, from_frame, validate
from .sace import (
    EstimationConfig,
    FitReport,
    estimate_sace,
    ignore_mnar_estimate,
    naive_estimate,
)


class NotFittedError(RuntimeError):
    """fit() has not been called yet."""


def as_dataset(data) -> Dataset:
    """Coerce Dataset or DataFrame input and fail fast on invalid rows."""
    if isinstance(data, Dataset):
        dataset = data
    elif isinstance(data, pd.DataFrame):
        dataset = from_frame(data)
    else:
        raise TypeError(f"expected Dataset or DataFrame, got {type(data).__name__}")
    problems = validate(dataset)
    if problems:
        preview = "; ".join(problems[:3])
        raise ValueError(f"{len(problems)} validation problem(s): {preview}")
    return dataset


class BaseEstimator:
    """get_params/set_params keyed on the subclass constructor signature."""

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "BaseEstimator":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters: {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"

    def _check_fitted(self, attribute: str):
        if not hasattr(self, attribute):
            raise NotFittedError(f"{type(self).__name__} is not fitted; call fit(data) first")


class _PointEstimator(BaseEstimator):
    """Shared fit machinery for the three point estimators."""

    _fit_fn = None  # set by subclasses
    _complete_case_eta = False

    def __init__(self, eta: float = 0.0, bootstrap: int = 200, seed: int = 0, ci_method: str = "percentile"):
        self.eta = eta
        self.bootstrap = bootstrap
        self.seed = seed
        self.ci_method = ci_method

    def fit(self, data) -> "_PointEstimator":
        dataset = as_dataset(data)
        config = EstimationConfig(
            eta=self.eta,
            bootstrap=self.bootstrap,
            seed=self.seed,
            ci_method=self.ci_method,
        )
        report: FitReport = type(self)._fit_fn(dataset, config)
        self.report_ = report
        self.delta_ = report.delta_hat
        self.ci_ = (report.ci_low, report.ci_high)
        return self

    @property
    def fitted_report(self) -> FitReport:
        self._check_fitted("report_")
        return self.report_


class SaceEstimator(_PointEstimator):
    """Three-stage survivor-contrast estimator with MNAR correction."""

    _fit_fn = staticmethod(estimate_sace)


class IgnoreMnarEstimator(_PointEstimator):
    """Same pipeline with the missingness stage forced to complete-case."""

    _fit_fn = staticmethod(ignore_mnar_estimate)


class NaiveEstimator(_PointEstimator):
    """Difference of observed survivor means; no adjustment at all."""

    _fit_fn = staticmethod(naive_estimate)


class BoundsEstimator(BaseEstimator):
    """Covariate-adjusted nonparametric bounds as an estimator object."""

    def __init__(
        self,
        cells: CellSpec | None = None,
        bootstrap: int = 200,
        seed: int = 0,
        policy: str = "merge",
    ):
        self.cells = cells
        self.bootstrap = bootstrap
        self.seed = seed
        self.policy = policy

    def fit(self, data) -> "BoundsEstimator":
        dataset = as_dataset(data)
        result = bounds_with_ci(
            dataset,
            self.cells,
            B=self.bootstrap,
            seed=self.seed,
            policy=self.policy,
        )
        self.result_ = result
        self.lower_ = result.lower
        self.upper_ = result.upper
        return self

    @property
    def interval_(self) -> tuple[float, float]:
        self._check_fitted("result_")
        return (self.lower_, self.upper_)
