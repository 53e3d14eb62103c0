"""Numerical kernel: links, solvers, derivatives, random streams."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sacemnar.numerics import (
    DegenerateLikelihood,
    InexactRootWarning,
    LOGLIK_DEFAULTS,
    MOMENT_DEFAULTS,
    NonConvergence,
    SolverConfig,
    expit,
    logistic_mle,
    logit,
    maximize_loglik,
    numerical_gradient,
    numerical_jacobian,
    seeded_stream,
    solve_moments,
    solve_with_restarts,
    substream_seed,
)

LOG3 = 1.0986122886681098  # log(3) = logit(0.75)
LOG_7_3 = 0.8472978603872037  # log(7/3) = logit(0.7)


def test_expit_center_and_frozen_value():
    assert expit(0.0) == 0.5
    assert expit(0.55) == pytest.approx(0.6341355910108007, abs=1e-15)
    assert isinstance(expit(0.55), float)


def test_expit_extreme_arguments_stay_in_unit_interval():
    vals = expit(np.array([-700.0, -40.0, 40.0, 700.0]))
    assert np.all(np.isfinite(vals))
    assert np.all((vals >= 0.0) & (vals <= 1.0))
    assert vals[0] < 1e-300 and vals[-1] == 1.0


def test_expit_preserves_array_shape():
    x = np.linspace(-3, 3, 12).reshape(3, 4)
    out = expit(x)
    assert out.shape == (3, 4)


@given(st.floats(min_value=-50.0, max_value=50.0, allow_nan=False))
def test_expit_reflection_identity(x):
    assert expit(x) + expit(-x) == pytest.approx(1.0, abs=1e-12)


def test_logit_inverts_expit():
    for x in (-3.0, -0.5, 0.0, 0.9, 4.0):
        assert logit(expit(x)) == pytest.approx(x, abs=1e-10)


def test_logit_rejects_boundary():
    with pytest.raises(ValueError):
        logit(0.0)
    with pytest.raises(ValueError):
        logit(1.0)
    with pytest.raises(ValueError):
        logit(np.array([0.5, 1.2]))


def test_solve_moments_linear_system():
    mat = np.array([[2.0, 1.0], [1.0, 3.0]])
    target = np.array([1.0, 2.0])
    root = solve_moments(lambda th: mat @ th - target, np.zeros(2))
    assert np.allclose(root, np.linalg.solve(mat, target), atol=1e-10)


def test_solve_moments_logistic_mean_recovers_logit():
    # mean(y) = 0.75, so the root of mean(y - expit(theta)) is log(3).
    y = np.array([1.0] * 3 + [0.0])

    def system(theta):
        return np.array([np.mean(y - expit(theta[0]))])

    root = solve_moments(system, np.zeros(1))
    assert root[0] == pytest.approx(LOG3, abs=1e-7)


def test_solve_moments_residual_below_tolerance_at_every_solution():
    # Returned roots must satisfy the advertised residual bound.
    rng = np.random.default_rng(3)
    for _ in range(10):
        mat = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        target = rng.standard_normal(3)

        def system(th, mat=mat, target=target):
            return mat @ th + 0.1 * np.tanh(th) - target

        root = solve_moments(system, np.zeros(3))
        assert np.max(np.abs(system(root))) <= MOMENT_DEFAULTS.tol


def test_solve_moments_rejects_non_square_system():
    with pytest.raises(ValueError, match="just-identified"):
        solve_moments(lambda th: np.array([th[0], th[0], th[0]]), np.zeros(2))


def test_solve_moments_rejects_non_finite_start():
    with pytest.raises(ValueError, match="not finite"):
        solve_moments(lambda th: np.array([np.inf]), np.zeros(1))


def _rootless(offset: float):
    # g(theta) = theta^2 + offset has no real root; the merit floor sits
    # at theta = 0 with norm exactly `offset`.
    def system(th):
        return np.array([th[0] ** 2 + offset])

    return system


def test_solve_moments_raises_on_rootless_system_with_last_iterate():
    with pytest.raises(NonConvergence) as excinfo:
        solve_moments(_rootless(1.0), np.array([1.0]))
    err = excinfo.value
    assert err.theta is not None
    assert abs(err.theta[0]) < 1e-3
    assert err.final_norm == pytest.approx(1.0, abs=1e-6)


def test_solve_with_restarts_returns_exact_root_without_warning():
    mat = np.array([[4.0]])
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        root = solve_with_restarts(
            lambda th: mat @ th - 2.0, [np.zeros(1), np.ones(1)]
        )
    assert root[0] == pytest.approx(0.5, abs=1e-10)


def test_solve_with_restarts_accepts_stalled_minimizer_within_stall_tol():
    cfg = SolverConfig(tol=1e-8, stall_tol=1e-2)
    with pytest.warns(InexactRootWarning):
        root = solve_with_restarts(_rootless(1e-3), [np.array([0.7])], cfg)
    assert abs(root[0]) < 1e-2


def test_solve_with_restarts_rejects_stalled_minimizer_beyond_stall_tol():
    with pytest.raises(NonConvergence):
        solve_with_restarts(_rootless(1.0), [np.array([0.7]), np.array([-0.4])], MOMENT_DEFAULTS)


def test_solve_with_restarts_requires_a_start():
    with pytest.raises(ValueError):
        solve_with_restarts(_rootless(1.0), [])


def test_solve_with_restarts_recovers_after_bad_first_start():
    # System is non-finite at the first start; the second converges.
    def system(th):
        return np.array([np.exp(th[0]) - 2.0 if th[0] < 500 else np.inf])

    root = solve_with_restarts(system, [np.array([700.0]), np.zeros(1)])
    assert root[0] == pytest.approx(math.log(2.0), abs=1e-8)


def test_maximize_loglik_bernoulli_seven_of_ten():
    y = np.array([1.0] * 7 + [0.0] * 3)
    theta = logistic_mle(np.ones((10, 1)), y)
    assert theta[0] == pytest.approx(LOG_7_3, abs=1e-6)


def test_maximize_loglik_quadratic_peak():
    theta = maximize_loglik(lambda th: -((th[0] - 3.0) ** 2), np.zeros(1))
    assert theta[0] == pytest.approx(3.0, abs=1e-5)


def test_maximize_loglik_trace_is_strictly_increasing():
    y = np.array([1.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    x = np.column_stack([np.ones(6), np.array([-1.0, 0.5, 1.5, -0.2, 0.8, 0.1])])

    def ll(th):
        lin = x @ th
        return float(np.mean(y * -np.logaddexp(0, -lin) + (1 - y) * -np.logaddexp(0, lin)))

    trace: list = []
    maximize_loglik(ll, np.zeros(2), trace=trace)
    values = [v for _, v in trace]
    assert len(values) >= 2
    assert all(b > a for a, b in zip(values, values[1:]))


def test_maximize_loglik_separation_raises_degenerate():
    x = np.column_stack([np.ones(20), np.linspace(-2, 2, 20)])
    y = (x[:, 1] > 0).astype(float)  # perfectly separated
    with pytest.raises(DegenerateLikelihood):
        logistic_mle(x, y, SolverConfig(tol=1e-6, max_iter=500), param_cap=15.0)


def test_logistic_mle_offset_shifts_intercept():
    # A constant offset must be absorbed one-for-one by the intercept.
    rng = np.random.default_rng(0)
    x = np.column_stack([np.ones(4000), rng.standard_normal(4000)])
    y = (rng.uniform(size=4000) < expit(x @ np.array([0.3, 0.8]))).astype(float)
    plain = logistic_mle(x, y)
    shifted = logistic_mle(x, y, offset=np.full(4000, 1.0))
    assert shifted[0] == pytest.approx(plain[0] - 1.0, abs=1e-5)
    assert shifted[1] == pytest.approx(plain[1], abs=1e-5)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(damping=0.0)
    with pytest.raises(ValueError):
        SolverConfig(h_fd=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(stall_tol=0.0)
    assert LOGLIK_DEFAULTS.tol == 1e-6 and MOMENT_DEFAULTS.tol == 1e-8


def test_numerical_gradient_matches_closed_form():
    grad = numerical_gradient(lambda v: v[0] ** 2 + v[0] * v[1], np.array([1.0, 1.0]))
    assert np.allclose(grad, [3.0, 1.0], atol=1e-6)


def test_numerical_jacobian_of_linear_map_is_the_matrix():
    mat = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])[:2]
    jac = numerical_jacobian(lambda v: mat @ v, np.array([0.3, -0.7]))
    assert np.allclose(jac, mat, atol=1e-8)


def test_central_difference_error_quarters_when_step_halves():
    f = np.exp
    point = np.array([0.3])
    exact = math.exp(0.3)
    # Per-coordinate step is h * (1 + |x|), identical scaling for both runs.
    err_h = abs(numerical_gradient(lambda v: float(f(v[0])), point, h_fd=1e-2)[0] - exact)
    err_half = abs(numerical_gradient(lambda v: float(f(v[0])), point, h_fd=5e-3)[0] - exact)
    assert err_h / err_half == pytest.approx(4.0, rel=0.15)


def test_seeded_stream_reproducible_and_separated():
    a1 = seeded_stream(42, 0).standard_normal(5)
    a2 = seeded_stream(42, 0).standard_normal(5)
    b = seeded_stream(42, 1).standard_normal(5)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_seeded_stream_law_of_large_numbers():
    draws = seeded_stream(123, 4).standard_normal(100_000)
    assert abs(float(np.mean(draws))) < 0.02
    assert float(np.std(draws)) == pytest.approx(1.0, abs=0.02)


def test_substream_seed_deterministic_and_distinct():
    assert substream_seed(9, 1, 2) == substream_seed(9, 1, 2)
    seeds = {substream_seed(9, i, j) for i in range(5) for j in range(5)}
    assert len(seeds) == 25
