"""Shared numerical kernel.

Link functions, likelihood maximization, root finding for just-identified
moment systems, finite-difference derivatives, and reproducible random
streams. Everything here is pure given its inputs, so callers are free to
run many solves concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

# Condition-number threshold above which a Newton Jacobian is treated as
# singular and the ridge fallback kicks in.
_COND_LIMIT = 1e12


class NonConvergence(RuntimeError):
    """Iteration cap reached before the convergence criterion was met.

    ``theta`` carries the last iterate when the failing solver had one; for
    moment systems this is the minimizer of the residual norm along the
    path, which callers may accept under documented conditions.
    """

    def __init__(self, message: str, final_norm: float, iterations: int, theta=None):
        super().__init__(
            f"{message} (final norm {final_norm:.3e} after {iterations} iterations)"
        )
        self.final_norm = float(final_norm)
        self.iterations = int(iterations)
        self.theta = None if theta is None else np.asarray(theta, dtype=float)


class InexactRootWarning(UserWarning):
    """A moment solve returned a stalled minimizer instead of an exact root.

    Just-identified moment systems estimated from finite samples need not
    have a root at all (the analogue of separation in logistic
    regression: the residual infimum can sit at a parameter boundary).
    The minimum-residual point is still the well-defined estimate; this
    warning discloses that the residual, while statistically negligible,
    is not zero.
    """


class SingularJacobian(RuntimeError):
    """Jacobian condition estimate beyond threshold during Newton iteration."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = int(iteration)


class DegenerateLikelihood(RuntimeError):
    """Monotone likelihood or separation: no finite maximizer exists."""


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls shared by the moment solver and the maximizer.

    Parameters
    ----------
    tol : float
        Convergence threshold on the max-norm of the moment vector
        (root finding) or of the gradient (maximization).
    max_iter : int
        Iteration cap.
    damping : float
        Initial step fraction in (0, 1]; the line search halves from here.
    h_fd : float
        Base finite-difference step, scaled per coordinate by (1 + |theta_j|).
    """

    tol: float = 1e-8
    max_iter: int = 100
    damping: float = 1.0
    h_fd: float = 1e-6
    stall_tol: float | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not self.h_fd > 0:
            raise ValueError("h_fd must be positive")
        if self.stall_tol is not None and not self.stall_tol > 0:
            raise ValueError("stall_tol must be positive when set")


# Defaults: 1e-8 on moment norms, 1e-6 on gradient norms. The looser
# gradient tolerance reflects that mean log-likelihood gradients carry a
# 1/n scale while moment systems are already normalized. stall_tol bounds
# the residual at which a rootless moment system's minimizer is still
# accepted (see solve_with_restarts). A mean moment at n = 2000 has
# sampling noise near 0.011, and under a misspecified missingness
# mechanism the residual infimum routinely lands a couple of noise units
# above zero; 5e-2 admits those boundary minimizers while still failing
# genuinely unfit systems, whose norms sit an order of magnitude higher.
MOMENT_DEFAULTS = SolverConfig(tol=1e-8, stall_tol=5e-2)
LOGLIK_DEFAULTS = SolverConfig(tol=1e-6)


def expit(x):
    """Logistic function exp(x) / (1 + exp(x)), overflow-safe.

    Evaluates the negative and non-negative branches separately so that
    exp() is only ever called on non-positive arguments; stable for
    |x| up to 700.

    Parameters
    ----------
    x : float or ndarray

    Returns
    -------
    float or ndarray
        Values in (0, 1) (rounding to exactly 0.0 or 1.0 in floating
        point for |x| beyond ~37).
    """
    arr = np.asarray(x, dtype=float)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    if arr.ndim == 0:
        return float(out)
    return out


def logit(p):
    """Inverse of expit; requires p strictly inside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("logit requires arguments strictly inside (0, 1)")
    out = np.log(arr / (1.0 - arr))
    if arr.ndim == 0:
        return float(out)
    return out


def _norm_inf(v: Array) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def numerical_gradient(f: Callable[[Array], float], theta, h_fd: float = 1e-6) -> Array:
    """Central-difference gradient of a scalar function, error O(h_fd^2).

    The step for coordinate j is h_fd * (1 + |theta_j|) so that the
    relative step stays sensible for large parameters.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.empty(theta.size)
    for j in range(theta.size):
        h = h_fd * (1.0 + abs(theta[j]))
        step = np.zeros_like(theta)
        step[j] = h
        grad[j] = (f(theta + step) - f(theta - step)) / (2.0 * h)
    return grad


def numerical_jacobian(g: Callable[[Array], Array], theta, h_fd: float = 1e-6) -> Array:
    """Central-difference Jacobian of a vector function, error O(h_fd^2)."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        h = h_fd * (1.0 + abs(theta[j]))
        step = np.zeros_like(theta)
        step[j] = h
        cols.append((np.asarray(g(theta + step), float) - np.asarray(g(theta - step), float)) / (2.0 * h))
    return np.column_stack(cols)


def solve_moments(
    system: Callable[[Array], Array],
    init,
    cfg: SolverConfig | None = None,
) -> Array:
    """Solve a just-identified sample moment system g_n(theta) = 0.

    Hybrid Newton / Levenberg-Marquardt iteration with a numerically
    differenced Jacobian. While the Jacobian stays well conditioned, damped
    Newton steps with a backtracking line search on the squared norm of g_n
    are taken; whenever the Jacobian degrades or a Newton step fails to
    improve, the iteration continues from the same point with
    Marquardt-ridged least-squares steps, relaxing back to Newton once
    steps are accepted again.

    Parameters
    ----------
    system : callable
        Maps a parameter vector of length p to the sample-averaged moment
        vector of the same length.
    init : array_like
        Starting point.
    cfg : SolverConfig, optional
        Defaults to the moment-norm tolerance 1e-8.

    Returns
    -------
    ndarray
        theta_hat with ||g_n(theta_hat)||_inf <= cfg.tol.

    Raises
    ------
    NonConvergence
        Iteration cap hit, or the merit stalled at a point that is not a
        root; carries the final residual norm.
    SingularJacobian
        The Jacobian contains non-finite entries.
    ValueError
        The system is not square or not finite at the starting point.
    """
    cfg = cfg or MOMENT_DEFAULTS
    theta = np.asarray(init, dtype=float).copy()
    g = np.asarray(system(theta), dtype=float)
    if g.shape != theta.shape:
        raise ValueError(
            f"moment system must be just-identified: {g.size} equations for {theta.size} unknowns"
        )
    if not np.all(np.isfinite(g)):
        raise ValueError("moment system is not finite at the starting point")
    p = theta.size
    lam = 0.0  # Marquardt ridge; zero means pure Newton is still trusted
    # Trial points can push the system to astronomically large (or inf)
    # values; the finiteness and merit gates below reject them, so the
    # intermediate overflows are expected and not worth warning about.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for it in range(cfg.max_iter):
            if _norm_inf(g) <= cfg.tol:
                return theta
            jac = numerical_jacobian(system, theta, cfg.h_fd)
            if not np.all(np.isfinite(jac)):
                raise SingularJacobian("moment Jacobian has non-finite entries", it)
            merit = float(g @ g)
            moved = False
            cond = np.linalg.cond(jac)
            if lam == 0.0 and np.isfinite(cond) and cond <= _COND_LIMIT:
                step = np.linalg.solve(jac, -g)
                scale = cfg.damping
                for _ in range(20):
                    cand = theta + scale * step
                    g_cand = np.asarray(system(cand), dtype=float)
                    if np.all(np.isfinite(g_cand)) and float(g_cand @ g_cand) < merit:
                        theta, g = cand, g_cand
                        moved = True
                        break
                    scale *= 0.5
            if not moved:
                # Ridged least-squares steps from the current point keep
                # progress on ill-conditioned stretches; lam decays on every
                # acceptance so Newton resumes near the root.
                gram = jac.T @ jac
                diag = np.diag(gram)
                diag_scale = (
                    float(np.max(diag)) if np.all(np.isfinite(diag)) and np.max(diag) > 1e-12 else 1.0
                )
                lam = max(lam, 1e-6)
                for _ in range(24):
                    try:
                        step = np.linalg.solve(gram + lam * diag_scale * np.eye(p), -jac.T @ g)
                    except np.linalg.LinAlgError:
                        lam *= 10.0
                        continue
                    cand = theta + step
                    g_cand = np.asarray(system(cand), dtype=float)
                    if (
                        np.all(np.isfinite(step))
                        and np.all(np.isfinite(g_cand))
                        and float(g_cand @ g_cand) < merit
                    ):
                        theta, g = cand, g_cand
                        lam = 0.0 if lam <= 1e-8 else lam / 10.0
                        moved = True
                        break
                    lam *= 10.0
                if not moved:
                    raise NonConvergence(
                        "moment solver stalled at a non-root stationary point",
                        _norm_inf(g),
                        it,
                        theta=theta,
                    )
    raise NonConvergence(
        "moment solver hit the iteration cap", _norm_inf(g), cfg.max_iter, theta=theta
    )


def solve_with_restarts(
    system: Callable[[Array], Array],
    starts: Sequence,
    cfg: SolverConfig | None = None,
) -> Array:
    """solve_moments tried from several starting points in order.

    Returns the root from the first start that converges. A successful
    solve from the primary (first) start is never second-guessed, so adding
    fallback starts cannot change results that already converged; the root,
    not the path, defines the estimator.

    If no start yields an exact root but the best stalled iterate has a
    residual max-norm within ``cfg.stall_tol``, that minimizer is returned
    with an InexactRootWarning: sample moment systems can be rootless (the
    residual infimum sits at a parameter boundary), and the minimum-norm
    point is then the estimate. Otherwise the error from the primary start
    is raised.
    """
    cfg = cfg or MOMENT_DEFAULTS
    if len(starts) == 0:
        raise ValueError("at least one starting point is required")
    first_err: Exception | None = None
    best_norm, best_theta = np.inf, None
    for start in starts:
        try:
            return solve_moments(system, start, cfg)
        except NonConvergence as err:
            if first_err is None:
                first_err = err
            if err.theta is not None and err.final_norm < best_norm:
                best_norm, best_theta = err.final_norm, err.theta
        except (SingularJacobian, ValueError) as err:
            # A start where the system is not even finite (possible for
            # extreme warm starts on resampled data) should not veto the
            # remaining starts.
            if first_err is None:
                first_err = err
    if cfg.stall_tol is not None and best_theta is not None and best_norm <= cfg.stall_tol:
        warnings.warn(
            f"no exact moment root found from {len(starts)} starting point(s); "
            f"accepted the stalled minimizer with residual max-norm {best_norm:.2e}",
            InexactRootWarning,
            stacklevel=2,
        )
        return best_theta
    raise first_err


def solve_with_selection(
    system: Callable[[Array], Array],
    starts: Sequence,
    cfg: SolverConfig | None = None,
    cap: float | None = None,
) -> Array:
    """solve_moments tried from every starting point, selecting among roots.

    A just-identified moment system can have several exact roots; mixture
    systems are the canonical case, where the component labels can trade
    places at a second solution. Keeping whichever root the first
    successful Newton path happens to hit makes the estimate an artifact
    of the path. Here every start is solved, the distinct roots found are
    pooled, and the pooled root nearest the first start (Euclidean
    distance, earliest root on ties) is returned, pinning the estimate to
    the solution continuously connected to its warm start.

    When ``cap`` is given, roots with any coefficient beyond it are
    discarded as saturation escapes: a coefficient diverging toward a
    degenerate fit can zero the sample moments without describing the
    data.

    When no admissible root is found the fallback matches
    solve_with_restarts: the best stalled minimizer within
    ``cfg.stall_tol`` is accepted with an InexactRootWarning, otherwise
    the first error encountered is raised (or, if every start converged
    but only to discarded roots, a NonConvergence reporting that).
    """
    cfg = cfg or MOMENT_DEFAULTS
    if len(starts) == 0:
        raise ValueError("at least one starting point is required")
    anchor = np.asarray(starts[0], dtype=float)
    first_err: Exception | None = None
    best_norm, best_theta = np.inf, None
    roots: list[Array] = []
    discarded: Array | None = None
    for start in starts:
        try:
            root = solve_moments(system, start, cfg)
        except NonConvergence as err:
            if first_err is None:
                first_err = err
            if err.theta is not None and err.final_norm < best_norm:
                best_norm, best_theta = err.final_norm, err.theta
            continue
        except (SingularJacobian, ValueError) as err:
            if first_err is None:
                first_err = err
            continue
        if cap is not None and float(np.max(np.abs(root))) > cap:
            if discarded is None:
                discarded = root
            continue
        if not any(np.allclose(root, kept, rtol=1e-5, atol=1e-6) for kept in roots):
            roots.append(root)
    if roots:
        dists = [float(np.linalg.norm(r - anchor)) for r in roots]
        return roots[int(np.argmin(dists))]
    if cfg.stall_tol is not None and best_theta is not None and best_norm <= cfg.stall_tol:
        warnings.warn(
            f"no exact moment root found from {len(starts)} starting point(s); "
            f"accepted the stalled minimizer with residual max-norm {best_norm:.2e}",
            InexactRootWarning,
            stacklevel=2,
        )
        return best_theta
    if first_err is not None:
        raise first_err
    raise NonConvergence(
        f"every moment root found has a coefficient beyond {cap:g}",
        _norm_inf(np.asarray(system(discarded), dtype=float)),
        cfg.max_iter,
        theta=discarded,
    )


def maximize_loglik(
    loglik: Callable[[Array], float],
    init,
    cfg: SolverConfig | None = None,
    grad: Callable[[Array], Array] | None = None,
    hess: Callable[[Array], Array] | None = None,
    param_cap: float | None = None,
    trace: list | None = None,
) -> Array:
    """Maximize a log-likelihood by damped Newton ascent.

    The gradient is central finite differences unless an analytic ``grad``
    is supplied; the Hessian is the numerical Jacobian of the gradient
    unless ``hess`` is supplied. Backtracking guarantees every accepted
    step strictly increases the log-likelihood.

    Parameters
    ----------
    loglik : callable
        Scalar objective; must be finite at ``init``.
    init : array_like
        Starting point.
    cfg : SolverConfig, optional
        Defaults to gradient tolerance 1e-6.
    grad, hess : callable, optional
        Analytic derivatives.
    param_cap : float, optional
        Separation guard: raise DegenerateLikelihood as soon as any
        |theta_j| exceeds this cap during optimization.
    trace : list, optional
        If given, (theta, loglik) is appended for every accepted iterate.

    Returns
    -------
    ndarray
        theta_hat with ||grad(theta_hat)||_inf <= cfg.tol.

    Raises
    ------
    NonConvergence, DegenerateLikelihood
    """
    cfg = cfg or LOGLIK_DEFAULTS
    theta = np.asarray(init, dtype=float).copy()
    value = float(loglik(theta))
    if not np.isfinite(value):
        raise ValueError("log-likelihood is not finite at the starting point")
    grad_fn = grad if grad is not None else (lambda th: numerical_gradient(loglik, th, cfg.h_fd))
    if trace is not None:
        trace.append((theta.copy(), value))
    g = np.asarray(grad_fn(theta), dtype=float)
    for it in range(cfg.max_iter):
        if param_cap is not None and np.any(np.abs(theta) > param_cap):
            raise DegenerateLikelihood(
                f"parameter magnitude exceeded {param_cap}; likelihood appears monotone (separation)"
            )
        if _norm_inf(g) <= cfg.tol:
            return theta
        if hess is not None:
            hmat = np.asarray(hess(theta), dtype=float)
        else:
            hmat = numerical_jacobian(grad_fn, theta, cfg.h_fd)
        hmat = 0.5 * (hmat + hmat.T)
        direction = None
        try:
            cond = np.linalg.cond(hmat)
            if np.isfinite(cond) and cond <= _COND_LIMIT:
                cand_dir = np.linalg.solve(-hmat, g)
                if float(cand_dir @ g) > 0.0:  # ascent direction required
                    direction = cand_dir
        except np.linalg.LinAlgError:
            direction = None
        if direction is None:
            # Ridged Newton: -H + lam*I is eventually positive definite, so
            # the resulting direction is guaranteed ascent. Handles singular
            # Hessians (e.g. zero-variance design columns).
            diag_scale = max(float(np.max(np.abs(np.diag(hmat)))), 1.0)
            for lam in (1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2):
                try:
                    cand_dir = np.linalg.solve(-hmat + lam * diag_scale * np.eye(theta.size), g)
                except np.linalg.LinAlgError:
                    continue
                if np.all(np.isfinite(cand_dir)) and float(cand_dir @ g) > 0.0:
                    direction = cand_dir
                    break
        if direction is None:
            scale = max(1.0, _norm_inf(g))
            direction = g / scale
        scale = cfg.damping
        accepted = False
        for _ in range(50):
            cand = theta + scale * direction
            cand_value = float(loglik(cand))
            if np.isfinite(cand_value) and cand_value > value:
                theta, value = cand, cand_value
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            raise NonConvergence("ascent stalled in backtracking", _norm_inf(g), it)
        if trace is not None:
            trace.append((theta.copy(), value))
        g = np.asarray(grad_fn(theta), dtype=float)
    if param_cap is not None and np.any(np.abs(theta) > param_cap):
        raise DegenerateLikelihood(
            f"parameter magnitude exceeded {param_cap}; likelihood appears monotone (separation)"
        )
    if _norm_inf(g) <= cfg.tol:
        return theta
    raise NonConvergence("maximizer hit the iteration cap", _norm_inf(g), cfg.max_iter)


def logistic_mle(
    design: Array,
    y: Array,
    cfg: SolverConfig | None = None,
    param_cap: float | None = None,
    offset: Array | None = None,
) -> Array:
    """Plain logistic regression MLE via maximize_loglik with analytic score.

    Convenience used for solver starting points. Maximizes the mean
    Bernoulli log-likelihood of ``y`` on the rows of ``design``; ``offset``
    is an optional fixed per-row addition to the linear predictor.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or design.shape[0] != y.size:
        raise ValueError("design must be (n, p) with one row per response")
    n = y.size
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)

    def ll(theta: Array) -> float:
        lin = design @ theta + off
        return float(np.mean(y * -np.logaddexp(0.0, -lin) + (1.0 - y) * -np.logaddexp(0.0, lin)))

    def score(theta: Array) -> Array:
        return design.T @ (y - expit(design @ theta + off)) / n

    def hessian(theta: Array) -> Array:
        p = expit(design @ theta + off)
        return -(design.T * (p * (1.0 - p))) @ design / n

    return maximize_loglik(ll, np.zeros(design.shape[1]), cfg, grad=score, hess=hessian, param_cap=param_cap)


def seeded_stream(master_seed: int, stream_index: int) -> np.random.Generator:
    """Deterministic, statistically independent random stream.

    Streams for distinct ``stream_index`` values are independent children
    of the same master seed, so results do not depend on worker
    scheduling.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(stream_index),))
    return np.random.default_rng(seq)


def substream_seed(master_seed: int, *key: int) -> int:
    """Derive a child integer seed from a master seed and an index path.

    Used to hand independent master seeds to nested stages (for example a
    per-replicate bootstrap inside a Monte Carlo study).
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, np.uint64)[0])
