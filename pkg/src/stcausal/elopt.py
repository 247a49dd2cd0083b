"""Penalized empirical likelihood with covariate-balance constraints.

Inner problem
-------------
Given a moment matrix G with rows g_i, maximize sum(log p_i) over
probability vectors subject to sum(p_i) = 1 and sum(p_i * g_i) = 0. The
solution has the form p_i = 1 / (n * (1 + lam' g_i)) where the Lagrange
multiplier solves the concave dual. We run Newton on the dual with Owen's
log-star modification (a quadratic extension of log below 1/n) so the
iteration is globally defined, then validate the unmodified constraints:
a solution that leans on the extension certifies that zero is not inside
the convex hull of the moments, which is reported as an infeasibility
error rather than silently renormalized.

Outer problem
-------------
The propensity coefficients maximize

    profile_el(theta) - n * sum_j P_scad(theta_j; lam1)

where profile_el is the inner value at the balance moments
g_i(theta) = (T_i - e_i(theta)) x_i. The penalty follows the standard
per-observation scaling (it is multiplied by n relative to the summed
log-EL term, matching how the mean-squared outcome loss is penalized), so
sparsity levels behave consistently across sample sizes. Each outer step
solves a quadratic model of the profile with a local quadratic
approximation of the penalty (penalty slope over current magnitude as a
ridge weight), followed by a backtracking line search on the exact
objective; coefficients below 1e-8 are hard-thresholded to exact zero.

The unconstrained maximizer of profile_el is the unpenalized logistic MLE
(the balance moments are the logistic score), which is used as the
starting point and makes the initial inner solve trivially feasible.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from .errors import EstimationError, InfeasibleConstraintsError
from .propensity import (
    ScadPenalty,
    clipped_logistic,
    fit_logistic_mle,
    scad_deriv,
    scad_value,
)

HARD_ZERO = 1e-8
_LQA_EPS = 1e-8


@dataclass(frozen=True)
class ElSolution:
    """Result of a penalized EL propensity fit (or a weight-only solve).

    ``weights`` is the EL probability vector, ``lagrange`` the dual
    multipliers of the balance constraints, ``theta`` the propensity
    coefficients (intercept first when fitted with one). The
    ``constraint_residual`` is the max-norm of the weighted moment sum,
    reported as computed, never zeroed by construction.
    """

    weights: np.ndarray
    lagrange: np.ndarray
    theta: np.ndarray
    objective: float
    converged: bool
    iterations: int
    constraint_residual: float
    objective_trace: tuple = field(default=(), repr=False)


def _logstar_d(z: np.ndarray, n: int):
    """Value/first/second derivative of Owen's log-star at threshold 1/n."""
    z0 = 1.0 / n
    safe = np.maximum(z, z0)
    r = z / z0
    val = np.where(z >= z0, np.log(safe), np.log(z0) - 1.5 + 2.0 * r - 0.5 * r * r)
    d1 = np.where(z >= z0, 1.0 / safe, (2.0 - r) / z0)
    d2 = np.where(z >= z0, -1.0 / safe**2, -1.0 / z0**2)
    return val, d1, d2


def _dual_newton(G, lam0=None, max_iter=200, grad_tol=1e-11, armijo=1e-4):
    """Minimize -sum(log_star(1 + G lam)); returns (lam, z, iterations)."""
    n, m = G.shape
    lam = np.zeros(m) if lam0 is None else np.array(lam0, dtype=np.float64)
    z = 1.0 + G @ lam
    val, d1, d2 = _logstar_d(z, n)
    obj = -val.sum()
    it = 0
    for it in range(1, max_iter + 1):
        grad = -(G.T @ d1)
        if np.max(np.abs(grad)) <= grad_tol * n:
            break
        H = (G * (-d2)[:, None]).T @ G
        H[np.diag_indices_from(H)] += 1e-13 * max(1.0, np.trace(H) / m)
        try:
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, -grad, rcond=None)[0]
        slope = grad @ step
        if slope > 0:  # not a descent direction; fall back to gradient
            step = -grad
            slope = -(grad @ grad)
        t = 1.0
        for _ in range(60):
            z_new = 1.0 + G @ (lam + t * step)
            val_new, d1_new, d2_new = _logstar_d(z_new, n)
            obj_new = -val_new.sum()
            if obj_new <= obj + armijo * t * slope:
                break
            t *= 0.5
        else:
            break
        lam = lam + t * step
        z, d1, d2, obj = z_new, d1_new, d2_new, obj_new
    return lam, z, it


def solve_inner_weights(G, lam0=None, max_iter=200, feas_tol=1e-8):
    """EL weights under the moment constraints encoded by the rows of G.

    Returns ``(weights, lagrange)`` with ``weights`` summing to one and the
    weighted moment sum below ``feas_tol`` in max-norm. Raises
    :class:`InfeasibleConstraintsError` (carrying the offending dual
    direction) when zero is not attainable inside the convex hull of the
    moment rows.
    """
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    n = G.shape[0]
    if not np.any(G):
        return np.full(n, 1.0 / n), np.zeros(G.shape[1])
    lam, z, _ = _dual_newton(G, lam0=lam0, max_iter=max_iter)
    if np.any(z < 1.0 / n):
        direction = lam / max(np.linalg.norm(lam), 1e-300)
        raise InfeasibleConstraintsError(
            "EL constraints infeasible: zero lies outside the convex hull "
            f"of the moment rows ({int((z < 1.0 / n).sum())} weights pinned)",
            direction=direction,
        )
    weights = 1.0 / (n * z)
    residual = np.max(np.abs(weights @ G))
    if residual > feas_tol or abs(weights.sum() - 1.0) > feas_tol:
        direction = lam / max(np.linalg.norm(lam), 1e-300)
        raise InfeasibleConstraintsError(
            f"EL dual did not reach feasibility (residual {residual:.3e})",
            direction=direction,
        )
    return weights, lam


def _moment_matrix(design: np.ndarray, treat: np.ndarray, theta: np.ndarray) -> np.ndarray:
    e = expit(design @ theta)
    return (treat - e)[:, None] * design


def _design(X, add_intercept):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if add_intercept:
        return np.column_stack([np.ones(X.shape[0]), X])
    return X


def profile_objective(theta, X, treat, pen: ScadPenalty, add_intercept: bool = True) -> float:
    """sum(log p_i(theta)) minus the raw SCAD penalty on the slopes.

    The inner EL weights are profiled out at the given coefficients;
    infeasibility propagates. Note the fitting routine scales the penalty
    by n (see module docstring); this function reports the unscaled form.
    """
    theta = np.asarray(theta, dtype=np.float64)
    D = _design(X, add_intercept)
    treat = np.asarray(treat, dtype=np.float64)
    weights, _ = solve_inner_weights(_moment_matrix(D, treat, theta))
    slopes = theta[1:] if add_intercept else theta
    return float(np.log(weights).sum() - scad_value(slopes, pen).sum())


def fit_propensity_el(
    X,
    treat,
    pen: ScadPenalty,
    add_intercept: bool = True,
    theta0=None,
    max_outer: int = 100,
    outer_tol: float = 1e-6,
    feas_tol: float = 1e-8,
    inner_max_iter: int = 200,
) -> ElSolution:
    """SCAD-penalized EL-CBPS propensity fit by alternating optimization.

    The inner weight problem is solved to convergence at each candidate
    point; the outer step updates the coefficients through a quadratic
    model of the profile likelihood with an LQA ridge for the penalty and
    a backtracking line search that never accepts a decrease of the
    penalized objective beyond 1e-10.
    """
    D = _design(X, add_intercept)
    treat = np.asarray(treat, dtype=np.float64)
    n, m = D.shape
    if treat.sum() == 0 or treat.sum() == n:
        raise EstimationError("both treatment arms must be present")
    pen_mask = np.ones(m, dtype=bool)
    if add_intercept:
        pen_mask[0] = False

    if theta0 is None:
        theta = fit_logistic_mle(X, treat, add_intercept=add_intercept)
    else:
        theta = np.array(theta0, dtype=np.float64)

    def evaluate(th, lam_ws):
        G = _moment_matrix(D, treat, th)
        try:
            w, lam = solve_inner_weights(
                G, lam0=lam_ws, max_iter=inner_max_iter, feas_tol=feas_tol
            )
        except InfeasibleConstraintsError:
            return None
        obj = float(np.log(w).sum() - n * scad_value(th[pen_mask], pen).sum())
        return obj, w, lam, G

    state = evaluate(theta, None)
    if state is None:
        theta = fit_logistic_mle(X, treat, add_intercept=add_intercept)
        state = evaluate(theta, None)
    if state is None:
        warnings.warn("EL infeasible at the logistic MLE; returning uniform weights")
        return ElSolution(
            weights=np.full(n, 1.0 / n),
            lagrange=np.zeros(m),
            theta=theta,
            objective=float(-n * np.log(n) - n * scad_value(theta[pen_mask], pen).sum()),
            converged=False,
            iterations=0,
            constraint_residual=float(np.max(np.abs(np.full(n, 1.0 / n) @ _moment_matrix(D, treat, theta)))),
        )
    obj, w, lam_dual, G = state
    trace = [obj]

    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        e = expit(D @ theta)
        ep = e * (1.0 - e)
        z = 1.0 + G @ lam_dual
        # envelope gradient of the profile EL term
        grad = D.T @ (ep * (D @ lam_dual) / z)
        J = -(D * ep[:, None]).T @ D / n
        V = G.T @ G / n
        V[np.diag_indices_from(V)] += 1e-10 * max(1.0, np.trace(V) / m)
        H = n * (J @ np.linalg.solve(V, J))
        ridge = np.zeros(m)
        ridge[pen_mask] = (
            n * scad_deriv(theta[pen_mask], pen) / (np.abs(theta[pen_mask]) + _LQA_EPS)
        )
        M = H + np.diag(ridge)
        M[np.diag_indices_from(M)] += 1e-10 * max(1.0, np.trace(np.abs(M)) / m)
        try:
            delta = np.linalg.solve(M, grad - ridge * theta)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(M, grad - ridge * theta, rcond=None)[0]

        accepted = None
        t = 1.0
        for _ in range(30):
            cand = theta + t * delta
            cand[pen_mask & (np.abs(cand) < HARD_ZERO)] = 0.0
            trial = evaluate(cand, lam_dual)
            if trial is not None and trial[0] >= obj - 1e-10:
                accepted = (cand, trial)
                break
            t *= 0.5
        if accepted is None:
            converged = True
            break
        cand, (obj_new, w, lam_dual, G) = accepted
        step_size = np.max(np.abs(cand - theta))
        theta, obj = cand, obj_new
        trace.append(obj)
        if step_size < outer_tol:
            converged = True
            break

    # cleanup sweep: coefficients below the outer resolution are set to
    # exact zero whenever that does not reduce the objective
    theta[pen_mask & (np.abs(theta) < HARD_ZERO)] = 0.0
    sweep_tol = max(10.0 * outer_tol, 1e-5)
    for j in np.flatnonzero(pen_mask & (np.abs(theta) > 0) & (np.abs(theta) < sweep_tol)):
        cand = theta.copy()
        cand[j] = 0.0
        trial = evaluate(cand, lam_dual)
        if trial is not None and trial[0] >= obj - 1e-10:
            theta = cand
            obj, w, lam_dual, G = trial
    final = evaluate(theta, lam_dual)
    if final is None:
        return ElSolution(
            weights=np.full(n, 1.0 / n),
            lagrange=np.zeros(m),
            theta=theta,
            objective=obj,
            converged=False,
            iterations=it,
            constraint_residual=float(
                np.max(np.abs(np.full(n, 1.0 / n) @ _moment_matrix(D, treat, theta)))
            ),
        )
    obj, w, lam_dual, G = final
    return ElSolution(
        weights=w,
        lagrange=lam_dual,
        theta=theta,
        objective=obj,
        converged=converged,
        iterations=it,
        constraint_residual=float(np.max(np.abs(w @ G))),
        objective_trace=tuple(trace),
    )


def default_lambda_grid(X, treat, n_points: int = 8, add_intercept: bool = True) -> np.ndarray:
    """Descending penalty grid from the maximal score at the null model."""
    D = _design(X, add_intercept)
    treat = np.asarray(treat, dtype=np.float64)
    base = treat.mean() if add_intercept else 0.5
    score = np.abs(D.T @ (treat - base)) / D.shape[0]
    if add_intercept:
        score = score[1:]
    lam_max = max(float(score.max()), 1e-4)
    return np.geomspace(lam_max, 0.02 * lam_max, n_points)


def logistic_loglik(theta, X, treat, add_intercept: bool = True) -> float:
    """Binomial log-likelihood of a coefficient vector."""
    D = _design(X, add_intercept)
    eta = D @ np.asarray(theta, dtype=np.float64)
    t = np.asarray(treat, dtype=np.float64)
    return float(np.sum(t * eta - np.logaddexp(0.0, eta)))


def fit_propensity_path(
    X,
    treat,
    lambda_grid=None,
    a: float = 3.7,
    add_intercept: bool = True,
    **fit_kwargs,
):
    """Fit the EL-CBPS propensity over a penalty grid, selecting by BIC.

    BIC(lam) = -2 * logistic loglik + log(n) * (number of nonzero slopes).
    Returns ``(best_solution, best_lambda, table)`` where the table rows
    are (lam, bic, df, converged). Ties resolve to the sparser (larger)
    penalty; the grid is traversed in descending order.
    """
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(X, treat, add_intercept=add_intercept)
    lambda_grid = np.sort(np.asarray(lambda_grid, dtype=np.float64))[::-1]
    n = np.atleast_2d(X).shape[0]
    theta_mle = fit_logistic_mle(X, treat, add_intercept=add_intercept)
    best = None
    table = []
    for lam in lambda_grid:
        sol = fit_propensity_el(
            X,
            treat,
            ScadPenalty(float(lam), a),
            add_intercept=add_intercept,
            theta0=theta_mle.copy(),
            **fit_kwargs,
        )
        slopes = sol.theta[1:] if add_intercept else sol.theta
        df = int(np.count_nonzero(slopes))
        bic = -2.0 * logistic_loglik(sol.theta, X, treat, add_intercept) + np.log(n) * df
        table.append((float(lam), float(bic), df, sol.converged))
        if best is None or bic < best[1]:
            best = (sol, bic, float(lam))
    return best[0], best[2], table


class CbpsPropensity(BaseEstimator):
    """Covariate-balancing propensity score via penalized empirical likelihood.

    Parameters
    ----------
    lam : "bic" to select the SCAD level by BIC over ``lambda_grid``
        (auto-generated when None), or a fixed nonnegative float.
    a : SCAD concavity parameter (> 2).
    add_intercept : prepend an unpenalized intercept column.
    max_outer, outer_tol, feas_tol : solver controls.

    After ``fit``: ``theta_`` (full coefficient vector), ``intercept_``,
    ``coef_``, ``solution_`` (:class:`ElSolution` on the training sample),
    ``lambda_``, and ``path_table_`` when BIC selection ran.
    """

    def __init__(
        self,
        lam="bic",
        a: float = 3.7,
        lambda_grid=None,
        add_intercept: bool = True,
        max_outer: int = 100,
        outer_tol: float = 1e-6,
        feas_tol: float = 1e-8,
    ):
        self.lam = lam
        self.a = a
        self.lambda_grid = lambda_grid
        self.add_intercept = add_intercept
        self.max_outer = max_outer
        self.outer_tol = outer_tol
        self.feas_tol = feas_tol

    def fit(self, X, treat):
        kwargs = dict(
            add_intercept=self.add_intercept,
            max_outer=self.max_outer,
            outer_tol=self.outer_tol,
            feas_tol=self.feas_tol,
        )
        if isinstance(self.lam, str):
            if self.lam != "bic":
                raise ValueError(f"unknown penalty selection rule {self.lam!r}")
            sol, lam, table = fit_propensity_path(
                X, treat, lambda_grid=self.lambda_grid, a=self.a, **kwargs
            )
            self.path_table_ = table
            self.lambda_ = lam
        else:
            sol = fit_propensity_el(X, treat, ScadPenalty(float(self.lam), self.a), **kwargs)
            self.path_table_ = None
            self.lambda_ = float(self.lam)
        self.solution_ = sol
        self.theta_ = sol.theta
        if self.add_intercept:
            self.intercept_ = float(sol.theta[0])
            self.coef_ = sol.theta[1:]
        else:
            self.intercept_ = 0.0
            self.coef_ = sol.theta
        self.converged_ = sol.converged
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Clipped propensity scores e(x) for covariate rows."""
        D = _design(X, self.add_intercept)
        return clipped_logistic(D @ self.theta_)

    def balance_weights(self, X, treat) -> ElSolution:
        """EL balance weights for a (possibly new) sample at the fitted theta.

        Falls back to uniform weights with a warning when the sample's
        moment constraints are infeasible; the returned solution is flagged
        ``converged=False`` in that case.
        """
        D = _design(X, self.add_intercept)
        t = np.asarray(treat, dtype=np.float64)
        G = _moment_matrix(D, t, self.theta_)
        n = D.shape[0]
        try:
            w, lam = solve_inner_weights(G, feas_tol=self.feas_tol)
            return ElSolution(
                weights=w,
                lagrange=lam,
                theta=self.theta_,
                objective=float(np.log(w).sum()),
                converged=True,
                iterations=0,
                constraint_residual=float(np.max(np.abs(w @ G))),
            )
        except InfeasibleConstraintsError:
            warnings.warn("balance weights infeasible on this sample; using uniform")
            w = np.full(n, 1.0 / n)
            return ElSolution(
                weights=w,
                lagrange=np.zeros(G.shape[1]),
                theta=self.theta_,
                objective=float(np.log(w).sum()),
                converged=False,
                iterations=0,
                constraint_residual=float(np.max(np.abs(w @ G))),
            )
