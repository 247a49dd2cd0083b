"""Sparse outcome regression with latent-state features.

Per-arm linear models are fitted by coordinate descent on

    0.5 * mean((y - b0 - F beta)^2) + sum_k P_scad(beta_k; lam2)

with an unpenalized intercept. Features are standardized internally
(mean zero, unit second moment) so every one-dimensional subproblem is
strictly convex and has the closed-form SCAD update; the penalty applies
on the standardized scale and coefficients are mapped back afterwards.
Zeros are exact: the thresholding update returns bitwise 0.0.

The feature map concatenates covariates, latent-state features (one-hot
states in hard mode, posterior rows in soft mode), and the time index.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .data import one_hot_states
from .errors import EstimationError
from .propensity import ScadPenalty, scad_value


def build_features(X, latent, t, n_states: int | None = None) -> np.ndarray:
    """Concatenate [covariates | state features | time index].

    ``latent`` is either a 1-D integer array of 1-based states (hard mode,
    one-hot encoded into ``n_states`` columns) or a 2-D array of posterior
    rows (soft mode, passed through). ``t`` is the 1-based time index, a
    scalar broadcast to all rows or a length-n array.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if latent is None:
        raise ValueError("latent-state information is required to build features")
    latent = np.asarray(latent)
    if latent.ndim == 1:
        if n_states is None:
            raise ValueError("hard-state features need an explicit n_states")
        state_block = one_hot_states(latent.astype(np.int64), n_states)
    elif latent.ndim == 2:
        state_block = np.asarray(latent, dtype=np.float64)
    else:
        raise ValueError("latent must be a state vector or a posterior matrix")
    if state_block.shape[0] != n:
        raise ValueError(
            f"latent rows ({state_block.shape[0]}) must match covariate rows ({n})"
        )
    t_col = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    return np.column_stack([X, state_block, t_col])


def _scad_update(u: float, lam: float, a: float) -> float:
    """Closed-form minimizer of 0.5*(b - u)^2 + P_scad(b) for unit curvature."""
    au = abs(u)
    if au <= lam:
        return 0.0
    if au <= 2.0 * lam:
        return np.sign(u) * (au - lam)
    if au <= a * lam:
        return np.sign(u) * ((a - 1.0) * au - a * lam) / (a - 2.0)
    return u


def scad_coordinate_descent(
    F: np.ndarray,
    y: np.ndarray,
    pen: ScadPenalty,
    max_sweeps: int = 2000,
    tol: float = 1e-10,
    check_monotone: bool = True,
):
    """Fit intercept + coefficients; returns (intercept, coef, n_sweeps).

    The objective 0.5*mean(residual^2) + penalty, evaluated on the
    standardized problem, is asserted non-increasing after every sweep.
    """
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, q = F.shape
    if n == 0:
        raise EstimationError("cannot fit a regression on an empty sample")
    if n != y.shape[0]:
        raise ValueError(f"feature rows ({n}) must match response length ({y.shape[0]})")
    if pen.lam == 0 and n <= q:
        warnings.warn("unpenalized fit with n <= q is rank deficient; solution not unique")

    mean = F.mean(axis=0)
    centered = F - mean
    scale = np.sqrt((centered**2).mean(axis=0))
    active = scale > 0
    scale_safe = np.where(active, scale, 1.0)
    Z = centered / scale_safe

    beta = np.zeros(q)
    b0 = float(y.mean())
    r = y - b0
    lam, a = pen.lam, pen.a
    obj = 0.5 * float(r @ r) / n + float(scad_value(beta, pen).sum())
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        delta_max = 0.0
        for j in range(q):
            if not active[j]:
                continue
            zj = Z[:, j]
            u = float(zj @ r) / n + beta[j]
            new = _scad_update(u, lam, a)
            if new != beta[j]:
                r -= (new - beta[j]) * zj
                delta_max = max(delta_max, abs(new - beta[j]))
                beta[j] = new
        shift = float(r.mean())
        if shift != 0.0:
            b0 += shift
            r -= shift
            delta_max = max(delta_max, abs(shift))
        if check_monotone:
            obj_new = 0.5 * float(r @ r) / n + float(scad_value(beta, pen).sum())
            if obj_new > obj + 1e-9 * max(1.0, abs(obj)):
                raise AssertionError(
                    f"coordinate descent objective increased: {obj} -> {obj_new}"
                )
            obj = obj_new
        if delta_max < tol:
            break

    coef = np.where(active, beta / scale_safe, 0.0)
    intercept = b0 - float(coef @ mean)
    return intercept, coef, sweeps


def fit_arm(
    features: np.ndarray,
    y: np.ndarray,
    arm_mask: np.ndarray,
    pen: ScadPenalty,
    max_sweeps: int = 2000,
    tol: float = 1e-10,
) -> np.ndarray:
    """SCAD-penalized fit on one treatment arm.

    Returns the coefficient vector with the unpenalized intercept in
    position 0. Raises :class:`EstimationError` on an empty arm.
    """
    arm_mask = np.asarray(arm_mask, dtype=bool)
    if not arm_mask.any():
        raise EstimationError("treatment arm is empty")
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))[arm_mask]
    yy = np.asarray(y, dtype=np.float64)[arm_mask]
    intercept, coef, _ = scad_coordinate_descent(
        F, yy, pen, max_sweeps=max_sweeps, tol=tol
    )
    return np.concatenate([[intercept], coef])


@dataclass(frozen=True)
class OutcomeFit:
    """Per-arm coefficient vectors (intercept first) and the penalty used."""

    beta0: np.ndarray
    beta1: np.ndarray
    feature_spec: str
    lambda2: float

    def __post_init__(self):
        b0 = np.asarray(self.beta0, dtype=np.float64)
        b1 = np.asarray(self.beta1, dtype=np.float64)
        if not (np.all(np.isfinite(b0)) and np.all(np.isfinite(b1))):
            raise ValueError("outcome coefficients must be finite")
        if b0.shape != b1.shape:
            raise ValueError("arm coefficient vectors must have equal length")
        b0.setflags(write=False)
        b1.setflags(write=False)
        object.__setattr__(self, "beta0", b0)
        object.__setattr__(self, "beta1", b1)


def predict(fit: OutcomeFit, features: np.ndarray, arm: int) -> np.ndarray:
    """Linear prediction with the requested arm's coefficients."""
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    coef = fit.beta1 if arm == 1 else fit.beta0
    if F.shape[1] != coef.shape[0] - 1:
        raise ValueError(
            f"features have {F.shape[1]} columns, fit expects {coef.shape[0] - 1}"
        )
    return coef[0] + F @ coef[1:]


def fit_outcome(
    features: np.ndarray,
    y: np.ndarray,
    treat: np.ndarray,
    pen: ScadPenalty,
    feature_spec: str = "",
    **cd_kwargs,
) -> OutcomeFit:
    """Fit both arms with the same penalty."""
    treat = np.asarray(treat)
    return OutcomeFit(
        beta0=fit_arm(features, y, treat == 0, pen, **cd_kwargs),
        beta1=fit_arm(features, y, treat == 1, pen, **cd_kwargs),
        feature_spec=feature_spec,
        lambda2=pen.lam,
    )


def default_lambda_grid(F: np.ndarray, y: np.ndarray, n_points: int = 8) -> np.ndarray:
    """Descending penalty grid from the maximal standardized correlation."""
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n = F.shape[0]
    centered = F - F.mean(axis=0)
    scale = np.sqrt((centered**2).mean(axis=0))
    scale[scale == 0] = 1.0
    r = y - y.mean()
    lam_max = max(float(np.max(np.abs(centered.T @ r / scale / n))), 1e-4)
    return np.geomspace(lam_max, 0.02 * lam_max, n_points)


class ScadLinear(BaseEstimator, RegressorMixin):
    """Linear regression with a SCAD penalty, fitted by coordinate descent.

    Parameters
    ----------
    lam : "bic" to pick the penalty level minimizing
        n*log(mean squared residual) + log(n)*df over ``lambda_grid``
        (auto-generated when None), or a fixed nonnegative float.
    a : SCAD concavity parameter.
    max_sweeps, tol : coordinate descent controls.
    """

    def __init__(self, lam="bic", a: float = 3.7, lambda_grid=None,
                 max_sweeps: int = 2000, tol: float = 1e-10):
        self.lam = lam
        self.a = a
        self.lambda_grid = lambda_grid
        self.max_sweeps = max_sweeps
        self.tol = tol

    def _fit_single(self, F, y, lam):
        pen = ScadPenalty(lam, self.a)
        intercept, coef, sweeps = scad_coordinate_descent(
            F, y, pen, max_sweeps=self.max_sweeps, tol=self.tol
        )
        return intercept, coef, sweeps

    def fit(self, X, y):
        F = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        n = F.shape[0]
        if isinstance(self.lam, str):
            if self.lam != "bic":
                raise ValueError(f"unknown penalty selection rule {self.lam!r}")
            grid = self.lambda_grid
            if grid is None:
                grid = default_lambda_grid(F, y)
            grid = np.sort(np.asarray(grid, dtype=np.float64))[::-1]
            best = None
            table = []
            for lam in grid:
                intercept, coef, _ = self._fit_single(F, y, float(lam))
                rss = float(np.sum((y - intercept - F @ coef) ** 2))
                df = int(np.count_nonzero(coef)) + 1
                bic = n * np.log(max(rss / n, 1e-300)) + np.log(n) * df
                table.append((float(lam), float(bic), df - 1))
                if best is None or bic < best[0]:
                    best = (bic, float(lam), intercept, coef)
            self.path_table_ = table
            _, self.lambda_, self.intercept_, self.coef_ = best
        else:
            self.lambda_ = float(self.lam)
            self.intercept_, self.coef_, _ = self._fit_single(F, y, self.lambda_)
            self.path_table_ = None
        return self

    def predict(self, X) -> np.ndarray:
        F = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.intercept_ + F @ self.coef_
