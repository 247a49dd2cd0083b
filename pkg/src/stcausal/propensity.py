"""Propensity score primitives: SCAD penalty, logistic score, balance moments.

The SCAD penalty is defined through its derivative

    P'(x; lam) = lam                        for |x| <= lam
               = (a*lam - |x|) / (a - 1)    for lam < |x| <= a*lam
               = 0                          for |x| > a*lam,   a > 2

and the value function is its integral from zero, so P(0) = 0, P is even,
and P saturates at lam^2 * (a + 1) / 2.

Propensity scores are clipped into [EPS_CLIP, 1 - EPS_CLIP] so that inverse
weighting stays bounded.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import EstimationError

EPS_CLIP = 1e-6


@dataclass(frozen=True)
class ScadPenalty:
    """Penalty level ``lam`` >= 0 and concavity knob ``a`` > 2 (default 3.7)."""

    lam: float
    a: float = 3.7

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.a <= 2:
            raise ValueError(f"a must exceed 2, got {self.a}")


def scad_deriv(x, pen: ScadPenalty):
    """Derivative of the SCAD penalty with respect to |x| (vectorized)."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    lam, a = pen.lam, pen.a
    return np.where(
        ax <= lam,
        lam,
        np.where(ax <= a * lam, (a * lam - ax) / (a - 1.0), 0.0),
    )


def scad_value(x, pen: ScadPenalty):
    """SCAD penalty value, the integral of :func:`scad_deriv` from zero."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    lam, a = pen.lam, pen.a
    mid = (2.0 * a * lam * ax - ax * ax - lam * lam) / (2.0 * (a - 1.0))
    return np.where(
        ax <= lam,
        lam * ax,
        np.where(ax <= a * lam, mid, lam * lam * (a + 1.0) / 2.0),
    )


@dataclass(frozen=True)
class PropensityModel:
    """Logistic propensity model holding the coefficient vector.

    ``coef[0]`` is the unpenalized intercept when the model was fitted with
    one; ``score`` then expects raw covariate rows and prepends the constant.
    """

    coef: np.ndarray
    has_intercept: bool = True

    def __post_init__(self):
        c = np.asarray(self.coef, dtype=np.float64)
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coef", c)

    def design(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.has_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
        if X.shape[1] != self.coef.shape[0]:
            raise ValueError(
                f"design has {X.shape[1]} columns, model expects {self.coef.shape[0]}"
            )
        return X

    def score(self, X: np.ndarray) -> np.ndarray:
        """Clipped propensity scores e(x) for covariate rows."""
        return clipped_logistic(self.design(X) @ self.coef)

    def moment(self, X: np.ndarray, treat: np.ndarray) -> np.ndarray:
        """CBPS balance moments (T - e(x)) * x, one row per observation."""
        D = self.design(X)
        e = clipped_logistic(D @ self.coef)
        return (np.asarray(treat, dtype=np.float64) - e)[:, None] * D


def clipped_logistic(index) -> np.ndarray:
    """Logistic function clamped into [EPS_CLIP, 1 - EPS_CLIP]."""
    return np.clip(expit(np.asarray(index, dtype=np.float64)), EPS_CLIP, 1.0 - EPS_CLIP)


def cbps_moment(coef: np.ndarray, x: np.ndarray, t) -> np.ndarray:
    """Balance moment (t - e(x)) * x for one observation or a batch."""
    x = np.asarray(x, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != coef.shape[0]:
            raise ValueError(f"x has length {x.shape[0]}, coef {coef.shape[0]}")
        return (float(t) - clipped_logistic(x @ coef)) * x
    if x.shape[1] != coef.shape[0]:
        raise ValueError(f"x has {x.shape[1]} columns, coef {coef.shape[0]}")
    e = clipped_logistic(x @ coef)
    return (np.asarray(t, dtype=np.float64) - e)[:, None] * x


def fit_logistic_mle(
    X: np.ndarray,
    y: np.ndarray,
    add_intercept: bool = True,
    max_iter: int = 100,
    grad_tol: float = 1e-12,
    ridge: float = 1e-10,
) -> np.ndarray:
    """Unpenalized logistic MLE by damped Newton (IRLS).

    Returns the coefficient vector (intercept first when requested). A tiny
    ridge keeps the Hessian invertible; the gradient tolerance is per
    observation so the score equation holds to near machine precision,
    which downstream empirical-likelihood code relies on.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    D = np.column_stack([np.ones(X.shape[0]), X]) if add_intercept else X
    n, m = D.shape
    coef = np.zeros(m)
    for _ in range(max_iter):
        e = expit(D @ coef)
        grad = D.T @ (y - e)
        if np.max(np.abs(grad)) < grad_tol * n:
            break
        w = np.maximum(e * (1.0 - e), 1e-12)
        H = (D * w[:, None]).T @ D
        H[np.diag_indices_from(H)] += ridge
        step = np.linalg.solve(H, grad)
        # dampen huge steps from near-separable data
        norm = np.max(np.abs(step))
        if norm > 10.0:
            step *= 10.0 / norm
        coef = coef + step
    if not np.all(np.isfinite(coef)):
        raise EstimationError("logistic MLE diverged")
    return coef
