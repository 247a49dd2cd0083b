"""Doubly robust average treatment effect estimation.

Two estimator formulas are available:

* ``"aipw"`` (default): the augmented form
  T(Y - m1)/e - (1-T)(Y - m0)/(1-e) + m1 - m0, consistent when either the
  propensity or the outcome model is correct.
* ``"paper"``: the plain inverse-weighted difference plus the regression
  contrast, T*Y/e - (1-T)*Y/(1-e) + m1 - m0. As written this combination
  is not doubly robust in general; it is kept for faithfulness and
  comparison.

Estimates carry per-unit influence values; standard errors use the
weighted sample standard deviation over the effective sample size and a
normal-quantile Wald interval. A percentile bootstrap is available as an
alternative interval for comparison.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import dgp as dgp_mod
from .propensity import clipped_logistic, fit_logistic_mle
from .validation import as_1d_float, as_binary, check_lengths, check_simplex

Z975 = float(norm.ppf(0.975))


@dataclass(frozen=True)
class DrEstimate:
    """Point estimate with Wald interval and component diagnostics."""

    tau_hat: float
    se: float
    ci_low: float
    ci_high: float
    ipw_part: float
    reg_part: float
    mode: str
    formula: str
    influence: np.ndarray = field(repr=False, default=None)


def standard_error(influence, weights=None) -> float:
    """Weighted sample sd of the influence values over sqrt(n_effective).

    With uniform weights this is the usual sd(ddof=1)/sqrt(n); in general
    the effective sample size is 1 / sum(w^2) for normalized weights.
    """
    phi = as_1d_float(influence, "influence")
    n = phi.shape[0]
    if n < 2:
        raise ValueError("standard error needs at least 2 observations")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = check_simplex(weights, "weights", tol=1e-8)
        check_lengths(phi, w, names=["influence", "weights"])
    if phi.max() == phi.min():
        return 0.0
    mean = float(w @ phi)
    wsq = float(w @ w)
    if wsq >= 1.0:  # single unit carries all mass
        return 0.0
    var = float(w @ (phi - mean) ** 2) / (1.0 - wsq)
    return float(np.sqrt(var * wsq))


def estimate_weighted(
    y,
    treat,
    weights,
    e_hat=None,
    m0_hat=None,
    m1_hat=None,
    formula: str = "aipw",
) -> DrEstimate:
    """Doubly robust estimate with observation weights summing to one."""
    y = as_1d_float(y, "y")
    t = as_binary(treat, "treat").astype(np.float64)
    n = y.shape[0]
    w = check_simplex(weights, "weights", tol=1e-8)
    check_lengths(y, t, w, names=["y", "treat", "weights"])

    if (m0_hat is None) != (m1_hat is None):
        raise ValueError("supply both m0_hat and m1_hat or neither")
    if e_hat is None and m0_hat is None:
        raise ValueError("at least one of the propensity/outcome components is required")
    if e_hat is not None and m0_hat is not None:
        mode = "both"
    elif e_hat is not None:
        mode = "propensity-only"
    else:
        mode = "outcome-only"

    e = np.full(n, 0.5) if e_hat is None else as_1d_float(e_hat, "e_hat")
    if np.any(e <= 0.0) or np.any(e >= 1.0):
        raise RuntimeError(
            "propensity scores outside (0,1) after clipping; this is a bug upstream"
        )
    m0 = np.zeros(n) if m0_hat is None else as_1d_float(m0_hat, "m0_hat")
    m1 = np.zeros(n) if m1_hat is None else as_1d_float(m1_hat, "m1_hat")
    check_lengths(y, e, m0, m1, names=["y", "e_hat", "m0_hat", "m1_hat"])

    if formula == "aipw":
        ipw_terms = t * (y - m1) / e - (1.0 - t) * (y - m0) / (1.0 - e)
    elif formula == "paper":
        ipw_terms = t * y / e - (1.0 - t) * y / (1.0 - e)
    else:
        raise ValueError(f"unknown formula {formula!r}")
    reg_terms = m1 - m0
    phi = ipw_terms + reg_terms

    tau = float(w @ phi)
    se = standard_error(phi, w)
    return DrEstimate(
        tau_hat=tau,
        se=se,
        ci_low=tau - Z975 * se,
        ci_high=tau + Z975 * se,
        ipw_part=float(w @ ipw_terms),
        reg_part=float(w @ reg_terms),
        mode=mode,
        formula=formula,
        influence=phi,
    )


def estimate(
    y, treat, e_hat=None, m0_hat=None, m1_hat=None, formula: str = "aipw"
) -> DrEstimate:
    """Unweighted (1/n) doubly robust estimate."""
    n = np.asarray(y).shape[0]
    return estimate_weighted(
        y, treat, np.full(n, 1.0 / n), e_hat, m0_hat, m1_hat, formula=formula
    )


def bootstrap_interval(
    y,
    treat,
    e_hat=None,
    m0_hat=None,
    m1_hat=None,
    weights=None,
    formula: str = "aipw",
    n_boot: int = 200,
    seed: int = 0,
):
    """Percentile bootstrap (resampling units) as an alternative interval.

    Returns (se, ci_low, ci_high). Weights, when given, are resampled with
    the units and renormalized.
    """
    y = as_1d_float(y, "y")
    n = y.shape[0]
    t = np.asarray(treat)
    rng = np.random.default_rng(seed)
    taus = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=np.float64)[idx]
            w = w / w.sum()
        taus[b] = estimate_weighted(
            y[idx],
            t[idx],
            w,
            None if e_hat is None else np.asarray(e_hat)[idx],
            None if m0_hat is None else np.asarray(m0_hat)[idx],
            None if m1_hat is None else np.asarray(m1_hat)[idx],
            formula=formula,
        ).tau_hat
    return (
        float(np.std(taus, ddof=1)),
        float(np.quantile(taus, 0.025)),
        float(np.quantile(taus, 0.975)),
    )


@dataclass(frozen=True)
class DrCheckReport:
    """Monte Carlo bias under deliberate nuisance misspecification."""

    which_wrong: str
    mean_bias: float
    taus: np.ndarray
    replications: int


def double_robustness_check(
    cfg,
    which_wrong: str,
    n_reps: int = 200,
    seed: int = 0,
    formula: str = "aipw",
) -> DrCheckReport:
    """Stress the estimator with one (or both) nuisance components broken.

    The wrong propensity is a logistic fit on row-permuted covariates
    (valid probabilities, unrelated to the true confounders); the wrong
    outcome model is intercept-only per arm. The other component uses the
    generator's analytic truth. Outcomes enter at the final time point.
    """
    if which_wrong not in ("propensity", "outcome", "both", "none"):
        raise ValueError(f"which_wrong must name a component, got {which_wrong!r}")
    taus = np.empty(n_reps)
    for r in range(n_reps):
        rep_seed = int(np.random.SeedSequence([seed, r]).generate_state(1)[0])
        ds = dgp_mod.generate(cfg.with_seed(rep_seed))
        X, t = ds.covariates, ds.treatment
        y = ds.outcomes[:, -1]
        rng = np.random.default_rng(rep_seed + 1)

        if which_wrong in ("propensity", "both"):
            perm = rng.permutation(ds.n)
            Xp = X[perm]
            coef = fit_logistic_mle(Xp, t)
            e = clipped_logistic(coef[0] + Xp @ coef[1:])
        else:
            e = np.clip(dgp_mod.true_propensity(cfg, X), 1e-6, 1.0 - 1e-6)

        if which_wrong in ("outcome", "both"):
            m0 = np.full(ds.n, y[t == 0].mean())
            m1 = np.full(ds.n, y[t == 1].mean())
        else:
            m0 = dgp_mod.oracle_outcome_mean(cfg, X, 0, ds.horizon)
            m1 = dgp_mod.oracle_outcome_mean(cfg, X, 1, ds.horizon)

        taus[r] = estimate(y, t, e, m0, m1, formula=formula).tau_hat
    return DrCheckReport(
        which_wrong=which_wrong,
        mean_bias=float(taus.mean() - cfg.treatment_effect),
        taus=taus,
        replications=n_reps,
    )
