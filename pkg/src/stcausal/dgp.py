"""Synthetic longitudinal cohort generator with known ground-truth ATE.

Covariates are block-correlated Gaussians; treatment follows a nonlinear
logistic mechanism (or an optional sparse linear one for variable
selection studies); latent health states evolve as a Markov chain; and
outcomes combine a latent-state effect, a sparse linear covariate effect,
a constant additive treatment effect, and Gaussian noise:

    Y_i(t) = gamma[Z_it] + x_i' beta + effect * T_i + noise.

The treatment effect is additive and constant, so the true ATE equals
``treatment_effect`` exactly for every configuration, giving estimator
tests a known target. Generation draws from a single seeded stream in a
fixed order (covariates, treatment, latent paths, outcome noise).
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import ConfigError
from .hmm import HmmModel, sample_paths


def default_beta(p: int, n_nonzero: int = 10) -> np.ndarray:
    """Sparse coefficient pattern: alternating +-1 on the first coordinates."""
    beta = np.zeros(p)
    k = min(n_nonzero, p)
    beta[:k] = [1.0 if j % 2 == 0 else -1.0 for j in range(k)]
    return beta


@dataclass(frozen=True)
class DgpConfig:
    """Full specification of the synthetic data-generating process."""

    n: int = 500
    p: int = 100
    horizon: int = 5
    n_states: int = 3
    block_size: int = 10
    within_block_rho: float = 0.5
    transition: np.ndarray = field(
        default_factory=lambda: np.array(
            [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]
        )
    )
    initial: np.ndarray = field(default_factory=lambda: np.full(3, 1.0 / 3.0))
    gamma: np.ndarray = field(default_factory=lambda: np.array([1.0, 2.0, 3.0]))
    beta: np.ndarray | None = None
    treatment_effect: float = 1.0
    noise_sd: float = 1.0
    treatment_mechanism: str = "nonlinear"
    theta: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.horizon < 1:
            raise ConfigError("n, p and horizon must be positive")
        if self.noise_sd <= 0:
            raise ConfigError(f"noise_sd must be positive, got {self.noise_sd}")
        if self.block_size < 1:
            raise ConfigError("block_size must be at least 1")
        bs = min(self.block_size, self.p)
        lo = -1.0 / (bs - 1) if bs > 1 else -1.0
        if not lo < self.within_block_rho < 1.0:
            raise ConfigError(
                f"within_block_rho={self.within_block_rho} gives a non-positive-"
                f"definite block covariance (needs rho in ({lo:.4g}, 1))"
            )
        A = np.asarray(self.transition, dtype=np.float64)
        pi = np.asarray(self.initial, dtype=np.float64)
        g = np.asarray(self.gamma, dtype=np.float64)
        K = self.n_states
        if A.shape != (K, K) or pi.shape != (K,) or g.shape != (K,):
            raise ConfigError("transition/initial/gamma shapes must match n_states")
        if np.any(A < 0) or np.max(np.abs(A.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigError("transition rows must be probability vectors")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ConfigError("initial must be a probability vector")
        b = self.beta
        b = default_beta(self.p) if b is None else np.asarray(b, dtype=np.float64)
        if b.shape != (self.p,):
            raise ConfigError(f"beta must have length p={self.p}")
        if self.treatment_mechanism not in ("nonlinear", "sparse_linear"):
            raise ConfigError(
                f"unknown treatment_mechanism {self.treatment_mechanism!r}"
            )
        th = self.theta
        if self.treatment_mechanism == "sparse_linear":
            th = default_beta(self.p) if th is None else np.asarray(th, dtype=np.float64)
            if th.shape != (self.p,):
                raise ConfigError(f"theta must have length p={self.p}")
        object.__setattr__(self, "transition", A)
        object.__setattr__(self, "initial", pi)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "theta", th)

    @property
    def hmm(self) -> HmmModel:
        """Latent chain packaged with the outcome-shift emission view."""
        return HmmModel(
            initial=self.initial,
            transition=self.transition,
            emit_mean=self.gamma,
            emit_sd=np.full(self.n_states, self.noise_sd),
        )

    def with_seed(self, seed: int) -> "DgpConfig":
        return replace(self, seed=int(seed))


def _block_cholesky(p: int, block_size: int, rho: float):
    """Cholesky factors of the equicorrelated blocks (last may be short)."""
    factors = {}
    sizes = []
    start = 0
    while start < p:
        m = min(block_size, p - start)
        sizes.append(m)
        if m not in factors:
            C = np.full((m, m), rho)
            np.fill_diagonal(C, 1.0)
            try:
                factors[m] = np.linalg.cholesky(C)
            except np.linalg.LinAlgError as exc:
                raise ConfigError(
                    f"block covariance not positive definite (rho={rho}, size={m})"
                ) from exc
        start += m
    return sizes, factors


def gen_covariates(cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with equicorrelated blocks on the diagonal."""
    sizes, factors = _block_cholesky(cfg.p, cfg.block_size, cfg.within_block_rho)
    Z = rng.standard_normal((cfg.n, cfg.p))
    X = np.empty_like(Z)
    start = 0
    for m in sizes:
        X[:, start:start + m] = Z[:, start:start + m] @ factors[m].T
        start += m
    return X


def treatment_index(cfg: DgpConfig, X: np.ndarray) -> np.ndarray:
    """Log-odds of treatment for each covariate row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if cfg.treatment_mechanism == "sparse_linear":
        return X @ cfg.theta
    if X.shape[1] < 3:
        raise ValueError("nonlinear treatment mechanism needs at least 3 covariates")
    return np.sin(X[:, 0]) + np.log(np.abs(X[:, 1]) + 1.0) + 0.5 * X[:, 2] ** 2


def true_propensity(cfg: DgpConfig, X: np.ndarray) -> np.ndarray:
    """Oracle treatment probabilities under the configured mechanism."""
    return expit(treatment_index(cfg, X))


def assign_treatment(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli draws from the nonlinear logistic mechanism.

    The log-odds are sin(x1) + log(|x2| + 1) + 0.5 * x3^2.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] < 3:
        raise ValueError("nonlinear treatment mechanism needs at least 3 covariates")
    h = np.sin(X[:, 0]) + np.log(np.abs(X[:, 1]) + 1.0) + 0.5 * X[:, 2] ** 2
    return (rng.random(X.shape[0]) < expit(h)).astype(np.int64)


def gen_outcomes(
    X: np.ndarray,
    z_paths: np.ndarray,
    treat: np.ndarray,
    cfg: DgpConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Outcome paths: latent-state effect + sparse linear term + effect + noise."""
    X = np.asarray(X, dtype=np.float64)
    z_paths = np.asarray(z_paths, dtype=np.int64)
    treat = np.asarray(treat, dtype=np.float64)
    n = X.shape[0]
    if z_paths.shape[0] != n or treat.shape[0] != n:
        raise ValueError("covariates, latent paths and treatment must agree on n")
    if z_paths.min() < 1 or z_paths.max() > cfg.n_states:
        raise ValueError(f"latent states must lie in 1..{cfg.n_states}")
    mean = (
        cfg.gamma[z_paths - 1]
        + (X @ cfg.beta)[:, None]
        + cfg.treatment_effect * treat[:, None]
    )
    return mean + rng.normal(0.0, cfg.noise_sd, size=z_paths.shape)


def generate(cfg: DgpConfig) -> Dataset:
    """Full synthetic cohort; deterministic given ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    X = gen_covariates(cfg, rng)
    if cfg.treatment_mechanism == "nonlinear":
        treat = assign_treatment(X, rng)
    else:
        treat = (rng.random(cfg.n) < true_propensity(cfg, X)).astype(np.int64)
    z_paths = sample_paths(cfg.hmm, cfg.n, cfg.horizon, rng)
    outcomes = gen_outcomes(X, z_paths, treat, cfg, rng)
    return Dataset(
        covariates=X,
        treatment=treat,
        outcomes=outcomes,
        latent_states=z_paths,
        true_ate=cfg.treatment_effect,
    )


def state_marginal(cfg: DgpConfig, time: int) -> np.ndarray:
    """Marginal latent-state distribution at a 1-based time index."""
    if time < 1:
        raise ValueError("time is 1-based")
    return cfg.initial @ np.linalg.matrix_power(cfg.transition, time - 1)


def oracle_outcome_mean(cfg: DgpConfig, X: np.ndarray, arm: int, time: int) -> np.ndarray:
    """E[Y(time) | X, T=arm], marginalizing the latent chain."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    latent_term = float(state_marginal(cfg, time) @ cfg.gamma)
    return latent_term + X @ cfg.beta + cfg.treatment_effect * float(arm)
