"""Discrete-state hidden Markov model with Gaussian emissions.

Provides path sampling for synthetic data generation, forward-backward
smoothing, Viterbi decoding, and Baum-Welch fitting. The recursions use
per-step scaling (normalized forward variables) rather than log-space so
that small instances can be compared exactly against brute-force path
enumeration; the log-likelihood is accumulated from the scale factors.

States are exposed 1-based ({1..K}) at the API boundary and handled
0-based internally. Fitted models are canonically relabeled by ascending
emission mean so that estimates are comparable across runs.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import EstimationError

_SD_FLOOR = 1e-3


@dataclass(frozen=True)
class HmmModel:
    """HMM parameters: initial distribution, transition matrix, emissions.

    ``initial`` is a length-K probability vector, ``transition`` a K x K
    row-stochastic matrix, and ``emit_mean`` / ``emit_sd`` the per-state
    Gaussian emission parameters.
    """

    initial: np.ndarray
    transition: np.ndarray
    emit_mean: np.ndarray
    emit_sd: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.initial, dtype=np.float64)
        A = np.asarray(self.transition, dtype=np.float64)
        mu = np.asarray(self.emit_mean, dtype=np.float64)
        sd = np.asarray(self.emit_sd, dtype=np.float64)
        K = pi.shape[0]
        if A.shape != (K, K):
            raise ValueError(f"transition must be {K}x{K}, got {A.shape}")
        if mu.shape != (K,) or sd.shape != (K,):
            raise ValueError("emission parameter lengths must match state count")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("initial must be a probability vector (sum 1 within 1e-12)")
        if np.any(A < 0) or np.max(np.abs(A.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if np.any(sd <= 0):
            raise ValueError("emission standard deviations must be positive")
        for arr in (pi, A, mu, sd):
            arr.setflags(write=False)
        object.__setattr__(self, "initial", pi)
        object.__setattr__(self, "transition", A)
        object.__setattr__(self, "emit_mean", mu)
        object.__setattr__(self, "emit_sd", sd)

    @property
    def n_states(self) -> int:
        return self.initial.shape[0]

    def relabeled_by_mean(self) -> "HmmModel":
        """Permute states so emission means are ascending."""
        order = np.argsort(self.emit_mean, kind="stable")
        return HmmModel(
            initial=self.initial[order],
            transition=self.transition[np.ix_(order, order)],
            emit_mean=self.emit_mean[order],
            emit_sd=self.emit_sd[order],
        )


@dataclass(frozen=True)
class Posterior:
    """Inference output for one observation sequence.

    ``smoothed[t, k]`` is P(Z_t = k | all observations); ``filtered[t, k]``
    conditions on observations up to t only. ``loglik`` is the log of the
    total observation probability.
    """

    smoothed: np.ndarray
    filtered: np.ndarray
    loglik: float


def sample_paths(model: HmmModel, n: int, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n latent state paths of the given length; 1-based states."""
    cum_pi = np.cumsum(model.initial)
    cum_A = np.cumsum(model.transition, axis=1)
    states = np.empty((n, horizon), dtype=np.int64)
    states[:, 0] = np.searchsorted(cum_pi, rng.random(n), side="right")
    for t in range(1, horizon):
        u = rng.random(n)
        rows = cum_A[states[:, t - 1]]
        states[:, t] = (u[:, None] >= rows).sum(axis=1)
    return np.minimum(states, model.n_states - 1) + 1


def gaussian_emission_probs(model: HmmModel, obs: np.ndarray) -> np.ndarray:
    """Emission densities b[..., k] = N(obs; mu_k, sd_k) for each state."""
    obs = np.asarray(obs, dtype=np.float64)
    z = (obs[..., None] - model.emit_mean) / model.emit_sd
    return np.exp(-0.5 * z * z) / (model.emit_sd * np.sqrt(2.0 * np.pi))


def _scaled_forward_backward(model, emis):
    """Batched scaled recursions. emis has shape (S, T, K)."""
    S, T, K = emis.shape
    alpha = np.empty((S, T, K))
    beta = np.empty((S, T, K))
    scale = np.empty((S, T))
    A = model.transition

    a = model.initial * emis[:, 0]
    scale[:, 0] = a.sum(axis=1)
    if np.any(scale[:, 0] <= 0):
        raise EstimationError("zero observation likelihood at t=1")
    alpha[:, 0] = a / scale[:, 0, None]
    for t in range(1, T):
        a = (alpha[:, t - 1] @ A) * emis[:, t]
        scale[:, t] = a.sum(axis=1)
        if np.any(scale[:, t] <= 0):
            raise EstimationError(f"zero observation likelihood at t={t + 1}")
        alpha[:, t] = a / scale[:, t, None]

    beta[:, T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[:, t] = (emis[:, t + 1] * beta[:, t + 1]) @ A.T / scale[:, t + 1, None]

    loglik = np.log(scale).sum(axis=1)
    return alpha, beta, scale, loglik


def forward_backward(model: HmmModel, obs: np.ndarray) -> Posterior:
    """Smoothed state marginals and log-likelihood for one sequence."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ValueError("obs must be a 1-D sequence")
    if not np.all(np.isfinite(obs)):
        raise ValueError("obs contains non-finite values")
    emis = gaussian_emission_probs(model, obs)[None]
    alpha, beta, _, loglik = _scaled_forward_backward(model, emis)
    gamma = alpha[0] * beta[0]
    gamma /= gamma.sum(axis=1, keepdims=True)
    return Posterior(smoothed=gamma, filtered=alpha[0], loglik=float(loglik[0]))


def smoothed_posteriors(model: HmmModel, obs_set: np.ndarray):
    """Batched inference over an (S, T) array of equal-length sequences.

    Returns (smoothed, filtered, loglik_per_sequence) with shapes
    (S, T, K), (S, T, K), (S,).
    """
    obs_set = np.asarray(obs_set, dtype=np.float64)
    emis = gaussian_emission_probs(model, obs_set)
    alpha, beta, _, loglik = _scaled_forward_backward(model, emis)
    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)
    return gamma, alpha, loglik


def leave_one_out_smoothed(model: HmmModel, obs_set: np.ndarray) -> np.ndarray:
    """P(Z_t = k | all observations except the one at t), batched.

    Obtained from one forward-backward pass: the forward side is replaced
    by its one-step prediction, which drops the emission at t.
    """
    obs_set = np.asarray(obs_set, dtype=np.float64)
    emis = gaussian_emission_probs(model, obs_set)
    alpha, beta, _, _ = _scaled_forward_backward(model, emis)
    S, T, K = emis.shape
    pred = np.empty_like(alpha)
    pred[:, 0] = model.initial
    pred[:, 1:] = np.einsum("stj,jk->stk", alpha[:, :-1], model.transition)
    loo = pred * beta
    loo /= loo.sum(axis=2, keepdims=True)
    return loo


def viterbi(model: HmmModel, obs: np.ndarray) -> np.ndarray:
    """Most probable state path (1-based); ties break to the lower index."""
    obs = np.asarray(obs, dtype=np.float64)
    if not np.all(np.isfinite(obs)):
        raise ValueError("obs contains non-finite values")
    with np.errstate(divide="ignore"):
        log_e = np.log(gaussian_emission_probs(model, obs))
        log_A = np.log(model.transition)
        log_pi = np.log(model.initial)
    T = obs.shape[0]
    K = model.n_states
    score = log_pi + log_e[0]
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        cand = score[:, None] + log_A
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(K)] + log_e[t]
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = int(np.argmax(score))
    for t in range(T - 2, -1, -1):
        path[t] = back[t + 1][path[t + 1]]
    return path + 1


def baum_welch(
    init: HmmModel,
    obs_set: np.ndarray,
    max_iter: int = 200,
    tol: float = 1e-8,
    return_trace: bool = False,
):
    """EM fit on a batch of equal-length sequences.

    Stops when the log-likelihood improves by less than ``tol`` or after
    ``max_iter`` EM steps. A state whose expected occupancy collapses is
    re-seeded deterministically: its emission mean is placed at
    ``mean(obs) + (k - (K-1)/2) * sd(obs)`` with sd reset to ``sd(obs)``,
    and the monotonicity baseline restarts from that event.
    """
    obs_set = np.asarray(obs_set, dtype=np.float64)
    if obs_set.ndim != 2 or obs_set.shape[0] == 0:
        raise ValueError("obs_set must be a nonempty (S, T) array")
    S, T = obs_set.shape
    K = init.n_states
    obs_mean = float(obs_set.mean())
    obs_sd = float(obs_set.std()) or 1.0

    pi, A = init.initial.copy(), init.transition.copy()
    mu, sd = init.emit_mean.copy(), init.emit_sd.copy()
    trace = []
    prev_ll = None

    for _ in range(max_iter + 1):
        model = HmmModel(pi, A, mu, sd)
        emis = gaussian_emission_probs(model, obs_set)
        alpha, beta, scale, ll_seq = _scaled_forward_backward(model, emis)
        ll = float(ll_seq.sum())
        trace.append(ll)
        if prev_ll is not None and ll - prev_ll < tol:
            break
        prev_ll = ll
        if len(trace) > max_iter:
            break

        gamma = alpha * beta
        gamma /= gamma.sum(axis=2, keepdims=True)
        # xi[j, k] summed over sequences and transitions
        eb = emis[:, 1:] * beta[:, 1:] / scale[:, 1:, None]
        xi = np.einsum("stj,stk->jk", alpha[:, :-1], eb) * A

        occ = gamma.sum(axis=(0, 1))
        starved = occ < 1e-10 * gamma.sum()
        pi = gamma[:, 0].sum(axis=0) / S
        denom = gamma[:, :-1].sum(axis=(0, 1))
        A = xi / np.where(denom > 0, denom, 1.0)[:, None]
        A[denom <= 0] = 1.0 / K
        A /= A.sum(axis=1, keepdims=True)
        w = np.where(occ > 0, occ, 1.0)
        mu = np.einsum("stk,st->k", gamma, obs_set) / w
        var = np.einsum("stk,stk->k", gamma, (obs_set[:, :, None] - mu) ** 2) / w
        sd = np.maximum(np.sqrt(var), _SD_FLOOR * obs_sd)

        if np.any(starved):
            for k in np.flatnonzero(starved):
                mu[k] = obs_mean + (k - (K - 1) / 2.0) * obs_sd
                sd[k] = obs_sd
            pi = np.maximum(pi, 1e-6)
            pi /= pi.sum()
            A = np.maximum(A, 1e-6)
            A /= A.sum(axis=1, keepdims=True)
            prev_ll = None

    fitted = HmmModel(pi, A, mu, sd).relabeled_by_mean()
    if return_trace:
        return fitted, trace
    return fitted


class GaussianHmm(BaseEstimator):
    """Estimator wrapper: Baum-Welch fit plus posterior/decoding queries.

    Parameters
    ----------
    n_states : number of latent states K.
    max_iter, tol : Baum-Welch stopping rule.

    The initial model is deterministic: emission means at the
    (k+1)/(K+1) quantiles of the pooled observations, pooled sd, uniform
    initial distribution, and a diagonally dominant transition matrix.
    """

    def __init__(self, n_states: int = 3, max_iter: int = 200, tol: float = 1e-8):
        self.n_states = n_states
        self.max_iter = max_iter
        self.tol = tol

    def _initial_model(self, obs_set: np.ndarray) -> HmmModel:
        K = self.n_states
        flat = np.asarray(obs_set, dtype=np.float64).ravel()
        mu = np.quantile(flat, [(k + 1) / (K + 1) for k in range(K)])
        if K > 1:
            # nudge apart in case of heavily tied quantiles
            spread = max(flat.std(), 1.0) * 1e-3
            mu = mu + spread * np.arange(K)
        sd = np.full(K, max(flat.std(), _SD_FLOOR))
        if K == 1:
            A = np.ones((1, 1))
        else:
            A = np.full((K, K), 0.4 / (K - 1))
            np.fill_diagonal(A, 0.6)
        return HmmModel(np.full(K, 1.0 / K), A, mu, sd)

    def fit(self, sequences: np.ndarray) -> "GaussianHmm":
        init = self._initial_model(sequences)
        self.model_, self.loglik_trace_ = baum_welch(
            init, sequences, max_iter=self.max_iter, tol=self.tol, return_trace=True
        )
        return self

    def predict_proba(self, sequences: np.ndarray) -> np.ndarray:
        """Smoothed posteriors, shape (S, T, K)."""
        gamma, _, _ = smoothed_posteriors(self.model_, sequences)
        return gamma

    def filtered_proba(self, sequences: np.ndarray) -> np.ndarray:
        """Filtered posteriors P(Z_t | obs up to t), shape (S, T, K)."""
        _, alpha, _ = smoothed_posteriors(self.model_, sequences)
        return alpha

    def loo_proba(self, sequences: np.ndarray) -> np.ndarray:
        """Posteriors excluding each time point's own observation."""
        return leave_one_out_smoothed(self.model_, sequences)

    def decode(self, sequences: np.ndarray) -> np.ndarray:
        """Viterbi paths, shape (S, T), 1-based states."""
        sequences = np.atleast_2d(np.asarray(sequences, dtype=np.float64))
        return np.stack([viterbi(self.model_, seq) for seq in sequences])

    def score(self, sequences: np.ndarray) -> float:
        """Total log-likelihood of the sequences under the fitted model."""
        _, _, ll = smoothed_posteriors(self.model_, sequences)
        return float(ll.sum())

    def sample(self, n: int, horizon: int, rng: np.random.Generator) -> np.ndarray:
        return sample_paths(self.model_, n, horizon, rng)
