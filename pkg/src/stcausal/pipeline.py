"""Method pipelines for the benchmark harness.

The five methods share fitted stages within one replication:

* ``proposed``: residual HMM posteriors -> balanced sparse propensity ->
  sparse outcome regression with latent features -> EL-weighted AIPW on
  the held-out split; prediction error from the multi-graph convolutional
  predictor with latent features.
* ``ipw_only``: propensity side only (outcome model omitted); prediction
  error from the train-mean constant predictor.
* ``outcome_only``: regression side only with static (covariate + time)
  features and e fixed at 1/2, so the augmented formula reduces to the
  regression contrast plus centered inverse-weighted residuals;
  prediction error from the static linear model.
* ``cbps_scad_static``: balanced sparse propensity and static outcome
  regression, no latent-state machinery anywhere.
* ``mtgcn_only``: prediction error only (no effect estimate), graph
  predictor without latent features.

Latent features feeding the outcome regression are leave-one-out
posteriors (the time point's own observation is excluded, so the
regression features never encode their own target); next-step prediction
uses filtered posteriors (past and current observations only). EL balance
weights for the held-out sample are solved at the fitted coefficients,
falling back to uniform weights with a flag when infeasible.

Stage randomness derives from (master seed, replication, stage name), so
adding or removing methods never changes another method's results.
"""

import zlib

import numpy as np

from . import dr
from .config import ExperimentConfig
from .data import Dataset
from .elopt import CbpsPropensity
from .mtgcn import MtgcnRegressor, build_graphs
from .outcome import ScadLinear, build_features
from .hmm import GaussianHmm


def _stage_seed(master: int, rep: int, name: str) -> int:
    key = zlib.crc32(name.encode("utf-8"))
    return int(np.random.SeedSequence([master, rep, key]).generate_state(1)[0])


class ReplicationPipeline:
    """Lazily computed, shared fitting stages for one replication."""

    def __init__(self, train: Dataset, test: Dataset, cfg: ExperimentConfig, rep: int = 0):
        if train.horizon < 2:
            raise ValueError("pipelines need at least 2 time points")
        self.train = train
        self.test = test
        self.cfg = cfg
        self.rep = rep
        self._cache = {}

    def _get(self, name, builder):
        if name not in self._cache:
            self._cache[name] = builder()
        return self._cache[name]

    def _seed(self, name: str) -> int:
        return _stage_seed(self.cfg.seed, self.rep, name)

    # ----- shared stages -------------------------------------------------

    def residuals(self):
        """Outcome residuals after a pooled covariate+treatment fit."""

        def build():
            tr, te = self.train, self.test
            D = np.column_stack([np.ones(tr.n), tr.covariates, tr.treatment])
            coef, *_ = np.linalg.lstsq(D, tr.outcomes.mean(axis=1), rcond=None)
            De = np.column_stack([np.ones(te.n), te.covariates, te.treatment])
            return (
                tr.outcomes - (D @ coef)[:, None],
                te.outcomes - (De @ coef)[:, None],
            )

        return self._get("residuals", build)

    def hmm(self) -> GaussianHmm:
        def build():
            res_tr, _ = self.residuals()
            return GaussianHmm(n_states=self.cfg.dgp.n_states).fit(res_tr)

        return self._get("hmm", build)

    def posteriors(self):
        """dict with filtered and leave-one-out posteriors for both splits."""

        def build():
            res_tr, res_te = self.residuals()
            est = self.hmm()
            return {
                "train_filtered": est.filtered_proba(res_tr),
                "train_loo": est.loo_proba(res_tr),
                "test_filtered": est.filtered_proba(res_te),
                "test_loo": est.loo_proba(res_te),
            }

        return self._get("posteriors", build)

    def _propensity_design(self, ds: Dataset, which: str):
        X = ds.covariates
        if not self.cfg.propensity_use_latent:
            return X
        post = self.posteriors()[which]
        summary = post.mean(axis=1)[:, :-1]  # drop last state: rows sum to 1
        return np.column_stack([X, summary])

    def propensity(self) -> CbpsPropensity:
        def build():
            cfg = self.cfg
            est = CbpsPropensity(
                lam="bic",
                a=cfg.scad_a,
                lambda_grid=cfg.lambda_grid,
                max_outer=cfg.el_max_outer,
                outer_tol=cfg.el_outer_tol,
                feas_tol=cfg.el_feas_tol,
            )
            est.fit(self._propensity_design(self.train, "train_filtered"), self.train.treatment)
            return est

        return self._get("propensity", build)

    def test_weights(self):
        def build():
            return self.propensity().balance_weights(
                self._propensity_design(self.test, "test_filtered"), self.test.treatment
            )

        return self._get("test_weights", build)

    def e_test(self) -> np.ndarray:
        def build():
            return self.propensity().predict_proba(
                self._propensity_design(self.test, "test_filtered")
            )

        return self._get("e_test", build)

    def _pooled_outcome_fit(self, with_latent: bool):
        """Per-arm sparse fits on all (unit, time) training samples."""
        name = f"outcome_{'latent' if with_latent else 'static'}"

        def build():
            tr = self.train
            post = self.posteriors()["train_loo"] if with_latent else None
            blocks = []
            for ti in range(tr.horizon):
                if with_latent:
                    blocks.append(build_features(tr.covariates, post[:, ti], ti + 1))
                else:
                    blocks.append(
                        np.column_stack([tr.covariates, np.full(tr.n, float(ti + 1))])
                    )
            F = np.vstack(blocks)
            y = tr.outcomes.T.reshape(-1)
            arm = np.tile(tr.treatment, tr.horizon)
            fits = {}
            for a in (0, 1):
                est = ScadLinear(
                    lam="bic",
                    a=self.cfg.scad_a,
                    lambda_grid=self.cfg.lambda_grid,
                    max_sweeps=self.cfg.cd_max_sweeps,
                    tol=self.cfg.cd_tol,
                )
                fits[a] = est.fit(F[arm == a], y[arm == a])
            return fits

        return self._get(name, build)

    def _final_time_features(self, with_latent: bool) -> np.ndarray:
        te = self.test
        if with_latent:
            loo = self.posteriors()["test_loo"]
            return build_features(te.covariates, loo[:, te.horizon - 1], te.horizon)
        return np.column_stack([te.covariates, np.full(te.n, float(te.horizon))])

    def outcome_predictions(self, with_latent: bool):
        """(m0, m1) for the held-out units at the final time point."""
        fits = self._pooled_outcome_fit(with_latent)
        F = self._final_time_features(with_latent)
        return fits[0].predict(F), fits[1].predict(F)

    # ----- prediction-error stages ---------------------------------------

    def _next_step_arrays(self, ds: Dataset, filtered, with_latent: bool):
        """Stacked (signals, targets, strata) over transitions t -> t+1."""
        blocks, targets, strata = [], [], []
        for ti in range(ds.horizon - 1):
            if with_latent:
                sig = np.column_stack(
                    [ds.covariates, filtered[:, ti], ds.treatment.astype(np.float64)]
                )
                strata.append(np.argmax(filtered[:, ti], axis=1) + 1)
            else:
                sig = np.column_stack([ds.covariates, ds.treatment.astype(np.float64)])
                strata.append(ds.treatment)
            blocks.append(sig)
            targets.append(ds.outcomes[:, ti + 1])
        return np.vstack(blocks), np.concatenate(targets), np.concatenate(strata)

    def _mtgcn_pe(self, with_latent: bool) -> float:
        name = f"mtgcn_{'latent' if with_latent else 'plain'}"

        def build():
            cfg = self.cfg
            post = self.posteriors() if with_latent else None
            S_tr, y_tr, strata = self._next_step_arrays(
                self.train, post["train_filtered"] if with_latent else None, with_latent
            )
            S_te, y_te, _ = self._next_step_arrays(
                self.test, post["test_filtered"] if with_latent else None, with_latent
            )
            graphs = build_graphs(S_tr, strata=strata, threshold=cfg.corr_threshold)
            reg = MtgcnRegressor(
                hidden=cfg.mtgcn_hidden,
                n_layers=cfg.mtgcn_layers,
                epochs=cfg.mtgcn_epochs,
                lr=cfg.mtgcn_lr,
                seed=self._seed(name),
                check_gradients=cfg.mtgcn_grad_check,
            )
            reg.fit(S_tr, y_tr, graphs)
            return reg, float(reg.score_rmse(S_te, y_te))

        return self._get(name, build)[1]

    def _static_pe(self) -> float:
        def build():
            fits = self._pooled_outcome_fit(with_latent=False)
            te = self.test
            preds, targets = [], []
            for ti in range(te.horizon - 1):
                F = np.column_stack([te.covariates, np.full(te.n, float(ti + 2))])
                yhat = np.where(
                    te.treatment == 1, fits[1].predict(F), fits[0].predict(F)
                )
                preds.append(yhat)
                targets.append(te.outcomes[:, ti + 1])
            preds = np.concatenate(preds)
            targets = np.concatenate(targets)
            return float(np.sqrt(np.mean((preds - targets) ** 2)))

        return self._get("pe_static", build)

    def _const_pe(self) -> float:
        def build():
            y_train = self.train.outcomes[:, 1:].reshape(-1)
            y_test = self.test.outcomes[:, 1:].reshape(-1)
            return float(np.sqrt(np.mean((y_test - y_train.mean()) ** 2)))

        return self._get("pe_const", build)

    def _mtgcn_outcome_predictions(self):
        """Experimental: graph-predictor fitted values as the outcome model."""
        reg, _ = self._cache.get("mtgcn_latent") or (None, None)
        if reg is None:
            self._mtgcn_pe(with_latent=True)
            reg = self._cache["mtgcn_latent"][0]
        te = self.test
        filt = self.posteriors()["test_filtered"][:, te.horizon - 1]
        preds = {}
        for arm in (0, 1):
            sig = np.column_stack([te.covariates, filt, np.full(te.n, float(arm))])
            preds[arm] = reg.predict(sig)
        return preds[0], preds[1]

    # ----- method dispatch ------------------------------------------------

    def run(self, name: str):
        """Execute one method; returns (DrEstimate or None, pe or None)."""
        cfg = self.cfg
        te = self.test
        y_final = te.outcomes[:, -1]
        formula = cfg.estimator_formula
        if name == "proposed":
            if cfg.mtgcn_as_outcome:
                m0, m1 = self._mtgcn_outcome_predictions()
            else:
                m0, m1 = self.outcome_predictions(with_latent=True)
            est = dr.estimate_weighted(
                y_final, te.treatment, self.test_weights().weights,
                self.e_test(), m0, m1, formula=formula,
            )
            return est, self._mtgcn_pe(with_latent=True)
        if name == "ipw_only":
            est = dr.estimate_weighted(
                y_final, te.treatment, self.test_weights().weights,
                self.e_test(), None, None, formula=formula,
            )
            return est, self._const_pe()
        if name == "outcome_only":
            m0, m1 = self.outcome_predictions(with_latent=False)
            est = dr.estimate(y_final, te.treatment, None, m0, m1, formula=formula)
            return est, self._static_pe()
        if name == "cbps_scad_static":
            m0, m1 = self.outcome_predictions(with_latent=False)
            est = dr.estimate_weighted(
                y_final, te.treatment, self.test_weights().weights,
                self.e_test(), m0, m1, formula=formula,
            )
            return est, self._static_pe()
        if name == "mtgcn_only":
            return None, self._mtgcn_pe(with_latent=False)
        raise ValueError(f"unknown method {name!r}")


def method_pipeline(name: str, train: Dataset, test: Dataset, cfg: ExperimentConfig, rep: int = 0):
    """One-shot dispatch; see :class:`ReplicationPipeline` for stage reuse."""
    return ReplicationPipeline(train, test, cfg, rep=rep).run(name)
