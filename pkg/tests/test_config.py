import numpy as np
import pytest

from stcausal.config import (
    ExperimentConfig,
    build_experiment_config,
    config_to_dict,
    load_config,
    parse_config_text,
    quick_config,
)
from stcausal.errors import ConfigError

SAMPLE = """
# benchmark settings
replications = 5
seed = 42
methods = proposed, ipw_only
lambda_grid = 0.05, 0.1, 0.2
mtgcn_epochs = 7
estimator_formula = paper

dgp.n = 80          # cohort size
dgp.p = 12
dgp.horizon = 3
dgp.gamma = 0.5, 1.5, 2.5
dgp.transition = 0.9,0.05,0.05; 0.05,0.9,0.05; 0.05,0.05,0.9
dgp.noise_sd = 0.7
dgp.treatment_mechanism = sparse_linear
"""


class TestParser:
    def test_scalars_vectors_matrices(self):
        entries = parse_config_text(SAMPLE)
        assert entries["replications"] == 5
        assert entries["estimator_formula"] == "paper"
        np.testing.assert_allclose(entries["lambda_grid"], [0.05, 0.1, 0.2])
        np.testing.assert_allclose(entries["dgp.gamma"], [0.5, 1.5, 2.5])
        assert entries["dgp.transition"].shape == (3, 3)
        assert entries["methods"] == ("proposed", "ipw_only")

    def test_comments_and_blanks_skipped(self):
        entries = parse_config_text("# only a comment\n\nseed = 1\n")
        assert entries == {"seed": 1}

    def test_bad_line_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("not a config line\n")

    def test_bools_and_none(self):
        entries = parse_config_text("mtgcn_grad_check = false\nlambda_grid = auto\n")
        assert entries["mtgcn_grad_check"] is False
        assert entries["lambda_grid"] is None


class TestBuildConfig:
    def test_full_build(self):
        cfg = build_experiment_config(parse_config_text(SAMPLE))
        assert cfg.replications == 5
        assert cfg.seed == 42
        assert cfg.methods == ("proposed", "ipw_only")
        assert cfg.lambda_grid == (0.05, 0.1, 0.2)
        assert cfg.estimator_formula == "paper"
        assert cfg.dgp.n == 80
        assert cfg.dgp.p == 12
        assert cfg.dgp.noise_sd == 0.7
        assert cfg.dgp.treatment_mechanism == "sparse_linear"
        np.testing.assert_allclose(cfg.dgp.transition.sum(axis=1), 1.0)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown config field"):
            build_experiment_config({"not_a_field": 1})
        with pytest.raises(ConfigError, match="unknown generator field"):
            build_experiment_config({"dgp.nope": 1})

    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigError, match="unknown methods"):
            build_experiment_config({"methods": ("nope",)})

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError, match="nonnegative"):
            build_experiment_config({"lambda_grid": (-0.1,)})

    def test_single_method_string(self):
        cfg = build_experiment_config({"methods": "ipw_only"})
        assert cfg.methods == ("ipw_only",)

    def test_replications_bound(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(replications=0)


class TestFilesAndPresets:
    def test_load_config_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(SAMPLE)
        cfg = load_config(str(path))
        assert cfg.dgp.horizon == 3

    def test_quick_preset_small(self):
        cfg = quick_config()
        assert cfg.dgp.n <= 100
        assert cfg.replications <= 5

    def test_config_echo_roundtrips(self):
        cfg = build_experiment_config(parse_config_text(SAMPLE))
        echo = config_to_dict(cfg)
        assert echo["replications"] == 5
        assert echo["dgp"]["n"] == 80
        assert echo["dgp"]["gamma"] == [0.5, 1.5, 2.5]
        # every default is overridable and echoed
        assert "mtgcn_epochs" in echo and echo["mtgcn_epochs"] == 7
