"""Experiment configuration: defaults, flat text config files, presets.

Config file grammar (documented for the CLI):

* one ``key = value`` pair per line; ``#`` starts a comment; blank lines
  are skipped;
* scalars are parsed as int, float, or bool (``true``/``false``) when
  possible, otherwise kept as strings;
* vectors are comma-separated numbers, optionally in brackets:
  ``gamma = 1.0, 2.0, 3.0``;
* matrices are semicolon-separated rows of comma-separated numbers:
  ``transition = 0.8,0.1,0.1; 0.1,0.8,0.1; 0.1,0.1,0.8``;
* generator fields use the ``dgp.`` prefix (``dgp.n = 500``); all other
  keys configure the experiment/solvers (see ExperimentConfig fields);
* method lists are comma-separated names: ``methods = proposed, ipw_only``.

Every generator default is overridable.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .dgp import DgpConfig
from .errors import ConfigError

METHOD_NAMES = ("proposed", "ipw_only", "outcome_only", "cbps_scad_static", "mtgcn_only")


@dataclass(frozen=True)
class ExperimentConfig:
    """Benchmark run settings: DGP, methods, replication count, solvers."""

    dgp: DgpConfig = field(default_factory=DgpConfig)
    methods: tuple = METHOD_NAMES
    replications: int = 100
    seed: int = 0
    train_fraction: float = 0.7
    output_dir: str = "results"
    workers: int = 1
    lambda_grid: tuple | None = None  # None -> data-driven grid, both penalties
    estimator_formula: str = "aipw"
    propensity_use_latent: bool = False
    mtgcn_as_outcome: bool = False  # experimental: MTGCN fitted values as m_t
    el_max_outer: int = 100
    el_outer_tol: float = 1e-6
    el_feas_tol: float = 1e-8
    cd_max_sweeps: int = 2000
    cd_tol: float = 1e-8
    mtgcn_hidden: int = 16
    mtgcn_layers: int = 2
    mtgcn_epochs: int = 150
    mtgcn_lr: float = 0.2
    mtgcn_grad_check: bool = True
    corr_threshold: float = 0.2
    scad_a: float = 3.7

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        unknown = [m for m in self.methods if m not in METHOD_NAMES]
        if unknown:
            raise ConfigError(
                f"unknown methods {unknown}; supported: {list(METHOD_NAMES)}"
            )
        if self.lambda_grid is not None and any(v < 0 for v in self.lambda_grid):
            raise ConfigError("lambda_grid entries must be nonnegative")
        if self.estimator_formula not in ("aipw", "paper"):
            raise ConfigError(f"unknown estimator_formula {self.estimator_formula!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.lambda_grid is not None:
            object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))


def quick_config(**overrides) -> ExperimentConfig:
    """Tiny preset for CI smoke runs (seconds, all machinery exercised)."""
    dgp = DgpConfig(n=60, p=8, horizon=4, block_size=4, seed=0)
    base = dict(
        dgp=dgp,
        replications=2,
        mtgcn_epochs=20,
        el_max_outer=30,
        cd_max_sweeps=500,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def _parse_scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", "auto"):
        return None
    for caster in (int, float):
        try:
            return caster(text)
        except ValueError:
            continue
    return text


def _parse_value(text: str):
    text = text.strip().strip("[]")
    if ";" in text:
        return np.array(
            [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
        )
    if "," in text:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        try:
            return np.array([float(p) for p in parts])
        except ValueError:
            return tuple(parts)  # list of names
    return _parse_scalar(text)


def parse_config_text(text: str) -> dict:
    """Parse the flat grammar into a {key: value} dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = _parse_value(value)
    return out


_DGP_INT_FIELDS = {"n", "p", "horizon", "n_states", "block_size", "seed"}


def build_experiment_config(entries: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply parsed config entries on top of defaults (or a base config)."""
    base = base or ExperimentConfig()
    dgp_kwargs = {}
    exp_kwargs = {}
    dgp_field_names = {f.name for f in fields(DgpConfig)}
    exp_field_names = {f.name for f in fields(ExperimentConfig)}
    for key, value in entries.items():
        if key.startswith("dgp."):
            name = key[4:]
            if name not in dgp_field_names:
                raise ConfigError(f"unknown generator field {name!r}")
            if name in _DGP_INT_FIELDS and value is not None:
                value = int(value)
            dgp_kwargs[name] = value
        else:
            if key == "dgp":
                raise ConfigError("generator fields use the dgp. prefix")
            if key not in exp_field_names:
                raise ConfigError(f"unknown config field {key!r}")
            if key == "methods" and isinstance(value, str):
                value = (value,)
            if key == "lambda_grid" and isinstance(value, (int, float)):
                value = (float(value),)
            if key == "lambda_grid" and isinstance(value, np.ndarray):
                value = tuple(float(v) for v in value)
            exp_kwargs[key] = value
    if "p" in dgp_kwargs:
        # dimension change invalidates materialized coefficient patterns
        dgp_kwargs.setdefault("beta", None)
        dgp_kwargs.setdefault("theta", None)
    if "n_states" in dgp_kwargs and dgp_kwargs["n_states"] != base.dgp.n_states:
        K = dgp_kwargs["n_states"]
        A = np.full((K, K), 0.2 / (K - 1)) if K > 1 else np.ones((1, 1))
        np.fill_diagonal(A, 0.8 if K > 1 else 1.0)
        dgp_kwargs.setdefault("transition", A)
        dgp_kwargs.setdefault("initial", np.full(K, 1.0 / K))
        dgp_kwargs.setdefault("gamma", np.arange(1.0, K + 1.0))
    dgp = replace(base.dgp, **dgp_kwargs) if dgp_kwargs else base.dgp
    return replace(base, dgp=dgp, **exp_kwargs)


def load_config(path: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return build_experiment_config(parse_config_text(fh.read()), base=base)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """JSON-friendly echo of the full resolved configuration."""
    def convert(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, tuple):
            return list(v)
        return v

    dgp = {f.name: convert(getattr(cfg.dgp, f.name)) for f in fields(DgpConfig)}
    out = {f.name: convert(getattr(cfg, f.name)) for f in fields(ExperimentConfig) if f.name != "dgp"}
    out["dgp"] = dgp
    return out
