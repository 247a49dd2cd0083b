"""Core data containers and the train/test split contract.

A :class:`Dataset` holds one longitudinal cohort: baseline covariates, a
binary treatment indicator, an outcome path per individual, and (for
synthetic cohorts) the latent state paths and the ground-truth average
treatment effect. Latent states are stored 1-based, matching the usual
{1, 2, 3} labelling; helper code converts to 0-based indices internally.

CSV layout
----------
``save_dataset`` writes two files:

* the main file, one row per (individual, time):
  ``id,t,T,Y`` plus a trailing ``Z`` column when latent states are known.
  ``id`` is 0-based, ``t`` is 1-based.
* a covariate sidecar next to it (suffix ``_covariates.csv``), one row per
  individual: ``id,x1,...,xp``.

The ground-truth ATE is experiment metadata, not part of the data files;
``load_dataset`` accepts it as an argument when known.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .validation import as_2d_float, as_binary


@dataclass(frozen=True)
class Dataset:
    """Immutable longitudinal cohort.

    Attributes
    ----------
    covariates : (n, p) float array of baseline covariates.
    treatment : (n,) int array with entries in {0, 1}.
    outcomes : (n, horizon) float array of outcomes over time.
    latent_states : optional (n, horizon) int array with entries in {1..K}.
    true_ate : optional ground-truth average treatment effect.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcomes: np.ndarray
    latent_states: np.ndarray | None = None
    true_ate: float | None = None

    def __post_init__(self):
        X = as_2d_float(self.covariates, "covariates")
        T = as_binary(self.treatment, "treatment")
        Y = as_2d_float(self.outcomes, "outcomes")
        if len(T) != X.shape[0] or Y.shape[0] != X.shape[0]:
            raise ValueError(
                "covariates, treatment and outcomes must agree on n; got "
                f"{X.shape[0]}, {len(T)}, {Y.shape[0]}"
            )
        Z = self.latent_states
        if Z is not None:
            Z = np.asarray(Z, dtype=np.int64)
            if Z.shape != Y.shape:
                raise ValueError(
                    f"latent_states shape {Z.shape} must match outcomes {Y.shape}"
                )
            if Z.min() < 1:
                raise ValueError("latent_states must be 1-based (entries >= 1)")
        for arr in (X, T, Y) + ((Z,) if Z is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "treatment", T)
        object.__setattr__(self, "outcomes", Y)
        object.__setattr__(self, "latent_states", Z)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def horizon(self) -> int:
        return self.outcomes.shape[1]

    def subset(self, ids) -> "Dataset":
        """Row-subset view (copies) keeping metadata."""
        ids = np.asarray(ids, dtype=np.int64)
        return Dataset(
            covariates=self.covariates[ids].copy(),
            treatment=self.treatment[ids].copy(),
            outcomes=self.outcomes[ids].copy(),
            latent_states=None if self.latent_states is None else self.latent_states[ids].copy(),
            true_ate=self.true_ate,
        )


@dataclass(frozen=True)
class SplitIndex:
    """Disjoint train/test index lists covering 0..n-1."""

    train_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.train_ids, dtype=np.int64)
        te = np.asarray(self.test_ids, dtype=np.int64)
        if np.intersect1d(tr, te).size:
            raise ValueError("train and test ids overlap")
        tr.setflags(write=False)
        te.setflags(write=False)
        object.__setattr__(self, "train_ids", tr)
        object.__setattr__(self, "test_ids", te)


def split(ds: Dataset, train_fraction: float = 0.7, seed: int = 0) -> SplitIndex:
    """Uniformly random train/test partition, deterministic given seed.

    The train side gets ``round(train_fraction * n)`` individuals. Raises
    ``ValueError`` when either side would be empty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = ds.n
    if n < 2:
        raise ValueError("need at least 2 individuals to split")
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"train_fraction={train_fraction} leaves an empty side for n={n}"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndex(
        train_ids=np.sort(perm[:n_train]),
        test_ids=np.sort(perm[n_train:]),
    )


def one_hot_state(z: int, n_states: int) -> np.ndarray:
    """One-hot encode a 1-based state index into a length-K 0/1 vector."""
    if not 1 <= z <= n_states:
        raise ValueError(f"state {z} outside 1..{n_states}")
    v = np.zeros(n_states)
    v[z - 1] = 1.0
    return v


def one_hot_states(z: np.ndarray, n_states: int) -> np.ndarray:
    """Vectorized one-hot encoding: (...,) int array -> (..., K) float array."""
    z = np.asarray(z, dtype=np.int64)
    if z.size and (z.min() < 1 or z.max() > n_states):
        raise ValueError(f"state entries outside 1..{n_states}")
    out = np.zeros(z.shape + (n_states,))
    np.put_along_axis(out, z[..., None] - 1, 1.0, axis=-1)
    return out


def _fmt(x) -> str:
    # repr round-trips floats exactly and is byte-stable across runs
    return repr(float(x))


def covariate_sidecar_path(path: str) -> str:
    base, ext = os.path.splitext(path)
    return f"{base}_covariates{ext or '.csv'}"


def save_dataset(ds: Dataset, path: str) -> None:
    """Write the long-format CSV and its covariate sidecar."""
    has_z = ds.latent_states is not None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "t", "T", "Y"] + (["Z"] if has_z else []))
        for i in range(ds.n):
            for t in range(ds.horizon):
                row = [i, t + 1, int(ds.treatment[i]), _fmt(ds.outcomes[i, t])]
                if has_z:
                    row.append(int(ds.latent_states[i, t]))
                writer.writerow(row)
    with open(covariate_sidecar_path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"x{j + 1}" for j in range(ds.p)])
        for i in range(ds.n):
            writer.writerow([i] + [_fmt(v) for v in ds.covariates[i]])


def load_dataset(path: str, true_ate: float | None = None) -> Dataset:
    """Read a dataset written by :func:`save_dataset`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["id", "t", "T", "Y"]:
            raise ValueError(f"unexpected columns {header!r} in {path}")
        has_z = len(header) > 4 and header[4] == "Z"
        rows = [row for row in reader if row]
    ids = np.array([int(r[0]) for r in rows])
    times = np.array([int(r[1]) for r in rows])
    n = ids.max() + 1
    horizon = times.max()
    treatment = np.zeros(n, dtype=np.int64)
    outcomes = np.zeros((n, horizon))
    latent = np.zeros((n, horizon), dtype=np.int64) if has_z else None
    for r in rows:
        i, t = int(r[0]), int(r[1]) - 1
        treatment[i] = int(r[2])
        outcomes[i, t] = float(r[3])
        if has_z:
            latent[i, t] = int(r[4])

    with open(covariate_sidecar_path(path), newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        cov_rows = sorted((int(r[0]), [float(v) for v in r[1:]]) for r in reader if r)
    covariates = np.array([vals for _, vals in cov_rows])

    return Dataset(
        covariates=covariates,
        treatment=treatment,
        outcomes=outcomes,
        latent_states=latent,
        true_ate=true_ate,
    )
