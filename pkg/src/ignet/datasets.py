"""Synthetic benchmarks, delimited-file ingestion, splitting and scaling."""

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ContractError, SchemaError

log = logging.getLogger(__name__)

CACHE_ENV = "IGN_CACHE_DIR"


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list = field(default_factory=list)
    task: str = "regression"
    target_name: str = "y"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise SchemaError(f"X {self.X.shape} and y {self.y.shape} do not match")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise SchemaError("dataset contains NaN or Inf")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    def subset(self, idx):
        return replace(self, X=self.X[idx], y=self.y[idx], feature_names=list(self.feature_names))


def cache_dir():
    """Directory for generated and downloaded data (``$IGN_CACHE_DIR`` overrides)."""
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "ignet")


# ---------------------------------------------------------------------------
# benchmark functions


def levy(X):
    X = np.atleast_2d(X)
    w = 1.0 + (X - 1.0) / 4.0
    head = np.sin(np.pi * w[:, 0]) ** 2
    mid = ((w[:, :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:, :-1] + 1.0) ** 2)).sum(axis=1)
    tail = (w[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[:, -1]) ** 2)
    return head + mid + tail


def griewank(X):
    X = np.atleast_2d(X)
    i = np.arange(1, X.shape[1] + 1)
    return (X ** 2).sum(axis=1) / 4000.0 - np.prod(np.cos(X / np.sqrt(i)), axis=1) + 1.0


BOREHOLE_RANGES = (
    ("rw", 0.05, 0.15),
    ("r", 100.0, 50000.0),
    ("Tu", 63070.0, 115600.0),
    ("Hu", 990.0, 1110.0),
    ("Tl", 63.1, 116.0),
    ("Hl", 700.0, 820.0),
    ("L", 1120.0, 1680.0),
    ("Kw", 9855.0, 12045.0),
)


def borehole(X):
    """Water flow rate (m^3/yr) through a borehole; columns as in BOREHOLE_RANGES."""
    rw, r, Tu, Hu, Tl, Hl, L, Kw = np.atleast_2d(X).T
    lnr = np.log(r / rw)
    return 2.0 * np.pi * Tu * (Hu - Hl) / (lnr * (1.0 + 2.0 * L * Tu / (lnr * rw ** 2 * Kw) + Tu / Tl))


def _noisy(f, noise_std, relative, rng):
    scale = noise_std * (np.std(f) if relative and f.size > 1 else 1.0)
    return f + scale * rng.standard_normal(f.shape)


def _check_n(n, dim=1):
    if n < 1 or dim < 1:
        raise ContractError(f"need n >= 1 and dim >= 1, got n={n}, dim={dim}")


def gen_levy(n, dim=4, noise_std=0.05, seed=0, relative_noise=True):
    """Levy function on [-10, 10]^dim plus Gaussian noise.

    With ``relative_noise`` (the default) the noise std is ``noise_std``
    times the sample std of the clean targets, i.e. noise in standardized
    units; otherwise it is absolute.
    """
    _check_n(n, dim)
    rng = np.random.default_rng(seed)
    X = rng.uniform(-10.0, 10.0, size=(n, dim))
    return Dataset(X, _noisy(levy(X), noise_std, relative_noise, rng), task="regression")


def gen_griewank(n, dim=4, noise_std=0.05, seed=0, relative_noise=True):
    _check_n(n, dim)
    rng = np.random.default_rng(seed)
    X = rng.uniform(-600.0, 600.0, size=(n, dim))
    return Dataset(X, _noisy(griewank(X), noise_std, relative_noise, rng), task="regression")


def gen_borehole(n, noise_std=0.05, seed=0, relative_noise=True):
    _check_n(n)
    rng = np.random.default_rng(seed)
    lo = np.array([b[1] for b in BOREHOLE_RANGES])
    hi = np.array([b[2] for b in BOREHOLE_RANGES])
    X = lo + (hi - lo) * rng.uniform(size=(n, len(BOREHOLE_RANGES)))
    return Dataset(
        X, _noisy(borehole(X), noise_std, relative_noise, rng),
        feature_names=[b[0] for b in BOREHOLE_RANGES], task="regression",
    )


def gen_sine(n, noise_std=0.1, seed=0, low=-5.0, high=5.0):
    """1-D ``y = sin(x) + noise`` toy regression."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    X = rng.uniform(low, high, size=(n, 1))
    return Dataset(X, np.sin(X[:, 0]) + noise_std * rng.standard_normal(n), task="regression")


def gen_blobs(n, n_classes=2, separation=3.0, dim=2, seed=0):
    """Isotropic unit-variance Gaussian blobs with centres ``separation`` apart.

    Centres sit on a circle (a line for two classes) so every pair is at
    least ``separation`` apart; labels are 0..n_classes-1.
    """
    _check_n(n, dim)
    if n_classes < 2:
        raise ContractError("need at least two classes")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    # chord between neighbours on a circle of radius R is 2 R sin(pi / C)
    radius = separation / (2.0 * math.sin(math.pi / n_classes))
    centres = np.zeros((n_classes, dim))
    centres[:, 0] = radius * np.cos(angles)
    if dim > 1:
        centres[:, 1] = radius * np.sin(angles)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    X = centres[labels] + rng.standard_normal((n, dim))
    return Dataset(X, labels.astype(np.float64), task="classification")


GENERATORS = {
    "levy": gen_levy,
    "griewank": gen_griewank,
    "borehole": gen_borehole,
    "sine": gen_sine,
    "blobs": gen_blobs,
}


# ---------------------------------------------------------------------------
# delimited files


def _resolve(path):
    path = Path(path)
    if not path.exists() and not path.is_absolute() and (cache_dir() / path).exists():
        return cache_dir() / path
    return path


def load_delimited(path, target_column, delimiter=",", task="regression"):
    """Read a headered delimited file; rows with non-numeric or empty cells are dropped.

    Returns:
        (Dataset, dropped_row_count)

    Raises:
        SchemaError: empty file or missing target column.
    """
    path = _resolve(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise SchemaError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if target_column not in header:
        raise SchemaError(f"{path}: target column {target_column!r} not in header {header}")
    t = header.index(target_column)
    values, dropped = [], 0
    for row in rows[1:]:
        try:
            if len(row) != len(header):
                raise ValueError("ragged row")
            vals = [float(c) for c in row]
            if not all(math.isfinite(v) for v in vals):
                raise ValueError("non-finite")
        except ValueError:
            dropped += 1
            continue
        values.append(vals)
    if dropped:
        log.warning("%s: dropped %d malformed row(s)", path, dropped)
    if not values:
        raise SchemaError(f"{path}: no numeric data rows")
    data = np.array(values, dtype=np.float64)
    features = [h for i, h in enumerate(header) if i != t]
    ds = Dataset(np.delete(data, t, axis=1), data[:, t], features, task, target_column)
    return ds, dropped


def save_delimited(dataset, path, delimiter=","):
    """Write features then target with a header; floats use round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow([*dataset.feature_names, dataset.target_name])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
    return path


# ---------------------------------------------------------------------------
# split and normalization


def split(dataset, train_fraction=0.6, seed=0):
    """Random partition into ``ceil(fraction * n)`` training rows and the rest."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if dataset.n < 2:
        raise ContractError("need at least two rows to split")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    n_train = min(max(math.ceil(train_fraction * dataset.n - 1e-9), 1), dataset.n - 1)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


@dataclass
class Normalizer:
    """Per-column standardization fitted on a training split."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0
    constant_columns: list = field(default_factory=list)
    scale_target: bool = True

    @classmethod
    def fit(cls, dataset, scale_target=None):
        if scale_target is None:
            scale_target = dataset.task == "regression"
        X = dataset.X
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        constant = [int(i) for i in np.flatnonzero(std <= 0.0)]
        if constant:
            log.warning("constant column(s) %s: std set to 1", constant)
        std = np.where(std > 0.0, std, 1.0)
        y_mean, y_std = 0.0, 1.0
        if scale_target:
            y_mean = float(dataset.y.mean())
            y_std = float(dataset.y.std()) or 1.0
        return cls(mean, std, y_mean, y_std, constant, scale_target)

    def transform_X(self, X):
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_std

    def inverse_X(self, Xn):
        return np.asarray(Xn) * self.x_std + self.x_mean

    def transform_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def inverse_y(self, yn):
        return np.asarray(yn) * self.y_std + self.y_mean

    def inverse_variance(self, var):
        return np.asarray(var) * self.y_std ** 2

    def apply(self, dataset):
        return replace(dataset, X=self.transform_X(dataset.X), y=self.transform_y(dataset.y),
                       feature_names=list(dataset.feature_names))

    def inverse(self, dataset):
        return replace(dataset, X=self.inverse_X(dataset.X), y=self.inverse_y(dataset.y),
                       feature_names=list(dataset.feature_names))

    def to_dict(self):
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "constant_columns": list(self.constant_columns),
            "scale_target": self.scale_target,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["x_mean"], dtype=np.float64), np.array(d["x_std"], dtype=np.float64),
                   float(d["y_mean"]), float(d["y_std"]), list(d.get("constant_columns", [])),
                   bool(d.get("scale_target", True)))


def fit_normalizer(train, scale_target=None):
    return Normalizer.fit(train, scale_target)


def apply(normalizer, dataset):
    return normalizer.apply(dataset)
