"""Evaluation metrics, the inducing-count ablation and inducing-point inspection."""

import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .classification import predict_proba, to_pm1
from .exceptions import ContractError, IgnError
from .kernels import kernel_matrix
from .model import embed, initialize
from .regression import predict
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

DEFAULT_M_GRID = (4, 8, 16, 32, 64, 128, 256)


def _pair(pred, truth):
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ContractError(f"length mismatch: {pred.size} predictions, {truth.size} targets")
    if pred.size < 1:
        raise ContractError("need at least one prediction")
    return pred, truth


def rmse(pred, truth):
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred.astype(np.float64) - truth) ** 2)))


def accuracy(pred_labels, truth_labels):
    pred, truth = _pair(pred_labels, truth_labels)
    return float(np.mean(pred == truth))


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationCell:
    m: int
    seed: int
    mean_variance: float = float("nan")
    metric: float = float("nan")
    error: str = ""

    @property
    def ok(self):
        return not self.error


@dataclass
class AblationResult:
    """Mean noise-free test variance per inducing count, aggregated over seeds."""

    task: str
    m_grid: list
    seeds: list
    metric_name: str
    cells: list = field(default_factory=list)

    @property
    def repeats(self):
        return len(self.seeds)

    def rows(self):
        out = []
        for m in self.m_grid:
            good = [c for c in self.cells if c.m == m and c.ok]
            var = np.array([c.mean_variance for c in good])
            met = np.array([c.metric for c in good])
            out.append({
                "m": m,
                "mean_var": float(var.mean()) if good else float("nan"),
                "std_var": float(var.std()) if good else float("nan"),
                self.metric_name: float(met.mean()) if good else float("nan"),
                "failed": sum(1 for c in self.cells if c.m == m and not c.ok),
            })
        return out

    def mean_variances(self):
        return [r["mean_var"] for r in self.rows()]

    def to_dict(self):
        return {
            "task": self.task,
            "m_grid": list(self.m_grid),
            "seeds": list(self.seeds),
            "repeats": self.repeats,
            "metric": self.metric_name,
            "rows": self.rows(),
            "cells": [asdict(c) for c in self.cells],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        head = f"{'m':>6} {'mean_var':>10} {'std_var':>10} {self.metric_name:>10} {'failed':>6}"
        lines = [head, "-" * len(head)]
        for r in self.rows():
            lines.append(f"{r['m']:>6d} {r['mean_var']:>10.4f} {r['std_var']:>10.4f} "
                         f"{r[self.metric_name]:>10.4f} {r['failed']:>6d}")
        return "\n".join(lines)

    def plot_data(self, delimiter=","):
        buf = io.StringIO()
        buf.write(delimiter.join(("m", "mean_var", "std_var")) + "\n")
        for r in self.rows():
            buf.write(delimiter.join((str(r["m"]), repr(r["mean_var"]), repr(r["std_var"]))) + "\n")
        return buf.getvalue()


def trend_violations(values, tolerance=0.05):
    """Adjacent increases in ``values``, split into small (within relative ``tolerance``) and large."""
    small, large = [], []
    for i in range(1, len(values)):
        prev, cur = values[i - 1], values[i]
        if cur > prev:
            (small if cur <= prev * (1.0 + tolerance) else large).append(i)
    return small, large


def is_decreasing_trend(values, tolerance=0.05, allowed=1):
    """Non-increasing up to ``allowed`` adjacent rises of at most ``tolerance`` relative."""
    small, large = trend_violations(values, tolerance)
    return not large and len(small) <= allowed


def _run_cell(task, train_set, test_set, m, seed, model_config, train_config):
    cell = AblationCell(m, seed)
    try:
        cfg = replace(model_config, n_inducing=m)
        params = initialize(cfg, train_set.X, seed)
        y = train_set.y if task == "regression" else to_pm1(train_set.y)
        params, _ = train(task, params, (train_set.X, y), replace(train_config, seed=seed))
        dist = predict(params, test_set.X, want="diag", include_noise=False)
        cell.mean_variance = float(dist.variance.mean())
        if task == "regression":
            cell.metric = rmse(dist.mean, test_set.y)
        else:
            labels = (predict_proba(params, test_set.X) > 0.5).astype(float)
            cell.metric = accuracy(labels, (to_pm1(test_set.y) > 0).astype(float))
    except IgnError as exc:
        log.warning("ablation cell m=%d seed=%d failed: %s", m, seed, exc)
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def ablate(task, train_set, test_set, model_config, m_grid=DEFAULT_M_GRID, repeats=3,
           train_config=None, jobs=1, seeds=None):
    """Train a fresh model per (m, seed) and record the mean test variance.

    Args:
        task: "regression" or "binary-classification".
        train_set, test_set: normalized Datasets.
        model_config: ModelConfig whose ``n_inducing`` is overridden per cell.
        m_grid: strictly ascending inducing counts.
        repeats: seeds 0..repeats-1 unless ``seeds`` is given.
        train_config: TrainConfig; its seed is replaced per cell.
        jobs: worker threads; each cell is deterministic on its own.

    Returns:
        AblationResult. Failed cells are recorded, not raised.
    """
    m_grid = [int(m) for m in m_grid]
    if not m_grid:
        raise ContractError("m_grid must not be empty")
    if any(b <= a for a, b in zip(m_grid, m_grid[1:])) or m_grid[0] < 1:
        raise ContractError(f"m_grid must be positive and strictly ascending, got {m_grid}")
    seeds = list(range(repeats)) if seeds is None else [int(s) for s in seeds]
    if not seeds:
        raise ContractError("need at least one repeat")
    train_config = train_config or TrainConfig()
    jobs_list = [(m, s) for m in m_grid for s in seeds]

    def run(job):
        return _run_cell(task, train_set, test_set, job[0], job[1], model_config, train_config)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(run, jobs_list))
    else:
        cells = [run(j) for j in jobs_list]
    metric = "rmse" if task == "regression" else "accuracy"
    return AblationResult(task, m_grid, seeds, metric, cells)


# ---------------------------------------------------------------------------
# inspection


@dataclass
class ExemplarReport:
    """Row ``j`` lists the training rows closest to inducing point ``j``."""

    indices: np.ndarray  # (m, k)
    kernel_values: np.ndarray  # (m, k)

    def to_dict(self):
        return {
            "indices": self.indices.tolist(),
            "kernel_values": self.kernel_values.tolist(),
        }


def nearest_exemplars(params, X, k=1):
    """Training rows ranked by kernel similarity to each inducing point.

    RBF neighbours are ranked by squared feature distance (the same order
    as the kernel, without underflow ties); dot-product neighbours by kernel
    value. Ties go to the lower row index.
    """
    X = getattr(X, "X", X)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"k must lie in 1..{n}, got {k}")
    F = embed(params.feature_map, X)
    K = kernel_matrix(params.kernel, params.Z, F, np.array([[params.log_gamma]]))
    if params.kernel.kind == "rbf":
        D = ((params.Z[:, None, :] - F[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(D, axis=1, kind="stable")[:, :k]
    else:
        order = np.argsort(-K, axis=1, kind="stable")[:, :k]
    return ExemplarReport(order, np.take_along_axis(K, order, axis=1))


def mean_variance_scatter(params, X):
    """(p, 2) array of predictive mean and noise-free variance per row of ``X``."""
    X = getattr(X, "X", X)
    dist = predict(params, X, want="diag", include_noise=False)
    return np.column_stack([dist.mean, dist.variance])


def scatter_text(pairs, delimiter=","):
    lines = [delimiter.join(("mean", "variance"))]
    lines += [delimiter.join((repr(float(m)), repr(float(v)))) for m, v in pairs]
    return "\n".join(lines) + "\n"
