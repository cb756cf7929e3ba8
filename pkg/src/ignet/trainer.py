"""Mini-batch Adam training of the joint objective."""

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import linalg
from .classification import laplace_log_marginal
from .exceptions import ContractError, NotPositiveDefiniteError, NumericalFailure, TrainingDiverged
from .model import GROUPS
from .regression import nll_loss
from .seeding import substream

log = logging.getLogger(__name__)

TASKS = ("regression", "binary-classification")
LOSS_SCALINGS = ("per-batch", "n-over-b")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 128
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_scaling: str = "per-batch"
    frozen: tuple = ()
    newton_t_max: int = 50
    newton_tol: float = 1e-8
    checkpoint_every: int = 0
    max_consecutive_failures: int = 3
    jitter_floor: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "frozen", tuple(sorted(set(self.frozen))))
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ContractError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.loss_scaling not in LOSS_SCALINGS:
            raise ContractError(f"loss_scaling must be one of {LOSS_SCALINGS}")
        bad = set(self.frozen) - set(GROUPS)
        if bad:
            raise ContractError(f"unknown frozen groups {sorted(bad)}; choose from {GROUPS}")

    def to_dict(self):
        d = asdict(self)
        d["frozen"] = list(self.frozen)
        return d


@dataclass
class TrainReport:
    loss_trace: list = field(default_factory=list)
    wall_clock: float = 0.0
    final_metrics: dict = field(default_factory=dict)
    jitter_escalations: int = 0
    recoveries: int = 0
    jitter_floor: float = 0.0

    @property
    def epochs_completed(self):
        return len(self.loss_trace)

    def to_dict(self, timing=True):
        """JSON-ready dict; ``timing=False`` drops wall-clock so equal runs serialize equally."""
        d = asdict(self)
        d["epochs_completed"] = self.epochs_completed
        if not timing:
            d.pop("wall_clock")
        return d


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls({k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()})


def adam_step(state, params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.

    Args:
        state: AdamState with first/second moments keyed like ``params``.
        params: name -> array of current values.
        grads: name -> gradient array; names missing here are left untouched.

    Returns:
        (new_params, new_state); inputs are not modified.

    Raises:
        NumericalFailure: if any gradient is non-finite.
    """
    for k, g in grads.items():
        if np.shape(g) != np.shape(params[k]):
            raise ContractError(f"adam_step: gradient for {k} has shape {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise NumericalFailure(f"non-finite gradient for {k}", term=k)
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params, m, v = dict(params), dict(state.m), dict(state.v)
    for k, g in grads.items():
        m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new_params[k] = params[k] - lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)
    return new_params, AdamState(m, v, t)


def _jitter(floor):
    return linalg.jitter_schedule(floor)


def batch_loss(task, bound, X, y, config=None, jitter=linalg.DEFAULT_JITTER):
    """Loss to minimize on one batch (a Var if ``bound`` lives on a tape)."""
    config = config or TrainConfig()
    if task == "regression":
        return nll_loss(bound, X, y, jitter)
    if task == "binary-classification":
        lml = laplace_log_marginal(bound, X, y, config.newton_t_max, config.newton_tol, jitter)
        return ad.scale(lml, -1.0)
    raise ContractError(f"unknown task {task!r}; expected one of {TASKS}")


def loss_and_grad(task, params, X, y, config=None, frozen=None, jitter=linalg.DEFAULT_JITTER):
    """Batch loss and gradients for every trainable parameter name."""
    config = config or TrainConfig()
    frozen = config.frozen if frozen is None else frozen
    tape = ad.Tape()
    bound = params.bind(tape, frozen)
    loss = batch_loss(task, bound, X, y, config, jitter)
    grads = tape.backward(loss)
    out = {k: grads[v] for k, v in bound.vars.items() if v.requires_grad}
    return float(loss.value[0, 0]), out


def dataset_loss(task, params, X, y, batch_size=128, config=None, jitter=linalg.DEFAULT_JITTER):
    """Mean batch loss over consecutive (unshuffled) batches."""
    n = len(y)
    bs = min(batch_size, n)
    losses = [
        float(ad.value(batch_loss(task, params, X[s:s + bs], y[s:s + bs], config, jitter))[0, 0])
        for s in range(0, n, bs)
    ]
    return float(np.mean(losses))


def _unpack(dataset):
    if isinstance(dataset, tuple):
        X, y = dataset
    else:
        X, y = dataset.X, dataset.y
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise ContractError(f"dataset shapes X={X.shape}, y={y.shape} are inconsistent")
    return X, y


def train(task, params, dataset, config, on_checkpoint=None):
    """Fit all parameters by mini-batch Adam.

    Each epoch visits a fresh permutation drawn from the ``shuffle`` stream
    of ``config.seed``; the final short batch is kept. A batch whose loss
    or gradient fails numerically is skipped and the jitter floor raised
    tenfold; ``max_consecutive_failures`` such batches in a row abort.

    Args:
        task: "regression" or "binary-classification" (labels +/-1).
        params: initial IgnParameters (not modified).
        dataset: a Dataset or an ``(X, y)`` tuple.
        config: TrainConfig.
        on_checkpoint: optional ``callback(params, epoch, report)`` run every
            ``config.checkpoint_every`` epochs.

    Returns:
        (trained IgnParameters, TrainReport)

    Raises:
        TrainingDiverged: carrying the last parameters that completed an epoch.
    """
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}; expected one of {TASKS}")
    X, y = _unpack(dataset)
    n = X.shape[0]
    bs = min(config.batch_size, n)
    trainable = params.trainable_names(config.frozen)
    arrays = params.flatten()
    state = AdamState.zeros_like({k: arrays[k] for k in trainable})
    report = TrainReport(jitter_floor=config.jitter_floor)
    floor = config.jitter_floor
    consecutive = 0
    last_good = params.copy()
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = substream(config.seed, "shuffle", epoch).permutation(n)
        losses = []
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            try:
                loss, grads = loss_and_grad(task, params, X[idx], y[idx], config, jitter=_jitter(floor))
                if config.loss_scaling == "n-over-b":
                    factor = n / len(idx)
                    grads = {k: factor * g for k, g in grads.items()}
                new_arrays, state_new = adam_step(
                    state, params.flatten(), grads, config.learning_rate,
                    config.adam_beta1, config.adam_beta2, config.adam_eps,
                )
                new_params = params.unflatten(new_arrays)
            except (NumericalFailure, NotPositiveDefiniteError) as exc:
                consecutive += 1
                report.recoveries += 1
                floor = 1e-10 if floor == 0.0 else 10.0 * floor
                report.jitter_escalations += 1
                report.jitter_floor = floor
                log.warning("epoch %d: skipped batch (%s); jitter floor now %g", epoch, exc, floor)
                if consecutive >= config.max_consecutive_failures:
                    raise TrainingDiverged(
                        f"{consecutive} consecutive numerical failures at epoch {epoch}: {exc}",
                        checkpoint=last_good,
                    ) from exc
                continue
            consecutive = 0
            params, state = new_params, state_new
            losses.append(loss)
        if losses:
            report.loss_trace.append(float(np.mean(losses)))
        elif report.loss_trace:
            report.loss_trace.append(report.loss_trace[-1])
        else:
            raise TrainingDiverged(f"no batch succeeded in epoch {epoch}", checkpoint=last_good)
        last_good = params
        log.debug("epoch %d loss %.6f", epoch, report.loss_trace[-1])
        if on_checkpoint and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            on_checkpoint(params, epoch, report)
    report.wall_clock = time.perf_counter() - start
    report.final_metrics["final_loss"] = report.loss_trace[-1]
    if not all(math.isfinite(v) for v in report.loss_trace):
        raise TrainingDiverged("loss trace contains non-finite values", checkpoint=last_good)
    return params, report
