"""Binary probit classification via the Laplace approximation.

The latent prior of a batch is ``N(a, K)`` with ``a = K_XZ K_ZZ^{-1} r`` and
``K = K_{X|Z}``. Newton's method finds the mode in centred coordinates
``h = f - a``; the approximate log marginal is then differentiated with the
mode held fixed. Multiclass problems use one binary model per class.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad
from . import linalg
from .exceptions import ContractError, IgnError, NumericalFailure, TrainingDiverged
from .regression import _check_batch, batch_terms, predict

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

MAX_HALVINGS = 10


@dataclass
class ProbitStats:
    """log Phi(y f) and its first two derivatives with respect to f."""

    logp: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


@dataclass
class LaplaceState:
    f_hat: np.ndarray
    W: np.ndarray  # -d2 at f_hat, >= 0
    K: np.ndarray
    a: np.ndarray
    alpha: np.ndarray  # K^{-1} (f_hat - a)
    converged: bool
    iterations: int
    objective: float  # sum log Phi(y f_hat) - 0.5 (f_hat - a)^T K^{-1} (f_hat - a)

    def stationarity(self, y):
        """Infinity norm of the Laplace objective's gradient at the mode."""
        return float(np.max(np.abs(probit_stats(y, self.f_hat).d1 - self.alpha)))


def _check_labels(y):
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ContractError("labels must be -1 or +1")
    return y


def to_pm1(labels):
    """Map {0, 1} labels to {-1, +1}; already signed labels pass through."""
    labels = np.asarray(labels)
    uniq = set(np.unique(labels).tolist())
    if uniq <= {0, 1}:
        return np.where(labels == 1, 1.0, -1.0)
    if uniq <= {-1, 1}:
        return labels.astype(np.float64)
    raise ContractError(f"binary labels must be in {{0, 1}} or {{-1, +1}}, got {sorted(uniq)}")


def probit_stats(y, f):
    """Log-likelihood ``log Phi(y f)`` with first and second f-derivatives.

    The density/CDF ratio is computed as ``sqrt(2/pi) / erfcx(-y f / sqrt 2)``
    which stays accurate far into the lower tail.
    """
    y = _check_labels(y)
    f = np.asarray(f, dtype=np.float64)
    z = y * f
    logp = special.log_ndtr(z)
    ratio = _SQRT_2_OVER_PI / special.erfcx(-z / _SQRT2)
    d1 = y * ratio
    d2 = -ratio * (ratio + z)
    return ProbitStats(logp, d1, np.minimum(d2, 0.0))


def _objective(y, a, h, alpha):
    return float(np.sum(probit_stats(y, a + h).logp) - 0.5 * h @ alpha)


def newton_mode(a, K, y, T_max=50, tol=1e-8):
    """Mode of ``log p(y | f) + log N(f; a, K)`` by damped Newton iterations.

    Each step is ``h <- (K^{-1} + W)^{-1} (W h + grad log p)`` written in the
    form that only factors ``I + W^{1/2} K W^{1/2}``. A step that lowers the
    objective is halved up to ``MAX_HALVINGS`` times.

    Returns:
        LaplaceState; ``converged`` is False if ``T_max`` was reached first.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    K = np.asarray(K, dtype=np.float64)
    y = _check_labels(y).ravel()
    b = a.shape[0]
    if K.shape != (b, b) or y.shape != (b,):
        raise ContractError(f"newton_mode: shapes a={a.shape}, K={K.shape}, y={y.shape} do not match")
    h = np.zeros(b)
    alpha = np.zeros(b)
    psi = _objective(y, a, h, alpha)
    converged = False
    t = 0
    for t in range(1, T_max + 1):
        st = probit_stats(y, a + h)
        W = -st.d2
        sW = np.sqrt(W)
        B = np.eye(b) + sW[:, None] * K * sW[None, :]
        L = linalg.cholesky(B, (0.0,))
        rhs = W * h + st.d1
        alpha_full = rhs - sW * linalg.solve(L, sW * (K @ rhs))
        h_full = K @ alpha_full
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            h_new = h + step * (h_full - h)
            alpha_new = alpha + step * (alpha_full - alpha)
            psi_new = _objective(y, a, h_new, alpha_new)
            if psi_new >= psi - 1e-12 * max(1.0, abs(psi)):
                break
            step *= 0.5
        delta = float(np.max(np.abs(h_new - h)))
        h, alpha, psi = h_new, alpha_new, psi_new
        if delta < tol:
            converged = True
            break
    W = -probit_stats(y, a + h).d2
    return LaplaceState(a + h, W, K, a, alpha, converged, t, psi)


def laplace_approximation(a, K, y, T_max=50, tol=1e-8, jitter=linalg.DEFAULT_JITTER):
    """Laplace log marginal of ``y`` under the latent prior ``N(a, K)``.

    ``log p(y | f_hat) - 0.5 (f_hat - a)^T K^{-1} (f_hat - a)
    - 0.5 log|I + W^{1/2} K W^{1/2}|``. ``a`` (b x 1) and ``K`` may be Vars;
    the mode is treated as a constant when differentiating.

    Returns:
        (1x1 value or Var, LaplaceState)

    Raises:
        NumericalFailure: if Newton does not converge within ``T_max`` steps.
    """
    y = _check_labels(np.asarray(y, dtype=np.float64).ravel())
    K_val = np.asarray(ad.value(K), dtype=np.float64)
    state = newton_mode(np.asarray(ad.value(a)).ravel(), 0.5 * (K_val + K_val.T), y, T_max, tol)
    if not state.converged:
        raise NumericalFailure(
            f"Newton's method did not converge in {state.iterations} iterations", term="newton"
        )
    f_hat = state.f_hat[:, None]
    sW = np.sqrt(state.W)
    h = ad.sub(f_hat, a)
    quad = ad.quad_form(h, K, jitter)
    B = ad.add(np.eye(len(y)), ad.mul(K, sW[:, None] * sW[None, :]))
    logdet_B = ad.logdet(B, jitter)
    loglik = np.array([[float(np.sum(probit_stats(y, state.f_hat).logp))]])
    out = ad.sub(loglik, ad.scale(ad.add(quad, logdet_B), 0.5))
    if not np.isfinite(ad.value(out)[0, 0]):
        raise NumericalFailure("non-finite Laplace log marginal", term="laplace")
    return out, state


def laplace_log_marginal(params, X_batch, y_batch, T_max=50, tol=1e-8,
                         jitter=linalg.DEFAULT_JITTER, return_state=False):
    """Laplace approximation of ``log p(y | X, theta)`` for one batch.

    The prior mean is ``K_XZ K_ZZ^{-1} r`` and the covariance
    ``K_{X|Z}`` including observation noise. Labels must already be +/-1.

    Raises:
        NumericalFailure: if Newton does not converge within ``T_max`` steps.
    """
    X, y = _check_batch(X_batch, y_batch)
    a, K = batch_terms(params, X, jitter)
    out, state = laplace_approximation(a, K, y[:, 0], T_max, tol, jitter)
    return (out, state) if return_state else out


def predict_proba(params, X_star, jitter=linalg.DEFAULT_JITTER):
    """``Phi(mu / sqrt(1 + sigma^2))`` from the noise-free predictive distribution."""
    dist = predict(params, X_star, want="diag", include_noise=False, jitter=jitter)
    return special.ndtr(dist.mean / np.sqrt(1.0 + dist.variance))


@dataclass
class OneVsAll:
    """One binary model per class; predicts the class with the largest probability."""

    heads: list
    jitter: tuple = linalg.DEFAULT_JITTER

    @property
    def n_classes(self):
        return len(self.heads)

    def predict_proba(self, X):
        return np.column_stack([predict_proba(p, X, self.jitter) for p in self.heads])

    def predict(self, X):
        # argmax returns the first maximum, so ties go to the lowest class index.
        return np.argmax(self.predict_proba(X), axis=1)


def one_vs_all(train_fn, labels, n_classes, jobs=1):
    """Train ``n_classes`` binary models, class c against the rest.

    ``train_fn(c, y_pm)`` receives the class index and +/-1 labels and
    returns trained IgnParameters. Heads may train on ``jobs`` threads.
    """
    labels = np.asarray(labels)
    if n_classes < 2:
        raise ContractError(f"one-vs-all needs at least 2 classes, got {n_classes}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"labels must lie in 0..{n_classes - 1}")

    def run(c):
        y_pm = np.where(labels == c, 1.0, -1.0)
        try:
            return train_fn(c, y_pm)
        except IgnError as exc:
            raise TrainingDiverged(
                f"one-vs-all head for class {c} failed: {exc}",
                checkpoint=getattr(exc, "checkpoint", None),
            ) from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            heads = list(pool.map(run, range(n_classes)))
    else:
        heads = [run(c) for c in range(n_classes)]
    return OneVsAll(heads)
