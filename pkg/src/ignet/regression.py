"""Regression objective and predictive distribution.

Training minimizes ``-log N(y; y_hat, K_{X|Z})`` per mini-batch where
``y_hat = K_XZ K_ZZ^{-1} r`` and
``K_{X|Z} = K_XX + sigma^2 I - K_XZ K_ZZ^{-1} K_ZX``.
Prediction conditions the prior on the pseudo-labels ``r`` only.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import linalg
from .exceptions import ContractError, DimensionError, NumericalFailure
from .kernels import kernel_blocks
from .model import Bound, IgnParameters, embed, pseudo_labels

LOG_2PI = math.log(2.0 * math.pi)

VARIANCE_CLAMP = 1e-8


@dataclass
class PredictiveDistribution:
    """Mean and covariance (full ``(p, p)``) or variance (``(p,)``) at test inputs."""

    mean: np.ndarray
    cov: np.ndarray
    includes_noise: bool = False

    @property
    def is_full(self):
        return self.cov.ndim == 2

    @property
    def variance(self):
        return np.diag(self.cov).copy() if self.is_full else self.cov


def _bound(params):
    if isinstance(params, Bound):
        return params
    if isinstance(params, IgnParameters):
        return params.bind()
    raise ContractError(f"expected IgnParameters or Bound, got {type(params).__name__}")


def _sym(A):
    return ad.scale(ad.add(A, ad.transpose(A)), 0.5)


def noise_variance(log_sigma_eps):
    """``sigma_eps^2 = exp(2 log sigma_eps)`` as a 1x1 matrix or Var."""
    return ad.exp(ad.scale(log_sigma_eps, 2.0))


def predictive_mean(blocks, r, jitter=linalg.DEFAULT_JITTER):
    """``K_XZ K_ZZ^{-1} r``."""
    return ad.matmul(blocks.K_XZ, ad.cho_solve(blocks.K_ZZ, r, jitter))


def posterior_kernel(blocks, sigma_eps2=0.0, include_noise=False, jitter=linalg.DEFAULT_JITTER):
    """Covariance of the batch outputs given the inducing values.

    ``K_XX - K_XZ K_ZZ^{-1} K_ZX``, plus ``sigma_eps2 * I`` when
    ``include_noise``. ``sigma_eps2`` may be a float or a 1x1 Var.
    """
    if blocks.K_XX is None:
        raise ContractError("posterior_kernel needs blocks computed with K_XX")
    explained = _sym(ad.matmul(blocks.K_XZ, ad.cho_solve(blocks.K_ZZ, ad.transpose(blocks.K_XZ), jitter)))
    K = ad.sub(blocks.K_XX, explained)
    if include_noise:
        b = ad.value(blocks.K_XX).shape[0]
        if not isinstance(sigma_eps2, ad.Var):
            sigma_eps2 = np.array(sigma_eps2, dtype=np.float64).reshape(1, 1)
        K = ad.add(K, ad.scale(np.eye(b), sigma_eps2))
    return K


def _check_batch(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if X.ndim != 2:
        raise DimensionError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if X.shape[0] < 1:
        raise ContractError("batch must contain at least one point")
    if not np.all(np.isfinite(y)):
        raise ContractError("y contains non-finite values")
    return X, y


def _finite(term, name):
    v = ad.value(term)
    if not np.all(np.isfinite(v)):
        raise NumericalFailure(f"non-finite {name} term in the loss", term=name)
    return term


def batch_terms(params, X_batch, jitter=linalg.DEFAULT_JITTER, include_noise=True):
    """Predictive mean and posterior covariance of a batch (shared with classification)."""
    p = _bound(params)
    F = embed(p.layers, X_batch)
    blocks = kernel_blocks(p.kernel, F, p.Z, p.log_gamma)
    r = pseudo_labels((p.w, p.b), p.Z)
    mean = predictive_mean(blocks, r, jitter)
    K = posterior_kernel(blocks, noise_variance(p.log_sigma_eps), include_noise, jitter)
    return mean, K


def nll_loss(params, X_batch, y_batch, jitter=linalg.DEFAULT_JITTER):
    """Negative log marginal likelihood of one batch.

    ``0.5 (y - y_hat)^T K^{-1} (y - y_hat) + 0.5 log|K| + (b / 2) log 2 pi``
    with ``K = K_{X|Z}`` including observation noise.

    Returns a 1x1 Var when ``params`` is bound to a tape, otherwise a 1x1
    array.

    Raises:
        NumericalFailure: if the quadratic or log-determinant term is not finite.
    """
    X, y = _check_batch(X_batch, y_batch)
    mean, K = batch_terms(params, X, jitter)
    resid = ad.sub(y, mean)
    quad = _finite(ad.quad_form(resid, K, jitter), "quadratic")
    logdet = _finite(ad.logdet(K, jitter), "logdet")
    loss = ad.add(ad.scale(ad.add(quad, logdet), 0.5), np.array([[0.5 * X.shape[0] * LOG_2PI]]))
    return _finite(loss, "total")


def _clamp_variance(var):
    if np.any(var < -VARIANCE_CLAMP):
        worst = float(np.min(var))
        raise NumericalFailure(f"predictive variance {worst:.3e} is negative", term="variance")
    return np.maximum(var, 0.0)


def predict(params, X_star, want="diag", include_noise=False, jitter=linalg.DEFAULT_JITTER):
    """Predictive distribution at ``X_star``.

    Args:
        params: trained (or freshly initialized) IgnParameters.
        X_star: (p, input_dim) test inputs.
        want: "diag" for per-point variances in O(p m^2), "full" for the
            (p, p) covariance.
        include_noise: add sigma_eps^2 to the variances.

    Returns:
        PredictiveDistribution with ``mean`` of shape (p,).
    """
    if want not in ("diag", "full"):
        raise ContractError(f"want must be 'diag' or 'full', got {want!r}")
    X = np.asarray(X_star, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ContractError(f"X_star must be a non-empty 2-D array, got shape {X.shape}")
    p = _bound(params)
    F = embed(p.layers, X)
    blocks = kernel_blocks(p.kernel, F, p.Z, p.log_gamma, with_xx=want == "full")
    r = pseudo_labels((p.w, p.b), p.Z)
    mean = predictive_mean(blocks, r, jitter)[:, 0]
    s2 = float(noise_variance(p.log_sigma_eps)[0, 0])
    if want == "full":
        cov = posterior_kernel(blocks, s2, False, jitter)
        d = _clamp_variance(np.diag(cov).copy())
        np.fill_diagonal(cov, d + (s2 if include_noise else 0.0))
    else:
        factor = linalg.cholesky(blocks.K_ZZ, jitter)
        V = linalg.solve_lower(factor, blocks.K_XZ.T)
        cov = _clamp_variance(blocks.diag_XX - (V * V).sum(axis=0))
        if include_noise:
            cov = cov + s2
    return PredictiveDistribution(mean, cov, include_noise)
