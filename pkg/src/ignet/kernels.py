"""Base kernels on feature space and the K_XX / K_XZ / K_ZZ blocks."""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ContractError, DimensionError

KINDS = ("rbf", "dot")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its bandwidth.

    RBF is ``exp(-gamma * |a - b|^2)``. Only the initial gamma lives here;
    the trained value is ``exp(log_gamma)`` in the model parameters.
    """

    kind: str = "rbf"
    gamma: float = 1.0
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if not self.gamma > 0:
            raise ContractError(f"gamma must be positive, got {self.gamma}")

    @property
    def log_gamma(self):
        return math.log(self.gamma)


@dataclass
class KernelBlocks:
    """Kernel evaluations between batch features X and inducing points Z.

    ``K_XX`` is None when only the diagonal is needed (``diag_XX``).
    """

    K_XX: object
    K_XZ: object
    K_ZZ: object
    diag_XX: np.ndarray = None


def _log_gamma(spec, log_gamma):
    return spec.log_gamma if log_gamma is None else log_gamma


def kernel_matrix(spec, A, B, log_gamma=None):
    """Kernel between the rows of A (p x d) and B (q x d).

    ``log_gamma`` may be a 1x1 Var so the bandwidth is trained; it defaults
    to the KernelSpec's fixed value. Passing the same object for A and B yields an
    exactly symmetric matrix.
    """
    a_cols, b_cols = ad.value(A).shape[-1], ad.value(B).shape[-1]
    if a_cols != b_cols:
        raise DimensionError(f"kernel_matrix: feature dimensions differ ({a_cols} vs {b_cols})")
    if spec.kind == "dot":
        K = ad.matmul(A, ad.transpose(B))
        if A is B:
            K = ad.scale(ad.add(K, ad.transpose(K)), 0.5)
        return K
    lg = _log_gamma(spec, log_gamma)
    gamma = ad.exp(lg if isinstance(lg, ad.Var) else np.array(lg, dtype=np.float64).reshape(1, 1))
    D = ad.sqdist(A, B)
    return ad.exp(ad.scale(D, -gamma))


def kernel_diag(spec, A, log_gamma=None):
    """Diagonal of ``kernel_matrix(spec, A, A)`` as a flat array, without the p x p matrix."""
    A = np.asarray(ad.value(A))
    if spec.kind == "dot":
        return (A * A).sum(axis=1)
    return np.ones(A.shape[0])


def kernel_blocks(spec, features, Z, log_gamma=None, with_xx=True):
    """Compute K_XX (b x b), K_XZ (b x m) and K_ZZ (m x m).

    K_ZX is ``K_XZ.T`` and is not stored.
    """
    b, m = ad.value(features).shape[0], ad.value(Z).shape[0]
    if b < 1 or m < 1:
        raise ContractError(f"kernel_blocks: need b >= 1 and m >= 1, got b={b}, m={m}")
    K_XZ = kernel_matrix(spec, features, Z, log_gamma)
    K_ZZ = kernel_matrix(spec, Z, Z, log_gamma)
    if with_xx:
        K_XX = kernel_matrix(spec, features, features, log_gamma)
        return KernelBlocks(K_XX, K_XZ, K_ZZ)
    return KernelBlocks(None, K_XZ, K_ZZ, diag_XX=kernel_diag(spec, features, log_gamma))
