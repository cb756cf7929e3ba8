"""Learnable pieces of an inducing Gaussian process network.

The parameter set is ``{feature map weights, Z, head (w, b), log sigma_eps,
log gamma}``. :class:`IgnParameters` holds plain arrays; :meth:`bind`
places them on a :class:`~ignet.autodiff.Tape` for one training step.
"""

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .exceptions import ContractError, DimensionError
from .kernels import KernelSpec
from .seeding import subseed

GROUPS = ("feature_map", "inducing", "head", "noise", "kernel")
Z_INITS = ("data", "normal")


@dataclass(frozen=True)
class ModelConfig:
    """Shape and prior settings of a model.

    Defaults follow the usual benchmark setup: three ReLU layers of 128
    units, a 64-dimensional feature layer and 512 inducing points.

    ``feature_scale`` multiplies the He-initialized weights of the final
    feature layer. At scale 1 a 64-dimensional embedding puts typical pairs
    about 100 squared units apart, so every RBF value between distinct
    points underflows and the predictive mean receives no gradient.
    ``init_z`` chooses where :func:`initialize` puts the inducing points:
    on embedded training rows ("data") or standard normal ("normal").
    """

    input_dim: int
    hidden: tuple = (128, 128, 128)
    feature_dim: int = 64
    n_inducing: int = 512
    kernel: str = "rbf"
    gamma: float = 1.0
    train_gamma: bool = True
    head_bias: bool = True
    init_sigma_eps: float = 0.5
    feature_scale: float = 0.1
    init_z: str = "data"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.feature_dim < 1 or self.n_inducing < 1:
            raise ContractError("input_dim, feature_dim and n_inducing must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ContractError(f"hidden widths must be >= 1, got {self.hidden}")
        if not self.init_sigma_eps > 0:
            raise ContractError("init_sigma_eps must be positive")
        if not self.feature_scale > 0:
            raise ContractError("feature_scale must be positive")
        if self.init_z not in Z_INITS:
            raise ContractError(f"init_z must be one of {Z_INITS}, got {self.init_z!r}")

    @property
    def kernel_spec(self):
        return KernelSpec(self.kernel, self.gamma, self.train_gamma)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Layer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (1, out)
    activation: str = "relu"


@dataclass
class FeatureMap:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ContractError("a feature map needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise DimensionError(
                    f"layer widths do not chain: {prev.weight.shape} -> {nxt.weight.shape}"
                )
        if self.layers[-1].activation != "identity":
            raise ContractError("the final (feature) layer must use the identity activation")

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[1]


@dataclass
class InducingSet:
    Z: np.ndarray

    @property
    def m(self):
        return self.Z.shape[0]


@dataclass
class PseudoLabelHead:
    w: np.ndarray  # (d, 1)
    b: float = 0.0


@dataclass
class NoiseModel:
    log_sigma_eps: float

    @property
    def sigma_eps2(self):
        return math.exp(2.0 * self.log_sigma_eps)


@dataclass
class Bound:
    """Parameters placed on a tape; fields are Vars (or arrays when unbound)."""

    layers: list
    Z: object
    w: object
    b: object
    log_sigma_eps: object
    log_gamma: object
    kernel: KernelSpec
    vars: dict = field(default_factory=dict)


def _group(name):
    if name.startswith("fm."):
        return "feature_map"
    if name == "Z":
        return "inducing"
    if name.startswith("head."):
        return "head"
    if name == "log_sigma_eps":
        return "noise"
    if name == "log_gamma":
        return "kernel"
    raise KeyError(name)


@dataclass
class IgnParameters:
    feature_map: FeatureMap
    inducing: InducingSet
    head: PseudoLabelHead
    noise: NoiseModel
    kernel: KernelSpec
    log_gamma: float
    head_bias: bool = True

    def __post_init__(self):
        d = self.feature_map.output_dim
        if self.inducing.Z.shape[1] != d:
            raise DimensionError(
                f"inducing points have dimension {self.inducing.Z.shape[1]}, features {d}"
            )
        if self.head.w.shape != (d, 1):
            raise DimensionError(f"head weight shape {self.head.w.shape}, expected ({d}, 1)")

    @property
    def Z(self):
        return self.inducing.Z

    @property
    def m(self):
        return self.inducing.m

    @property
    def gamma(self):
        return math.exp(self.log_gamma)

    def flatten(self):
        """Ordered name -> array mapping (copies)."""
        out = {}
        for i, layer in enumerate(self.feature_map.layers):
            out[f"fm.W{i}"] = layer.weight.copy()
            out[f"fm.b{i}"] = layer.bias.copy()
        out["Z"] = self.inducing.Z.copy()
        out["head.w"] = self.head.w.copy()
        out["head.b"] = np.array([[self.head.b]])
        out["log_sigma_eps"] = np.array([[self.noise.log_sigma_eps]])
        out["log_gamma"] = np.array([[self.log_gamma]])
        return out

    def unflatten(self, arrays):
        """New parameters with the same structure and values from ``arrays``."""
        expected = self.flatten()
        if set(arrays) != set(expected):
            raise ContractError(f"parameter names differ: {sorted(set(arrays) ^ set(expected))}")
        for k, v in expected.items():
            if np.shape(arrays[k]) != v.shape:
                raise DimensionError(f"{k}: shape {np.shape(arrays[k])}, expected {v.shape}")
        layers = [
            Layer(
                np.array(arrays[f"fm.W{i}"], dtype=np.float64),
                np.array(arrays[f"fm.b{i}"], dtype=np.float64),
                layer.activation,
            )
            for i, layer in enumerate(self.feature_map.layers)
        ]
        return IgnParameters(
            FeatureMap(layers),
            InducingSet(np.array(arrays["Z"], dtype=np.float64)),
            PseudoLabelHead(
                np.array(arrays["head.w"], dtype=np.float64), float(arrays["head.b"][0][0])
            ),
            NoiseModel(float(arrays["log_sigma_eps"][0][0])),
            self.kernel,
            float(arrays["log_gamma"][0][0]),
            self.head_bias,
        )

    def to_vector(self):
        return np.concatenate([a.ravel() for a in self.flatten().values()])

    def from_vector(self, vec):
        arrays, pos = {}, 0
        for k, a in self.flatten().items():
            arrays[k] = np.asarray(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape)
            pos += a.size
        if pos != len(vec):
            raise DimensionError(f"vector has {len(vec)} entries, parameters need {pos}")
        return self.unflatten(arrays)

    def copy(self):
        return self.unflatten(self.flatten())

    def trainable_names(self, frozen=()):
        """Names of parameters that receive gradients given frozen groups."""
        frozen = set(frozen)
        unknown = frozen - set(GROUPS)
        if unknown:
            raise ContractError(f"unknown parameter groups {sorted(unknown)}; choose from {GROUPS}")
        names = []
        for name in self.flatten():
            if _group(name) in frozen:
                continue
            if name == "head.b" and not self.head_bias:
                continue
            if name == "log_gamma" and not self.kernel.trainable:
                continue
            names.append(name)
        return names

    def bind(self, tape=None, frozen=()):
        """Place the parameters on ``tape``; without a tape return plain arrays."""
        arrays = self.flatten()
        if tape is None:
            vals = arrays
            vars_ = {}
        else:
            trainable = set(self.trainable_names(frozen))
            vars_ = {k: tape.var(v, requires_grad=k in trainable, name=k) for k, v in arrays.items()}
            vals = vars_
        layers = [
            (vals[f"fm.W{i}"], vals[f"fm.b{i}"], layer.activation)
            for i, layer in enumerate(self.feature_map.layers)
        ]
        return Bound(
            layers, vals["Z"], vals["head.w"], vals["head.b"], vals["log_sigma_eps"],
            vals["log_gamma"], self.kernel, vars_,
        )

    def with_inducing(self, Z):
        """Copy with a different inducing set (pseudo-labels follow from the head)."""
        Z = np.asarray(Z, dtype=np.float64)
        return replace(self.copy(), inducing=InducingSet(Z))


def embed(fm, X):
    """Map inputs to feature space, row by row.

    ``fm`` is a :class:`FeatureMap`, or the ``layers`` list of a
    :class:`Bound` (tuples of weight, bias, activation).
    """
    layers = fm.layers if isinstance(fm, FeatureMap) else fm
    layers = [(l.weight, l.bias, l.activation) if isinstance(l, Layer) else l for l in layers]
    in_dim = ad.value(layers[0][0]).shape[0]
    x_shape = ad.value(X).shape
    if len(x_shape) != 2 or x_shape[1] != in_dim:
        raise DimensionError(f"embed: input shape {x_shape} does not match first layer ({in_dim} inputs)")
    H = X
    for W, b, act in layers:
        H = ad.bias_add(ad.matmul(H, W), b)
        if act == "relu":
            H = ad.relu(H)
    return H


def pseudo_labels(head, Z):
    """``r_i = w . z_i + b`` as an (m, 1) column."""
    if isinstance(head, PseudoLabelHead):
        w, b = head.w, np.array([[head.b]])
    else:
        w, b = head
    d = ad.value(Z).shape[1]
    if ad.value(w).shape != (d, 1):
        raise DimensionError(f"pseudo_labels: head weight {ad.value(w).shape} vs feature dim {d}")
    return ad.bias_add(ad.matmul(Z, w), b)


def init_parameters(config, rng_seed):
    """He-initialized feature map, standard normal Z, zero head.

    Deterministic in ``rng_seed``. The final layer is scaled by
    ``config.feature_scale``; noise starts at ``config.init_sigma_eps``.
    """
    rng = np.random.default_rng(rng_seed)
    widths = (config.input_dim, *config.hidden, config.feature_dim)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
        W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        act = "identity" if i == len(widths) - 2 else "relu"
        if act == "identity":
            W = config.feature_scale * W
        layers.append(Layer(W, np.zeros((1, fan_out)), act))
    Z = rng.standard_normal((config.n_inducing, config.feature_dim))
    return IgnParameters(
        FeatureMap(layers),
        InducingSet(Z),
        PseudoLabelHead(np.zeros((config.feature_dim, 1)), 0.0),
        NoiseModel(math.log(config.init_sigma_eps)),
        config.kernel_spec,
        config.kernel_spec.log_gamma,
        config.head_bias,
    )


def init_inducing_from_data(params, X, rng_seed):
    """Replace Z with the embeddings of randomly chosen training rows.

    Returns the new parameters and the chosen row indices.
    """
    rng = np.random.default_rng(rng_seed)
    n, m = X.shape[0], params.m
    idx = rng.choice(n, size=m, replace=n < m)
    Z = embed(params.feature_map, np.asarray(X, dtype=np.float64)[idx])
    if n < m:
        Z = Z + 1e-3 * rng.standard_normal(Z.shape)
    return params.with_inducing(Z), idx


def initialize(config, X, seed):
    """Fresh parameters for training on ``X``, honouring ``config.init_z``.

    Network weights and inducing rows come from separate named streams of
    ``seed``.
    """
    params = init_parameters(config, subseed(seed, "init"))
    if config.init_z == "data":
        params, _ = init_inducing_from_data(params, X, subseed(seed, "inducing"))
    return params
