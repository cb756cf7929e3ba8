import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_params
from ignet import autodiff as ad
from ignet.exceptions import ContractError, DimensionError
from ignet.model import (
    FeatureMap, IgnParameters, Layer, ModelConfig, PseudoLabelHead, embed, init_inducing_from_data,
    init_parameters, initialize, pseudo_labels,
)
from ignet.regression import nll_loss


def test_identity_layer_passes_input_through(rng):
    X = rng.standard_normal((4, 3))
    fm = FeatureMap([Layer(np.eye(3), np.zeros((1, 3)), "identity")])
    np.testing.assert_array_equal(embed(fm, X), X)


def test_relu_layer_clamps():
    fm = FeatureMap([Layer(np.eye(2), np.zeros((1, 2)), "relu"),
                     Layer(np.eye(2), np.zeros((1, 2)), "identity")])
    np.testing.assert_array_equal(embed(fm, np.array([[-1.0, 2.0]])), [[0.0, 2.0]])


def test_default_network_shapes(rng):
    p = init_parameters(ModelConfig(input_dim=4), 0)
    F = embed(p.feature_map, rng.standard_normal((5, 4)))
    assert F.shape == (5, 64) and np.all(np.isfinite(F))
    assert p.Z.shape == (512, 64)
    assert [l.weight.shape for l in p.feature_map.layers] == [(4, 128), (128, 128), (128, 128), (128, 64)]
    assert [l.activation for l in p.feature_map.layers] == ["relu", "relu", "relu", "identity"]


def test_embed_dimension_mismatch():
    p = init_parameters(ModelConfig(input_dim=3, hidden=(4,), feature_dim=2, n_inducing=2), 0)
    with pytest.raises(DimensionError):
        embed(p.feature_map, np.ones((2, 4)))


def test_feature_map_must_end_with_identity():
    with pytest.raises((ContractError, DimensionError)):
        FeatureMap([Layer(np.eye(2), np.zeros((1, 2)), "relu")])
    with pytest.raises((ContractError, DimensionError)):
        FeatureMap([Layer(np.eye(2), np.zeros((1, 2)), "relu"),
                    Layer(np.ones((3, 2)), np.zeros((1, 2)), "identity")])


def test_pseudo_label_examples():
    Z = np.array([[3.0, 9.0], [-1.0, 4.0]])
    r = pseudo_labels(PseudoLabelHead(np.zeros((2, 1)), 2.5), Z)
    np.testing.assert_array_equal(r, [[2.5], [2.5]])
    r = pseudo_labels(PseudoLabelHead(np.array([[1.0], [0.0]]), 0.0), Z)
    np.testing.assert_array_equal(r, [[3.0], [-1.0]])
    with pytest.raises(DimensionError):
        pseudo_labels(PseudoLabelHead(np.zeros((3, 1)), 0.0), Z)


def test_pseudo_labels_match_loop(rng):
    w, b, Z = rng.standard_normal((3, 1)), 0.4, rng.standard_normal((6, 3))
    r = pseudo_labels(PseudoLabelHead(w, b), Z)
    for i in range(6):
        assert r[i, 0] == pytest.approx(sum(w[k, 0] * Z[i, k] for k in range(3)) + b, abs=1e-13)


def test_init_is_deterministic_and_round_trips():
    cfg = ModelConfig(input_dim=3, hidden=(8, 8), feature_dim=4, n_inducing=5)
    a, b = init_parameters(cfg, 7), init_parameters(cfg, 7)
    for k, v in a.flatten().items():
        assert np.array_equal(v, b.flatten()[k])
    c = init_parameters(cfg, 8)
    assert not np.array_equal(a.Z, c.Z)
    back = a.unflatten(a.flatten())
    for k, v in a.flatten().items():
        assert np.array_equal(v, back.flatten()[k])
    assert np.array_equal(a.from_vector(a.to_vector()).to_vector(), a.to_vector())


def test_init_values():
    cfg = ModelConfig(input_dim=3, hidden=(8,), feature_dim=4, n_inducing=5, feature_scale=1.0)
    p = init_parameters(cfg, 0)
    assert np.all(p.head.w == 0) and p.head.b == 0.0
    assert p.noise.sigma_eps2 == pytest.approx(0.25)
    assert p.log_gamma == 0.0
    scaled = init_parameters(ModelConfig(input_dim=3, hidden=(8,), feature_dim=4, n_inducing=5), 0)
    np.testing.assert_allclose(scaled.feature_map.layers[-1].weight, 0.1 * p.feature_map.layers[-1].weight)
    np.testing.assert_array_equal(scaled.feature_map.layers[0].weight, p.feature_map.layers[0].weight)


def test_He_scale_of_hidden_weights():
    p = init_parameters(ModelConfig(input_dim=200, hidden=(300,), feature_dim=4, n_inducing=2), 3)
    assert p.feature_map.layers[0].weight.std() == pytest.approx(np.sqrt(2 / 200), rel=0.02)


def test_config_validation():
    with pytest.raises(ContractError):
        ModelConfig(input_dim=0)
    with pytest.raises(ContractError):
        ModelConfig(input_dim=1, init_z="grid")
    with pytest.raises(ContractError):
        ModelConfig(input_dim=1, feature_scale=0.0)
    cfg = ModelConfig(input_dim=2, hidden=[4, 4])
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_unflatten_rejects_wrong_shapes():
    p = small_params()
    arr = p.flatten()
    arr["Z"] = np.zeros((7, 2))
    with pytest.raises(DimensionError):
        p.unflatten(arr)
    arr = p.flatten()
    del arr["Z"]
    with pytest.raises(ContractError):
        p.unflatten(arr)


def test_trainable_names_respect_groups():
    p = small_params()
    names = p.trainable_names(frozen=("feature_map",))
    assert not any(n.startswith("fm.") for n in names) and "Z" in names
    with pytest.raises(ContractError):
        p.trainable_names(frozen=("bogus",))


def test_inducing_from_data_embeds_training_rows(rng):
    cfg = ModelConfig(input_dim=2, hidden=(5,), feature_dim=3, n_inducing=4)
    X = rng.standard_normal((10, 2))
    p, idx = init_inducing_from_data(init_parameters(cfg, 0), X, 1)
    np.testing.assert_allclose(p.Z, embed(p.feature_map, X[idx]), rtol=1e-14)
    assert len(set(idx.tolist())) == 4


def test_initialize_modes(rng):
    X = rng.standard_normal((20, 2))
    cfg = ModelConfig(input_dim=2, hidden=(5,), feature_dim=3, n_inducing=4)
    a, b = initialize(cfg, X, 3), initialize(cfg, X, 3)
    assert np.array_equal(a.to_vector(), b.to_vector())
    F = embed(a.feature_map, X)
    assert all(np.min(np.abs(F - z).sum(axis=1)) < 1e-12 for z in a.Z)
    normal = initialize(ModelConfig(input_dim=2, hidden=(5,), feature_dim=3, n_inducing=4, init_z="normal"), X, 3)
    assert all(np.min(np.abs(F - z).sum(axis=1)) > 1e-6 for z in normal.Z)


@given(st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_embed_is_batch_consistent(b, seed):
    p = init_parameters(ModelConfig(input_dim=3, hidden=(16, 16), feature_dim=5, n_inducing=2), seed % 1000)
    X = np.random.default_rng(seed).standard_normal((b, 3))
    batched = embed(p.feature_map, X)
    rows = np.vstack([embed(p.feature_map, X[i:i + 1]) for i in range(b)])
    # Matrix products of different shapes may round differently.
    np.testing.assert_allclose(rows, batched, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_inducing_gradient_does_not_depend_on_feature_map_trainability(seed):
    p = small_params(seed, input_dim=2, hidden=(4, 4), d=3, m=3)
    rng = np.random.default_rng(seed)
    X, y = rng.standard_normal((6, 2)), rng.standard_normal(6)

    def z_grad(frozen):
        tape = ad.Tape()
        bound = p.bind(tape, frozen=frozen)
        loss = nll_loss(bound, X, y)
        return tape.backward(loss)[bound.vars["Z"]]

    assert np.max(np.abs(z_grad(()) - z_grad(("feature_map",)))) < 1e-12
