import math

import numpy as np
import pytest

from conftest import small_params
from ignet import trainer as trainer_mod
from ignet.classification import predict_proba, to_pm1
from ignet.datasets import Normalizer, gen_blobs, gen_sine
from ignet.exceptions import ContractError, NumericalFailure, TrainingDiverged
from ignet.model import ModelConfig, initialize
from ignet.trainer import (
    AdamState, TrainConfig, TrainReport, adam_step, dataset_loss, loss_and_grad, train,
)


def toy_regression(n=40, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, (n, 2))
    return X, np.sin(X[:, 0]) + 0.1 * rng.standard_normal(n)


def test_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(epochs=0)
    with pytest.raises(ContractError):
        TrainConfig(batch_size=0)
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=-1e-3)
    with pytest.raises(ContractError):
        TrainConfig(loss_scaling="n")
    with pytest.raises(ContractError):
        TrainConfig(frozen=("weights",))
    assert TrainConfig(frozen=("noise", "inducing", "noise")).frozen == ("inducing", "noise")


def test_zero_learning_rate_leaves_parameters_unchanged():
    p = small_params()
    params, report = train("regression", p, toy_regression(), TrainConfig(epochs=1, learning_rate=0.0, batch_size=16))
    assert np.array_equal(params.to_vector(), p.to_vector())
    assert report.epochs_completed == 1


def test_sine_nll_decreases():
    ds = gen_sine(256, seed=0)
    ds = Normalizer.fit(ds).apply(ds)
    p = initialize(ModelConfig(input_dim=1, n_inducing=16), ds.X, 0)
    before = dataset_loss("regression", p, ds.X, ds.y)
    params, report = train("regression", p, ds, TrainConfig(epochs=30, seed=0))
    after = dataset_loss("regression", params, ds.X, ds.y)
    assert after < before
    assert len(report.loss_trace) == 30
    assert all(math.isfinite(v) for v in report.loss_trace)


def test_two_blobs_reach_full_training_accuracy():
    ds = gen_blobs(200, 2, separation=6.0, seed=0)
    ds = Normalizer.fit(ds).apply(ds)
    y = to_pm1(ds.y)
    p = initialize(ModelConfig(input_dim=2, n_inducing=8), ds.X, 0)
    params, _ = train("binary-classification", p, (ds.X, y),
                      TrainConfig(epochs=100, learning_rate=3e-3, seed=0))
    acc = np.mean((predict_proba(params, ds.X) > 0.5) == (y > 0))
    assert acc >= 0.99


def test_adam_zero_gradient_is_a_no_op():
    params = {"a": np.array([[1.0, -2.0]])}
    state = AdamState.zeros_like(params)
    new, state = adam_step(state, params, {"a": np.zeros((1, 2))}, 0.1)
    assert np.array_equal(new["a"], params["a"]) and state.t == 1


def test_adam_first_step_by_hand():
    g = np.array([[0.5, -3.0, 1e-9]])
    params = {"a": np.zeros((1, 3))}
    new, _ = adam_step(AdamState.zeros_like(params), params, {"a": g}, 0.01)
    # m_hat = g and v_hat = g^2 after bias correction.
    np.testing.assert_allclose(new["a"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_constant_gradient_step_tends_to_lr():
    params = {"a": np.zeros((1, 1))}
    state = AdamState.zeros_like(params)
    steps = []
    for _ in range(2000):
        new, state = adam_step(state, params, {"a": np.array([[0.3]])}, 0.01)
        steps.append(float(params["a"][0, 0] - new["a"][0, 0]))
        params = new
    assert steps[-1] == pytest.approx(0.01, rel=1e-6)


def test_adam_rejects_bad_gradients():
    params = {"a": np.zeros((1, 2))}
    state = AdamState.zeros_like(params)
    with pytest.raises(NumericalFailure):
        adam_step(state, params, {"a": np.array([[np.nan, 0.0]])}, 0.1)
    with pytest.raises(ContractError):
        adam_step(state, params, {"a": np.zeros((2, 1))}, 0.1)


def test_training_is_deterministic():
    p = small_params(2)
    data = toy_regression()
    cfg = TrainConfig(epochs=5, batch_size=16, seed=3, learning_rate=1e-2)
    (a, ra), (b, rb) = train("regression", p, data, cfg), train("regression", p, data, cfg)
    assert ra.loss_trace == rb.loss_trace
    assert np.array_equal(a.to_vector(), b.to_vector())
    _, rc = train("regression", p, data, TrainConfig(epochs=5, batch_size=16, seed=4, learning_rate=1e-2))
    assert rc.loss_trace != ra.loss_trace


def test_frozen_groups_do_not_move():
    p = small_params(3)
    params, _ = train("regression", p, toy_regression(), TrainConfig(epochs=3, batch_size=8, frozen=("feature_map", "noise")))
    before, after = p.flatten(), params.flatten()
    for k in before:
        same = np.array_equal(before[k], after[k])
        assert same if (k.startswith("fm.") or k == "log_sigma_eps") else not same


def test_inducing_gradient_at_step_zero_ignores_freezing():
    p = small_params(4, hidden=(5, 5), d=3, m=4)
    X, y = toy_regression(12, seed=4)
    _, g_all = loss_and_grad("regression", p, X, y)
    _, g_frozen = loss_and_grad("regression", p, X, y, frozen=("feature_map",))
    assert "fm.W0" in g_all and "fm.W0" not in g_frozen
    assert np.max(np.abs(g_all["Z"] - g_frozen["Z"])) < 1e-12


def test_n_over_b_scaling_multiplies_gradients(monkeypatch):
    seen = []
    real = trainer_mod.adam_step

    def spy(state, params, grads, lr, *args):
        seen.append(grads["Z"].copy())
        return real(state, params, grads, lr, *args)

    monkeypatch.setattr(trainer_mod, "adam_step", spy)
    p = small_params(5)
    X, y = toy_regression(20)
    train("regression", p, (X, y), TrainConfig(epochs=1, batch_size=20, loss_scaling="n-over-b"))
    train("regression", p, (X, y), TrainConfig(epochs=1, batch_size=20))
    np.testing.assert_allclose(seen[0], seen[1])  # n / b = 1 for a single full batch
    seen.clear()
    train("regression", p, (X, y), TrainConfig(epochs=1, batch_size=10, loss_scaling="n-over-b"))
    train("regression", p, (X, y), TrainConfig(epochs=1, batch_size=10))
    np.testing.assert_allclose(seen[0], 2.0 * seen[2], rtol=1e-14)  # n / b = 2


def test_batch_larger_than_dataset_is_clipped():
    p = small_params(6)
    _, report = train("regression", p, toy_regression(10), TrainConfig(epochs=2, batch_size=500))
    assert report.epochs_completed == 2


def test_recovers_from_isolated_failures(monkeypatch):
    real = trainer_mod.loss_and_grad
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] in (2, 3):
            raise NumericalFailure("injected", term="logdet")
        return real(*args, **kwargs)

    monkeypatch.setattr(trainer_mod, "loss_and_grad", flaky)
    _, report = train("regression", small_params(7), toy_regression(), TrainConfig(epochs=2, batch_size=10))
    assert report.recoveries == 2 and report.jitter_escalations == 2
    assert report.jitter_floor == pytest.approx(1e-9)
    assert report.epochs_completed == 2


def test_three_consecutive_failures_abort_with_checkpoint(monkeypatch):
    real = trainer_mod.loss_and_grad
    calls = {"n": 0}

    def failing(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 4:
            raise NumericalFailure("injected", term="quadratic")
        return real(*args, **kwargs)

    monkeypatch.setattr(trainer_mod, "loss_and_grad", failing)
    p = small_params(8)
    with pytest.raises(TrainingDiverged) as info:
        train("regression", p, toy_regression(), TrainConfig(epochs=5, batch_size=10, learning_rate=1e-2))
    ckpt = info.value.checkpoint
    assert ckpt is not None
    assert not np.array_equal(ckpt.to_vector(), p.to_vector())  # one full epoch completed


def test_checkpoint_callback():
    seen = []
    train("regression", small_params(9), toy_regression(), TrainConfig(epochs=4, batch_size=20, checkpoint_every=2),
          on_checkpoint=lambda params, epoch, report: seen.append((epoch, report.epochs_completed)))
    assert seen == [(1, 2), (3, 4)]


def test_report_serialization_without_timing():
    _, report = train("regression", small_params(), toy_regression(), TrainConfig(epochs=1, batch_size=20))
    d = report.to_dict(timing=False)
    assert "wall_clock" not in d and d["epochs_completed"] == 1
    assert "wall_clock" in report.to_dict()
    assert isinstance(TrainReport().to_dict(), dict)


def test_unknown_task_and_bad_data():
    with pytest.raises(ContractError):
        train("ranking", small_params(), toy_regression(), TrainConfig(epochs=1))
    with pytest.raises(ContractError):
        train("regression", small_params(), (np.ones((3, 2)), np.ones(4)), TrainConfig(epochs=1))
