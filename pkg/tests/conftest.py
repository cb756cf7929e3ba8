import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ignet.model import ModelConfig, init_parameters

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# (number, title, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.geomspace(1.0, cond, n)
    return (Q * eig) @ Q.T


def small_params(seed=0, input_dim=2, hidden=(3,), d=2, m=3, sigma=0.5, gamma=0.7,
                 kernel="rbf", spread=1.0):
    """Tiny random model with every parameter nonzero."""
    cfg = ModelConfig(input_dim=input_dim, hidden=hidden, feature_dim=d, n_inducing=m,
                      kernel=kernel, gamma=gamma, init_sigma_eps=sigma, feature_scale=1.0)
    p = init_parameters(cfg, seed)
    rng = np.random.default_rng(seed + 1000)
    arr = p.flatten()
    for k in arr:
        if k.startswith("fm.b") or k.startswith("head"):
            arr[k] = 0.3 * rng.standard_normal(arr[k].shape)
    arr["Z"] = spread * rng.standard_normal(arr["Z"].shape)
    return p.unflatten(arr)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
