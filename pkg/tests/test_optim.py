import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gansweep.errors import ConfigurationError, ContractError
from gansweep.optim import CNN_ADAM, GAN_ADAM, Adam, AdamConfig, AdamState, adam_step
from gansweep.tensor import parameter


def scalar_adam(x0, grad_fn, steps, lr, b1, b2, eps):
    """Plain-Python Adam on one scalar."""
    x, m, v, path = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        path.append(x)
    return path


def test_default_betas():
    assert (GAN_ADAM.learning_rate, GAN_ADAM.beta1, GAN_ADAM.beta2) == (2e-4, 0.5, 0.999)
    assert (CNN_ADAM.learning_rate, CNN_ADAM.beta1, CNN_ADAM.beta2) == (1e-4, 0.9, 0.999)
    assert GAN_ADAM.eps == CNN_ADAM.eps == 1e-8


@pytest.mark.parametrize("kwargs", [{"learning_rate": 0}, {"eps": 0}, {"beta1": 1.0}, {"beta2": -0.1}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        AdamConfig(**kwargs)


def test_first_step_moves_by_learning_rate():
    p = parameter(np.array([1.0]))
    state = AdamState.for_params([p])
    p.grad = np.array([0.5])
    adam_step([p], state, AdamConfig(learning_rate=0.01))
    assert p.data[0] - 1.0 == pytest.approx(-0.01, abs=1e-6)
    assert p.grad is None and state.t == 1


def test_zero_gradient_leaves_parameter():
    p = parameter(np.array([2.0, -3.0]))
    state = AdamState.for_params([p])
    p.grad = np.zeros(2)
    adam_step([p], state, AdamConfig())
    np.testing.assert_array_equal(p.data, [2.0, -3.0])


def test_missing_gradient_is_a_contract_error():
    p = parameter(np.ones(2))
    with pytest.raises(ContractError):
        adam_step([p], AdamState.for_params([p]), AdamConfig())


def test_trajectory_matches_scalar_reference():
    cfg = AdamConfig(learning_rate=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    p = parameter(np.array([3.0]))
    state = AdamState.for_params([p])
    path = []
    for _ in range(3):
        loss = ((p - 1.0) * (p - 1.0)).sum()
        loss.backward()
        adam_step([p], state, cfg)
        path.append(float(p.data[0]))
    expected = scalar_adam(3.0, lambda x: 2 * (x - 1.0), 3, 0.1, 0.9, 0.999, 1e-8)
    np.testing.assert_allclose(path, expected, rtol=0, atol=1e-10)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.sampled_from([GAN_ADAM, CNN_ADAM]))
def test_update_magnitude_is_bounded(grads, cfg):
    p = parameter(np.zeros(1))
    state = AdamState.for_params([p])
    for g in grads:
        before = p.data.copy()
        p.grad = np.array([g])
        adam_step([p], state, cfg)
        assert abs(p.data[0] - before[0]) <= 10 * cfg.learning_rate


def test_descends_on_a_convex_quadratic():
    rng = np.random.default_rng(0)
    target = rng.standard_normal(5)
    p = parameter(np.zeros(5))
    opt = Adam([p], AdamConfig(learning_rate=1e-2))

    def loss():
        d = p - target
        return (d * d).sum()

    start = loss().item()
    for _ in range(200):
        loss().backward()
        opt.step()
    assert loss().item() < start


def test_state_shapes_follow_parameters():
    params = [parameter(np.zeros((2, 3))), parameter(np.zeros(4))]
    state = AdamState.for_params(params)
    assert [m.shape for m in state.m] == [(2, 3), (4,)] == [v.shape for v in state.v]
