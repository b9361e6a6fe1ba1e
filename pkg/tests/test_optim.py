import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dan.optim import OptimConfig, Optimizer, learning_rate, optimizer_step
from dan.tensor import parameter


def test_plain_sgd_step():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, 0.25])
    optimizer_step([p], [g], {}, OptimConfig.sgd(lr=0.1, momentum=0.0))
    assert np.array_equal(p, np.array([1.0, -2.0]) - 0.1 * g)


def test_zero_grad_leaves_params():
    p = np.array([3.0])
    optimizer_step([p], [np.zeros(1)], {}, OptimConfig.sgd(momentum=0.0))
    assert p[0] == 3.0


def test_none_grad_is_skipped():
    p = np.array([3.0])
    state = {}
    optimizer_step([p], [None], state, OptimConfig.sgd())
    assert p[0] == 3.0 and not state


def test_momentum_accumulates():
    p = np.zeros(1)
    state = {}
    cfg = OptimConfig.sgd(lr=1.0, momentum=0.9)
    optimizer_step([p], [np.ones(1)], state, cfg)
    optimizer_step([p], [np.ones(1)], state, cfg)
    assert p[0] == pytest.approx(-(1.0 + 1.9))


@given(arrays(np.float64, 5, elements=st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3)))
def test_adam_first_step_has_magnitude_lr(g):
    p = np.zeros(5)
    optimizer_step([p], [g], {}, OptimConfig.adam(lr=1e-3))
    # bias-corrected first step is lr * g / (|g| + eps)
    assert np.allclose(np.abs(p), 1e-3 * np.abs(g) / (np.abs(g) + 1e-8), rtol=1e-12)
    assert np.all(np.sign(p) == -np.sign(g))


def test_adam_two_steps_against_closed_form():
    cfg = OptimConfig.adam(lr=0.01)
    p = np.array([1.0])
    state = {}
    g1, g2 = 2.0, -1.0
    optimizer_step([p], [np.array([g1])], state, cfg)
    optimizer_step([p], [np.array([g2])], state, cfg)
    m1, v1 = 0.1 * g1, 0.001 * g1 * g1
    m2, v2 = 0.9 * m1 + 0.1 * g2, 0.999 * v1 + 0.001 * g2 * g2
    x = 1.0 - 0.01 * (m1 / 0.1) / (math.sqrt(v1 / 0.001) + 1e-8)
    x -= 0.01 * (m2 / (1 - 0.81)) / (math.sqrt(v2 / (1 - 0.999**2)) + 1e-8)
    assert p[0] == pytest.approx(x, rel=1e-14)


def test_cosine_schedule_endpoints():
    cfg = OptimConfig.adam(lr=1.0)
    assert learning_rate(cfg, 0, 11) == 1.0
    assert learning_rate(cfg, 10, 11) == pytest.approx(0.01)
    assert learning_rate(cfg, 5, 11) == pytest.approx(0.505)
    assert learning_rate(OptimConfig(schedule="constant", lr=0.3), 7, 11) == 0.3


def test_config_validation():
    with pytest.raises(ValueError):
        OptimConfig(name="rmsprop")
    with pytest.raises(ValueError):
        OptimConfig(lr=0.0)


def test_state_arrays_round_trip():
    a, b = parameter(np.ones(3)), parameter(np.ones((2, 2)))
    opt = Optimizer([("a", a), ("b", b)], OptimConfig.adam())
    a.grad, b.grad = np.full(3, 0.5), np.full((2, 2), -1.0)
    opt.step()
    arrays = opt.state_arrays()
    assert set(arrays) == {"step", "m/a", "v/a", "m/b", "v/b"}
    other = Optimizer([("a", a), ("b", b)], OptimConfig.adam())
    other.load_state_arrays(arrays)
    assert other.state["step"] == 1
    assert all(np.array_equal(other.state[k], opt.state[k]) for k in opt.state if k != "step")
