import numpy as np
import pytest

from oranlat.forecaster import AdamState, ModelConfig, NonFiniteGradient, adam_step, init_weights


@pytest.fixture
def weights():
    return init_weights(ModelConfig(units=2, lookback=3, input_dim=3), 0)


def filled(w, value):
    g = w.zeros_like()
    for _, arr in g:
        arr[...] = value
    return g


def test_first_step_moves_by_learning_rate(weights):
    new, st = adam_step(weights, filled(weights, 1.0), AdamState.zeros(weights), 1e-5)
    assert st.t == 1
    for (name, a), (_, b) in zip(weights, new):
        np.testing.assert_allclose(b - a, -1e-5 / (1 + 1e-8), rtol=1e-9, err_msg=name)


def test_zero_gradient_is_a_no_op(weights):
    new, st = adam_step(weights, filled(weights, 0.0), AdamState.zeros(weights), 1e-3)
    for (_, a), (_, b) in zip(weights, new):
        assert np.array_equal(a, b)
    assert st.t == 1


def test_opposite_gradients_give_opposite_updates(weights):
    g = weights.zeros_like()
    g.W_fwd[0, 0], g.W_fwd[0, 1] = 0.37, -0.37
    new, _ = adam_step(weights, g, AdamState.zeros(weights), 1e-2)
    d0 = new.W_fwd[0, 0] - weights.W_fwd[0, 0]
    d1 = new.W_fwd[0, 1] - weights.W_fwd[0, 1]
    assert d0 == pytest.approx(-d1, rel=1e-12) and d0 < 0


def test_matches_reference_over_several_steps(weights):
    rng = np.random.default_rng(3)
    st = AdamState.zeros(weights)
    w = weights
    theta = weights.W_bwd.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t in range(1, 6):
        g = filled(weights, 0.0)
        g.W_bwd[...] = rng.normal(size=theta.shape)
        m = 0.9 * m + 0.1 * g.W_bwd
        v = 0.999 * v + 0.001 * g.W_bwd**2
        theta = theta - 1e-3 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        w, st = adam_step(w, g, st, 1e-3)
    np.testing.assert_allclose(w.W_bwd, theta, rtol=1e-13)


def test_inputs_are_not_mutated(weights):
    before = weights.copy()
    st = AdamState.zeros(weights)
    adam_step(weights, filled(weights, 0.5), st, 1e-3)
    for (_, a), (_, b) in zip(before, weights):
        assert np.array_equal(a, b)
    assert st.t == 0 and not st.m.W_fwd.any()


def test_non_finite_gradient_rejected(weights):
    g = filled(weights, 0.0)
    g.U_fwd[0, 0] = np.nan
    with pytest.raises(NonFiniteGradient, match="U_fwd"):
        adam_step(weights, g, AdamState.zeros(weights), 1e-3)
