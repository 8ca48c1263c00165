import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from netprompt import nn


def _mlp_oracle(weights, biases, x):
    a = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w + b
        a = z if i == len(weights) - 1 else np.where(z > 0, z, 0.0)
    return a


# -- MLP ------------------------------------------------------------------

def test_identity_linear_layer():
    net = nn.Mlp.from_params([np.eye(4)], [np.zeros(4)])
    x = np.array([1.0, -2.0, 3.0, 0.5])
    np.testing.assert_array_equal(net.forward(x), x)


def test_zero_weights_give_zero_output(rng):
    net = nn.Mlp([5, 8, 3])
    for p in net.params():
        p[...] = 0.0
    np.testing.assert_array_equal(net.forward(rng.standard_normal(5)), np.zeros(3))


def test_forward_matches_matrix_oracle(rng):
    net = nn.Mlp([6, 10, 7, 3], seed=3)
    x = rng.standard_normal((9, 6))
    np.testing.assert_allclose(net.forward(x), _mlp_oracle(net.weights, net.biases, x), rtol=1e-14)


def test_forward_shape_error():
    with pytest.raises(nn.DimensionError):
        nn.Mlp([3, 2]).forward(np.zeros(4))


def test_backward_requires_forward():
    with pytest.raises(nn.StateError):
        nn.Mlp([3, 2]).backward(np.zeros(2))


def test_linear_scalar_gradient():
    net = nn.Mlp.from_params([np.array([[2.0]])], [np.array([0.0])])
    net.forward(np.array([3.0]))
    dw, db = net.backward(np.array([0.5]))
    assert dw[0, 0] == pytest.approx(1.5)
    assert db[0] == pytest.approx(0.5)


def test_zero_output_grad_gives_zero_grads(rng):
    net = nn.Mlp([4, 6, 2])
    net.forward(rng.standard_normal((3, 4)))
    assert all(not np.any(g) for g in net.backward(np.zeros((3, 2))))


def test_forward_does_not_mutate_params(rng):
    net = nn.Mlp([4, 6, 2])
    before = [p.copy() for p in net.params()]
    net.forward(rng.standard_normal(4))
    net.predict(rng.standard_normal(4))
    for a, b in zip(before, net.params()):
        np.testing.assert_array_equal(a, b)


def test_predict_keeps_backward_cache(rng):
    net = nn.Mlp([3, 4, 2])
    x = rng.standard_normal(3)
    net.forward(x)
    g1 = net.backward(np.ones(2))
    net.predict(rng.standard_normal(3))
    g2 = net.backward(np.ones(2))
    for a, b in zip(g1, g2):
        np.testing.assert_array_equal(a, b)


@given(st.integers(0, 2**31 - 1))
def test_mlp_gradients_match_finite_differences(seed):
    r = np.random.default_rng(seed)
    sizes = [int(s) for s in r.integers(1, 9, size=r.integers(2, 5))]
    net = nn.Mlp(sizes, seed=seed)
    for b in net.biases:
        b[...] = r.uniform(-0.5, 0.5, b.shape)
    x = r.standard_normal((3, sizes[0]))
    y = r.standard_normal((3, sizes[-1]))

    def loss():
        return nn.mse_loss(net.predict(x), y)[0]

    _, dout = nn.mse_loss(net.forward(x), y)
    # finite differences are meaningless within eps of a ReLU kink
    assume(all(np.abs(z).min() > 1e-3 for z in net._cache[2][:-1]))
    grads = net.backward(dout)
    assert nn.check_gradients(loss, net.params(), grads) <= 1e-4


def test_mlp_fits_line():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (100, 1))
    y = 2 * x + 1
    net = nn.Mlp([1, 16, 1], seed=0)
    opt = nn.OptimState("sgd", 0.05)
    for _ in range(5000):
        loss, g = nn.mse_loss(net.forward(x), y)
        nn.optimize_step(net.params(), net.backward(g), opt)
    assert nn.mse_loss(net.predict(x), y)[0] < 1e-3


def test_mlp_checkpoint_round_trip(tmp_path, rng):
    net = nn.Mlp([3, 5, 2], seed=9)
    nn.save_checkpoint(net, tmp_path / "m.json")
    back = nn.load_checkpoint(tmp_path / "m.json")
    x = rng.standard_normal(3)
    np.testing.assert_array_equal(net.predict(x), back.predict(x))


def test_copy_and_load_from_are_independent(rng):
    net = nn.Mlp([3, 4, 2], seed=1)
    other = net.copy()
    other.weights[0] += 1.0
    assert not np.allclose(net.weights[0], other.weights[0])
    net.load_from(other)
    np.testing.assert_array_equal(net.weights[0], other.weights[0])


# -- LSTM -----------------------------------------------------------------

def _sig(z):
    return 1 / (1 + np.exp(-z))


def test_lstm_shapes_and_forget_bias():
    cell = nn.LstmCell(3, 5)
    assert cell.W.shape == (20, 8)
    np.testing.assert_array_equal(cell.b[5:10], 1.0)
    np.testing.assert_array_equal(np.delete(cell.b, np.s_[5:10]), 0.0)


def test_lstm_zero_weights_zero_states(rng):
    cell = nn.LstmCell(2, 4)
    cell.W[...] = 0.0
    cell.b[...] = 0.0
    np.testing.assert_array_equal(cell.forward_sequence(rng.standard_normal((6, 2))), 0.0)


def test_lstm_single_step_by_hand():
    cell = nn.LstmCell(1, 1)
    cell.W[...] = np.array([[0.5, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    cell.b[...] = np.array([0.0, 1.0, 0.0, 0.0])
    x = 0.3
    i, f, o, g = _sig(0.5 * x), _sig(1.0), _sig(x), np.tanh(2 * x)
    c = f * 0.0 + i * g
    h = cell.forward_sequence(np.array([[x]]))
    assert cell.last_cell[0, 0] == pytest.approx(c, rel=1e-14)
    assert h[0, 0] == pytest.approx(o * np.tanh(c), rel=1e-14)


def test_lstm_length_one_equals_first_step(rng):
    cell = nn.LstmCell(3, 4, seed=2)
    xs = rng.standard_normal((5, 3))
    full = cell.forward_sequence(xs)
    one = cell.forward_sequence(xs[:1])
    np.testing.assert_allclose(full[0], one[0], rtol=1e-15)


def test_lstm_dimension_error():
    with pytest.raises(nn.DimensionError):
        nn.LstmCell(3, 4).forward_sequence(np.zeros((5, 2)))


def test_bptt_requires_forward():
    with pytest.raises(nn.StateError):
        nn.LstmCell(2, 2).bptt(np.zeros((3, 2)))


def test_bptt_zero_in_zero_out(rng):
    cell = nn.LstmCell(2, 3)
    cell.forward_sequence(rng.standard_normal((4, 2)))
    (dW, db), dx = cell.bptt(np.zeros((4, 3)))
    assert not dW.any() and not db.any() and not dx.any()


@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 8), st.integers(1, 4), st.integers(1, 3))
def test_lstm_gradients_match_finite_differences(seed, T, H, I, B):
    r = np.random.default_rng(seed)
    cell = nn.LstmCell(I, H, seed=seed)
    cell.W += 0.3 * r.standard_normal(cell.W.shape)
    x = r.standard_normal((T, B, I))
    target = r.standard_normal((T, B, H))

    def loss():
        return nn.mse_loss(cell.forward_sequence(x), target)[0]

    _, dh = nn.mse_loss(cell.forward_sequence(x), target)
    grads, dx = cell.bptt(dh)
    assert nn.check_gradients(loss, cell.params(), grads) <= 1e-4
    assert nn.check_gradients(loss, [x], [dx]) <= 1e-4


def test_lstm_checkpoint_round_trip(tmp_path, rng):
    cell = nn.LstmCell(2, 3, seed=5)
    nn.save_checkpoint(cell, tmp_path / "c.json")
    back = nn.load_checkpoint(tmp_path / "c.json")
    x = rng.standard_normal((4, 2))
    np.testing.assert_array_equal(cell.forward_sequence(x), back.forward_sequence(x))


# -- optimizers and losses -------------------------------------------------

def test_sgd_reference_step():
    p = np.array([1.0])
    nn.optimize_step([p], [np.array([2.0])], nn.OptimState("sgd", 0.005))
    assert p[0] == pytest.approx(0.99)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_params(kind):
    p = np.array([1.0, -2.0])
    nn.optimize_step([p], [np.zeros(2)], nn.OptimState(kind, 0.1))
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_minimizes_quadratic():
    p = np.array([5.0])
    st_ = nn.OptimState("adam", 0.01)
    for _ in range(2000):
        nn.optimize_step([p], [2 * p], st_)
    assert abs(p[0]) < 0.1


def test_adam_first_step_matches_hand_value():
    p = np.array([1.0])
    nn.optimize_step([p], [np.array([0.5])], nn.OptimState("adam", 0.1))
    # bias-corrected m/sqrt(v) is sign(g) on the first step
    assert p[0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8))


def test_nonfinite_gradient_fails_fast():
    with pytest.raises(nn.NumericError):
        nn.optimize_step([np.zeros(2)], [np.array([0.0, np.nan])], nn.OptimState("sgd", 0.1))


def test_optim_state_validation():
    with pytest.raises(ValueError):
        nn.OptimState("rmsprop", 0.1)
    with pytest.raises(ValueError):
        nn.OptimState("sgd", 0.0)


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 3.0))
def test_loss_gradients(seed, delta):
    r = np.random.default_rng(seed)
    pred = r.standard_normal(7) * 2
    target = r.standard_normal(7)
    for fn in (nn.mse_loss, lambda p, t: nn.huber_loss(p, t, delta)):
        _, g = fn(pred, target)
        assert nn.check_gradients(lambda: fn(pred, target)[0], [pred], [g]) <= 1e-4


def test_huber_regions():
    loss, g = nn.huber_loss(np.array([0.5, 3.0]), np.zeros(2), delta=1.0)
    assert loss == pytest.approx((0.125 + 2.5) / 2)
    np.testing.assert_allclose(g, [0.25, 0.5])


def test_sigmoid_is_stable():
    z = np.array([-1000.0, 0.0, 1000.0])
    np.testing.assert_array_equal(nn.sigmoid(z), [0.0, 0.5, 1.0])
