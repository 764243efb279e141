import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amtl.errors import ShapeError
from amtl.layers import (
    PAPER_DELAYS,
    GrlSpec,
    TdnnSpec,
    dense_backward,
    dense_forward,
    grl_backward,
    grl_forward,
    receptive_field,
    relu_backward,
    relu_forward,
    tdnn_backward,
    tdnn_forward,
)
from amtl.numerics import ParameterSet, finite_diff_check, softmax_xent


def _fd_layer(forward, backward, x, W, b, labels, tol):
    """Gradient check of x -> layer -> softmax xent w.r.t. x, W and b."""
    ps = ParameterSet()
    ps.new("x", x)
    ps.new("W", W)
    ps.new("b", b)

    def loss(p):
        y = forward(p["x"].value, p["W"].value, p["b"].value)
        val, d = softmax_xent(y, labels)
        dx, dW, db = backward(d, p["x"].value, p["W"].value)
        p["x"].grad += dx
        p["W"].grad += dW
        p["b"].grad += db
        return val

    assert finite_diff_check(loss, ps, 1e-6) < tol


def test_dense_identity():
    x = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_array_equal(dense_forward(x, np.eye(3), np.zeros(3)), x)


def test_dense_hand():
    y = dense_forward(np.array([[1.0, 1.0]]), np.array([[1.0], [2.0]]), np.array([3.0]))
    assert y.tolist() == [[6.0]]


def test_dense_shape_error():
    with pytest.raises(ShapeError):
        dense_forward(np.ones((2, 3)), np.ones((2, 2)), np.zeros(2))


def test_dense_backward_fd():
    rng = np.random.default_rng(1)
    _fd_layer(dense_forward, dense_backward, rng.standard_normal((5, 4)),
              rng.standard_normal((4, 3)), rng.standard_normal((1, 3)), [0, 1, 2, 2, 0], 1e-6)


def splice_then_dense(x, delays, W, b):
    """Explicit per-frame oracle: build each tapped context vector by hand."""
    lo, hi = min(delays), max(delays)
    rows = []
    for t in range(-lo, x.shape[0] - hi):
        ctx = np.concatenate([x[t + d] for d in delays])
        rows.append(ctx @ W + b.reshape(-1))
    return np.array(rows)


def test_tdnn_single_tap_is_dense():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((7, 3))
    W, b = rng.standard_normal((3, 2)), rng.standard_normal((1, 2))
    y = tdnn_forward(x, TdnnSpec((0,), 3, 2), W, b)
    assert y.shape == (7, 2)
    np.testing.assert_array_equal(y, dense_forward(x, W, b))


def test_tdnn_hand():
    y = tdnn_forward(np.array([[1.0], [2.0], [3.0]]), TdnnSpec((-1, 1), 1, 1), np.array([[1.0], [1.0]]), np.zeros(1))
    assert y.tolist() == [[4.0]]


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.integers(-7, 7), min_size=1, max_size=5, unique=True),
    st.integers(1, 4),
    st.integers(1, 4),
    st.integers(0, 6),
    st.integers(0, 2**31),
)
def test_tdnn_vs_splice_oracle(delays, d_in, d_out, extra, seed):
    delays = tuple(sorted(delays))
    spec = TdnnSpec(delays, d_in, d_out)
    rng = np.random.default_rng(seed)
    T = spec.span + 1 + extra
    x = rng.standard_normal((T, d_in))
    W, b = rng.standard_normal((spec.splice_dim, d_out)), rng.standard_normal((1, d_out))
    y = tdnn_forward(x, spec, W, b)
    assert y.shape == (T - spec.span, d_out)
    assert np.max(np.abs(y - splice_then_dense(x, delays, W, b))) < 1e-12


def test_tdnn_backward_fd():
    rng = np.random.default_rng(4)
    spec = TdnnSpec((-3, 0, 2), 3, 4)
    x = rng.standard_normal((10, 3))
    W, b = rng.standard_normal((spec.splice_dim, 4)), rng.standard_normal((1, 4))
    labels = rng.integers(0, 4, size=10 - spec.span)
    _fd_layer(
        lambda x, W, b: tdnn_forward(x, spec, W, b),
        lambda d, x, W: tdnn_backward(d, x, spec, W),
        x, W, b, labels, 1e-6,
    )


def test_tdnn_too_short():
    spec = TdnnSpec((-7, 2), 2, 2)
    with pytest.raises(ShapeError, match="at least 10"):
        tdnn_forward(np.ones((9, 2)), spec, np.ones((4, 2)), np.zeros(2))


def test_tdnn_spec_validation():
    with pytest.raises(ValueError):
        TdnnSpec((), 1, 1)
    with pytest.raises(ValueError):
        TdnnSpec((1, 0), 1, 1)
    assert TdnnSpec((-7, 2), 1, 1).context == (7, 2)


def test_paper_receptive_field():
    assert receptive_field(PAPER_DELAYS) == (16, 12)


def test_relu_cases():
    assert relu_forward(np.array([[-1.0, 2.0]])).tolist() == [[0.0, 2.0]]
    x = -np.abs(np.random.default_rng(0).standard_normal((3, 3))) - 0.1
    assert not relu_forward(x).any()
    assert not relu_backward(np.ones_like(x), x).any()


def test_relu_fd_away_from_kink():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((6, 4))
    x[np.abs(x) < 1e-3] = 0.5
    ps = ParameterSet()
    ps.new("x", x)
    labels = [0, 1, 2, 3, 0, 1]

    def loss(p):
        val, d = softmax_xent(relu_forward(p["x"].value), labels)
        p["x"].grad += relu_backward(d, p["x"].value)
        return val

    assert finite_diff_check(loss, ps) < 1e-6


@pytest.mark.parametrize("alpha", [0.0, 0.01, 0.5, 3.0])
def test_grl_forward_bit_identity(alpha):
    x = np.random.default_rng(7).standard_normal((5, 3))
    y = grl_forward(x, GrlSpec(alpha))
    assert y.tobytes() == x.tobytes()
    assert grl_forward(grl_forward(x, GrlSpec(alpha)), GrlSpec(alpha)).tobytes() == x.tobytes()


def test_grl_backward():
    assert grl_backward(np.array([[1.0]]), GrlSpec(0.5)).tolist() == [[-0.5]]
    assert not grl_backward(np.ones((2, 2)), GrlSpec(0.0)).any()


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 5.0), st.integers(0, 2**31))
def test_grl_composite_reverses_gradient(alpha, seed):
    """dL/dW_G through the GRL equals -alpha times dL/dW_G without it."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 4))
    Wg, bg = rng.standard_normal((4, 5)), rng.standard_normal((1, 5))
    Wh, bh = rng.standard_normal((5, 3)), rng.standard_normal((1, 3))
    labels = rng.integers(0, 3, size=6)
    spec = GrlSpec(alpha)

    def grads(with_grl):
        h = dense_forward(x, Wg, bg)
        z = grl_forward(h, spec) if with_grl else h
        _, d = softmax_xent(dense_forward(z, Wh, bh), labels)
        dz, _, _ = dense_backward(d, z, Wh)
        dh = grl_backward(dz, spec) if with_grl else dz
        _, dWg, dbg = dense_backward(dh, x, Wg)
        return dWg, dbg

    (a_W, a_b), (p_W, p_b) = grads(True), grads(False)
    assert np.max(np.abs(a_W - (-alpha) * p_W)) < 1e-12
    assert np.max(np.abs(a_b - (-alpha) * p_b)) < 1e-12
