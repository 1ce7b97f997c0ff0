import numpy as np
import pytest

import oracles
from melstream import kernels as K
from melstream.kernels import CAUSAL, SAME, ConfigError, LSTMParams, OpCounter, ShapeError

TOL = 1e-5


def rand(rng, *shape, scale=1.0):
    return (scale * rng.standard_normal(shape)).astype(np.float32)


def test_linear_matches_loops():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rand(rng, 3, 4, 5)
        W, b = rand(rng, 6, 5), rand(rng, 6)
        assert oracles.rel_err(K.linear(x, W, b), oracles.linear(x, W, b)) <= TOL


def test_linear_counts_and_shape_errors():
    c = OpCounter()
    K.linear(np.ones((7, 3), np.float32), np.ones((2, 3), np.float32), np.zeros(2, np.float32), counter=c)
    assert (c.macs, c.adds, c.nonlins) == (42, 14, 0)
    with pytest.raises(ShapeError):
        K.linear(np.ones((2, 4)), np.ones((3, 3)))
    with pytest.raises(ShapeError):
        K.linear(np.ones((2, 3)), np.ones((3, 3)), np.ones(2))


def test_layer_norm_matches_loops_and_normalises():
    rng = np.random.default_rng(1)
    x = rand(rng, 5, 9, scale=3.0) + 2.0
    g, b = np.ones(9, np.float32), np.zeros(9, np.float32)
    y = K.layer_norm(x, g, b)
    assert oracles.rel_err(y, oracles.layer_norm(x, g, b, K.LN_EPS)) <= TOL
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-3)


def test_layer_norm_constant_row_is_beta():
    y = K.layer_norm(np.full((2, 4), 7.0, np.float32), np.ones(4, np.float32), np.arange(4, dtype=np.float32))
    np.testing.assert_allclose(y, np.tile(np.arange(4), (2, 1)), atol=1e-6)


@pytest.mark.parametrize("mode", [SAME, CAUSAL])
@pytest.mark.parametrize("k", [1, 2, 3, 6])
def test_conv1d_matches_loops(mode, k):
    rng = np.random.default_rng(k)
    x = rand(rng, 2, 7, 3)
    ker, bias = rand(rng, 4, 3, k), rand(rng, 4)
    want = oracles.conv1d(x, ker, bias, mode)
    assert oracles.rel_err(K.conv1d(x, ker, bias, mode=mode), want) <= TOL
    assert oracles.rel_err(K.conv1d(x, K.ConvKernel(ker), bias, mode=mode), want) <= TOL


def test_conv1d_same_pads_centred():
    # identity at the last tap reads the next position; the final one sees zero padding
    ker = np.zeros((1, 1, 3), np.float32)
    ker[0, 0, 2] = 1.0
    x = np.arange(1, 6, dtype=np.float32)[:, None]
    np.testing.assert_array_equal(K.conv1d(x, ker)[:, 0], [2, 3, 4, 5, 0])


def test_conv1d_causal_history_continues_sequence():
    rng = np.random.default_rng(5)
    x = rand(rng, 3, 10, 2)
    ker, bias = rand(rng, 4, 2, 4), rand(rng, 4)
    full = K.conv1d(x, ker, bias, mode=CAUSAL)
    second = K.conv1d(x[:, 6:], ker, bias, mode=CAUSAL, history=x[:, 3:6])
    np.testing.assert_allclose(second, full[:, 6:], rtol=1e-6, atol=1e-6)


def test_conv1d_causal_rejects_wrong_padding():
    x = np.zeros((5, 2), np.float32)
    ker = np.zeros((1, 2, 3), np.float32)
    with pytest.raises(ConfigError):
        K.conv1d(x, ker, mode=CAUSAL, history=np.zeros((3, 2), np.float32))
    with pytest.raises(ConfigError):
        K.conv1d(x, ker, mode="valid")
    with pytest.raises(ShapeError):
        K.conv1d(np.zeros((5, 3), np.float32), ker)


def _params(rng, n_in, hid, scale=0.5):
    return LSTMParams(rand(rng, 4 * hid, n_in, scale=scale), rand(rng, 4 * hid, hid, scale=scale), rand(rng, 4 * hid))


@pytest.mark.parametrize("batch", [1, 3, K.SMALL_BATCH, K.SMALL_BATCH + 5])
def test_lstm_forward_matches_loops(batch):
    rng = np.random.default_rng(batch)
    p = _params(rng, 3, 4)
    x = rand(rng, 6, batch, 3)
    h0, c0 = rand(rng, batch, 4), rand(rng, batch, 4)
    y, (h, c) = K.lstm_seq(x, p, state=(h0, c0))
    wy, wh, wc = oracles.lstm(x, p.Wx, p.Wh, p.b, h0, c0)
    assert oracles.rel_err(y, wy) <= TOL
    assert oracles.rel_err(h, wh) <= TOL
    assert oracles.rel_err(c, wc) <= TOL


@pytest.mark.parametrize("batch", [1, K.SMALL_BATCH + 1])
def test_lstm_bidirectional_matches_loops(batch):
    rng = np.random.default_rng(10 + batch)
    pf, pb = _params(rng, 2, 3), _params(rng, 2, 3)
    x = rand(rng, 5, batch, 2)
    y = K.lstm_seq(x, (pf, pb), "bidirectional")
    want = np.concatenate(
        [oracles.lstm(x, pf.Wx, pf.Wh, pf.b)[0], oracles.lstm(x, pb.Wx, pb.Wh, pb.b, reverse=True)[0]], axis=-1
    )
    assert y.shape == (5, batch, 6)
    assert oracles.rel_err(y, want) <= TOL


def test_lstm_does_not_mutate_state_and_chains():
    rng = np.random.default_rng(2)
    for batch, hid in ((2, 5), (12, 5), (12, 1)):
        p = _params(rng, 3, hid)
        x = rand(rng, 7, batch, 3)
        h0, c0 = rand(rng, batch, hid), rand(rng, batch, hid)
        keep = h0.copy(), c0.copy()
        y_all, (h_all, c_all) = K.lstm_seq(x, p, state=(h0, c0))
        np.testing.assert_array_equal(h0, keep[0])
        np.testing.assert_array_equal(c0, keep[1])
        y1, s1 = K.lstm_seq(x[:4], p, state=(h0, c0))
        y2, (h2, c2) = K.lstm_seq(x[4:], p, state=s1)
        # per-step products have a fixed shape, so chaining is bit-exact
        np.testing.assert_array_equal(np.concatenate([y1, y2]), y_all)
        np.testing.assert_array_equal(h2, h_all)
        np.testing.assert_array_equal(c2, c_all)


def test_lstm_step_and_counts():
    rng = np.random.default_rng(4)
    p = _params(rng, 3, 2)
    x = rand(rng, 5, 3)
    c = OpCounter()
    y, (h, cell) = K.lstm_step(x, None, p, counter=c)
    assert y.shape == h.shape == cell.shape == (5, 2)
    assert c.macs == 5 * 4 * 2 * (3 + 2)
    with pytest.raises(ShapeError):
        K.lstm_step(np.zeros((5, 4), np.float32), None, p)
    with pytest.raises(ShapeError):
        K.lstm_seq(x[None], p, state=(np.zeros((4, 2)), np.zeros((4, 2))))
    with pytest.raises(ConfigError):
        K.lstm_seq(x[None], p, direction="sideways")


def test_gate_nonlinearities_are_bounded():
    rng = np.random.default_rng(6)
    p = _params(rng, 2, 3, scale=1e4)
    x = rand(rng, 4, 9, 2, scale=1e4)
    y, (h, c) = K.lstm_seq(x, p)
    assert np.all(np.abs(y) <= 1.0)
    s = K.sigmoid(np.array([-1e30, -50, 0, 50, 1e30], np.float32))
    assert np.all((s >= 0) & (s <= 1)) and s[2] == 0.5


def test_counter_scopes_nest():
    c = OpCounter()
    with c.scope("a"):
        with c.scope("b"):
            c.add(macs=3)
        c.add(adds=2)
    assert c.by_layer["a.b"] == [3, 0, 0]
    assert c.by_layer["a"] == [0, 2, 0]
    with pytest.raises(ValueError):
        c.add(macs=-1)
