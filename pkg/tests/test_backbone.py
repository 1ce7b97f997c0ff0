import numpy as np
import pytest

from conftest import small_config
from melstream import backbone as BB
from melstream import random_init
from melstream.kernels import ConfigError, OpCounter, ShapeError


def inputs(cfg, T, seed=0):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((T, cfg.n_bands, cfg.feature_dim)).astype(np.float32)
    sup = rng.standard_normal((T, cfg.n_bands)).astype(np.float32)
    return e, sup


def test_band_neighbourhood_clamps_edges():
    aux = np.arange(4, dtype=np.float32).reshape(1, 4, 1)
    nb = BB.band_neighbourhood(aux, 2, 1)
    assert nb.shape == (1, 4, 4)
    np.testing.assert_array_equal(nb[0, 0], [0, 0, 0, 1])
    np.testing.assert_array_equal(nb[0, 3], [1, 2, 3, 3])


def test_frame_context_stacks_recent_frames():
    aux = np.arange(6, dtype=np.float32).reshape(3, 2)
    ctx, hist = BB.frame_context(aux, np.full((2, 2), -1, np.float32))
    assert ctx.shape == (3, 2, 3)
    np.testing.assert_array_equal(ctx[0, 0], [-1, -1, 0])
    np.testing.assert_array_equal(ctx[2, 1], [1, 3, 5])
    np.testing.assert_array_equal(hist, aux[1:])


def test_forward_shapes_range_and_scopes(small_cfg, small_weights):
    bb = BB.Backbone(small_cfg, small_weights)
    counter = OpCounter()
    mask, state = bb.forward(*inputs(small_cfg, 5), counter=counter)
    assert mask.shape == (5, small_cfg.n_bands)
    assert np.all((mask >= 0) & (mask <= 1))
    scopes = {name.split(".")[1] for name in counter.by_layer}
    assert scopes == {"m1", "m2", "m3", "m4", "out"}
    assert state.context.shape == (small_cfg.backbone.context - 1, small_cfg.n_bands)


def test_state_chaining_matches_one_pass(small_cfg, small_weights):
    bb = BB.Backbone(small_cfg, small_weights)
    e, sup = inputs(small_cfg, 9, seed=1)
    full, s_full = bb.forward(e, sup)
    state = None
    parts = []
    for t in range(9):
        m, state = bb.forward(e[t : t + 1], sup[t : t + 1], state)
        parts.append(m)
    np.testing.assert_allclose(np.concatenate(parts), full, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(state.m3[1], s_full.m3[1], rtol=1e-5, atol=1e-6)


def test_forward_leaves_caller_state_untouched(small_cfg, small_weights):
    bb = BB.Backbone(small_cfg, small_weights)
    e, sup = inputs(small_cfg, 3, seed=2)
    _, s1 = bb.forward(e, sup)
    keep = s1.copy()
    bb.forward(e, sup, s1)
    np.testing.assert_array_equal(s1.m2[0], keep.m2[0])
    np.testing.assert_array_equal(s1.context, keep.context)


def test_identity_modules_are_skipped():
    cfg = small_config(identity=(2, 3), dims=(8, 8, 8, 8))
    w = random_init(cfg, 0)
    assert not any(k.startswith(("bb.m2.", "bb.m3.")) for k in w)
    bb = BB.Backbone(cfg, w)
    counter = OpCounter()
    mask, state = bb.forward(*inputs(cfg, 2), counter=counter)
    assert state.m2 is None and state.m3 is None
    assert not any(".m2." in k or ".m3." in k for k in counter.by_layer)
    assert mask.shape == (2, cfg.n_bands)


def test_rejects_bad_inputs(small_cfg, small_weights):
    bb = BB.Backbone(small_cfg, small_weights)
    e, sup = inputs(small_cfg, 2)
    with pytest.raises(ShapeError):
        bb.forward(e[:, :5], sup)
    with pytest.raises(ShapeError):
        bb.forward(e, sup[:1])
    broken = dict(small_weights)
    del broken["bb.out.b"]
    with pytest.raises(ConfigError):
        BB.Backbone(small_cfg, broken)
    broken = dict(small_weights, **{"bb.out.b": np.zeros(2, np.float32)})
    with pytest.raises(ShapeError):
        BB.Backbone(small_cfg, broken)
