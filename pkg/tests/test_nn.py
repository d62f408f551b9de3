"""Layer builders, ParamSet bookkeeping, attention masking."""

import numpy as np
import pytest

from ttig import nn
from ttig import tensor as T
from ttig.errors import DataError


def _ps_linear(d_in=4, d_out=3, seed=0):
    ps = nn.ParamSet()
    nn.add_linear(ps, "lay", d_in, d_out, np.random.default_rng(seed))
    return ps


def test_add_linear_shapes_and_zero_bias():
    ps = _ps_linear()
    assert ps["lay.w"].data.shape == (4, 3)
    assert ps["lay.b"].data.shape == (3,)
    assert (ps["lay.b"].data == 0).all()


def test_linear_matches_manual_affine():
    ps = _ps_linear()
    x = np.random.default_rng(1).normal(size=(5, 4)).astype(np.float32)
    got = nn.linear(ps, "lay", T.constant(x)).data
    want = x @ ps["lay.w"].data + ps["lay.b"].data
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_add_ln_identity_affine_at_init():
    ps = nn.ParamSet()
    nn.add_ln(ps, "n", 8)
    assert (ps["n.g"].data == 1).all() and (ps["n.b"].data == 0).all()
    x = np.random.default_rng(0).normal(size=(3, 8)).astype(np.float32)
    got = nn.ln_affine(ps, "n", T.constant(x)).data
    np.testing.assert_allclose(got, T.layer_norm(T.constant(x)).data, atol=1e-6)


def test_add_block_param_names():
    ps = nn.ParamSet()
    nn.add_block(ps, "b0", 8, 16, np.random.default_rng(0))
    names = set(ps.names())
    for suffix in ("ln1.g", "attn.wq", "attn.bo", "ln2.g", "mlp.fc1.w", "mlp.fc2.b"):
        assert f"b0.{suffix}" in names
    assert not any(".xattn." in n for n in names)
    ps2 = nn.ParamSet()
    nn.add_block(ps2, "d0", 8, 16, np.random.default_rng(0), cross=True)
    assert "d0.xattn.wq" in set(ps2.names()) and "d0.lnx.g" in set(ps2.names())


def test_paramset_state_dict_roundtrip():
    ps = nn.ParamSet()
    nn.add_mlp(ps, "m", 4, 8, np.random.default_rng(0))
    state = ps.state_dict()
    ps2 = nn.ParamSet()
    nn.add_mlp(ps2, "m", 4, 8, np.random.default_rng(7))
    ps2.load_state(state)
    for name in ps.names():
        np.testing.assert_array_equal(ps[name].data, ps2[name].data)


def test_paramset_load_state_rejects_shape_mismatch():
    ps = nn.ParamSet()
    nn.add_ln(ps, "n", 4)
    with pytest.raises(DataError):
        ps.load_state({"n.g": np.ones(5, np.float32), "n.b": np.zeros(4, np.float32)})


def test_paramset_subset_filters_by_prefix():
    ps = nn.ParamSet()
    nn.add_ln(ps, "enc.n", 4)
    nn.add_ln(ps, "dec.n", 4)
    sub = ps.subset(["enc."])
    assert set(sub.names()) == {"enc.n.g", "enc.n.b"}


def test_attention_mask_blocks_future_positions():
    d, heads, L = 8, 2, 4
    ps = nn.ParamSet()
    nn.add_attn(ps, "a", d, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, L, d)).astype(np.float32)
    causal = np.tril(np.ones((L, L), bool))
    base = nn.attention(ps, "a", T.constant(x), heads, allowed=causal).data
    # changing position 3 must not affect outputs at positions 0..2
    x2 = x.copy()
    x2[0, 3] += 5.0
    out2 = nn.attention(ps, "a", T.constant(x2), heads, allowed=causal).data
    np.testing.assert_array_equal(base[0, :3], out2[0, :3])
    assert np.abs(base[0, 3] - out2[0, 3]).max() > 0


def test_attention_all_allowed_matches_dense():
    d, heads, L = 8, 2, 3
    ps = nn.ParamSet()
    nn.add_attn(ps, "a", d, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(2, L, d)).astype(np.float32)
    full = np.ones((L, L), bool)
    a = nn.attention(ps, "a", T.constant(x), heads, allowed=full).data
    b = nn.attention(ps, "a", T.constant(x), heads).data
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_cross_attention_reads_kv_not_x():
    d, heads = 8, 2
    ps = nn.ParamSet()
    nn.add_attn(ps, "a", d, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, d)).astype(np.float32)
    kv = rng.normal(size=(1, 5, d)).astype(np.float32)
    out = nn.attention(ps, "a", T.constant(x), heads, kv=T.constant(kv)).data
    kv2 = kv.copy()
    kv2[0, 4] += 3.0
    out2 = nn.attention(ps, "a", T.constant(x), heads, kv=T.constant(kv2)).data
    assert np.abs(out - out2).max() > 0


def test_trunc_normal_bounded_and_deterministic():
    a = nn.trunc_normal(np.random.default_rng(3), (200, 5), std=0.02)
    b = nn.trunc_normal(np.random.default_rng(3), (200, 5), std=0.02)
    np.testing.assert_array_equal(a, b)
    assert np.abs(a).max() <= 2 * 0.02 + 1e-8
    assert a.dtype == np.float32


def test_grads_of_returns_only_reached_params():
    ps = nn.ParamSet()
    nn.add_linear(ps, "used", 3, 2, np.random.default_rng(0))
    nn.add_linear(ps, "unused", 3, 2, np.random.default_rng(1))
    x = T.constant(np.ones((4, 3), np.float32))
    with T.Tape():
        loss = T.reduce_sum(nn.linear(ps, "used", x))
    g = nn.grads_of(loss, ps)
    assert "used.w" in g and "used.b" in g
    assert "unused.w" not in g
    np.testing.assert_allclose(g["used.b"], 4.0 * np.ones(2), atol=1e-6)


def test_mse_oracle():
    a = T.constant(np.array([[1.0, 2.0]], np.float32))
    b = T.constant(np.array([[0.0, 4.0]], np.float32))
    assert abs(float(nn.mse(a, b).data) - 2.5) < 1e-6


def test_upsample2x_repeats_pixels():
    x = np.arange(12, dtype=np.float32).reshape(1, 2, 2, 3)
    y = nn.upsample2x(T.constant(x)).data
    assert y.shape == (1, 4, 4, 3)
    np.testing.assert_array_equal(y[0, :2, :2, 0], x[0, 0, 0, 0] * np.ones((2, 2)))
    np.testing.assert_array_equal(y[0, 2:, 2:, 1], x[0, 1, 1, 1] * np.ones((2, 2)))


def test_dropout_train_and_eval_modes():
    x = T.constant(np.ones((200, 10), np.float32))
    assert nn.dropout(x, None) is x
    rng = np.random.default_rng(0)
    y = nn.dropout(x, (rng, 0.5)).data
    kept = y != 0
    # inverted dropout: kept entries rescaled by 1/keep
    np.testing.assert_allclose(y[kept], 2.0, atol=1e-6)
    assert 0.3 < kept.mean() < 0.7
