import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpcneuronet import attention as att
from hpcneuronet import tensor as tn
from hpcneuronet.errors import ConfigError, ShapeError
from hpcneuronet.tensor import Tensor

from helpers import gradcheck
from oracles import attention_two_step, layer_norm_oracle, max_rel_err, mha_oracle


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def random_encoder(rng, d=8, h=2, d_ff=16):
    mha = att.MHAParams(*(T(rng.normal(size=(d, d)) / math.sqrt(d)) for _ in range(4)), n_heads=h)
    return att.EncoderLayerParams(
        mha, T(rng.normal(size=(d, d_ff)) / math.sqrt(d)), T(rng.normal(size=d_ff)),
        T(rng.normal(size=(d_ff, d)) / math.sqrt(d_ff)), T(rng.normal(size=d)),
        T(rng.uniform(0.5, 1.5, d)), T(rng.normal(size=d)), T(rng.uniform(0.5, 1.5, d)),
        T(rng.normal(size=d)))


# -- embedding / PE ---------------------------------------------------------------

def test_embed_examples():
    p = att.EmbeddingParams(T([[1, 0, 0], [0, 1, 0]]), T(np.zeros((2, 3))))
    assert np.array_equal(att.embed_features([2.0, 5.0], p).data, [[2, 0, 0], [0, 5, 0]])
    rng = np.random.default_rng(0)
    p = att.EmbeddingParams(T(rng.normal(size=(4, 6))), T(np.zeros((4, 6))))
    assert np.array_equal(att.embed_features(np.zeros(4), p).data, np.zeros((4, 6)))
    assert att.embed_features(rng.normal(size=4), p).shape == (4, 6)


def test_embed_length_mismatch():
    p = att.EmbeddingParams(T(np.ones((3, 4))), T(np.zeros((3, 4))))
    with pytest.raises(ShapeError):
        att.embed_features(np.ones(2), p)


def test_embedding_params_invariants():
    with pytest.raises((ConfigError, ShapeError)):
        att.EmbeddingParams(T(np.ones((3, 1))), T(np.zeros((3, 1))))


def test_positional_encoding_examples():
    pe = att.positional_encoding(3, 6).data
    assert np.array_equal(pe[0], [0, 1, 0, 1, 0, 1])
    np.testing.assert_allclose(att.positional_encoding(2, 4).data[1],
                               [math.sin(1), math.cos(1), math.sin(0.01), math.cos(0.01)],
                               rtol=1e-15)
    big = att.positional_encoding(50, 16).data
    assert np.all(np.abs(big) <= 1.0)
    with pytest.raises(ConfigError):
        att.positional_encoding(3, 5)


# -- attention --------------------------------------------------------------------

def test_sdpa_single_token_returns_v():
    rng = np.random.default_rng(1)
    q, k, v = (rng.normal(size=(1, 4)) for _ in range(3))
    np.testing.assert_allclose(att.scaled_dot_product_attention(T(q), T(k), T(v)).data, v)


def test_sdpa_identical_keys_gives_column_mean():
    rng = np.random.default_rng(2)
    q, v = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    k = np.tile(rng.normal(size=(1, 3)), (5, 1))
    out = att.scaled_dot_product_attention(T(q), T(k), T(v)).data
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (5, 1)), rtol=1e-12)


def test_sdpa_matches_two_step_oracle_3x4():
    rng = np.random.default_rng(3)
    q, k, v = (rng.normal(size=(3, 4)) for _ in range(3))
    out = att.scaled_dot_product_attention(T(q), T(k), T(v)).data
    assert max_rel_err(out, attention_two_step(q, k, v)) <= 1e-6


def test_sdpa_shape_mismatch():
    with pytest.raises(ShapeError):
        att.scaled_dot_product_attention(T(np.ones((2, 3))), T(np.ones((3, 3))), T(np.ones((2, 3))))


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_attention_rows_are_distributions(n, dh, seed):
    rng = np.random.default_rng(seed)
    w = att.attention_weights(T(rng.normal(0, 3, (n, dh))), T(rng.normal(0, 3, (n, dh)))).data
    assert np.all(w >= 0)
    assert np.max(np.abs(w.sum(axis=-1) - 1.0)) <= 1e-9


def test_mha_identity_single_head_equals_sdpa():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 6))
    eye = T(np.eye(6))
    out = att.multi_head_attention(T(x), att.MHAParams(eye, eye, eye, eye, 1)).data
    ref = att.scaled_dot_product_attention(T(x), T(x), T(x)).data
    assert np.max(np.abs(out - ref)) <= 1e-12


def test_mha_matches_per_head_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 6))
    ws = [rng.normal(size=(6, 6)) for _ in range(4)]
    out = att.multi_head_attention(T(x), att.MHAParams(*map(T, ws), n_heads=2)).data
    assert out.shape == (4, 6)
    assert max_rel_err(out, mha_oracle(x, *ws, 2)) <= 1e-6


def test_mha_head_divisibility():
    with pytest.raises(ConfigError):
        att.MHAParams(*(T(np.eye(6)) for _ in range(4)), n_heads=4)


def test_sdpa_row_permutation_equivariance():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(6, 4))
    perm = rng.permutation(6)
    out = att.scaled_dot_product_attention(T(x), T(x), T(x)).data
    out_p = att.scaled_dot_product_attention(T(x[perm]), T(x[perm]), T(x[perm])).data
    np.testing.assert_allclose(out_p, out[perm], rtol=1e-12, atol=1e-14)


def test_permuted_tokens_with_permuted_pe_permute_outputs():
    rng = np.random.default_rng(7)
    x, pe = rng.normal(size=(5, 4)), att.positional_encoding(5, 4).data
    perm = rng.permutation(5)
    p = att.MHAParams(*(T(rng.normal(size=(4, 4))) for _ in range(4)), n_heads=2)
    out = att.multi_head_attention(T(x + pe), p).data
    out_p = att.multi_head_attention(T(x[perm] + pe[perm]), p).data
    np.testing.assert_allclose(out_p, out[perm], rtol=1e-10, atol=1e-12)


# -- encoder layer ----------------------------------------------------------------

def test_encoder_zero_weights_collapses_to_double_layer_norm():
    rng = np.random.default_rng(8)
    d, dff = 6, 12
    z = lambda *s: T(np.zeros(s))  # noqa: E731
    mha = att.MHAParams(z(d, d), z(d, d), z(d, d), z(d, d), 2)
    p = att.EncoderLayerParams(mha, z(d, dff), z(dff), z(dff, d), z(d),
                               T(np.ones(d)), z(d), T(np.ones(d)), z(d))
    x = rng.normal(size=(4, d))
    ones, zeros = np.ones(d), np.zeros(d)
    ref = layer_norm_oracle(layer_norm_oracle(x, ones, zeros), ones, zeros)
    np.testing.assert_allclose(att.transformer_encoder_layer(T(x), p).data, ref, rtol=1e-9,
                               atol=1e-12)


@pytest.mark.parametrize("n", [1, 3, 7])
def test_encoder_preserves_shape(n):
    rng = np.random.default_rng(n)
    assert att.transformer_encoder_layer(T(rng.normal(size=(n, 8))), random_encoder(rng)).shape == (n, 8)


def test_encoder_matches_stagewise_oracle():
    rng = np.random.default_rng(9)
    p = random_encoder(rng)
    x = rng.normal(size=(5, 8))
    g = lambda t: t.data  # noqa: E731
    attn = mha_oracle(x, g(p.mha.w_q), g(p.mha.w_k), g(p.mha.w_v), g(p.mha.w_o), 2)
    y = layer_norm_oracle(x + attn, g(p.ln1_gamma), g(p.ln1_beta))
    ffn = np.maximum(y @ g(p.w1) + g(p.b1), 0) @ g(p.w2) + g(p.b2)
    z = layer_norm_oracle(y + ffn, g(p.ln2_gamma), g(p.ln2_beta))
    assert max_rel_err(att.transformer_encoder_layer(T(x), p).data, z) <= 1e-6


def test_encoder_batched_equals_per_event():
    rng = np.random.default_rng(10)
    p = random_encoder(rng)
    xb = rng.normal(size=(3, 5, 8))
    batched = att.transformer_encoder_layer(T(xb), p).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], att.transformer_encoder_layer(T(xb[i]), p).data,
                                   rtol=1e-12, atol=1e-14)


def test_encoder_gradcheck():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = random_encoder(rng, d=4, h=2, d_ff=4)

        def f(x, wq):
            q = att.MHAParams(wq, p.mha.w_k, p.mha.w_v, p.mha.w_o, 2)
            return att.transformer_encoder_layer(x, att.EncoderLayerParams(
                q, p.w1, p.b1, p.w2, p.b2, p.ln1_gamma, p.ln1_beta, p.ln2_gamma, p.ln2_beta))

        err = gradcheck(f, rng.normal(size=(3, 4)), p.mha.w_q.data, seed=seed)
        assert err <= 1e-3, seed


def test_attention_mac_count_uses_tensor_counter():
    rng = np.random.default_rng(11)
    n, d, h = 5, 8, 2
    x = T(rng.normal(size=(n, d)))
    p = att.MHAParams(*(T(rng.normal(size=(d, d))) for _ in range(4)), n_heads=h)
    with tn.count_executed_macs() as box:
        att.multi_head_attention(x, p)
    assert box[0] == h * (2 * n * n * (d // h)) + 4 * n * d * d
