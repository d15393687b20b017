"""Network building blocks: convolution/deconvolution blocks against
nested-loop oracles, the sinusoidal positional encoding closed form, the
transformer block against a direct attention oracle, and Adam."""

import math

import numpy as np
import pytest

from mtliver import tensor as T
from mtliver.errors import ConfigError, ContractError, ShapeError
from mtliver.gradcheck import max_relative_error
from mtliver.nn import (Adam, ConvBlock, DeconvBlock, Linear, ParameterSet,
                        TransformerBlock, positional_encoding)
from mtliver.tensor import Tensor, backward

RNG = np.random.default_rng(1234)


def make_block(cls, c_in, c_out, seed=0):
    ps = ParameterSet()
    blk = cls(ps, "blk", c_in, c_out, np.random.default_rng(seed))
    return ps, blk


# -- parameter registry ----------------------------------------------------------

def test_parameterset_rejects_duplicates():
    ps = ParameterSet()
    ps.add("a", np.zeros(2))
    with pytest.raises(ContractError):
        ps.add("a", np.zeros(2))


def test_parameterset_iterates_lexicographically():
    ps = ParameterSet()
    for name in ("zz", "aa", "mm"):
        ps.add(name, np.zeros(1))
    assert list(ps.names()) == ["aa", "mm", "zz"]


# -- conv block -------------------------------------------------------------------

def test_conv_block_identity_kernel_reduces_to_maxpool():
    ps, blk = make_block(ConvBlock, 1, 1)
    blk.w.data[:] = 0.0
    blk.w.data[0, 0, 1, 1] = 1.0  # centre tap only
    blk.b.data[:] = 0.0
    x = Tensor(RNG.uniform(1.0, 2.0, size=(1, 4, 4)))
    # inference-mode statistics mu=0, sigma^2=1 make the normalization
    # an identity up to the epsilon in the denominator
    out = blk(x, training=False)
    want = x.data.reshape(1, 2, 2, 2, 2).max(axis=(2, 4))
    np.testing.assert_allclose(out.data, want / math.sqrt(1.0 + 1e-5), rtol=1e-12)


def test_conv_block_constant_input_propagates():
    ps, blk = make_block(ConvBlock, 1, 1)
    blk.w.data[:] = 1.0 / 9.0
    blk.b.data[:] = 0.0
    c = 3.7
    x = Tensor(np.full((1, 4, 4), c))
    pre = T.conv2d(x, blk.w, blk.b)
    # interior taps see nine c-valued pixels
    np.testing.assert_allclose(pre.data[0, 1:3, 1:3], np.full((2, 2), c), rtol=1e-12)
    out = blk(x, training=False)
    assert out.data.shape == (1, 2, 2)


def test_conv_block_matches_nested_loop_oracle():
    ps, blk = make_block(ConvBlock, 2, 3, seed=5)
    x = RNG.normal(size=(2, 8, 8))
    out = blk(Tensor(x), training=False)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    conv = np.empty((3, 8, 8))
    for o in range(3):
        for i in range(8):
            for j in range(8):
                conv[o, i, j] = (xp[:, i:i + 3, j:j + 3] * blk.w.data[o]).sum() \
                    + blk.b.data[o]
    bn = conv / math.sqrt(1.0 + 1e-5)  # inference stats mu=0, sigma^2=1
    act = np.maximum(bn, 0.0)
    want = act.reshape(3, 4, 2, 4, 2).max(axis=(2, 4))
    np.testing.assert_allclose(out.data, want, atol=1e-9)


def test_conv_block_rejects_odd_extent():
    ps, blk = make_block(ConvBlock, 1, 1)
    with pytest.raises(ShapeError):
        blk(Tensor(np.zeros((1, 5, 4))), training=True)


def test_conv_block_gradients():
    ps, blk = make_block(ConvBlock, 2, 2, seed=3)
    x = Tensor(RNG.normal(size=(2, 4, 4)), requires_grad=True)
    tensors = [x] + [p for _, p in ps.items()]
    fn = lambda: T.tsum(T.square(blk(x, training=True, update_running=False)))
    assert max_relative_error(fn, tensors) < 1e-4


# -- deconv block -------------------------------------------------------------------

def test_deconv_block_doubles_extent():
    ps, blk = make_block(DeconvBlock, 4, 2)
    out = blk(Tensor(RNG.normal(size=(4, 3, 5))), training=True,
              update_running=False)
    assert out.data.shape == (2, 6, 10)


def test_deconv_block_gradients():
    ps, blk = make_block(DeconvBlock, 2, 2, seed=4)
    x = Tensor(RNG.normal(size=(2, 3, 3)), requires_grad=True)
    tensors = [x] + [p for _, p in ps.items()]
    fn = lambda: T.tsum(T.square(blk(x, training=True, update_running=False)))
    assert max_relative_error(fn, tensors) < 1e-4


# -- linear --------------------------------------------------------------------------

def test_linear_matches_affine_map():
    ps = ParameterSet()
    lin = Linear(ps, "l", 4, 3, np.random.default_rng(0), bias_init=0.25)
    x = RNG.normal(size=4)
    np.testing.assert_allclose(lin(Tensor(x)).data,
                               lin.w.data @ x + lin.b.data, rtol=1e-12)
    rows = RNG.normal(size=(5, 4))
    np.testing.assert_allclose(lin(Tensor(rows)).data,
                               rows @ lin.w.data.T + lin.b.data, rtol=1e-12)


def test_linear_rejects_wrong_width():
    ps = ParameterSet()
    lin = Linear(ps, "l", 4, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        lin(Tensor(np.zeros(5)))


# -- positional encoding ---------------------------------------------------------------

def test_positional_encoding_closed_form():
    pe = positional_encoding(10, 6)
    for p in range(10):
        for i in range(3):
            angle = p / 10000.0 ** (2.0 * i / 6.0)
            assert pe[p, 2 * i] == pytest.approx(math.sin(angle), abs=1e-15)
            assert pe[p, 2 * i + 1] == pytest.approx(math.cos(angle), abs=1e-15)


def test_positional_encoding_rows_distinct():
    pe = positional_encoding(512, 4)
    # no two positions share an encoding at desk scale
    assert len({tuple(row) for row in np.round(pe, 12)}) == 512


def test_positional_encoding_rejects_odd_dim():
    with pytest.raises(ConfigError):
        positional_encoding(4, 3)


# -- transformer block -------------------------------------------------------------------

def make_transformer(dim, heads=1, d_k=None, seed=0):
    ps = ParameterSet()
    blk = TransformerBlock(ps, "t", dim, heads=heads, d_k=d_k,
                           rng=np.random.default_rng(seed))
    return ps, blk


def test_single_token_attention_is_one():
    ps, blk = make_transformer(4)
    _, attns = blk.attention(Tensor(RNG.normal(size=(1, 4))))
    np.testing.assert_allclose(attns[0].data, [[1.0]], atol=1e-15)


def test_identical_tokens_identical_outputs():
    ps, blk = make_transformer(6, seed=2)
    row = RNG.normal(size=6)
    out = blk(Tensor(np.stack([row, row])))
    np.testing.assert_allclose(out.data[0], out.data[1], atol=1e-12)


def test_attention_matches_direct_oracle():
    dim, n = 16, 4
    ps, blk = make_transformer(dim, heads=2, d_k=8, seed=7)
    x = RNG.normal(size=(n, dim))
    out, attns = blk.attention(Tensor(x))
    q = x @ blk.wq.data.T
    k = x @ blk.wk.data.T
    v = x @ blk.wv.data.T
    merged = np.empty((n, 16))
    for h in range(2):
        qh, kh, vh = (m[:, 8 * h:8 * h + 8] for m in (q, k, v))
        scores = qh @ kh.T / math.sqrt(8)
        a = np.exp(scores - scores.max(axis=-1, keepdims=True))
        a /= a.sum(axis=-1, keepdims=True)
        np.testing.assert_allclose(attns[h].data, a, atol=1e-12)
        np.testing.assert_allclose(attns[h].data.sum(axis=-1), np.ones(n),
                                   atol=1e-12)
        merged[:, 8 * h:8 * h + 8] = a @ vh
    np.testing.assert_allclose(out.data, merged @ blk.wo.data.T + blk.bo.data,
                               atol=1e-12)


def test_transformer_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        make_transformer(6, heads=4)


def test_transformer_gradients():
    ps, blk = make_transformer(8, heads=2, seed=9)
    x = Tensor(RNG.normal(size=(3, 8)), requires_grad=True)
    tensors = [x] + [p for _, p in ps.items()]
    assert max_relative_error(lambda: T.tsum(T.square(blk(x))), tensors) < 1e-4


# -- Adam -----------------------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    ps = ParameterSet()
    p = ps.add("p", np.array([1.0, -2.0]))
    p.requires_grad = True
    opt = Adam(ps, lr=0.1)
    p.grad = np.array([0.3, -0.7])
    before = p.data.copy()
    opt.step()
    # with bias correction the first update has magnitude lr * sign(grad)
    np.testing.assert_allclose(before - p.data,
                               0.1 * np.sign([0.3, -0.7]), rtol=1e-6)


def test_adam_requires_gradients():
    ps = ParameterSet()
    p = ps.add("p", np.zeros(2))
    opt = Adam(ps, lr=0.1)
    with pytest.raises(ContractError, match="p"):
        opt.step()


def test_adam_converges_on_quadratic():
    ps = ParameterSet()
    p = ps.add("x", np.array([5.0]))
    p.requires_grad = True
    opt = Adam(ps, lr=0.1)
    for _ in range(500):
        t = Tensor(p.data)  # evaluate the objective x^2 by hand
        p.grad = 2.0 * p.data
        opt.step()
    assert abs(p.data[0]) < 1e-3
