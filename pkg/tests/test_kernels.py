"""The compiled and pure-numpy kernel backends must agree bit-for-bit in
structure and to float64 round-off in value."""

import numpy as np
import pytest

from mtliver.kernels import BACKEND, _numpy_kernels

try:
    from mtliver.kernels import _convops
except ImportError:
    _convops = None

RNG = np.random.default_rng(7)

needs_compiled = pytest.mark.skipif(_convops is None,
                                    reason="compiled extension not built")


def test_backend_reports_a_known_name():
    assert BACKEND in ("compiled", "numpy")


@needs_compiled
@pytest.mark.parametrize("c_in,c_out,h,w", [(1, 4, 8, 8), (3, 5, 6, 10), (8, 2, 4, 4)])
def test_conv3x3_backends_agree(c_in, c_out, h, w):
    x = RNG.normal(size=(c_in, h, w))
    wgt = RNG.normal(size=(c_out, c_in, 3, 3))
    b = RNG.normal(size=c_out)
    y_np = _numpy_kernels.conv3x3_forward(x, wgt, b)
    y_cy = _convops.conv3x3_forward(x, wgt, b)
    np.testing.assert_allclose(y_cy, y_np, atol=1e-12)
    gy = RNG.normal(size=y_np.shape)
    gx_np, gw_np, gb_np = _numpy_kernels.conv3x3_backward(x, wgt, gy)
    gx_cy, gw_cy, gb_cy = _convops.conv3x3_backward(x, wgt, gy)
    np.testing.assert_allclose(gx_cy, gx_np, atol=1e-12)
    np.testing.assert_allclose(gw_cy, gw_np, atol=1e-12)
    np.testing.assert_allclose(gb_cy, gb_np, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("c_in,c_out,h,w", [(2, 3, 4, 4), (6, 2, 2, 2), (4, 4, 8, 6)])
def test_convt4x4_backends_agree(c_in, c_out, h, w):
    x = RNG.normal(size=(c_in, h, w))
    wgt = RNG.normal(size=(c_in, c_out, 4, 4))
    b = RNG.normal(size=c_out)
    y_np = _numpy_kernels.convt4x4_forward(x, wgt, b)
    y_cy = _convops.convt4x4_forward(x, wgt, b)
    assert y_np.shape == (c_out, 2 * h, 2 * w)
    np.testing.assert_allclose(y_cy, y_np, atol=1e-12)
    gy = RNG.normal(size=y_np.shape)
    gx_np, gw_np, gb_np = _numpy_kernels.convt4x4_backward(x, wgt, gy)
    gx_cy, gw_cy, gb_cy = _convops.convt4x4_backward(x, wgt, gy)
    np.testing.assert_allclose(gx_cy, gx_np, atol=1e-12)
    np.testing.assert_allclose(gw_cy, gw_np, atol=1e-12)
    np.testing.assert_allclose(gb_cy, gb_np, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("c,h,w", [(1, 4, 4), (3, 8, 6), (5, 2, 2)])
def test_maxpool_backends_agree(c, h, w):
    x = RNG.normal(size=(c, h, w))
    y_np, idx_np = _numpy_kernels.maxpool2x2_forward(x)
    y_cy, idx_cy = _convops.maxpool2x2_forward(x)
    np.testing.assert_allclose(y_cy, y_np, atol=0.0)
    np.testing.assert_array_equal(idx_cy, idx_np)
    gy = RNG.normal(size=y_np.shape)
    gx_np = _numpy_kernels.maxpool2x2_backward(idx_np, gy, h, w)
    gx_cy = _convops.maxpool2x2_backward(idx_cy, gy, h, w)
    np.testing.assert_allclose(gx_cy, gx_np, atol=0.0)


def test_conv3x3_matches_nested_loop_oracle():
    c_in, c_out, h, w = 2, 3, 5, 6
    x = RNG.normal(size=(c_in, h, w))
    wgt = RNG.normal(size=(c_out, c_in, 3, 3))
    b = RNG.normal(size=c_out)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    want = np.empty((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                want[o, i, j] = (xp[:, i:i + 3, j:j + 3] * wgt[o]).sum() + b[o]
    got = _numpy_kernels.conv3x3_forward(x, wgt, b)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_convt4x4_matches_scatter_oracle():
    # transposed convolution as explicit scatter-add of x * kernel patches
    c_in, c_out, h, w = 2, 2, 3, 3
    x = RNG.normal(size=(c_in, h, w))
    wgt = RNG.normal(size=(c_in, c_out, 4, 4))
    b = RNG.normal(size=c_out)
    acc = np.zeros((c_out, 2 * h + 2, 2 * w + 2))
    for ci in range(c_in):
        for i in range(h):
            for j in range(w):
                acc[:, 2 * i:2 * i + 4, 2 * j:2 * j + 4] += x[ci, i, j] * wgt[ci]
    want = acc[:, 1:1 + 2 * h, 1:1 + 2 * w] + b[:, None, None]
    got = _numpy_kernels.convt4x4_forward(x, wgt, b)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_maxpool_forward_oracle():
    x = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
    y, idx = _numpy_kernels.maxpool2x2_forward(x)
    np.testing.assert_array_equal(y[0], [[5.0, 7.0], [13.0, 15.0]])
    gy = np.ones_like(y)
    gx = _numpy_kernels.maxpool2x2_backward(idx, gy, 4, 4)
    assert gx.sum() == 4.0
    assert gx[0, 1, 1] == 1.0 and gx[0, 3, 3] == 1.0
