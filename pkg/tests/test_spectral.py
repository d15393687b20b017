"""FFT against the direct double-sum DFT oracle, round trips, Parseval,
and the ideal high-pass filter contracts."""

import numpy as np
import pytest

from mtliver.errors import ConfigError, ContractError
from mtliver.spectral import (ComplexImage, HighPassSpec, dft2d_oracle, fft2d,
                              high_pass, ifft2d, spectral_preprocess)

RNG = np.random.default_rng(99)


@pytest.mark.parametrize("h,w", [(4, 4), (8, 8), (8, 16), (16, 16), (32, 32)])
def test_fft_matches_dft_oracle(h, w):
    x = RNG.normal(size=(h, w))
    fast = fft2d(x).to_complex()
    slow = dft2d_oracle(x).to_complex()
    np.testing.assert_allclose(fast, slow, atol=1e-9)


def test_fft_impulse_is_flat():
    x = np.zeros((8, 8))
    x[0, 0] = 1.0
    z = fft2d(x).to_complex()
    np.testing.assert_allclose(z, np.ones((8, 8)), atol=1e-12)


def test_fft_constant_concentrates_at_dc():
    x = np.full((8, 8), 3.0)
    z = fft2d(x).to_complex()
    assert abs(z[0, 0] - 3.0 * 64) < 1e-9
    z[0, 0] = 0.0
    assert np.abs(z).max() < 1e-9


def test_roundtrip_identity():
    x = RNG.normal(size=(16, 16))
    back = ifft2d(fft2d(x))
    np.testing.assert_allclose(back.real, x, atol=1e-12)
    np.testing.assert_allclose(back.imag, np.zeros_like(x), atol=1e-12)


def test_parseval():
    x = RNG.normal(size=(16, 16))
    z = fft2d(x).to_complex()
    spatial = np.sum(x * x)
    spectral = np.sum(np.abs(z) ** 2) / x.size
    assert abs(spatial - spectral) < 1e-9


def test_linearity():
    a = RNG.normal(size=(8, 8))
    b = RNG.normal(size=(8, 8))
    lhs = fft2d(2.0 * a + 3.0 * b).to_complex()
    rhs = 2.0 * fft2d(a).to_complex() + 3.0 * fft2d(b).to_complex()
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ConfigError):
        fft2d(np.zeros((6, 8)))
    with pytest.raises(ConfigError):
        ifft2d(ComplexImage(np.zeros((8, 12)), np.zeros((8, 12))))


def test_oracle_refuses_large_extents():
    with pytest.raises(ContractError):
        dft2d_oracle(np.zeros((64, 64)))


def test_highpass_zero_cutoff_removes_only_dc():
    x = RNG.normal(size=(8, 8))
    z = fft2d(x)
    filtered = high_pass(z, HighPassSpec(cutoff_ratio=0.0)).to_complex()
    orig = z.to_complex()
    assert filtered[0, 0] == 0.0
    mask = np.ones((8, 8), dtype=bool)
    mask[0, 0] = False
    np.testing.assert_allclose(filtered[mask], orig[mask], atol=0.0)


def test_highpass_removes_low_frequencies():
    h = w = 16
    x = RNG.normal(size=(h, w))
    spec = HighPassSpec(cutoff_ratio=0.5)
    filtered = high_pass(fft2d(x), spec).to_complex()
    cutoff = 0.5 * (min(h, w) / 2.0)
    cy = (np.arange(h) + h // 2) % h - h // 2
    cx = (np.arange(w) + w // 2) % w - w // 2
    r = np.hypot(cy[:, None], cx[None, :])
    assert np.abs(filtered[r <= cutoff]).max() == 0.0
    np.testing.assert_allclose(filtered[r > cutoff],
                               fft2d(x).to_complex()[r > cutoff], atol=0.0)


def test_preprocess_mean_removal_and_realness():
    x = RNG.uniform(0.0, 255.0, size=(32, 32))
    out = spectral_preprocess(x, HighPassSpec(0.25))
    assert out.shape == x.shape
    # the DC bin is inside every positive cutoff, so the output is zero-mean
    assert abs(out.mean()) < 1e-9


def test_preprocess_of_constant_image_is_zero():
    out = spectral_preprocess(np.full((16, 16), 7.0), HighPassSpec(0.25))
    np.testing.assert_allclose(out, np.zeros((16, 16)), atol=1e-12)


def test_cutoff_ratio_validated():
    with pytest.raises(ConfigError):
        HighPassSpec(cutoff_ratio=1.0)
    with pytest.raises(ConfigError):
        HighPassSpec(cutoff_ratio=-0.1)
