"""Frequency-domain preprocessing: radix-2 FFT, ideal high-pass filter,
and a brute-force DFT oracle for tests.

These transforms are applied to raw input images (data, not learned
features), so nothing here participates in the autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericalError
from .tensor import Tensor


@dataclass
class ComplexImage:
    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64)
        self.imag = np.asarray(self.imag, dtype=np.float64)
        if self.real.shape != self.imag.shape:
            raise ConfigError("real and imaginary planes must share a shape")
        if not (np.all(np.isfinite(self.real)) and np.all(np.isfinite(self.imag))):
            raise NumericalError("complex image contains non-finite entries")

    @property
    def shape(self):
        return self.real.shape

    def to_complex(self):
        return self.real + 1j * self.imag

    @classmethod
    def from_complex(cls, z):
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))


@dataclass
class HighPassSpec:
    cutoff_ratio: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.cutoff_ratio < 1.0:
            raise ConfigError(f"cutoff_ratio must lie in [0,1), got {self.cutoff_ratio}")


def _as_image_array(image):
    if isinstance(image, Tensor):
        image = image.data
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError(f"expected a 2-D image, got rank {arr.ndim}")
    return arr


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse_indices(n):
    idx = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for i in range(n):
        r = 0
        x = i
        for _ in range(bits):
            r = (r << 1) | (x & 1)
            x >>= 1
        idx[i] = r
    return idx


def _fft_last_axis(a, sign):
    """Iterative radix-2 Cooley-Tukey along the last axis (power-of-two length)."""
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    a = a[..., _bit_reverse_indices(n)].astype(np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        v = a.reshape(a.shape[:-1] + (n // m, m))
        t = v[..., half:] * twiddle
        u = v[..., :half].copy()
        v[..., :half] = u + t
        v[..., half:] = u - t
        m *= 2
    return a


def fft2d(image):
    """Unnormalized forward 2-D DFT of a real image with power-of-two extents."""
    x = _as_image_array(image)
    h, w = x.shape
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ConfigError(f"fft2d requires power-of-two extents, got {h}x{w}")
    z = _fft_last_axis(x.astype(np.complex128), -1.0)
    z = _fft_last_axis(z.T, -1.0).T
    return ComplexImage.from_complex(z)


def ifft2d(spectrum):
    """Inverse of fft2d; returns a ComplexImage (normalized by 1/(H*W))."""
    z = spectrum.to_complex()
    h, w = z.shape
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ConfigError(f"ifft2d requires power-of-two extents, got {h}x{w}")
    out = _fft_last_axis(z, +1.0)
    out = _fft_last_axis(out.T, +1.0).T / (h * w)
    return ComplexImage.from_complex(out)


def dft2d_oracle(image):
    """Direct double-sum DFT; refuses extents above 32 (quadratic per bin)."""
    x = _as_image_array(image)
    h, w = x.shape
    if h > 32 or w > 32:
        raise ContractError(f"dft2d_oracle refuses extents above 32, got {h}x{w}")
    eh = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    ew = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return ComplexImage.from_complex(eh @ x.astype(np.complex128) @ ew.T)


def _highpass_mask(h, w, cutoff_ratio):
    """Boolean pass mask in natural (uncentered) frequency order."""
    cy = (np.arange(h) + h // 2) % h - h // 2
    cx = (np.arange(w) + w // 2) % w - w // 2
    r = np.sqrt(cy[:, None] ** 2.0 + cx[None, :] ** 2.0)
    cutoff = cutoff_ratio * (min(h, w) / 2.0)
    return r > cutoff


def high_pass(spectrum, spec):
    """Ideal high-pass filter: zero every bin whose centered radial distance
    is at or below the cutoff radius; all other bins pass unchanged."""
    z = spectrum.to_complex()
    mask = _highpass_mask(*z.shape, spec.cutoff_ratio)
    return ComplexImage.from_complex(z * mask)


def spectral_preprocess(image, spec=None):
    """FFT -> ideal high-pass -> inverse FFT, returning the real plane.

    The imaginary residue must vanish by conjugate symmetry; it is asserted
    against a scale-relative 1e-9 bound.
    """
    spec = spec or HighPassSpec()
    x = _as_image_array(image)
    filtered = high_pass(fft2d(x), spec)
    out = ifft2d(filtered)
    tol = 1e-9 * max(1.0, float(np.abs(x).max()))
    residue = float(np.abs(out.imag).max())
    if residue > tol:
        raise NumericalError(
            f"imaginary residue {residue:.3e} exceeds {tol:.3e} after inverse transform")
    return out.real
