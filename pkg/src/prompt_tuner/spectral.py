"""Orthonormal 2D DCT-II, its inverse, and low-frequency coefficient embedding.

The transform uses the orthonormal convention (per-axis scale sqrt(1/n) for the
DC row, sqrt(2/n) otherwise), so it preserves L2 energy and its inverse is the
transpose. Implemented as cached basis-matrix multiplications, which is plenty
fast at the image sizes this package works with (<= 224); an O(n log n)
algorithm would buy nothing here.

Low frequencies occupy the top-left corner of a coefficient grid, which is why
a small prompt block is embedded there and padded with zeros to the bottom and
right.
"""

import numpy as np

from .errors import DimensionError, InvalidInputError

_basis_cache = {}


def _basis(n):
    """Orthonormal DCT-II basis matrix C (n, n): row u is the u-th cosine mode."""
    if n not in _basis_cache:
        k = np.arange(n, dtype=np.float64)[:, None]
        p = np.arange(n, dtype=np.float64)[None, :]
        c = np.cos((2 * p + 1) * k * np.pi / (2 * n))
        c[0, :] *= np.sqrt(1.0 / n)
        c[1:, :] *= np.sqrt(2.0 / n)
        c.setflags(write=False)
        _basis_cache[n] = c
    return _basis_cache[n]


def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite values")


def dct2(x):
    """Orthonormal 2D DCT-II over the trailing two axes.

    Accepts (h, w) or any stacked shape (..., h, w); each trailing plane is
    transformed independently.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_finite(x, "dct2 input")
    ch = _basis(x.shape[-2])
    cw = _basis(x.shape[-1])
    return ch @ x @ cw.T


def idct2(coeffs):
    """Inverse of :func:`dct2` (the basis is orthogonal, so inverse = transpose)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    _check_finite(coeffs, "idct2 input")
    ch = _basis(coeffs.shape[-2])
    cw = _basis(coeffs.shape[-1])
    return ch.T @ coeffs @ cw


def embed_low_frequency(small, target_shape):
    """Place a small coefficient block into the top-left of a larger zero grid.

    Works on (h_f, w_f) or stacked (..., h_f, w_f) blocks; the bottom and right
    of the output are zero-padded so the block sits in the low-frequency corner.
    """
    small = np.asarray(small, dtype=np.float64)
    h_d, w_d = target_shape
    h_f, w_f = small.shape[-2], small.shape[-1]
    if h_f > h_d or w_f > w_d:
        raise DimensionError(
            f"coefficient block ({h_f}, {w_f}) exceeds target grid ({h_d}, {w_d})"
        )
    out = np.zeros(small.shape[:-2] + (h_d, w_d), dtype=np.float64)
    out[..., :h_f, :w_f] = small
    return out
