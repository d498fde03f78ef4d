"""Shared pixel-space helpers: bilinear resizing, centered padding/cropping, clamping.

All functions operate on the trailing two axes, so they accept single channels
(h, w), images (c, h, w), or batches (n, c, h, w) alike.
"""

import numpy as np

from .errors import DimensionError

_resize_matrix_cache = {}


def _resize_matrix(n_out, n_in):
    """Interpolation matrix R (n_out, n_in) with half-pixel sample centers.

    R @ x linearly resamples a length-n_in signal to length n_out; for
    n_out == n_in it is exactly the identity.
    """
    key = (n_out, n_in)
    if key not in _resize_matrix_cache:
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        mat = np.zeros((n_out, n_in))
        rows = np.arange(n_out)
        mat[rows, lo] += 1.0 - frac
        mat[rows, hi] += frac
        mat.setflags(write=False)
        _resize_matrix_cache[key] = mat
    return _resize_matrix_cache[key]


def bilinear_resize(x, out_h, out_w):
    """Separable bilinear resample of the trailing two axes to (out_h, out_w)."""
    x = np.asarray(x, dtype=np.float64)
    rh = _resize_matrix(out_h, x.shape[-2])
    rw = _resize_matrix(out_w, x.shape[-1])
    return rh @ x @ rw.T


def center_pad(x, out_h, out_w):
    """Zero-pad the trailing two axes to (out_h, out_w), content centered."""
    h, w = x.shape[-2], x.shape[-1]
    if h > out_h or w > out_w:
        raise DimensionError(f"cannot pad ({h}, {w}) down to ({out_h}, {out_w})")
    oy, ox = (out_h - h) // 2, (out_w - w) // 2
    out = np.zeros(x.shape[:-2] + (out_h, out_w), dtype=np.float64)
    out[..., oy:oy + h, ox:ox + w] = x
    return out


def center_crop(x, out_h, out_w):
    """Crop the trailing two axes to a centered (out_h, out_w) window."""
    h, w = x.shape[-2], x.shape[-1]
    if h < out_h or w < out_w:
        raise DimensionError(f"cannot crop ({h}, {w}) up to ({out_h}, {out_w})")
    oy, ox = (h - out_h) // 2, (w - out_w) // 2
    return x[..., oy:oy + out_h, ox:ox + out_w]


def clamp01(x):
    return np.clip(x, 0.0, 1.0)
