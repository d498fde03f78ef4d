"""The served model: softmax over a linear map of downsampled pixels.

Weights arrive as a JSON export ({"W": KxD, "b": K, "downsample": 16,
"shape": [c, h, w]}), so any classifier of this family can be hosted,
including the toy oracle a tuning client trains locally. Prediction is
deterministic and stateless.
"""

import json
from pathlib import Path

import numpy as np


class ModelError(ValueError):
    """Weights file or request payload violates the model contract."""


def _resample_matrix(n_out, n_in):
    """Linear interpolation matrix with half-pixel sample centers."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    mat[rows, lo] += 1.0 - frac
    mat[rows, hi] += frac
    return mat


class ServedModel:
    def __init__(self, weights, bias, shape, downsample=16):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.shape = tuple(int(v) for v in shape)
        self.downsample = int(downsample)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ModelError("W must be (K, D) with a length-K bias")
        c, h, w = self.shape
        if self.weights.shape[1] != c * self.downsample * self.downsample:
            raise ModelError(
                f"W has {self.weights.shape[1]} columns, expected "
                f"{c * self.downsample * self.downsample}"
            )
        self._rh = _resample_matrix(self.downsample, h)
        self._rw = _resample_matrix(self.downsample, w)

    @classmethod
    def from_file(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelError(f"cannot read weights file: {exc}") from exc
        for key in ("W", "b", "shape"):
            if key not in doc:
                raise ModelError(f"weights file lacks {key!r}")
        return cls(doc["W"], doc["b"], doc["shape"], doc.get("downsample", 16))

    @property
    def num_classes(self):
        return self.weights.shape[0]

    def predict(self, images):
        """(n, c, h, w) pixel batch -> (n, K) probability rows."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1:] != self.shape:
            raise ModelError(f"expected (n,) + {self.shape}, got {images.shape}")
        small = self._rh @ images @ self._rw.T
        feats = small.reshape(images.shape[0], -1)
        logits = feats @ self.weights.T + self.bias
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
