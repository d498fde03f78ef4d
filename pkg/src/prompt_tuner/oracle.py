"""The frozen black-box classifier behind a query-only interface.

Everything downstream sees only `predict_batch`: images in, probability rows
out, with a monotone counter of images sent. Two implementations exist: a
builtin toy oracle (softmax over a linear map of 16x16-downsampled pixels,
fitted once on source data and frozen) and an HTTP client for a remote
prediction service. No other module reads the underlying weights; they leave
this module only through the explicit `export_weights` JSON form.
"""

import json
import threading
import time
from pathlib import Path

import numpy as np
import requests

from .errors import DatasetError, InvalidInputError, QueryError
from .imageops import bilinear_resize

DOWNSAMPLE = 16  # feature grid side; decouples oracle cost from the canvas size


def _features(images):
    """(n, c, h, w) images -> (n, c*DOWNSAMPLE^2) pixel features."""
    small = bilinear_resize(np.asarray(images, dtype=np.float64), DOWNSAMPLE, DOWNSAMPLE)
    return small.reshape(small.shape[0], -1)


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class OracleHandle:
    """Shared surface: geometry checks, query accounting, batch prediction."""

    kind = "abstract"

    def __init__(self, num_classes, input_geometry):
        self.num_classes = int(num_classes)
        self.input_geometry = tuple(int(v) for v in input_geometry)
        self._counter = 0
        self._lock = threading.Lock()

    @property
    def query_counter(self):
        with self._lock:
            return self._counter

    def _validate(self, images):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1:] != self.input_geometry:
            raise InvalidInputError(
                f"expected (n,) + {self.input_geometry} batch, got {images.shape}"
            )
        if images.shape[0] == 0:
            raise InvalidInputError("empty batch")
        return images

    def _count(self, n):
        with self._lock:
            self._counter += n

    def predict_batch(self, images):
        raise NotImplementedError


class BuiltinOracle(OracleHandle):
    """Frozen multinomial-logistic classifier on downsampled pixels."""

    kind = "builtin"

    def __init__(self, weights, bias, input_geometry):
        super().__init__(num_classes=weights.shape[0], input_geometry=input_geometry)
        self._weights = np.array(weights, dtype=np.float64)
        self._bias = np.array(bias, dtype=np.float64)
        self._weights.setflags(write=False)
        self._bias.setflags(write=False)

    def predict_batch(self, images):
        images = self._validate(images)
        probs = _softmax(_features(images) @ self._weights.T + self._bias)
        self._count(images.shape[0])
        return probs


def train_builtin_oracle(images, labels, num_classes, seed, lr=0.5, iterations=300):
    """Fit the frozen toy oracle on source-distribution images.

    Full-batch gradient descent on the softmax cross-entropy, fixed step and
    iteration cap, seeded initialization: cheap, deterministic, and runs once
    in fixture setup. The returned handle is immutable.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.ndim != 4:
        raise InvalidInputError(f"expected (n, c, h, w) images, got {images.shape}")
    counts = np.bincount(labels, minlength=num_classes)
    if np.any(counts == 0):
        raise DatasetError(f"classes without examples: {np.flatnonzero(counts == 0).tolist()}")

    feats = _features(images)
    onehot = np.eye(num_classes)[labels]
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=(num_classes, feats.shape[1]))
    b = np.zeros(num_classes)
    n = feats.shape[0]
    for _ in range(iterations):
        probs = _softmax(feats @ w.T + b)
        diff = probs - onehot
        w -= lr * (diff.T @ feats) / n
        b -= lr * diff.mean(axis=0)
    return BuiltinOracle(w, b, input_geometry=images.shape[1:])


def export_weights(oracle):
    """JSON-ready weight export; the only sanctioned way weights leave here."""
    if not isinstance(oracle, BuiltinOracle):
        raise InvalidInputError("only builtin oracles can export weights")
    return {
        "W": oracle._weights.tolist(),
        "b": oracle._bias.tolist(),
        "downsample": DOWNSAMPLE,
        "shape": list(oracle.input_geometry),
    }


def builtin_from_weights(weights):
    """Rebuild a builtin oracle from an export (dict, JSON string, or path)."""
    if isinstance(weights, (str, Path)):
        weights = json.loads(Path(weights).read_text())
    if weights.get("downsample") != DOWNSAMPLE:
        raise InvalidInputError(f"unsupported downsample {weights.get('downsample')}")
    return BuiltinOracle(
        np.array(weights["W"], dtype=np.float64),
        np.array(weights["b"], dtype=np.float64),
        input_geometry=tuple(weights["shape"]),
    )


class RemoteOracle(OracleHandle):
    """HTTP client for the prediction-service wire protocol.

    GET  /v1/meta    -> {"num_classes": K, "shape": [c, h, w]}
    POST /v1/predict -> {"probs": [[K floats], ...]} for a JSON body
                        {"shape": [n, c, h, w], "pixels": [floats, row-major,
                        channel-major per image]}

    Transport failures and 503 responses are retried (3 attempts, doubling
    backoff) before raising; concurrent requests are bounded.
    """

    kind = "remote"

    def __init__(self, endpoint, max_in_flight=4, max_attempts=3, backoff=0.1,
                 timeout=30.0):
        self.endpoint = endpoint.rstrip("/")
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout
        self._session = requests.Session()
        self._slots = threading.Semaphore(max_in_flight)
        meta = self._request("GET", "/v1/meta")
        super().__init__(num_classes=meta["num_classes"], input_geometry=meta["shape"])

    def _request(self, method, path, body=None):
        url = self.endpoint + path
        delay = self.backoff
        last_error = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._slots:
                    resp = self._session.request(
                        method, url, json=body, timeout=self.timeout
                    )
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code == 400:
                    raise InvalidInputError(f"oracle rejected request: {resp.text}")
                if resp.status_code != 503:
                    raise QueryError(
                        f"unexpected status {resp.status_code}: {resp.text}",
                        attempts=attempt,
                    )
                last_error = "service overloaded (503)"
            if attempt < self.max_attempts:
                time.sleep(delay)
                delay *= 2
        raise QueryError(
            f"{method} {path} failed after {self.max_attempts} attempts: {last_error}",
            attempts=self.max_attempts,
            retryable=True,
        )

    def predict_batch(self, images):
        images = self._validate(images)
        body = {
            "shape": [images.shape[0], *self.input_geometry],
            "pixels": images.ravel().tolist(),
        }
        payload = self._request("POST", "/v1/predict", body)
        probs = np.asarray(payload["probs"], dtype=np.float64)
        if probs.shape != (images.shape[0], self.num_classes):
            raise QueryError(f"malformed response shape {probs.shape}", attempts=1)
        self._count(images.shape[0])
        return probs


def make_oracle(spec, geometry=None, source=None):
    """Build an oracle from a config mapping.

    kind 'builtin' trains on `source` (a LabeledImages already at oracle input
    geometry); kind 'remote' connects to spec['endpoint'].
    """
    kind = spec.get("kind", "builtin")
    if kind == "remote":
        return RemoteOracle(spec["endpoint"],
                            max_in_flight=spec.get("max_in_flight", 4))
    if kind == "builtin":
        if source is None:
            raise InvalidInputError("builtin oracle needs source images")
        return train_builtin_oracle(
            source.images, source.labels,
            num_classes=spec.get("num_classes", 10),
            seed=spec.get("seed", 0),
        )
    raise InvalidInputError(f"unknown oracle kind {kind!r}")
