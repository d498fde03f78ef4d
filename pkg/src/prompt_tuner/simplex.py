"""KL geometry on the probability simplex.

Covers the output-space toolkit: KL divergence with epsilon smoothing, Lloyd
style k-means under the KL metric, softmax refinement of a probability vector
against class anchors, and the anchor lifecycle (labelled initialization and
exponential moving-average updates).

Smoothing policy: probabilities are shifted by `eps` and renormalized before
any logarithm. Near-one-hot classifier outputs contain exact zeros, and the
raw divergence would be infinite there. Smoothing commutes with averaging, so
arithmetic-mean centroids remain optimal for the smoothed objective and the
clustering objective stays monotone.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, DimensionError, InvalidInputError

DEFAULT_EPS = 1e-6

EMA_KEEP = 0.9   # weight on the existing anchor
EMA_TAKE = 0.1   # weight on the incoming class mean


def _smooth(v, eps):
    v = np.asarray(v, dtype=np.float64) + eps
    return v / v.sum(axis=-1, keepdims=True)


def _l1_normalize(v):
    v = np.asarray(v, dtype=np.float64)
    return v / v.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class PrototypeSet:
    """K class anchors, one probability vector per class, index k <-> class k.

    Immutable snapshot: updates produce new sets, so snapshots can be shared
    freely across threads.
    """

    anchors: np.ndarray

    def __post_init__(self):
        anchors = np.asarray(self.anchors, dtype=np.float64)
        if anchors.ndim != 2:
            raise DimensionError("anchors must be a (K, d) matrix")
        if np.min(anchors) < 0:
            raise InvalidInputError("anchor entries must be non-negative")
        if np.max(np.abs(anchors.sum(axis=1) - 1.0)) > 1e-9:
            raise InvalidInputError("every anchor must sum to 1 within 1e-9")
        anchors = anchors.copy()
        anchors.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)

    @property
    def k(self):
        return self.anchors.shape[0]

    @property
    def dim(self):
        return self.anchors.shape[1]


def kl_divergence(p, q, eps=DEFAULT_EPS):
    """KL(p || q) after eps-smoothing and renormalizing both arguments."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {q.shape}")
    ps, qs = _smooth(p, eps), _smooth(q, eps)
    return float(np.sum(ps * np.log(ps / qs)))


def _divergence_matrix(points, anchors, eps=DEFAULT_EPS):
    """(n, m) matrix of KL(point_i || anchor_j), smoothed like kl_divergence."""
    ps = _smooth(points, eps)
    qs = _smooth(anchors, eps)
    entropy = np.sum(ps * np.log(ps), axis=1, keepdims=True)
    return entropy - ps @ np.log(qs).T


def kl_kmeans(points, k, init, max_iter=100, eps=DEFAULT_EPS):
    """Lloyd iteration under the KL metric.

    Each point is assigned to the anchor minimizing KL(point || anchor); each
    anchor is recomputed as the L1-normalized arithmetic mean of its members.
    `init` is either a PrototypeSet of k seeds (cluster identities are kept)
    or an integer seed for greedy farthest-point initialization. A cluster
    that empties is re-seeded to the point farthest from its current anchor,
    so exactly k clusters always survive.

    Returns (means, assignments, objective_trace); the trace is the summed
    point-to-assigned-anchor divergence, non-increasing over iterations.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < k:
        raise DatasetError(f"need at least k={k} points, got {n}")
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")

    if isinstance(init, PrototypeSet):
        if init.k != k or init.dim != points.shape[1]:
            raise DimensionError("init prototypes do not match (k, d)")
        means = np.array(init.anchors)
    else:
        means = _farthest_point_seeds(points, k, int(init), eps)

    assignments = None
    trace = []
    for _ in range(max_iter):
        div = _divergence_matrix(points, means, eps)
        new_assign = div.argmin(axis=1)
        trace.append(float(div[np.arange(n), new_assign].sum()))
        if assignments is not None and np.array_equal(new_assign, assignments):
            break
        assignments = new_assign

        new_means = means.copy()
        counts = np.bincount(assignments, minlength=k)
        for j in np.flatnonzero(counts):
            new_means[j] = points[assignments == j].mean(axis=0)
        # Re-seed empty clusters from the worst-fit points.
        if np.any(counts == 0):
            worst = div[np.arange(n), assignments].copy()
            for j in np.flatnonzero(counts == 0):
                i = int(np.argmax(worst))
                new_means[j] = points[i]
                worst[i] = -np.inf
        means = _l1_normalize(new_means)

    return PrototypeSet(means), assignments, trace


def _farthest_point_seeds(points, k, seed, eps):
    """First seed random, the rest greedily maximize divergence to chosen seeds."""
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(0, points.shape[0]))]
    while len(chosen) < k:
        div = _divergence_matrix(points, points[chosen], eps)
        nearest = div.min(axis=1)
        nearest[chosen] = -np.inf
        chosen.append(int(np.argmax(nearest)))
    return points[chosen].copy()


def refine(p, anchors, eps=DEFAULT_EPS):
    """Softmax over negative divergences to each anchor; -KL acts as the class logit."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (anchors.dim,):
        raise DimensionError(f"expected length {anchors.dim}, got {p.shape}")
    return refine_batch(p[None, :], anchors, eps)[0]


def refine_batch(probs, anchors, eps=DEFAULT_EPS):
    """Vectorized refine over rows of a (n, d) matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != anchors.dim:
        raise DimensionError(f"expected (n, {anchors.dim}), got {probs.shape}")
    logits = -_divergence_matrix(probs, anchors.anchors, eps)
    logits -= logits.max(axis=1, keepdims=True)
    out = np.exp(logits)
    return out / out.sum(axis=1, keepdims=True)


def init_prototypes(probs, labels, k, max_iter=100, eps=DEFAULT_EPS):
    """Class anchors from labelled probability rows.

    Seeds anchor k at the L1-normalized mean of rows labelled k, then runs
    kl_kmeans from those seeds. Lloyd iteration never reorders clusters, so
    the seeded cluster-k <-> class-k correspondence survives refinement.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    seeds = np.zeros((k, probs.shape[1]))
    for c in range(k):
        members = probs[labels == c]
        if members.shape[0] == 0:
            raise DatasetError(f"class {c} has no examples")
        seeds[c] = members.mean(axis=0)
    seeds = _l1_normalize(seeds)
    means, _, _ = kl_kmeans(probs, k, init=PrototypeSet(seeds), max_iter=max_iter, eps=eps)
    return means


def update_prototypes(current, class_means):
    """EMA step toward per-class batch means, then L1 re-normalization.

    `class_means` maps class index -> mean probability vector; classes absent
    from the mapping keep their anchor unchanged. The L1 step keeps every
    anchor on the simplex even if an incoming mean drifted numerically.
    """
    anchors = np.array(current.anchors)
    for c, mean in class_means.items():
        mean = np.asarray(mean, dtype=np.float64)
        if mean.shape != (current.dim,):
            raise DimensionError(f"class {c} mean has shape {mean.shape}")
        anchors[c] = EMA_KEEP * anchors[c] + EMA_TAKE * mean
    return PrototypeSet(_l1_normalize(anchors))
