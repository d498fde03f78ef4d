"""Composite training loss.

Three equally weighted terms (weights are configurable): cross-entropy on the
classifier's raw probabilities, cross-entropy on the anchor-refined
probabilities, and an intra-class relation term that asks the two prediction
sets to agree on the relative ordering of instances within each class rather
than on exact values. The relation term is per-class Pearson correlation
across the batch, so it is invariant to positive affine rescaling of any
class column.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

log = logging.getLogger(__name__)

LOG_EPS = 1e-9


@dataclass(frozen=True)
class BatchPredictions:
    """Raw and refined probability rows for one batch; `refined` is None when
    refinement is disabled, and the corresponding loss terms contribute zero."""

    raw: np.ndarray
    refined: np.ndarray | None
    labels: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        labels = np.asarray(self.labels)
        if raw.ndim != 2 or labels.shape != (raw.shape[0],):
            raise InvalidInputError(
                f"need (b, k) rows with b labels, got {raw.shape} and {labels.shape}"
            )
        for name, rows in (("raw", raw), ("refined", self.refined)):
            if rows is None:
                continue
            rows = np.asarray(rows, dtype=np.float64)
            if rows.shape != raw.shape:
                raise InvalidInputError(f"{name} rows have shape {rows.shape}")
            if np.max(np.abs(rows.sum(axis=1) - 1.0)) > 1e-5:
                raise InvalidInputError(f"{name} rows must sum to 1 within 1e-5")
        if labels.min() < 0 or labels.max() >= raw.shape[1]:
            raise InvalidInputError("label index out of range")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "labels", labels.astype(np.int64))
        if self.refined is not None:
            object.__setattr__(self, "refined", np.asarray(self.refined, dtype=np.float64))


def cross_entropy(rows, labels):
    """Mean negative log-probability of the labelled class.

    Probabilities are clipped to [1e-9, 1] inside the log, so exact zeros stay
    finite and exact ones contribute exactly zero.
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= rows.shape[1]:
        raise InvalidInputError("label index out of range")
    picked = rows[np.arange(rows.shape[0]), labels]
    return float(np.mean(-np.log(np.clip(picked, LOG_EPS, 1.0))))


def intra_class_relation(raw, refined):
    """Mean over class columns of (1 - Pearson correlation across the batch).

    Columns with zero variance in either matrix carry no ranking information
    and are skipped; a batch below two rows (or with every column skipped)
    contributes zero with a warning.
    """
    raw = np.asarray(raw, dtype=np.float64)
    refined = np.asarray(refined, dtype=np.float64)
    if raw.shape != refined.shape:
        raise InvalidInputError(f"shape mismatch: {raw.shape} vs {refined.shape}")
    if raw.shape[0] < 2:
        log.warning("intra-class relation needs >= 2 rows; contributing 0")
        return 0.0
    x = raw - raw.mean(axis=0)
    y = refined - refined.mean(axis=0)
    sx = np.sqrt(np.sum(x * x, axis=0))
    sy = np.sqrt(np.sum(y * y, axis=0))
    keep = (sx > 0) & (sy > 0)
    if not np.any(keep):
        log.warning("all class columns degenerate; intra-class relation contributes 0")
        return 0.0
    corr = np.sum(x[:, keep] * y[:, keep], axis=0) / (sx[keep] * sy[keep])
    return float(np.mean(1.0 - corr))


def total_loss(batch, weights=(1.0, 1.0, 1.0)):
    """Weighted sum of the three terms plus a per-term breakdown.

    The returned total is computed as the exact sum of the component dict, so
    logged components always reconcile.
    """
    w_cls, w_aux, w_intra = weights
    comps = {"cls": w_cls * cross_entropy(batch.raw, batch.labels)}
    if batch.refined is not None and (w_aux != 0.0 or w_intra != 0.0):
        comps["aux"] = w_aux * cross_entropy(batch.refined, batch.labels)
        comps["intra"] = (
            w_intra * intra_class_relation(batch.raw, batch.refined)
            if w_intra != 0.0 else 0.0
        )
    else:
        comps["aux"] = 0.0
        comps["intra"] = 0.0
    return comps["cls"] + comps["aux"] + comps["intra"], comps
