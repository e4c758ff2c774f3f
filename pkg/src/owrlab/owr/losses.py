from __future__ import annotations

import warnings

import numpy as np

from ..errors import ContractError
from ..numerics import Tensor, clip, exp, log, log_softmax, pairwise_sq_dists, sqrt, take, tensor

BCE_EPS = 1e-7


def bce_loss(scores: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy over classes and batch, probabilities clamped to [eps, 1-eps]."""
    t = np.asarray(targets, dtype=np.float64)
    p = clip(scores, BCE_EPS, 1.0 - BCE_EPS)
    per = log(p) * t + log(1.0 - p) * (1.0 - t)
    return per.mean() * -1.0


def one_hot(labels, classes) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    out = np.zeros((len(labels), len(classes)))
    out[np.arange(len(labels)), [index[int(y)] for y in labels]] = 1.0
    return out


def ce_loss(logits: Tensor, targets) -> Tensor:
    """Mean softmax cross-entropy; ``targets`` are column indices."""
    targets = np.asarray(targets, dtype=np.int64)
    lp = log_softmax(logits, axis=1)
    return take(lp, (np.arange(len(targets)), targets)).mean() * -1.0


def distillation_loss(z: Tensor, z_old, eps: float = 1e-12) -> Tensor:
    """Batch mean of ``||z - z_old||``; the previous extractor's features are constants."""
    if z_old is None:
        raise ContractError("distillation needs features from the previous-step extractor")
    z_old = z_old.data if isinstance(z_old, Tensor) else np.asarray(z_old, dtype=np.float64)
    diff = z - z_old
    return sqrt((diff * diff).sum(axis=1) + eps).mean()


def _masked_logsumexp(x: Tensor, mask: np.ndarray) -> Tensor:
    # row-wise log(sum(exp(x) * mask)); rows need at least one unmasked entry
    shift = np.where(mask, x.data, -np.inf).max(axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = exp(x + (np.where(mask, 0.0, -1e300) - shift))
    return log(e.sum(axis=1)) + shift[:, 0]


def snnl_loss(z: Tensor, labels, temperature: float) -> Tensor:
    """Soft nearest-neighbour loss averaged over anchors that have a same-class peer.

    Anchors without a same-class peer in the batch are skipped; if none
    remain the loss is 0 and a warning is emitted.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n < 2:
        raise ContractError("soft nearest-neighbour loss needs a batch of at least 2")
    logits = pairwise_sq_dists(z, z) * (-1.0 / temperature)
    off_diag = ~np.eye(n, dtype=bool)
    same = (labels[:, None] == labels[None, :]) & off_diag
    valid = same.any(axis=1)
    if not valid.any():
        warnings.warn("no anchor has a same-class peer; soft nearest-neighbour loss is 0", RuntimeWarning)
        return tensor(0.0)
    rows = np.flatnonzero(valid)
    sub = take(logits, rows)
    per_anchor = _masked_logsumexp(sub, off_diag[rows]) - _masked_logsumexp(sub, same[rows])
    return per_anchor.mean()
