"""Self-challenging: mask the feature entries that push the true-class score hardest."""
from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigurationError
from ..numerics import Tensor, backward
from .base import DGPlugin, ScoreFn


def gradient_threshold(g: np.ndarray, percentile: float) -> float:
    """Cut-off such that the top ``ceil(percentile * n)`` gradient entries are at or above it."""
    s = np.sort(np.asarray(g, dtype=np.float64).reshape(-1))
    n = len(s)
    k = min(n, max(1, math.ceil(percentile * n - 1e-12)))
    return float(s[n - k])


def gradient_mask(g: np.ndarray, percentile: float) -> np.ndarray:
    """1 where the entry is kept, 0 where ``g_j >= q``; ties at the cut-off are all zeroed."""
    g = np.asarray(g, dtype=np.float64)
    return (g < gradient_threshold(g, percentile)).astype(np.float64)


def sc_mask(z: Tensor, labels: np.ndarray, score_fn: ScoreFn, percentile: float, batch_ratio: float,
            rng: np.random.Generator) -> Tensor:
    """Return ``m * z`` where a seeded ``batch_ratio`` share of rows get gradient masks.

    The gradient is that of each sample's ground-truth score with respect to
    its own features; untouched rows keep a mask of ones.
    """
    if not 0 < percentile < 1:
        raise ConfigurationError(f"percentile must lie in (0, 1), got {percentile}")
    if not 0 <= batch_ratio <= 1:
        raise ConfigurationError(f"batch_ratio must lie in [0, 1], got {batch_ratio}")
    n = z.shape[0]
    count = int(round(batch_ratio * n))
    if count == 0:
        return z
    rows = np.sort(rng.choice(n, size=count, replace=False))
    probe = Tensor(z.data.copy(), requires_grad=True)
    backward(score_fn(probe, labels).sum())
    g = probe.grad if probe.grad is not None else np.zeros_like(z.data)
    mask = np.ones_like(z.data)
    for r in rows:
        mask[r] = gradient_mask(g[r], percentile)
    return z * mask


class SelfChallenging(DGPlugin):
    name = "sc"

    def __init__(self, percentile: float = 0.1, batch_ratio: float = 0.1):
        if not 0 < percentile < 1:
            raise ConfigurationError(f"percentile must lie in (0, 1), got {percentile}")
        if not 0 <= batch_ratio <= 1:
            raise ConfigurationError(f"batch_ratio must lie in [0, 1], got {batch_ratio}")
        self.percentile = percentile
        self.batch_ratio = batch_ratio

    def challenge(self, z, labels, score_fn):
        return sc_mask(z, labels, score_fn, self.percentile, self.batch_ratio, self.rng)

    def state(self) -> dict:
        return {"name": self.name, "percentile": self.percentile, "batch_ratio": self.batch_ratio}
