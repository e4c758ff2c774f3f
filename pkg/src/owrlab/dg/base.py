from __future__ import annotations

from typing import Callable

import numpy as np

from ..numerics import Tensor

# score_fn(z, labels) -> (n,) tensor with each sample's ground-truth class score
ScoreFn = Callable[[Tensor, np.ndarray], Tensor]
# accuracy_fn(images, labels) -> closed-world accuracy of the current model
AccuracyFn = Callable[[np.ndarray, np.ndarray], float]


class DGPlugin:
    """No-op hooks called by the training loop; subclasses override what they need.

    A plugin owns its random stream, so enabling one never perturbs the
    draws the training loop makes for itself.
    """

    name = "none"

    def start_step(self, feature_dim: int, seed) -> None:
        self.rng = np.random.default_rng(seed)

    def params(self) -> list[Tensor]:
        return []

    def prepare_batch(self, images: np.ndarray, labels: np.ndarray):
        return images, labels, None

    def original_rows(self, aux, total: int) -> np.ndarray:
        """Boolean mask of prepared-batch rows that are untransformed samples; only these move centroids."""
        return np.ones(total, dtype=bool)

    def challenge(self, z: Tensor, labels: np.ndarray, score_fn: ScoreFn) -> Tensor:
        return z

    def aux_loss(self, z: Tensor, aux) -> Tensor | None:
        return None

    def after_iteration(self, iteration: int, images: np.ndarray, labels: np.ndarray,
                        accuracy_fn: AccuracyFn) -> None:
        pass

    def state(self) -> dict:
        return {"name": self.name}

    def arrays(self) -> list[np.ndarray]:
        return []

    def load(self, state: dict, arrays: list[np.ndarray]) -> None:
        pass
