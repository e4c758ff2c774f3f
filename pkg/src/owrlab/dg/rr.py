"""Relative-rotation self-supervision: predict the 90-degree turn relating two views."""
from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..numerics import Mlp, MlpSpec, Tensor, concat
from ..owr.losses import ce_loss
from .base import DGPlugin
from .transforms import random_augment

ANGLES = (0, 90, 180, 270)


def rotate(image: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Counter-clockwise rotation by ``quarter_turns * 90`` degrees of an (H, W, C) image."""
    return np.rot90(image, k=quarter_turns % 4, axes=(0, 1))


def rr_build_batch(images: np.ndarray, rng: np.random.Generator, augment: bool = True):
    """Rotated copies with their turn index; rotated copies get one random basic augmentation each."""
    images = np.asarray(images)
    if images.shape[1] != images.shape[2]:
        raise ContractError(f"relative rotations need square images, got {images.shape[1]}x{images.shape[2]}")
    theta = rng.integers(0, 4, size=len(images))
    rotated = np.stack([rotate(img, int(k)) for img, k in zip(images, theta)]) if len(images) else images.copy()
    if augment:
        rotated = random_augment(rotated, rng)
    return rotated, theta


class RotationHead:
    def __init__(self, feature_dim: int, hidden: int = 32, seed: int = 0):
        self.net = Mlp(MlpSpec((2 * feature_dim, hidden, 4), seed))

    @property
    def params(self) -> list[Tensor]:
        return self.net.params

    def __call__(self, z_orig: Tensor, z_rot: Tensor) -> Tensor:
        return self.net(concat([z_orig, z_rot], axis=1))


def rr_aux_loss(head: RotationHead, z_orig: Tensor, z_rot: Tensor, theta) -> Tensor:
    return ce_loss(head(z_orig, z_rot), np.asarray(theta, dtype=np.int64))


class RelativeRotation(DGPlugin):
    """With ``weight`` 0 the plugin is inert: no rotated copies, no auxiliary head."""

    name = "rr"

    def __init__(self, weight: float = 0.5, hidden: int = 32):
        self.weight = weight
        self.hidden = hidden
        self.head: RotationHead | None = None

    def start_step(self, feature_dim, seed):
        super().start_step(feature_dim, seed)
        if self.head is None:
            self.head = RotationHead(feature_dim, self.hidden, int(self.rng.integers(2 ** 31)))

    def params(self):
        return self.head.params if self.weight > 0 and self.head is not None else []

    def prepare_batch(self, images, labels):
        if self.weight == 0:
            return images, labels, None
        rotated, theta = rr_build_batch(images, self.rng)
        return np.concatenate([images, rotated]), np.concatenate([labels, labels]), (len(images), theta)

    def original_rows(self, aux, total):
        return np.arange(total) < (total if aux is None else aux[0])

    def aux_loss(self, z, aux):
        if aux is None:
            return None
        n, theta = aux
        return rr_aux_loss(self.head, z[:n], z[n:], theta) * self.weight

    def state(self):
        return {"name": self.name, "weight": self.weight, "hidden": self.hidden}

    def arrays(self):
        return self.head.net.state() if self.head is not None else []

    def load(self, state, arrays):
        if arrays:
            feature_dim = arrays[0].shape[0] // 2
            self.head = RotationHead(feature_dim, self.hidden)
            self.head.net.load_state(arrays)
