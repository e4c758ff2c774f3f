"""Label-preserving image transforms on (n, H, W, C) batches in [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError

# closed magnitude range per kind
RANGES: dict[str, tuple[float, float]] = {
    "hue": (-0.15, 0.15),       # rotation in turns around the YIQ chroma plane
    "contrast": (0.6, 1.4),     # factor around the per-image mean
    "brightness": (-0.2, 0.2),  # additive offset
    "saturation": (0.5, 1.5),   # blend factor away from grey
    "random_crop": (0.75, 1.0), # kept side fraction, resized back
    "mirroring": (1.0, 1.0),    # horizontal flip; magnitude unused
}
KINDS = tuple(RANGES)

_RGB2YIQ = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
_YIQ2RGB = np.linalg.inv(_RGB2YIQ)


@dataclass(frozen=True)
class BasicTransform:
    kind: str
    magnitude: float

    def __post_init__(self):
        if self.kind not in RANGES:
            raise ConfigurationError(f"unknown transform kind {self.kind!r}")
        lo, hi = RANGES[self.kind]
        if not lo <= self.magnitude <= hi:
            raise ConfigurationError(f"{self.kind} magnitude {self.magnitude} outside [{lo}, {hi}]")

    def apply(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        m = self.magnitude
        if self.kind == "brightness":
            out = x + m
        elif self.kind == "contrast":
            mean = x.mean(axis=(1, 2, 3), keepdims=True)
            out = mean + m * (x - mean)
        elif self.kind == "saturation":
            grey = _grey(x)
            out = grey + m * (x - grey)
        elif self.kind == "hue":
            out = _hue_rotate(x, m)
        elif self.kind == "mirroring":
            out = x[:, :, ::-1, :]
        else:
            out = _random_crop(x, m, rng)
        return np.clip(out, 0.0, 1.0)

    def to_list(self) -> list:
        return [self.kind, float(self.magnitude)]


def _grey(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != 3:
        return x.mean(axis=-1, keepdims=True)
    return (x @ _RGB2YIQ[0])[..., None]


def _hue_rotate(x: np.ndarray, turns: float) -> np.ndarray:
    if x.shape[-1] != 3:
        return x
    a = 2 * np.pi * turns
    rot = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
    return x @ (_YIQ2RGB @ rot @ _RGB2YIQ).T


def _random_crop(x: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    n, h, w, _ = x.shape
    ch, cw = max(1, int(round(fraction * h))), max(1, int(round(fraction * w)))
    out = np.empty_like(x)
    rows = (np.arange(h) * ch) // h
    cols = (np.arange(w) * cw) // w
    for i in range(n):
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        out[i] = x[i, top + rows][:, left + cols]
    return out


@dataclass(frozen=True)
class ComposedTransform:
    steps: tuple[BasicTransform, ...] = ()

    def __post_init__(self):
        if len(self.steps) > 3:
            raise ConfigurationError("a composed transform chains at most 3 basic transforms")

    def apply(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        for t in self.steps:
            x = t.apply(x, rng)
        return x

    @property
    def is_identity(self) -> bool:
        return not self.steps

    def to_list(self) -> list:
        return [t.to_list() for t in self.steps]

    @classmethod
    def from_list(cls, items) -> "ComposedTransform":
        return cls(tuple(BasicTransform(k, float(m)) for k, m in items))


IDENTITY = ComposedTransform()


IDENTITY_MAGNITUDE = {"hue": 0.0, "contrast": 1.0, "brightness": 0.0, "saturation": 1.0,
                      "random_crop": 1.0, "mirroring": 1.0}


def random_basic(rng: np.random.Generator, kinds=KINDS, strength: float = 1.0) -> BasicTransform:
    """Uniform magnitude over the kind's range shrunk toward its identity value by ``strength``."""
    kind = kinds[int(rng.integers(len(kinds)))]
    lo, hi = RANGES[kind]
    mid = IDENTITY_MAGNITUDE[kind]
    lo, hi = mid + strength * (lo - mid), mid + strength * (hi - mid)
    return BasicTransform(kind, float(rng.uniform(lo, hi)))


def random_chain(rng: np.random.Generator, max_len: int = 3) -> ComposedTransform:
    return ComposedTransform(tuple(random_basic(rng) for _ in range(int(rng.integers(1, max_len + 1)))))


def random_augment(images: np.ndarray, rng: np.random.Generator, strength: float = 0.5) -> np.ndarray:
    """One random basic transform per sample, as used for reserved and rotated copies."""
    out = np.empty(np.shape(images), dtype=np.float64)
    for i in range(len(images)):
        out[i] = random_basic(rng, strength=strength).apply(images[i:i + 1], rng)[0]
    return out
