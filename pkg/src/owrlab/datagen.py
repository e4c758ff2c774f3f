"""Synthetic multi-domain benchmark, domain transforms, class schedules and dataset files."""
from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ParseError


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class Sample:
    pixels: np.ndarray  # (H, W, C) in [0, 1]
    class_id: int
    domain_id: int = 0
    instance_id: int = 0


@dataclass
class Dataset:
    """Column-oriented collection of samples; pixels are float32 (N, H, W, C)."""

    pixels: np.ndarray
    class_ids: np.ndarray
    domain_ids: np.ndarray
    instance_ids: np.ndarray
    class_names: list[str] | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.domain_ids = np.asarray(self.domain_ids, dtype=np.int64)
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64)
        n = len(self.pixels)
        if not (len(self.class_ids) == len(self.domain_ids) == len(self.instance_ids) == n):
            raise ConfigurationError("dataset columns have different lengths")

    def __len__(self) -> int:
        return len(self.pixels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.pixels.shape == other.pixels.shape
                and np.array_equal(self.pixels, other.pixels)
                and np.array_equal(self.class_ids, other.class_ids)
                and np.array_equal(self.domain_ids, other.domain_ids)
                and np.array_equal(self.instance_ids, other.instance_ids))

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.pixels.shape[1:])  # type: ignore[return-value]

    @property
    def classes(self) -> list[int]:
        return sorted(set(self.class_ids.tolist()))

    def sample(self, i: int) -> Sample:
        return Sample(self.pixels[i].copy(), int(self.class_ids[i]), int(self.domain_ids[i]), int(self.instance_ids[i]))

    def subset(self, index) -> "Dataset":
        return Dataset(self.pixels[index], self.class_ids[index], self.domain_ids[index],
                       self.instance_ids[index], self.class_names)

    def of_classes(self, classes: Sequence[int]) -> "Dataset":
        return self.subset(np.isin(self.class_ids, list(classes)))

    def flat(self) -> np.ndarray:
        """Row-major, channel-last flattening as float64 for the feature extractor."""
        return self.pixels.reshape(len(self), -1).astype(np.float64)

    def split_by_instance(self) -> tuple["Dataset", "Dataset"]:
        """(train, test): the highest instance id of each class is held out for test."""
        held = np.zeros(len(self), dtype=bool)
        for c in self.classes:
            rows = self.class_ids == c
            held |= rows & (self.instance_ids == self.instance_ids[rows].max())
        return self.subset(~held), self.subset(held)

    @classmethod
    def empty(cls, image_shape=(16, 16, 3)) -> "Dataset":
        z = np.zeros(0, dtype=np.int64)
        return cls(np.zeros((0, *image_shape), dtype=np.float32), z, z, z)


# benchmark generation -------------------------------------------------------

SHAPES = ("disk", "square", "triangle", "cross", "ring", "hbar", "vbar", "diamond")
TEXTURES = ("solid", "hstripes", "vstripes", "checker")
PALETTE = np.array([
    [0.95, 0.25, 0.20], [0.20, 0.80, 0.30], [0.25, 0.35, 0.95], [0.95, 0.85, 0.20],
    [0.85, 0.30, 0.85], [0.20, 0.85, 0.90],
])


def _shape_field(shape: str, u: np.ndarray, v: np.ndarray, size: float) -> np.ndarray:
    """Signed inside-ness (positive inside) of a unit shape scaled by ``size``."""
    u, v = u / size, v / size
    if shape == "disk":
        return 1.0 - np.sqrt(u ** 2 + v ** 2)
    if shape == "square":
        return 0.8 - np.maximum(abs(u), abs(v))
    if shape == "triangle":
        return np.minimum(0.7 - v, np.minimum(v + 0.7 - 2 * abs(u), 0.7 + v)) * 0.8
    if shape == "cross":
        return np.maximum(0.3 - np.maximum(abs(u), abs(v) / 3.0), 0.3 - np.maximum(abs(v), abs(u) / 3.0))
    if shape == "ring":
        r = np.sqrt(u ** 2 + v ** 2)
        return 0.25 - abs(r - 0.7)
    if shape == "hbar":
        return np.minimum(0.3 - abs(v), 1.0 - abs(u))
    if shape == "vbar":
        return np.minimum(0.3 - abs(u), 1.0 - abs(v))
    if shape == "diamond":
        return 1.0 - (abs(u) + abs(v))
    raise ConfigurationError(f"unknown shape {shape!r}")


def _texture(texture: str, u: np.ndarray, v: np.ndarray, phase: float) -> np.ndarray:
    if texture == "solid":
        return np.ones_like(u)
    if texture == "hstripes":
        return 0.5 + 0.5 * np.sign(np.sin(v * 9.0 + phase))
    if texture == "vstripes":
        return 0.5 + 0.5 * np.sign(np.sin(u * 9.0 + phase))
    if texture == "checker":
        return 0.5 + 0.5 * np.sign(np.sin(u * 7.0 + phase) * np.sin(v * 7.0 + phase))
    raise ConfigurationError(f"unknown texture {texture!r}")


def render(shape: str, texture: str, color: np.ndarray, size: int, channels: int,
           center=(0.0, 0.0), scale: float = 0.6, phase: float = 0.0,
           background: float = 0.15) -> np.ndarray:
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    v, u = np.meshgrid(coords, coords, indexing="ij")
    u, v = u - center[0], v - center[1]
    inside = 1.0 / (1.0 + np.exp(-_shape_field(shape, u, v, scale) * size * 1.5))
    tex = 0.45 + 0.55 * _texture(texture, u, v, phase)
    rgb = np.resize(np.asarray(color, dtype=np.float64), channels)
    fg = tex[..., None] * rgb
    img = background + inside[..., None] * (fg - background)
    return np.clip(img, 0.0, 1.0)


def class_templates(num_classes: int, seed: int) -> list[tuple[str, str, int]]:
    """Distinct (shape, texture, palette index) triplets, shapes spread round-robin."""
    rng = np.random.default_rng([seed, 101])
    combos = list(itertools.product(range(len(SHAPES)), range(len(TEXTURES)), range(len(PALETTE))))
    if num_classes > len(combos):
        raise ConfigurationError(f"at most {len(combos)} distinct class templates are available")
    order = rng.permutation(len(combos))
    chosen, used = [], set()
    # prefer triplets that differ from every earlier class in at least two attributes
    for min_diff in (2, 1):
        for i in order:
            if len(chosen) == num_classes:
                break
            c = combos[i]
            if c in used:
                continue
            if all(sum(a != b for a, b in zip(c, o)) >= min_diff for o in chosen):
                chosen.append(c)
                used.add(c)
    return [(SHAPES[s], TEXTURES[t], p) for s, t, p in chosen]


def generate_benchmark(num_classes: int, instances_per_class: int, samples_per_instance: int,
                       seed: int = 0, image_size: int = 16, channels: int = 3) -> Dataset:
    """Domain-0 dataset of procedurally rendered classes.

    Each class is a shape/texture/colour template. Instances jitter position,
    size, tint and texture phase; samples within an instance add small pose
    and lighting noise.
    """
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    if instances_per_class < 2:
        raise ConfigurationError(
            f"instances_per_class must be >= 2 (one instance per class is held out for test), got {instances_per_class}")
    if samples_per_instance < 1:
        raise ConfigurationError("samples_per_instance must be >= 1")
    templates = class_templates(num_classes, seed)
    rng = np.random.default_rng([seed, 202])
    images, labels, instances = [], [], []
    for cls, (shape, texture, pidx) in enumerate(templates):
        for inst in range(instances_per_class):
            icenter = rng.uniform(-0.12, 0.12, size=2)
            iscale = 0.62 * rng.uniform(0.88, 1.12)
            icolor = np.clip(PALETTE[pidx] + rng.uniform(-0.07, 0.07, size=3), 0, 1)
            iphase = rng.uniform(0, 2 * np.pi)
            for _ in range(samples_per_instance):
                center = icenter + rng.normal(0, 0.05, size=2)
                scale = iscale * rng.uniform(0.95, 1.05)
                color = np.clip(icolor * rng.uniform(0.92, 1.08), 0, 1)
                img = render(shape, texture, color, image_size, channels, center, scale, iphase,
                             background=0.15 + rng.uniform(-0.03, 0.03))
                img = img + rng.normal(0, 0.02, size=img.shape)
                images.append(np.clip(img, 0, 1))
                labels.append(cls)
                instances.append(inst)
    n = len(images)
    names = [f"{s}-{t}-c{p}" for s, t, p in templates]
    return Dataset(np.stack(images).astype(np.float32), labels, np.zeros(n), instances, names)


# domains --------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    domain_id: int = 0
    color_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    color_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    contrast: float = 1.0
    blur_radius: int = 0
    noise_sigma: float = 0.0
    occlusion_count: int = 0
    occlusion_max: int = 0
    scale_min: float = 1.0
    scale_max: float = 1.0

    def __post_init__(self):
        if self.blur_radius < 0 or self.noise_sigma < 0 or self.occlusion_count < 0 or self.occlusion_max < 0:
            raise ConfigurationError(f"domain {self.domain_id}: negative blur/noise/occlusion parameter")
        if not 0 < self.scale_min <= self.scale_max:
            raise ConfigurationError(f"domain {self.domain_id}: need 0 < scale_min <= scale_max")
        if self.occlusion_count > 0 and self.occlusion_max < 1:
            raise ConfigurationError(f"domain {self.domain_id}: occlusion_max must be >= 1")


def default_domains() -> list[DomainSpec]:
    """Clean / stylized / cluttered ladder."""
    return [
        DomainSpec(0),
        DomainSpec(1, color_gain=(0.8, 1.0, 1.15), color_bias=(0.06, 0.0, -0.04), contrast=0.8),
        DomainSpec(2, color_gain=(0.9, 1.0, 1.1), color_bias=(0.03, 0.0, -0.03), contrast=0.85,
                   blur_radius=1, noise_sigma=0.06, occlusion_count=1, occlusion_max=6,
                   scale_min=0.75, scale_max=1.25),
    ]


def _rescale(img: np.ndarray, factor: float) -> np.ndarray:
    """Zoom about the image centre with nearest-neighbour sampling and edge clamping."""
    h, w = img.shape[:2]
    rows = np.clip(np.floor((np.arange(h) + 0.5 - h / 2) / factor + h / 2).astype(int), 0, h - 1)
    cols = np.clip(np.floor((np.arange(w) + 0.5 - w / 2) / factor + w / 2).astype(int), 0, w - 1)
    return img[rows][:, cols]


def box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return img
    k = 2 * radius + 1
    padded = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    c = padded.cumsum(axis=0)
    c = np.concatenate([np.zeros_like(c[:1]), c], axis=0)
    rows = (c[k:] - c[:-k]) / k
    c = rows.cumsum(axis=1)
    c = np.concatenate([np.zeros_like(c[:, :1]), c], axis=1)
    return (c[:, k:] - c[:, :-k]) / k


def apply_domain(sample: Sample, spec: DomainSpec, seed) -> Sample:
    """Scale jitter, colour map, contrast, blur, noise, occlusion, clamp; labels untouched."""
    rng = np.random.default_rng(seed)
    img = np.asarray(sample.pixels, dtype=np.float64)
    h, w, c = img.shape
    if spec.scale_max != 1.0 or spec.scale_min != 1.0:
        img = _rescale(img, rng.uniform(spec.scale_min, spec.scale_max))
    gain = np.resize(np.asarray(spec.color_gain, dtype=np.float64), c)
    bias = np.resize(np.asarray(spec.color_bias, dtype=np.float64), c)
    if np.any(gain != 1.0) or np.any(bias != 0.0):
        img = img * gain + bias
    if spec.contrast != 1.0:
        mean = img.mean()
        img = mean + spec.contrast * (img - mean)
    img = box_blur(img, spec.blur_radius)
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    for _ in range(spec.occlusion_count):
        ph = int(rng.integers(1, min(spec.occlusion_max, h) + 1))
        pw = int(rng.integers(1, min(spec.occlusion_max, w) + 1))
        top = int(rng.integers(0, h - ph + 1))
        left = int(rng.integers(0, w - pw + 1))
        img = img.copy()
        img[top:top + ph, left:left + pw] = rng.uniform(0, 1, size=c)
    img = np.clip(img, 0.0, 1.0)
    return Sample(img.astype(np.asarray(sample.pixels).dtype, copy=False), sample.class_id, spec.domain_id, sample.instance_id)


def apply_domain_dataset(dataset: Dataset, spec: DomainSpec, seed: int) -> Dataset:
    out = np.empty_like(dataset.pixels)
    for i in range(len(dataset)):
        out[i] = apply_domain(dataset.sample(i), spec, [seed, spec.domain_id, i]).pixels
    return Dataset(out, dataset.class_ids, np.full(len(dataset), spec.domain_id), dataset.instance_ids,
                   dataset.class_names)


# schedules --------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeSchedule:
    base_classes: tuple[int, ...]
    incremental_steps: tuple[tuple[int, ...], ...]
    unknown_classes: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        groups = [self.base_classes, *self.incremental_steps, self.unknown_classes]
        flat = [c for g in groups for c in g]
        if len(flat) != len(set(flat)):
            raise ConfigurationError("schedule class groups must be pairwise disjoint")
        if not self.base_classes or any(len(s) == 0 for s in self.incremental_steps):
            raise ConfigurationError("every schedule step must be non-empty")

    @property
    def steps(self) -> list[tuple[int, ...]]:
        return [self.base_classes, *self.incremental_steps]

    @property
    def known_classes(self) -> tuple[int, ...]:
        return tuple(c for s in self.steps for c in s)


def _valid_pairs(known: int) -> list[tuple[int, int]]:
    pairs = [(known, 0)]
    for base in range(1, known):
        pairs += [(base, step) for step in range(1, known - base + 1) if (known - base) % step == 0]
    return pairs


def build_schedule(classes: Sequence[int], known_fraction: float, base_count: int, step_size: int,
                   seed: int = 0) -> EpisodeSchedule:
    classes = list(classes)
    known = round_half_up(known_fraction * len(classes))
    rest = known - base_count
    feasible = base_count >= 1 and rest >= 0 and (rest == 0 if step_size == 0 else rest % step_size == 0)
    if not feasible:
        pairs = _valid_pairs(known)
        shown = ", ".join(f"({b}, {s})" for b, s in pairs[:20]) + (" ..." if len(pairs) > 20 else "")
        raise ConfigurationError(
            f"base_count={base_count}, step_size={step_size} cannot cover {known} known classes; "
            f"valid (base_count, step_size) pairs: {shown}")
    order = [classes[i] for i in np.random.default_rng([seed, 303]).permutation(len(classes))]
    known_set, unknown = order[:known], order[known:]
    base = tuple(known_set[:base_count])
    steps = tuple(tuple(known_set[i:i + step_size]) for i in range(base_count, known, step_size)) if step_size else ()
    return EpisodeSchedule(base, steps, tuple(unknown), seed)


@dataclass(frozen=True)
class SplitTrial:
    val_base_classes: tuple[int, ...]
    val_incremental_classes: tuple[int, ...]
    val_unknown_classes: tuple[int, ...]
    trial_seed: int
    variants: tuple[tuple[tuple[int, ...], ...], ...] = field(default=())

    def schedules(self) -> list[EpisodeSchedule]:
        """One schedule per cardinality variant."""
        return [EpisodeSchedule(self.val_base_classes, steps, self.val_unknown_classes, self.trial_seed)
                for steps in self.variants]


def cardinality_variants(classes: Sequence[int]) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """m single-class steps, two half-size steps, and one step with all m classes."""
    classes = tuple(classes)
    m = len(classes)
    if m == 0:
        return ((), (), ())
    half = math.ceil(m / 2)
    halves = tuple(s for s in (classes[:half], classes[half:]) if s)
    return (tuple((c,) for c in classes), halves, (classes,))


def build_validation_splits(base_classes: Sequence[int], num_trials: int, seed: int = 0) -> list[SplitTrial]:
    base_classes = list(base_classes)
    n = len(base_classes)
    if n < 6:
        raise ConfigurationError(f"validation splits need at least 6 base classes, got {n}")
    n_unknown = max(1, math.ceil(0.1 * n - 1e-9))
    n_first = round_half_up(0.5 * (n - n_unknown))
    trials = []
    for t in range(num_trials):
        trial_seed = int(np.random.default_rng([seed, 404, t]).integers(0, 2 ** 31))
        order = [base_classes[i] for i in np.random.default_rng(trial_seed).permutation(n)]
        unknown = tuple(order[:n_unknown])
        first = tuple(order[n_unknown:n_unknown + n_first])
        incremental = tuple(order[n_unknown + n_first:])
        trials.append(SplitTrial(first, incremental, unknown, trial_seed, cardinality_variants(incremental)))
    return trials


# dataset files ------------------------------------------------------------------

DATASET_MAGIC = b"OWRD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHIHHH")


def _record_dtype(h: int, w: int, c: int) -> np.dtype:
    return np.dtype([("class_id", "<u2"), ("domain_id", "<u2"), ("instance_id", "<u4"),
                     ("pixels", "<f4", (h, w, c))])


def dataset_to_bytes(dataset: Dataset) -> bytes:
    h, w, c = dataset.image_shape
    records = np.zeros(len(dataset), dtype=_record_dtype(h, w, c))
    records["class_id"] = dataset.class_ids
    records["domain_id"] = dataset.domain_ids
    records["instance_id"] = dataset.instance_ids
    records["pixels"] = dataset.pixels
    return _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(dataset), h, w, c) + records.tobytes()


def dataset_from_bytes(blob: bytes) -> Dataset:
    if len(blob) < _HEADER.size:
        raise ParseError(f"truncated dataset header: {len(blob)} bytes, need {_HEADER.size} at byte offset 0")
    magic, version, count, h, w, c = _HEADER.unpack_from(blob, 0)
    if magic != DATASET_MAGIC:
        raise ParseError("bad magic at byte offset 0, expected b'OWRD'")
    if version != DATASET_VERSION:
        raise ParseError(f"unsupported dataset version {version} at byte offset 4")
    dtype = _record_dtype(h, w, c)
    need = count * dtype.itemsize
    available = len(blob) - _HEADER.size
    if need > available:
        raise ParseError(f"{count} records of {dtype.itemsize} bytes overflow the file: "
                         f"data ends at byte offset {len(blob)}, need {_HEADER.size + need}")
    if need < available:
        raise ParseError(f"trailing bytes after last record at byte offset {_HEADER.size + need}")
    records = np.frombuffer(blob, dtype=dtype, count=count, offset=_HEADER.size)
    return Dataset(records["pixels"].copy(), records["class_id"], records["domain_id"], records["instance_id"])


def write_dataset(dataset: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(dataset))


def read_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


def import_image_folder(root, image_size: int | None = None, domain_id: int = 0) -> Dataset:
    """Read ``<root>/<class_name>/*.png``; classes are numbered in sorted name order.

    Each file becomes its own instance. Images are converted to RGB and,
    if ``image_size`` is given, resized to a square of that side.
    """
    from PIL import Image, UnidentifiedImageError

    root = Path(root)
    names = sorted(p.name for p in root.iterdir() if p.is_dir())
    pixels, labels, instances = [], [], []
    for cls, name in enumerate(names):
        for i, png in enumerate(sorted((root / name).glob("*.png"))):
            try:
                with Image.open(png) as im:
                    im = im.convert("RGB")
                    if image_size is not None:
                        im = im.resize((image_size, image_size), Image.BILINEAR)
                    arr = np.asarray(im, dtype=np.float32) / 255.0
            except (OSError, UnidentifiedImageError) as exc:
                raise ParseError(f"unreadable PNG {png}: {exc}") from exc
            if pixels and arr.shape != pixels[0].shape:
                raise ParseError(f"{png} has shape {arr.shape}, expected {pixels[0].shape}; pass image_size")
            pixels.append(arr)
            labels.append(cls)
            instances.append(i)
    if not pixels:
        return replace(Dataset.empty(), class_names=names)
    n = len(pixels)
    return Dataset(np.stack(pixels), labels, np.full(n, domain_id), instances, names)
