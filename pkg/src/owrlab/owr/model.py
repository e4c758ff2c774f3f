from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..numerics import Mlp, MlpSpec, mlp_forward

UNKNOWN = -1
VARIANTS = ("nno", "deepnno", "bdoc")
# B-DOC's squared-distance logits blow up at the shared default learning rate
VARIANT_DEFAULTS: dict[str, dict] = {"nno": {}, "deepnno": {}, "bdoc": {"lr": 0.02}}


@dataclass
class MethodConfig:
    variant: str = "deepnno"
    lam: float = 0.05
    gamma: float = 0.1
    lr: float = 0.05
    weight_decay: float = 1e-4
    epochs_base: int = 30
    epochs_incremental: int = 20
    batch_size: int = 32
    neg_weight: float = 1.0
    tau_reset: str = "never"  # when DeepNNO's running threshold statistics restart: epoch | step | never
    tau_lr: float = 0.05
    tau_epochs: int = 50
    nno_tau_grid: int = 0  # 0 = every observed distance
    exemplars_per_class: int = 5
    ema_momentum: float = 0.9
    std_pooling: str = "component"  # component | sample_norm | batch
    reserve_fraction: float = 0.1
    reserve_augment_strength: float = 0.25
    hidden: tuple[int, ...] = (128,)
    feature_dim: int = 32

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("lam", "gamma", "weight_decay", "neg_weight", "tau_lr"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        for name in ("epochs_base", "epochs_incremental", "tau_epochs", "exemplars_per_class", "nno_tau_grid"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if not 0 <= self.ema_momentum < 1:
            raise ConfigurationError("ema_momentum must lie in [0, 1)")
        if not 0 <= self.reserve_augment_strength <= 1:
            raise ConfigurationError("reserve_augment_strength must lie in [0, 1]")
        if not 0 <= self.reserve_fraction < 1:
            raise ConfigurationError("reserve_fraction must lie in [0, 1)")
        if self.tau_reset not in ("epoch", "step", "never"):
            raise ConfigurationError(f"tau_reset must be epoch, step or never, got {self.tau_reset!r}")
        if self.std_pooling not in ("component", "sample_norm", "batch"):
            raise ConfigurationError(f"unknown std_pooling {self.std_pooling!r}")
        if self.feature_dim < 2:
            raise ConfigurationError("feature_dim must be >= 2")

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "MethodConfig":
        if variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
        return cls(variant=variant, **{**VARIANT_DEFAULTS[variant], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class ClassModel:
    centroids: dict[int, np.ndarray] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)
    tau: float = 0.5
    class_tau: dict[int, float] = field(default_factory=dict)
    normalizer: float = 1.0
    feature_std: float = 1.0
    # running weighted sums behind the online DeepNNO threshold
    tau_weight: float = 0.0
    tau_weighted_sum: float = 0.0

    def centroid_matrix(self, classes) -> np.ndarray:
        return np.stack([self.centroids[c] for c in classes])


@dataclass
class ExemplarMemory:
    capacity: int
    stored: dict[int, np.ndarray] = field(default_factory=dict)  # class -> (k, input_dim)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.stored:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        xs = [self.stored[c] for c in sorted(self.stored)]
        ys = [np.full(len(self.stored[c]), c) for c in sorted(self.stored)]
        return np.concatenate(xs), np.concatenate(ys).astype(np.int64)

    def __len__(self) -> int:
        return sum(len(v) for v in self.stored.values())


@dataclass
class OwrModel:
    config: MethodConfig
    extractor: Mlp
    image_shape: tuple[int, int, int]
    snapshot: Mlp | None = None
    classes: ClassModel = field(default_factory=ClassModel)
    memory: ExemplarMemory = field(default_factory=lambda: ExemplarMemory(0))
    known: list[int] = field(default_factory=list)
    step: int = 0  # number of completed steps
    step_classes: list[list[int]] = field(default_factory=list)

    @classmethod
    def create(cls, config: MethodConfig, image_shape, seed: int = 0) -> "OwrModel":
        input_dim = int(np.prod(image_shape))
        spec = MlpSpec((input_dim, *config.hidden, config.feature_dim), seed)
        return cls(config, Mlp(spec), tuple(image_shape), memory=ExemplarMemory(config.exemplars_per_class))

    def features(self, x: np.ndarray, batch: int = 512) -> np.ndarray:
        """Forward pass without gradient tracking."""
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        plain = [p.detach() for p in self.extractor.params]
        out = [mlp_forward(plain, x[i:i + batch]).data for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.config.feature_dim))
