"""Experiment configuration: YAML in, strictly validated, fully resolved into the run manifest."""
from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .datagen import DomainSpec, EpisodeSchedule, build_schedule, default_domains
from .dg import PLUGINS
from .errors import ConfigurationError, ParseError
from .owr.model import MethodConfig

MANIFEST_FORMAT = "owrlab-manifest/1"
SEED_ENV = "OWRLAB_SEED"


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainModel(Strict):
    domain_id: int = Field(ge=0)
    color_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    color_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    contrast: float = 1.0
    blur_radius: int = Field(0, ge=0)
    noise_sigma: float = Field(0.0, ge=0)
    occlusion_count: int = Field(0, ge=0)
    occlusion_max: int = Field(0, ge=0)
    scale_min: float = Field(1.0, gt=0)
    scale_max: float = Field(1.0, gt=0)

    def spec(self) -> DomainSpec:
        return DomainSpec(**self.model_dump())


def _default_domain_models() -> list[DomainModel]:
    return [DomainModel(**vars(d)) for d in default_domains()]


class BenchmarkModel(Strict):
    num_classes: int = Field(20, ge=2)
    instances_per_class: int = Field(4, ge=2)
    samples_per_instance: int = Field(20, ge=1)
    image_size: int = Field(16, ge=4)
    channels: int = Field(3, ge=1)
    seed: int = 0
    domains: list[DomainModel] = Field(default_factory=_default_domain_models)

    @model_validator(mode="after")
    def _unique_domains(self):
        ids = [d.domain_id for d in self.domains]
        if len(ids) != len(set(ids)):
            raise ValueError(f"domain ids must be unique, got {ids}")
        return self


class ScheduleModel(Strict):
    known_fraction: float = Field(0.5, gt=0, le=1)
    base_count: int = Field(4, ge=1)
    step_size: int = Field(2, ge=0)
    seed: int = 0


class MethodParams(Strict):
    """Overrides on top of the variant defaults; unset fields keep them."""

    lam: Optional[float] = Field(None, ge=0)
    gamma: Optional[float] = Field(None, ge=0)
    lr: Optional[float] = Field(None, gt=0)
    weight_decay: Optional[float] = Field(None, ge=0)
    epochs_base: Optional[int] = Field(None, ge=0)
    epochs_incremental: Optional[int] = Field(None, ge=0)
    batch_size: Optional[int] = Field(None, ge=2)
    neg_weight: Optional[float] = Field(None, ge=0)
    tau_reset: Optional[Literal["epoch", "step", "never"]] = None
    tau_lr: Optional[float] = Field(None, ge=0)
    tau_epochs: Optional[int] = Field(None, ge=0)
    nno_tau_grid: Optional[int] = Field(None, ge=0)
    exemplars_per_class: Optional[int] = Field(None, ge=0)
    ema_momentum: Optional[float] = Field(None, ge=0, lt=1)
    std_pooling: Optional[Literal["component", "sample_norm", "batch"]] = None
    reserve_fraction: Optional[float] = Field(None, ge=0, lt=1)
    reserve_augment_strength: Optional[float] = Field(None, ge=0, le=1)
    hidden: Optional[list[int]] = None
    feature_dim: Optional[int] = Field(None, ge=2)


class MethodEntry(Strict):
    variant: Literal["nno", "deepnno", "bdoc"]
    params: MethodParams = Field(default_factory=MethodParams)

    def resolve(self) -> MethodConfig:
        return MethodConfig.for_variant(self.variant, **self.params.model_dump(exclude_none=True))


class DgEntry(Strict):
    kind: Literal["none", "sc", "rr", "rsda"] = "none"
    params: dict[str, Any] = Field(default_factory=dict)


class ValidationModel(Strict):
    trials: int = Field(1, ge=1)
    seed: int = 0
    grids: dict[str, list[Any]] = Field(default_factory=dict)


class ExperimentConfig(Strict):
    benchmark: BenchmarkModel = Field(default_factory=BenchmarkModel)
    schedule: ScheduleModel = Field(default_factory=ScheduleModel)
    methods: list[MethodEntry] = Field(default_factory=lambda: [MethodEntry(variant=v) for v in ("nno", "deepnno", "bdoc")])
    dg: list[DgEntry] = Field(default_factory=lambda: [DgEntry()])
    seeds: list[int] = Field(default_factory=lambda: [0])
    train_domain: int = 0
    test_domains: list[int] = Field(default_factory=lambda: [0, 1, 2])
    data_dir: str = "data"
    output_dir: str = "runs"
    validation: ValidationModel = Field(default_factory=ValidationModel)

    @model_validator(mode="after")
    def _domains_exist(self):
        ids = {d.domain_id for d in self.benchmark.domains}
        missing = sorted({self.train_domain, *self.test_domains} - ids)
        if missing:
            raise ValueError(f"train/test domains {missing} are not among benchmark domains {sorted(ids)}")
        if not self.seeds:
            raise ValueError("seeds must list at least one seed")
        return self

    def check(self) -> None:
        """Module preconditions that need more than field types, run before any work starts."""
        for d in self.benchmark.domains:
            d.spec()
        for m in self.methods:
            m.resolve()
        for entry in self.dg:
            try:
                PLUGINS[entry.kind](**entry.params)
            except TypeError as exc:
                raise ConfigurationError(f"dg.{entry.kind}.params: {exc}") from exc
        self.episode_schedule()

    def episode_schedule(self) -> EpisodeSchedule:
        s = self.schedule
        return build_schedule(range(self.benchmark.num_classes), s.known_fraction, s.base_count, s.step_size, s.seed)

    def method(self, variant: str) -> MethodEntry:
        for m in self.methods:
            if m.variant == variant:
                return m
        raise ConfigurationError(f"method {variant!r} is not configured; have {[m.variant for m in self.methods]}")

    def resolved(self) -> dict:
        """Every field with defaults filled in, plus the resolved method configs."""
        d = self.model_dump(mode="json")
        d["resolved_methods"] = {m.variant: m.resolve().to_dict() for m in self.methods}
        return d


def _format_errors(exc: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid configuration"]
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {path}: {err['msg']} (got {err.get('input')!r})")
    return "\n".join(lines)


def _set_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if isinstance(node, list):
            node = node[int(k)]
        else:
            node = node.setdefault(k, {})
    if isinstance(node, list):
        node[int(keys[-1])] = value
    else:
        node[keys[-1]] = value


def parse_config(data: dict | None, source: str = "<config>", overrides: list[str] | None = None,
                 env: dict | None = None) -> ExperimentConfig:
    """Validate raw config data; ``overrides`` are ``key.path=value`` strings, values parsed as YAML."""
    data = copy.deepcopy(data or {})
    if data.get("format") == MANIFEST_FORMAT:
        # pin every method field to the value the recorded run used
        data = data["config"]
        resolved = data.pop("resolved_methods", {}) or {}
        for entry in data.get("methods", []):
            pinned = {k: v for k, v in resolved.get(entry.get("variant"), {}).items() if k != "variant"}
            entry["params"] = {**pinned, **{k: v for k, v in (entry.get("params") or {}).items() if v is not None}}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key.path=value")
        key, raw = item.split("=", 1)
        try:
            _set_path(data, key.strip(), yaml.safe_load(raw))
        except (IndexError, ValueError, AttributeError, TypeError) as exc:
            raise ConfigurationError(f"override {item!r}: {exc}") from exc
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            data["seeds"] = [int(s) for s in env[SEED_ENV].split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV} must be a comma-separated list of integers") from exc
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_errors(exc, source)) from exc
    cfg.check()
    return cfg


def load_config(path, overrides: list[str] | None = None, env: dict | None = None) -> ExperimentConfig:
    """Read a YAML config, or the JSON manifest of an earlier run."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return parse_config(data, str(path), overrides, env)
