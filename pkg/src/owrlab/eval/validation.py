"""Two-stage grid search: learning parameters first, rejection parameters second."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from ..datagen import Dataset, SplitTrial
from ..errors import ConfigurationError
from ..owr.model import MethodConfig
from .runner import CellConfig, run_experiment

# stage 1 is scored by closed world without rejection, stage 2 by OWR-H
STAGE1_PARAMS = ("lr", "weight_decay", "lam", "gamma")
STAGE2_PARAMS = ("nno_tau_grid", "neg_weight", "tau_lr")


@dataclass
class ValidationResult:
    config: MethodConfig
    stage1: list[tuple[dict, float]] = field(default_factory=list)
    stage2: list[tuple[dict, float]] = field(default_factory=list)


def _candidates(grids: dict, names, base: MethodConfig) -> list[dict]:
    keys = [k for k in names if k in grids]
    for k in keys:
        if len(grids[k]) == 0:
            raise ConfigurationError(f"search grid for {k!r} is empty")
    if not keys:
        return [{}]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(list(grids[k]) for k in keys))]


def evaluate_candidate(config: MethodConfig, dataset: Dataset, trials: list[SplitTrial], metric: str,
                       seed: int = 0, dg: str = "none", dg_params: dict | None = None) -> float:
    """Mean step-averaged ``metric`` over every trial and cardinality variant.

    ``dataset`` holds training instances only; its highest instance per class
    becomes the validation test set, the rest is trained on.
    """
    domain = int(dataset.domain_ids[0]) if len(dataset) else 0
    _, val_test = dataset.split_by_instance()
    scores = []
    for trial in trials:
        for schedule in trial.schedules():
            cell = CellConfig(config, dg, dict(dg_params or {}), seed, domain, (domain,))
            result = run_experiment(cell, schedule, {domain: dataset}, tests={domain: val_test})
            scores.append(result[domain].averages[metric])
    return float(np.mean(scores))


def validate_hyperparameters(variant: str, dataset: Dataset, grids: dict[str, list], trials: list[SplitTrial],
                             base: MethodConfig | None = None, seed: int = 0, dg: str = "none",
                             dg_params: dict | None = None) -> ValidationResult:
    """Grid-search stage 1 by closed-world accuracy, then stage 2 by OWR-H with stage 1 frozen.

    Ties go to the candidate that comes first in grid order.
    """
    unknown = sorted(set(grids) - set(STAGE1_PARAMS) - set(STAGE2_PARAMS))
    if unknown:
        raise ConfigurationError(f"cannot search {unknown}; searchable: {STAGE1_PARAMS + STAGE2_PARAMS}")
    if not trials:
        raise ConfigurationError("validation needs at least one trial")
    base = base if base is not None else MethodConfig.for_variant(variant)
    if base.variant != variant:
        base = replace(base, variant=variant)
    stage1 = _candidates(grids, STAGE1_PARAMS, base)
    stage2 = _candidates(grids, STAGE2_PARAMS, base)
    result = ValidationResult(base)

    best, best_score = None, -np.inf
    for cand in stage1:
        score = evaluate_candidate(replace(base, **cand), dataset, trials, "closed_world_no_reject", seed, dg, dg_params)
        result.stage1.append((cand, score))
        if score > best_score:
            best, best_score = cand, score
    frozen = replace(base, **best)

    best, best_score = None, -np.inf
    for cand in stage2:
        score = evaluate_candidate(replace(frozen, **cand), dataset, trials, "owr_h", seed, dg, dg_params)
        result.stage2.append((cand, score))
        if score > best_score:
            best, best_score = cand, score
    result.config = replace(frozen, **best)
    return result
