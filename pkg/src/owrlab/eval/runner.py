"""Incremental experiment runner over one (method, plugin, train domain, seed) cell."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..datagen import Dataset, EpisodeSchedule
from ..dg import make_plugin
from ..errors import ConfigurationError
from ..owr.checkpoint import load_checkpoint, save_checkpoint
from ..owr.model import MethodConfig, OwrModel
from ..owr.scores import classify
from ..owr.train import incremental_step
from .metrics import closed_world_accuracy, open_set_accuracy, owr_harmonic

METRICS = ("closed_world_no_reject", "closed_world_with_reject", "open_set_acc", "owr_h")


@dataclass
class StepResult:
    step: int
    closed_world_no_reject: float
    closed_world_with_reject: float
    open_set_acc: float
    owr_h: float


@dataclass
class RunResult:
    fingerprint: str
    method: str
    dg: str
    train_domain: int
    test_domain: int
    seed: int
    steps: list[StepResult] = field(default_factory=list)
    plugin_state: dict | None = None  # final plugin state, e.g. the searched transform pool

    @property
    def averages(self) -> dict[str, float]:
        return {m: float(np.mean([getattr(s, m) for s in self.steps])) for m in METRICS}


@dataclass
class CellConfig:
    method: MethodConfig
    dg: str = "none"
    dg_params: dict = field(default_factory=dict)
    seed: int = 0
    train_domain: int = 0
    test_domains: tuple[int, ...] = (0, 1, 2)

    def hyper_hash(self) -> str:
        payload = json.dumps({"method": self.method.to_dict(), "dg": self.dg, "dg_params": self.dg_params},
                             sort_keys=True)
        return hashlib.sha1(payload.encode()).hexdigest()[:10]

    def fingerprint(self, test_domain: int) -> str:
        return (f"{self.method.variant}|{self.dg}|d{self.train_domain}->d{test_domain}"
                f"|s{self.seed}|{self.hyper_hash()}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.to_dict()
        d["test_domains"] = list(self.test_domains)
        return d


def evaluate_step(model: OwrModel, test: Dataset, unknown_classes) -> StepResult:
    known_rows = np.isin(test.class_ids, model.known)
    unknown_rows = np.isin(test.class_ids, list(unknown_classes))
    z = model.features(test.flat())
    _, pred = classify(model, z[known_rows], reject=True)
    _, pred_open = classify(model, z[known_rows], reject=False)
    labels = test.class_ids[known_rows]
    cwr = closed_world_accuracy(pred, labels, with_rejection=True)
    cw = closed_world_accuracy(pred_open, labels, with_rejection=False)
    _, pred_unknown = classify(model, z[unknown_rows], reject=True)
    osa = open_set_accuracy(pred_unknown)
    return StepResult(model.step - 1, cw, cwr, osa, owr_harmonic(cwr, osa))


def run_experiment(cell: CellConfig, schedule: EpisodeSchedule, datasets: dict[int, Dataset],
                   checkpoint_dir=None, tests: dict[int, Dataset] | None = None) -> dict[int, RunResult]:
    """Train every step on the train domain and evaluate on each test domain after each step.

    Test sets are the held-out instance of every class. With ``checkpoint_dir``
    finished steps are saved and an interrupted run resumes from the last one.
    """
    needed = set(schedule.known_classes) | set(schedule.unknown_classes)
    for d in {cell.train_domain, *cell.test_domains}:
        if d not in datasets:
            raise ConfigurationError(f"no dataset for domain {d}")
        missing = sorted(needed - set(datasets[d].classes))
        if missing:
            raise ConfigurationError(f"domain {d} dataset lacks classes {missing}")
    train, _ = datasets[cell.train_domain].split_by_instance()
    if tests is None:
        tests = {d: datasets[d].split_by_instance()[1] for d in cell.test_domains}
    plugin = make_plugin(cell.dg, **cell.dg_params)
    model = OwrModel.create(cell.method, train.image_shape, seed=cell.seed)
    results = {d: RunResult(cell.fingerprint(d), cell.method.variant, cell.dg, cell.train_domain, d, cell.seed)
               for d in cell.test_domains}

    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    start = 0
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
        done = sorted(int(p.stem.split("_")[1]) for p in ckpt.glob("step_*.json") if p.stem.count("_") == 1)
        done = [s for s in done if (ckpt / f"step_{s}_results.json").exists()]
        if done:
            start = done[-1] + 1
            model = load_checkpoint(ckpt / f"step_{done[-1]}", plugin)
            for s in range(start):
                saved = json.loads((ckpt / f"step_{s}_results.json").read_text())
                for d in cell.test_domains:
                    results[d].steps.append(StepResult(**saved[str(d)]))

    for t, classes in enumerate(schedule.steps):
        if t < start:
            continue
        incremental_step(model, train.of_classes(classes), plugin, seed=cell.seed)
        for d in cell.test_domains:
            results[d].steps.append(evaluate_step(model, tests[d], schedule.unknown_classes))
        if ckpt is not None:
            save_checkpoint(model, ckpt / f"step_{t}", plugin)
            (ckpt / f"step_{t}_results.json").write_text(
                json.dumps({str(d): asdict(results[d].steps[-1]) for d in cell.test_domains}))
    for d in cell.test_domains:
        results[d].plugin_state = plugin.state()
    return results
