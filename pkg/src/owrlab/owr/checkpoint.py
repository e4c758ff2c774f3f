"""Model checkpoints: an OWRW weight blob plus a JSON sidecar with the class model."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..dg.base import DGPlugin
from ..errors import ParseError
from ..numerics import Mlp, MlpSpec, load_weights, save_weights
from .model import ClassModel, ExemplarMemory, MethodConfig, OwrModel


def save_checkpoint(model: OwrModel, prefix, plugin: DGPlugin | None = None) -> None:
    prefix = Path(prefix)
    arrays = model.extractor.state()
    n_snapshot = 0
    if model.snapshot is not None:
        arrays += model.snapshot.state()
        n_snapshot = len(model.snapshot.params)
    memory_classes = sorted(model.memory.stored)
    arrays += [model.memory.stored[c] for c in memory_classes]
    plugin_arrays = plugin.arrays() if plugin is not None else []
    arrays += plugin_arrays
    cm = model.classes
    sidecar = {
        "format": "owrlab-checkpoint/1",
        "config": model.config.to_dict(),
        "mlp": {"layer_widths": list(model.extractor.spec.layer_widths), "seed": model.extractor.spec.seed},
        "image_shape": list(model.image_shape),
        "step": model.step,
        "known": model.known,
        "step_classes": model.step_classes,
        "centroids": {str(k): v.tolist() for k, v in cm.centroids.items()},
        "counts": {str(k): v for k, v in cm.counts.items()},
        "tau": cm.tau,
        "class_tau": {str(k): v for k, v in cm.class_tau.items()},
        "normalizer": cm.normalizer,
        "feature_std": cm.feature_std,
        "tau_weight": cm.tau_weight,
        "tau_weighted_sum": cm.tau_weighted_sum,
        "memory_capacity": model.memory.capacity,
        "memory_classes": memory_classes,
        "n_extractor": len(model.extractor.params),
        "n_snapshot": n_snapshot,
        "plugin": plugin.state() if plugin is not None else None,
        "n_plugin": len(plugin_arrays),
    }
    save_weights(arrays, prefix.with_suffix(".owrw"))
    prefix.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def load_checkpoint(prefix, plugin: DGPlugin | None = None) -> OwrModel:
    prefix = Path(prefix)
    try:
        meta = json.loads(prefix.with_suffix(".json").read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{prefix.with_suffix('.json')}: {exc}") from exc
    arrays = load_weights(prefix.with_suffix(".owrw"))
    config = MethodConfig(**meta["config"])
    spec = MlpSpec(tuple(meta["mlp"]["layer_widths"]), meta["mlp"]["seed"])
    pos = 0
    extractor = Mlp(spec)
    extractor.load_state(arrays[pos:pos + meta["n_extractor"]])
    pos += meta["n_extractor"]
    snapshot = None
    if meta["n_snapshot"]:
        snapshot = extractor.frozen_copy()
        snapshot.load_state(arrays[pos:pos + meta["n_snapshot"]])
        pos += meta["n_snapshot"]
    memory = ExemplarMemory(meta["memory_capacity"])
    for c in meta["memory_classes"]:
        memory.stored[c] = arrays[pos]
        pos += 1
    if plugin is not None:
        plugin.load(meta["plugin"] or {}, arrays[pos:pos + meta["n_plugin"]])
    cm = ClassModel(
        centroids={int(k): np.array(v) for k, v in meta["centroids"].items()},
        counts={int(k): v for k, v in meta["counts"].items()},
        tau=meta["tau"], class_tau={int(k): v for k, v in meta["class_tau"].items()},
        normalizer=meta["normalizer"], feature_std=meta["feature_std"],
        tau_weight=meta["tau_weight"], tau_weighted_sum=meta["tau_weighted_sum"])
    return OwrModel(config, extractor, tuple(meta["image_shape"]), snapshot, cm, memory,
                    list(meta["known"]), meta["step"], [list(s) for s in meta["step_classes"]])
