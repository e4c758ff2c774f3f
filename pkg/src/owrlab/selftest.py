"""Quick gradient and formula checks against straight-line reference computations."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .datagen import build_schedule, build_validation_splits
from .dg.rr import rotate
from .dg.sc import gradient_mask
from .eval.metrics import owr_harmonic
from .numerics import Tensor, gradcheck, matmul
from .owr.losses import bce_loss, ce_loss, distillation_loss, snnl_loss
from .owr.scores import bdoc_scores, deepnno_scores, nno_scores

TOLERANCE = 1e-4


def _gradient_checks(rng: np.random.Generator) -> list[tuple[str, float]]:
    z = rng.normal(size=(6, 3))
    w = rng.normal(size=(3, 4))
    labels = np.array([0, 1, 2, 0, 1, 2])
    onehot = np.eye(4)[rng.integers(0, 4, size=6)]
    z_old = rng.normal(size=(6, 3))
    checks = {
        "bce": lambda x: bce_loss(((matmul(x, w) * 0.3).exp() + 1.0) ** -1.0, onehot),
        "ce": lambda x: ce_loss(matmul(x, w), labels),
        "distillation": lambda x: distillation_loss(x, z_old),
        "snnl": lambda x: snnl_loss(x, labels, 1.5),
    }
    return [(f"gradcheck {name}", gradcheck(f, z)) for name, f in checks.items()]


def _formula_checks(rng: np.random.Generator) -> list[tuple[str, bool]]:
    z = rng.normal(size=(5, 3))
    mu = rng.normal(size=(4, 3))
    dist = np.array([[math.dist(a, b) for b in mu] for a in z])
    out = [
        ("nno scores", np.allclose(nno_scores(z, mu, 2.0), 1 - dist / 2.0, atol=1e-9)),
        ("deepnno scores", np.allclose(deepnno_scores(z, mu), np.exp(-0.5 * dist), atol=1e-9)),
        ("bdoc scores", np.allclose(bdoc_scores(z, mu, 0.7), dist ** 2 / 0.7, atol=1e-9)),
        ("owr harmonic", abs(owr_harmonic(0.6, 0.4) - 0.48) < 1e-12),
        ("sc mask", gradient_mask(np.array([0.1, 0.4, 0.2, 0.3]), 0.5).tolist() == [1, 0, 1, 0]),
        ("rotation", rotate(np.arange(4.0).reshape(2, 2, 1), 1)[:, :, 0].tolist() == [[1, 3], [0, 2]]),
    ]
    sched = build_schedule(range(51), 0.5, 11, 5)
    out.append(("51-class schedule", (len(sched.base_classes), [len(s) for s in sched.incremental_steps],
                                     len(sched.unknown_classes)) == (11, [5, 5, 5], 25)))
    trial = build_validation_splits(range(11), 1)[0]
    out.append(("11-class validation split", (len(trial.val_unknown_classes), len(trial.val_base_classes),
                                             len(trial.val_incremental_classes)) == (2, 5, 4)))
    return out


def run(seed: int = 0, echo: Callable[[str], None] = print) -> bool:
    rng = np.random.default_rng(seed)
    ok = True
    for name, err in _gradient_checks(rng):
        passed = err < TOLERANCE
        ok &= passed
        echo(f"{'ok  ' if passed else 'FAIL'} {name}: max relative error {err:.2e}")
    for name, passed in _formula_checks(rng):
        ok &= bool(passed)
        echo(f"{'ok  ' if passed else 'FAIL'} {name}")
    return ok
