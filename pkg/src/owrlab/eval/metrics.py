from __future__ import annotations

import numpy as np

from ..errors import ContractError
from ..owr.model import UNKNOWN


def closed_world_accuracy(predictions, labels, with_rejection: bool = True) -> float:
    """Fraction of known-class samples predicted correctly.

    With rejection an unknown prediction is simply wrong. Without rejection the
    caller must pass predictions made with the unknown branch disabled.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ContractError("empty test set")
    if not with_rejection and np.any(predictions == UNKNOWN):
        raise ContractError("predictions without rejection must not contain the unknown label")
    return float(np.mean(predictions == labels))


def open_set_accuracy(predictions) -> float:
    """Fraction of unknown-class samples predicted as unknown."""
    predictions = np.asarray(predictions)
    if len(predictions) == 0:
        raise ContractError("empty unknown set")
    return float(np.mean(predictions == UNKNOWN))


def owr_harmonic(cwr: float, osa: float) -> float:
    return 0.0 if cwr + osa == 0 else 2.0 * cwr * osa / (cwr + osa)
