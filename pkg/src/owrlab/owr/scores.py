"""Scoring functions and prediction rules of NNO, DeepNNO and B-DOC.

Numpy versions serve evaluation; the ``*_t`` variants build tape-tracked
tensors for training. Predictions use ``UNKNOWN`` (-1) for the unknown class.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ContractError
from ..numerics import Tensor, exp, pairwise_sq_dists, sqrt
from .model import UNKNOWN, OwrModel

_DIST_EPS = 1e-12


def _as_batch(z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    return (z[None, :], True) if z.ndim == 1 else (z, False)


def sq_distances(z: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    diff = z[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def nno_scores(z, centroids, tau: float, normalizer: float = 1.0) -> np.ndarray:
    if tau <= 0:
        raise ConfigurationError(f"NNO threshold must be > 0, got {tau}")
    return normalizer * (1.0 - np.sqrt(sq_distances(z, centroids)) / tau)


def deepnno_scores(z, centroids) -> np.ndarray:
    return np.exp(-0.5 * np.sqrt(sq_distances(z, centroids)))


def bdoc_scores(z, centroids, feature_std: float) -> np.ndarray:
    if feature_std <= 0:
        raise ConfigurationError(f"feature std must be > 0, got {feature_std}")
    return sq_distances(z, centroids) / feature_std


def predict_max(scores: np.ndarray, reject_mask: np.ndarray, classes) -> np.ndarray:
    pred = np.asarray(classes)[np.argmax(scores, axis=1)]
    return np.where(reject_mask, UNKNOWN, pred)


def _check_known(model: OwrModel) -> list[int]:
    if not model.known:
        raise ContractError("model has no known classes")
    return model.known


def nno_classify(model: OwrModel, z, reject: bool = True):
    classes = _check_known(model)
    zb, single = _as_batch(z)
    s = nno_scores(zb, model.classes.centroid_matrix(classes), model.classes.tau, model.classes.normalizer)
    rejected = np.all(s <= 0, axis=1) if reject else np.zeros(len(zb), bool)
    pred = predict_max(s, rejected, classes)
    return (s[0], int(pred[0])) if single else (s, pred)


def deepnno_classify(model: OwrModel, z, reject: bool = True):
    classes = _check_known(model)
    zb, single = _as_batch(z)
    s = deepnno_scores(zb, model.classes.centroid_matrix(classes))
    rejected = np.all(s <= model.classes.tau, axis=1) if reject else np.zeros(len(zb), bool)
    pred = predict_max(s, rejected, classes)
    return (s[0], int(pred[0])) if single else (s, pred)


def bdoc_classify(model: OwrModel, z, reject: bool = True):
    classes = _check_known(model)
    missing = [c for c in classes if c not in model.classes.class_tau]
    if missing:
        raise ContractError(f"no rejection threshold for classes {missing}")
    zb, single = _as_batch(z)
    s = bdoc_scores(zb, model.classes.centroid_matrix(classes), model.classes.feature_std)
    taus = np.array([model.classes.class_tau[c] for c in classes])
    rejected = np.all(s > taus[None, :], axis=1) if reject else np.zeros(len(zb), bool)
    pred = np.where(rejected, UNKNOWN, np.asarray(classes)[np.argmin(s, axis=1)])
    return (s[0], int(pred[0])) if single else (s, pred)


CLASSIFIERS = {"nno": nno_classify, "deepnno": deepnno_classify, "bdoc": bdoc_classify}


def classify(model: OwrModel, z, reject: bool = True):
    return CLASSIFIERS[model.config.variant](model, z, reject)


# tensor versions ----------------------------------------------------------------

def deepnno_scores_t(z: Tensor, centroids: np.ndarray) -> Tensor:
    return exp(sqrt(pairwise_sq_dists(z, centroids) + _DIST_EPS) * -0.5)


def bdoc_scores_t(z: Tensor, centroids: np.ndarray, feature_std: float) -> Tensor:
    return pairwise_sq_dists(z, centroids) * (1.0 / feature_std)


def ncm_logits_t(z: Tensor, centroids: np.ndarray) -> Tensor:
    """DeepNCM logits: negative squared distances to the class means."""
    return pairwise_sq_dists(z, centroids) * -1.0
