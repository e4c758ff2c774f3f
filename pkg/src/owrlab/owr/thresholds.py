"""Centroid bookkeeping and the three threshold mechanisms."""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import ConfigurationError, ContractError
from .model import ClassModel, OwrModel
from .scores import bdoc_scores, sq_distances


def harmonic(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2.0 * a * b / (a + b)


def update_centroids_online(classes: ClassModel, z: np.ndarray, labels, allowed=None) -> ClassModel:
    """Exact running means: ``mu <- (n * mu + sum z) / (n + k)``."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    for c in np.unique(labels):
        c = int(c)
        if allowed is not None and c not in allowed:
            raise ContractError(f"class {c} is not part of the current step or the exemplar memory")
        rows = z[labels == c]
        n = classes.counts.get(c, 0)
        mu = classes.centroids.get(c, np.zeros(z.shape[1]))
        classes.centroids[c] = (n * mu + rows.sum(axis=0)) / (n + len(rows))
        classes.counts[c] = n + len(rows)
    return classes


def update_centroids_ema(classes: ClassModel, z: np.ndarray, labels, momentum: float) -> ClassModel:
    """Exponential moving average of batch class means; unseen classes start at their batch mean."""
    labels = np.asarray(labels)
    for c in np.unique(labels):
        c = int(c)
        batch_mean = z[labels == c].mean(axis=0)
        if c in classes.centroids:
            classes.centroids[c] = momentum * classes.centroids[c] + (1 - momentum) * batch_mean
        else:
            classes.centroids[c] = batch_mean
        classes.counts[c] = classes.counts.get(c, 0) + int((labels == c).sum())
    return classes


# NNO ----------------------------------------------------------------------------

def nno_heldout_stats(centroids: np.ndarray, classes, z: np.ndarray, labels) -> tuple:
    """Nearest-centroid distances for held-out knowns plus leave-one-class-out pseudo-unknowns.

    A held-out sample of class y plays the unknown role against every centroid
    except its own.
    """
    classes = np.asarray(classes)
    labels = np.asarray(labels)
    d = np.sqrt(sq_distances(z, centroids))
    known_dist = d.min(axis=1)
    known_correct = classes[d.argmin(axis=1)] == labels
    own = classes[None, :] == labels[:, None]
    if len(classes) > 1:
        unknown_dist = np.where(own, np.inf, d).min(axis=1)
    else:
        unknown_dist = np.zeros(0)
    return known_dist, known_correct, unknown_dist


def select_nno_threshold(known_dist, known_correct, unknown_dist, grid_size: int = 0) -> float:
    """Grid threshold maximising OWR-H on held-out distances; ties go to the smaller value.

    A sample is rejected when its nearest-centroid distance is >= tau. The
    grid is every observed distance (``grid_size`` 0) or ``grid_size`` evenly
    spaced quantiles of them, plus one point above the maximum.
    """
    known_dist = np.asarray(known_dist, dtype=np.float64)
    known_correct = np.asarray(known_correct, dtype=bool)
    unknown_dist = np.asarray(unknown_dist, dtype=np.float64)
    if len(known_dist) == 0 and len(unknown_dist) == 0:
        raise ConfigurationError("empty held-out set")
    observed = np.concatenate([known_dist, unknown_dist])
    grid = np.unique(observed) if grid_size == 0 else np.unique(np.quantile(observed, np.linspace(0, 1, grid_size)))
    top = observed.max()
    grid = np.append(grid, np.nextafter(top, np.inf) + 1e-9 * max(1.0, abs(top)))
    grid = grid[grid > 0]
    if len(grid) == 0:
        grid = np.array([1e-9])
    best, best_h = grid[0], -1.0
    for tau in grid:
        cwr = float(np.mean(known_correct & (known_dist < tau))) if len(known_dist) else 0.0
        osa = float(np.mean(unknown_dist >= tau)) if len(unknown_dist) else 0.0
        h = harmonic(cwr, osa)
        if h > best_h:
            best, best_h = tau, h
    return float(best)


def estimate_nno_threshold(model: OwrModel, z: np.ndarray, labels, unknown_z: np.ndarray | None = None,
                           grid_size: int | None = None) -> float:
    if len(z) == 0:
        raise ConfigurationError("empty held-out set")
    classes = model.known
    centroids = model.classes.centroid_matrix(classes)
    known_dist, known_correct, unknown_dist = nno_heldout_stats(centroids, classes, z, labels)
    if unknown_z is not None:
        unknown_dist = np.sqrt(sq_distances(unknown_z, centroids)).min(axis=1)
    grid_size = model.config.nno_tau_grid if grid_size is None else grid_size
    tau = select_nno_threshold(known_dist, known_correct, unknown_dist, grid_size)
    model.classes.tau = tau
    return tau


# DeepNNO ------------------------------------------------------------------------

def deepnno_update_threshold(classes: ClassModel, max_scores, correct, neg_weight: float) -> float:
    """Running weighted mean of max-class scores: weight 1 if correct, ``neg_weight`` if not."""
    max_scores = np.asarray(max_scores, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    w = np.where(correct, 1.0, neg_weight)
    classes.tau_weight += float(w.sum())
    classes.tau_weighted_sum += float((w * max_scores).sum())
    if classes.tau_weight > 0:
        classes.tau = float(np.clip(classes.tau_weighted_sum / classes.tau_weight, 0.0, 1.0))
    return classes.tau


def reset_threshold_stats(classes: ClassModel) -> None:
    classes.tau_weight = 0.0
    classes.tau_weighted_sum = 0.0


# B-DOC --------------------------------------------------------------------------

def hinge_threshold_objective(tau: float, in_scores, out_scores) -> float:
    """Group-mean hinge: in-class scores above tau and other-class scores below it are penalised."""
    in_term = np.mean(np.maximum(0.0, np.asarray(in_scores) - tau)) if len(in_scores) else 0.0
    out_term = np.mean(np.maximum(0.0, tau - np.asarray(out_scores))) if len(out_scores) else 0.0
    return float(in_term + out_term)


def refine_class_threshold(in_scores, out_scores, tau_lr: float, epochs: int) -> float:
    in_scores = np.asarray(in_scores, dtype=np.float64)
    out_scores = np.asarray(out_scores, dtype=np.float64)
    tau = float(in_scores.mean() + 2.0 * in_scores.std())
    if tau_lr == 0:
        return tau
    for _ in range(epochs):
        grad = 0.0
        if len(in_scores):
            grad -= float(np.mean(in_scores > tau))
        if len(out_scores):
            grad += float(np.mean(out_scores < tau))
        tau = max(0.0, tau - tau_lr * grad)
    return tau


def bdoc_learn_thresholds(model: OwrModel, z: np.ndarray, labels, tau_lr: float, epochs: int) -> dict[int, float]:
    """Per-class thresholds from reserved features: mean + 2 std init, then hinge refinement."""
    labels = np.asarray(labels)
    classes = model.known
    scores = bdoc_scores(z, model.classes.centroid_matrix(classes), model.classes.feature_std)
    for j, c in enumerate(classes):
        rows = labels == c
        if not rows.any():
            if c not in model.classes.class_tau:
                warnings.warn(f"class {c} has no reserved samples; using the median known-class threshold",
                              RuntimeWarning)
                others = list(model.classes.class_tau.values())
                model.classes.class_tau[c] = float(np.median(others)) if others else 1.0
            continue
        model.classes.class_tau[c] = refine_class_threshold(scores[rows, j], scores[~rows, j], tau_lr, epochs)
    return dict(model.classes.class_tau)


# exemplars ------------------------------------------------------------------------

def select_exemplars(features: np.ndarray, centroid: np.ndarray, capacity: int) -> np.ndarray:
    """Indices of the ``capacity`` samples nearest the centroid, nearest first (stable on ties)."""
    if capacity <= 0:
        return np.zeros(0, dtype=np.int64)
    d = np.sqrt(sq_distances(np.asarray(features), np.asarray(centroid)[None, :]))[:, 0]
    return np.argsort(d, kind="stable")[:capacity]
