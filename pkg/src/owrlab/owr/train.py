"""Per-step incremental training for NNO, DeepNNO and B-DOC."""
from __future__ import annotations

import numpy as np

from ..datagen import Dataset
from ..dg.base import DGPlugin
from ..dg.transforms import random_augment
from ..errors import ContractError
from ..numerics import Tensor, backward, exp, log_softmax, sgd_step, take, zero_grad
from .losses import bce_loss, ce_loss, distillation_loss, one_hot, snnl_loss
from .model import OwrModel
from .scores import bdoc_scores_t, deepnno_scores, deepnno_scores_t, ncm_logits_t, sq_distances
from .thresholds import (bdoc_learn_thresholds, deepnno_update_threshold, estimate_nno_threshold,
                         reset_threshold_stats, select_exemplars, update_centroids_ema,
                         update_centroids_online)

STD_FLOOR = 1e-6


class RunningStd:
    """Pooled standard deviation of features seen so far in an epoch."""

    def __init__(self, pooling: str = "component"):
        self.pooling = pooling
        self.n = 0
        self.total = 0.0
        self.total_sq = 0.0
        self.last = 1.0

    def update(self, z: np.ndarray) -> float:
        if self.pooling == "batch":
            self.last = max(float(z.std()), STD_FLOOR)
            return self.last
        values = np.linalg.norm(z, axis=1) if self.pooling == "sample_norm" else z.reshape(-1)
        self.n += values.size
        self.total += float(values.sum())
        self.total_sq += float((values ** 2).sum())
        mean = self.total / self.n
        self.last = max(float(np.sqrt(max(self.total_sq / self.n - mean ** 2, 0.0))), STD_FLOOR)
        return self.last


def _true_class_score_fn(model: OwrModel, centroids: np.ndarray, column: dict, phi: float = 1.0):
    variant = model.config.variant

    def fn(z: Tensor, labels: np.ndarray) -> Tensor:
        idx = (np.arange(len(labels)), np.array([column[int(y)] for y in labels]))
        if variant == "deepnno":
            return take(deepnno_scores_t(z, centroids), idx)
        logits = ncm_logits_t(z, centroids) if variant == "nno" else bdoc_scores_t(z, centroids, phi) * -1.0
        return exp(take(log_softmax(logits, axis=1), idx))

    return fn


def nearest_centroid_accuracy(model: OwrModel, images: np.ndarray, labels: np.ndarray) -> float:
    z = model.features(images.reshape(len(images), -1))
    classes = model.known
    pred = np.asarray(classes)[np.argmin(sq_distances(z, model.classes.centroid_matrix(classes)), axis=1)]
    return float(np.mean(pred == labels))


def reserve_split(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of held-out rows: ``round(fraction * n_c)`` per class, at least 1 when n_c >= 2."""
    mask = np.zeros(len(labels), dtype=bool)
    if fraction <= 0:
        return mask
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        k = int(round(fraction * len(rows)))
        if len(rows) >= 2:
            k = min(max(k, 1), len(rows) - 1)
        else:
            k = 0
        mask[rng.permutation(rows)[:k]] = True
    return mask


def train_extractor(model: OwrModel, x: np.ndarray, y: np.ndarray, epochs: int, plugin: DGPlugin,
                    rng: np.random.Generator) -> None:
    """Minimise the variant's semantic objective (+ distillation, + plugin terms) with SGD."""
    cfg = model.config
    variant = cfg.variant
    params = model.extractor.params + plugin.params()
    classes = model.known
    column = {c: i for i, c in enumerate(classes)}
    use_distill = cfg.lam > 0 and model.snapshot is not None and variant != "nno"
    h, w, c = model.image_shape
    n = len(x)
    iteration = 0

    def accuracy_fn(images, labels):
        return nearest_centroid_accuracy(model, images, labels)

    for _ in range(epochs):
        if variant == "deepnno" and cfg.tau_reset == "epoch":
            reset_threshold_stats(model.classes)
        running_std = RunningStd(cfg.std_pooling)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            if len(idx) < 2:
                continue
            images, labels = x[idx].reshape(len(idx), h, w, c), y[idx]
            images, labels, aux = plugin.prepare_batch(images, labels)
            flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
            z = model.extractor(flat)
            real = plugin.original_rows(aux, len(labels))
            if real.any():
                update_centroids_ema(model.classes, z.data[real], labels[real], cfg.ema_momentum)
            centroids = model.classes.centroid_matrix(classes)
            cols = np.array([column[int(v)] for v in labels])
            phi = running_std.update(z.data) if variant == "bdoc" else 1.0
            z_sem = plugin.challenge(z, labels, _true_class_score_fn(model, centroids, column, phi))

            if variant == "deepnno":
                loss = bce_loss(deepnno_scores_t(z_sem, centroids), one_hot(labels, classes))
                s = deepnno_scores(z.data, centroids)
                deepnno_update_threshold(model.classes, s.max(axis=1), s.argmax(axis=1) == cols, cfg.neg_weight)
            elif variant == "bdoc":
                loss = ce_loss(bdoc_scores_t(z_sem, centroids, phi) * -1.0, cols)
                if cfg.gamma > 0:
                    loss = loss + snnl_loss(z_sem, labels, phi) * cfg.gamma
            else:
                loss = ce_loss(ncm_logits_t(z_sem, centroids), cols)
            if use_distill:
                loss = loss + distillation_loss(z, model.snapshot(flat)) * cfg.lam
            extra = plugin.aux_loss(z, aux)
            if extra is not None:
                loss = loss + extra

            zero_grad(params)
            backward(loss)
            sgd_step(params, [p.grad for p in params], cfg.lr, cfg.weight_decay)
            iteration += 1
            plugin.after_iteration(iteration, x[idx].reshape(len(idx), h, w, c), y[idx], accuracy_fn)
        if variant == "bdoc":
            model.classes.feature_std = running_std.last


def incremental_step(model: OwrModel, data: Dataset, plugin: DGPlugin | None = None, seed: int = 0) -> OwrModel:
    """Learn the classes in ``data`` as the next step and refresh thresholds and exemplars."""
    plugin = plugin if plugin is not None else DGPlugin()
    cfg = model.config
    new_classes = data.classes
    overlap = sorted(set(new_classes) & set(model.known))
    if overlap:
        raise ContractError(f"classes {overlap} were already learned in an earlier step")
    if not new_classes:
        raise ContractError("a step needs at least one class")
    t = model.step
    rng = np.random.default_rng([seed, t, 11])
    plugin.start_step(cfg.feature_dim, [seed, t, 13])

    x_all, y_all = data.flat(), data.class_ids
    held = reserve_split(y_all, cfg.reserve_fraction, rng)
    x_train, y_train = x_all[~held], y_all[~held]
    x_res, y_res = x_all[held], y_all[held]
    ex_x, ex_y = model.memory.arrays()

    model.known = model.known + list(new_classes)
    model.step_classes.append(list(new_classes))
    for c in new_classes:
        model.classes.centroids.pop(c, None)
        model.classes.counts.pop(c, None)

    if cfg.variant == "nno":
        if t == 0 and cfg.epochs_base > 0:
            update_centroids_online(model.classes, model.features(x_train), y_train)
            train_extractor(model, x_train, y_train, cfg.epochs_base, plugin, rng)
        # frozen features from here on: exact means for the new classes
        if t == 0:
            model.classes.centroids.clear()
            model.classes.counts.clear()
        update_centroids_online(model.classes, model.features(x_train), y_train, allowed=set(new_classes))
        hx, hy = _heldout(x_res, y_res, ex_x, ex_y)
        if len(hx):
            estimate_nno_threshold(model, model.features(hx), hy)
    else:
        x_fit = np.concatenate([x_train, ex_x]) if len(ex_y) else x_train
        y_fit = np.concatenate([y_train, ex_y]) if len(ex_y) else y_train
        update_centroids_online(model.classes, model.features(x_train), y_train, allowed=set(new_classes))
        epochs = cfg.epochs_base if t == 0 else cfg.epochs_incremental
        if cfg.variant == "deepnno" and cfg.tau_reset == "step":
            reset_threshold_stats(model.classes)
        train_extractor(model, x_fit, y_fit, epochs, plugin, rng)
        if cfg.variant == "bdoc":
            hx, hy = _heldout(x_res, y_res, ex_x, ex_y)
            if len(hx):
                augmented = random_augment(hx.reshape(len(hx), *model.image_shape), rng,
                                           cfg.reserve_augment_strength).reshape(len(hx), -1)
                bdoc_learn_thresholds(model, model.features(augmented), hy, cfg.tau_lr, cfg.tau_epochs)
            for c in model.known:
                model.classes.class_tau.setdefault(c, 1.0)

    feats = model.features(x_train)
    for c in new_classes:
        rows = np.flatnonzero(y_train == c)
        keep = select_exemplars(feats[rows], model.classes.centroids[c], model.memory.capacity)
        if len(keep):
            model.memory.stored[c] = x_train[rows[keep]].copy()
    model.snapshot = model.extractor.frozen_copy()
    model.step = t + 1
    return model


def _heldout(x_res, y_res, ex_x, ex_y):
    if len(ex_y):
        return np.concatenate([x_res, ex_x]), np.concatenate([y_res, ex_y])
    return x_res, y_res
