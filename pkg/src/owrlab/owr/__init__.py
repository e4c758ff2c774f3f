"""Open-world recognition methods: NNO, DeepNNO and B-DOC."""
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import bce_loss, ce_loss, distillation_loss, one_hot, snnl_loss
from .model import UNKNOWN, VARIANT_DEFAULTS, VARIANTS, ClassModel, ExemplarMemory, MethodConfig, OwrModel
from .scores import (bdoc_classify, bdoc_scores, classify, deepnno_classify, deepnno_scores, nno_classify,
                     nno_scores)
from .thresholds import (bdoc_learn_thresholds, deepnno_update_threshold, estimate_nno_threshold,
                         select_exemplars, select_nno_threshold, update_centroids_online)
from .train import incremental_step

__all__ = [
    "UNKNOWN", "VARIANT_DEFAULTS", "VARIANTS", "ClassModel", "ExemplarMemory", "MethodConfig", "OwrModel",
    "bce_loss", "ce_loss", "distillation_loss", "one_hot", "snnl_loss",
    "bdoc_classify", "bdoc_scores", "classify", "deepnno_classify", "deepnno_scores", "nno_classify", "nno_scores",
    "bdoc_learn_thresholds", "deepnno_update_threshold", "estimate_nno_threshold", "select_exemplars",
    "select_nno_threshold", "update_centroids_online", "incremental_step", "load_checkpoint", "save_checkpoint",
]
