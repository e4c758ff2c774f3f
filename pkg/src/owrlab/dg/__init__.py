"""Single-source domain generalisation plugins for the OWR training loop."""
from ..errors import ConfigurationError
from .base import DGPlugin
from .rr import RelativeRotation, rotate, rr_aux_loss, rr_build_batch, RotationHead
from .rsda import TransformPool, TransformSearch, rsda_augment_batch, rsda_evolve
from .sc import SelfChallenging, gradient_mask, gradient_threshold, sc_mask
from .transforms import IDENTITY, BasicTransform, ComposedTransform

PLUGINS = {"none": DGPlugin, "sc": SelfChallenging, "rr": RelativeRotation, "rsda": TransformSearch}


def make_plugin(kind: str = "none", **params) -> DGPlugin:
    if kind not in PLUGINS:
        raise ConfigurationError(f"unknown DG plugin {kind!r}; choose from {sorted(PLUGINS)}")
    return PLUGINS[kind](**params)


__all__ = [
    "DGPlugin", "RelativeRotation", "RotationHead", "SelfChallenging", "TransformPool", "TransformSearch",
    "BasicTransform", "ComposedTransform", "IDENTITY", "PLUGINS", "make_plugin", "gradient_mask",
    "gradient_threshold", "rotate", "rr_aux_loss", "rr_build_batch", "rsda_augment_batch", "rsda_evolve", "sc_mask",
]
