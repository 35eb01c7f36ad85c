"""Hybrid complex/magnitude conformer U-Net for speech enhancement and dereverberation."""

from .config import UformerConfig
from .numerics import ComplexTensor
from .reconstruct import enhance
from .unet import Uformer, build_model, count_parameters

__all__ = ["ComplexTensor", "Uformer", "UformerConfig", "build_model", "count_parameters", "enhance"]
