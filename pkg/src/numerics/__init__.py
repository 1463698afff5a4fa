"""
@file __init__.py
@brief Minimal reverse-mode tensor core used by every model component
"""

from numerics.adam import AdamState, adam_step
from numerics.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from numerics.functional import linear, softmax
from numerics.gradcheck import GradCheckReport, check_gradients, finite_difference_gradients
from numerics.rng import make_rng
from numerics.tensor import Tensor, as_tensor, parameter, zero_grads
from numerics.transformer import (EncoderLayerParams, multi_head_self_attention, sinusoidal_positions,
                                  transformer_encoder_layer)

__all__ = [
    "AdamState", "adam_step", "MAGIC", "load_checkpoint", "save_checkpoint", "linear", "softmax",
    "GradCheckReport", "check_gradients", "finite_difference_gradients", "make_rng", "Tensor", "as_tensor",
    "parameter", "zero_grads", "EncoderLayerParams", "multi_head_self_attention", "sinusoidal_positions",
    "transformer_encoder_layer",
]
