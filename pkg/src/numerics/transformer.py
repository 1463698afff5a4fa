"""
@file transformer.py
@brief Multi-head self-attention and pre-norm transformer encoder layers
@details Layers accept a single sequence ``[S, d]`` or a padded batch
``[B, S, d]`` with a boolean key mask ``[B, S]`` (True = real token). Masked
keys receive an additive bias that underflows to exactly zero attention
weight, so padding never changes the rows of real tokens.
"""

import math
from dataclasses import dataclass, fields
from typing import Dict, Optional

import numpy as np

from errors import ContractViolation
from numerics import functional as F
from numerics.rng import gaussian
from numerics.tensor import Tensor, parameter

DEFAULT_INIT_STD = 0.02


@dataclass
class EncoderLayerParams:
    """
    @brief Weights of one transformer encoder layer
    @details Query/key/value/output projections are stored as ``d x d``
    matrices whose column blocks of width ``d / head_count`` are the per-head
    projections.
    """
    model_dim: int
    head_count: int
    w_query: Tensor
    b_query: Tensor
    w_key: Tensor
    b_key: Tensor
    w_value: Tensor
    b_value: Tensor
    w_out: Tensor
    b_out: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor

    def __post_init__(self):
        if self.head_count < 1 or self.model_dim % self.head_count != 0:
            raise ContractViolation(
                f"model_dim {self.model_dim} must be divisible by head_count {self.head_count}")
        d = self.model_dim
        for name in ("w_query", "w_key", "w_value", "w_out"):
            if getattr(self, name).shape != (d, d):
                raise ContractViolation(f"{name} has shape {getattr(self, name).shape}, expected {(d, d)}")
        ff_dim = self.w_ff1.shape[1]
        if self.w_ff1.shape != (d, ff_dim) or self.w_ff2.shape != (ff_dim, d):
            raise ContractViolation(
                f"feed-forward shapes {self.w_ff1.shape} / {self.w_ff2.shape} inconsistent with model_dim {d}")

    @classmethod
    def init(cls, model_dim: int, head_count: int, rng: np.random.Generator, ff_dim: Optional[int] = None,
             init_std: float = DEFAULT_INIT_STD) -> "EncoderLayerParams":
        """Gaussian(0, init_std) weights, zero biases, unit layer-norm gains."""
        ff_dim = ff_dim or 4 * model_dim
        d = model_dim

        def weight(rows, cols):
            return parameter(gaussian(rng, (rows, cols), init_std))

        def zeros(size):
            return parameter(np.zeros(size))

        return cls(
            model_dim=d, head_count=head_count,
            w_query=weight(d, d), b_query=zeros(d),
            w_key=weight(d, d), b_key=zeros(d),
            w_value=weight(d, d), b_value=zeros(d),
            w_out=weight(d, d), b_out=zeros(d),
            ln1_gain=parameter(np.ones(d)), ln1_bias=zeros(d),
            ln2_gain=parameter(np.ones(d)), ln2_bias=zeros(d),
            w_ff1=weight(d, ff_dim), b_ff1=zeros(ff_dim),
            w_ff2=weight(ff_dim, d), b_ff2=zeros(d),
        )

    def tensors(self) -> Dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if isinstance(getattr(self, f.name), Tensor)}

    def named_parameters(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.{name}": tensor for name, tensor in self.tensors().items()}

    def clone(self) -> "EncoderLayerParams":
        """Independent trainable copy with identical initial values."""
        copies = {name: parameter(tensor.data) for name, tensor in self.tensors().items()}
        return EncoderLayerParams(model_dim=self.model_dim, head_count=self.head_count, **copies)


def _attention_bias(key_mask: Optional[np.ndarray], batch: int, length: int) -> Optional[np.ndarray]:
    if key_mask is None:
        return None
    key_mask = np.asarray(key_mask, dtype=bool)
    if key_mask.shape != (batch, length):
        raise ContractViolation(f"key mask shape {key_mask.shape} does not match batch/sequence {(batch, length)}")
    return np.where(key_mask, 0.0, F.MASK_BIAS)[:, None, None, :]


def multi_head_self_attention(x: Tensor, params: EncoderLayerParams, heads: Optional[int] = None,
                              key_mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Scaled dot-product self-attention per head, concatenated and projected.

    No positional information is added here.

    :param x: Tensor[S, d] or Tensor[B, S, d]
    :param params: layer weights supplying the four projections
    :param heads: head count (defaults to ``params.head_count``)
    :param key_mask: optional bool [B, S]; False marks padding keys
    :return: Tensor with the shape of ``x``
    """
    heads = heads or params.head_count
    single = x.ndim == 2
    if single:
        x = F.reshape(x, (1,) + x.shape)
    batch, length, dim = x.shape
    if length == 0:
        raise ContractViolation("multi_head_self_attention: sequence length must be at least 1")
    if dim != params.model_dim or dim % heads != 0:
        raise ContractViolation(f"multi_head_self_attention: input dim {dim} vs model_dim {params.model_dim}, "
                                f"heads {heads}")
    head_dim = dim // heads

    def split_heads(t: Tensor) -> Tensor:
        return F.transpose(F.reshape(t, (batch, length, heads, head_dim)), (0, 2, 1, 3))

    query = split_heads(F.linear(x, params.w_query, params.b_query))
    key = split_heads(F.linear(x, params.w_key, params.b_key))
    value = split_heads(F.linear(x, params.w_value, params.b_value))

    scores = F.mul(F.matmul(query, F.swap_last(key)), 1.0 / math.sqrt(head_dim))
    bias = _attention_bias(key_mask, batch, length)
    if bias is not None:
        scores = F.add(scores, bias)
    context = F.matmul(F.softmax(scores, axis=-1), value)
    merged = F.reshape(F.transpose(context, (0, 2, 1, 3)), (batch, length, dim))
    out = F.linear(merged, params.w_out, params.b_out)
    return F.reshape(out, (length, dim)) if single else out


def feed_forward(x: Tensor, params: EncoderLayerParams) -> Tensor:
    return F.linear(F.gelu(F.linear(x, params.w_ff1, params.b_ff1)), params.w_ff2, params.b_ff2)


def transformer_encoder_layer(x: Tensor, params: EncoderLayerParams,
                              key_mask: Optional[np.ndarray] = None) -> Tensor:
    """
    @brief Pre-norm encoder layer: h = x + MHSA(LN(x)); out = h + FFN(LN(h))
    @return Tensor with the same shape as ``x``
    """
    normed = F.layer_norm(x, params.ln1_gain, params.ln1_bias)
    hidden = F.add(x, multi_head_self_attention(normed, params, key_mask=key_mask))
    normed = F.layer_norm(hidden, params.ln2_gain, params.ln2_bias)
    return F.add(hidden, feed_forward(normed, params))


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed sine/cosine position table of shape [length, dim]."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2, dtype=np.float64) / dim))
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return table
