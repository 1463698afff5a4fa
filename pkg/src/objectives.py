"""
@file objectives.py
@brief Emotion head, classification loss and inter-class contrastive loss
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from config.settings import ICLConfig
from errors import ConfigError, ContractViolation
from numerics import functional as F
from numerics.rng import gaussian
from numerics.tensor import Tensor, as_tensor, parameter
from numerics.transformer import DEFAULT_INIT_STD

PROBABILITY_FLOOR = 1e-12
NORM_EPS = 1e-12

__all__ = ["EmotionHead", "ICLConfig", "LossDiagnostics", "classify", "erc_loss", "concat_fused", "icl_loss",
           "total_loss"]


@dataclass
class EmotionHead:
    """Two distinct linear classifiers, one per fused CLS vector."""
    w_mt: Tensor
    b_mt: Tensor
    w_tm: Tensor
    b_tm: Tensor

    @classmethod
    def init(cls, model_dim: int, num_classes: int, rng: np.random.Generator,
             init_std: float = DEFAULT_INIT_STD) -> "EmotionHead":
        if num_classes < 2:
            raise ConfigError(f"need at least two emotion classes, got {num_classes}")
        return cls(w_mt=parameter(gaussian(rng, (model_dim, num_classes), init_std)),
                   b_mt=parameter(np.zeros(num_classes)),
                   w_tm=parameter(gaussian(rng, (model_dim, num_classes), init_std)),
                   b_tm=parameter(np.zeros(num_classes)))

    @property
    def num_classes(self) -> int:
        return self.w_mt.shape[1]

    def named_parameters(self, prefix: str = "head") -> Dict[str, Tensor]:
        return {f"{prefix}.mt.weight": self.w_mt, f"{prefix}.mt.bias": self.b_mt,
                f"{prefix}.tm.weight": self.w_tm, f"{prefix}.tm.bias": self.b_tm}


@dataclass
class LossDiagnostics:
    """Counters accumulated across loss evaluations."""
    clamped_probabilities: int = 0
    batches_without_positives: int = 0


def classify(cls_mt: Tensor, cls_tm: Tensor, head: EmotionHead) -> Tuple[Tensor, Tensor]:
    """
    @brief Average the two branch logits, then softmax
    @return (probabilities, logits), each [C] or [K, C]
    """
    if cls_mt.shape != cls_tm.shape:
        raise ContractViolation(f"classify: cls_mt {cls_mt.shape} and cls_tm {cls_tm.shape} differ")
    logits = F.mul(F.add(F.linear(cls_mt, head.w_mt, head.b_mt), F.linear(cls_tm, head.w_tm, head.b_tm)), 0.5)
    return F.softmax(logits, axis=-1), logits


def erc_loss(probabilities: Tensor, labels, diagnostics: Optional[LossDiagnostics] = None) -> Tensor:
    """
    Mean over the batch of -log p(r_i).

    Probabilities below 1e-12 are clamped (no gradient through the clamp) and
    counted in ``diagnostics``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if probabilities.ndim == 1:
        probabilities = F.reshape(probabilities, (1, probabilities.shape[0]))
    count, classes = probabilities.shape
    if labels.shape != (count,):
        raise ContractViolation(f"erc_loss: {labels.shape} labels for {count} predictions")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ContractViolation(f"erc_loss: labels must lie in [0, {classes})")
    picked = probabilities[np.arange(count), labels]
    clamped = int(np.count_nonzero(picked.data < PROBABILITY_FLOOR))
    if clamped:
        logging.warning(f"erc_loss: {clamped} target probabilities clamped at {PROBABILITY_FLOOR}")
        if diagnostics is not None:
            diagnostics.clamped_probabilities += clamped
    return F.mul(F.mean(F.log(picked, floor=PROBABILITY_FLOOR)), -1.0)


def concat_fused(cls_mt: Tensor, cls_tm: Tensor, normalize: bool = True) -> Tensor:
    """[cls_mt ; cls_tm], divided by (L2 norm + 1e-12) when ``normalize``."""
    if cls_mt.shape[-1] != cls_tm.shape[-1]:
        raise ContractViolation(f"concat_fused: widths {cls_mt.shape[-1]} and {cls_tm.shape[-1]} differ")
    fused = F.concat([as_tensor(cls_mt), as_tensor(cls_tm)], axis=-1)
    return F.l2_normalize(fused, axis=-1, eps=NORM_EPS) if normalize else fused


def icl_loss(features: Tensor, labels, cfg: ICLConfig, diagnostics: Optional[LossDiagnostics] = None) -> Tensor:
    """
    @brief Supervised inter-class contrastive loss, summed over anchors
    @details For anchor i the positives P(i) are the other samples with the
    same label; the denominator runs over every j != i. Anchors without
    positives contribute 0.
    @param features Tensor [K, D], already normalized if that is wanted
    @param labels int array [K]
    """
    if cfg.tau <= 0:
        raise ConfigError(f"icl temperature must be > 0, got {cfg.tau}")
    labels = np.asarray(labels)
    count = features.shape[0]
    if features.ndim != 2 or count < 2:
        raise ContractViolation(f"icl_loss needs [K>=2, D] features, got {features.shape}")
    if labels.shape != (count,):
        raise ContractViolation(f"icl_loss: {labels.shape} labels for {count} features")

    self_pairs = np.eye(count, dtype=bool)
    similarity = F.mul(F.matmul(features, F.swap_last(features)), 1.0 / cfg.tau)
    logits = F.add(similarity, np.where(self_pairs, F.MASK_BIAS, 0.0))
    log_prob = F.sub(logits, F.logsumexp(logits, axis=1, keepdims=True))

    positives = (labels[:, None] == labels[None, :]) & ~self_pairs
    per_anchor = positives.sum(axis=1)
    if not per_anchor.any():
        logging.warning("icl_loss: no anchor in the batch has a positive; contrastive term is 0")
        if diagnostics is not None:
            diagnostics.batches_without_positives += 1
    weights = positives / np.maximum(per_anchor, 1)[:, None]
    return F.mul(F.sum(F.mul(log_prob, weights)), -1.0)


def total_loss(erc: Tensor, icl: Optional[Tensor], cfg: ICLConfig) -> Tensor:
    """erc + lambda * icl; returns ``erc`` itself when the contrastive term is off."""
    if icl is None or cfg.lambda_icl == 0.0:
        return erc
    return F.add(erc, F.mul(icl, cfg.lambda_icl))
