"""
@file adam.py
@brief Bias-corrected Adam optimizer over named Tensor parameters
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from errors import ContractViolation, NonFiniteError
from numerics.tensor import Tensor

DEFAULT_LEARNING_RATE = 1e-4


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name."""
    lr: float = DEFAULT_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> AdamState:
    """
    @brief Apply one Adam update using each parameter's accumulated ``grad``
    @details Every gradient is validated before any parameter is touched, so
    a NaN anywhere leaves the model unchanged.
    @param params name -> trainable tensor
    @param state optimizer state, mutated and returned
    """
    for name, param in params.items():
        if param.grad.shape != param.shape:
            raise ContractViolation(f"adam_step: gradient shape {param.grad.shape} != parameter shape "
                                    f"{param.shape} for '{name}'")
        if not np.isfinite(param.grad).all():
            raise NonFiniteError("adam_step", f"gradient of '{name}'")
        if name in state.m and state.m[name].shape != param.shape:
            raise ContractViolation(f"adam_step: moment buffer for '{name}' has shape {state.m[name].shape}")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = param.grad
        m = state.m.get(name, np.zeros_like(param.data))
        v = state.v.get(name, np.zeros_like(param.data))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        param.data -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return state
