"""
@file gradcheck.py
@brief Central finite-difference gradients and reverse-mode comparison
@details Used as the verification oracle for every differentiable path.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Union

import numpy as np

from errors import NonFiniteError
from numerics.rng import make_rng
from numerics.tensor import Tensor, zero_grads

LossFn = Callable[[], Union[float, Tensor]]

DEFAULT_STEP = 1e-5
RELATIVE_FLOOR = 1e-8
# Below this absolute gap the finite-difference estimate is at its round-off floor.
ABSOLUTE_AGREEMENT = 1e-9


def _scalar(value) -> float:
    return value.item() if isinstance(value, Tensor) else float(value)


def _evaluate(loss_fn: LossFn, where: str) -> float:
    try:
        value = _scalar(loss_fn())
    except NonFiniteError as exc:
        raise NonFiniteError(exc.op, f"while perturbing {where}") from exc
    if not np.isfinite(value):
        raise NonFiniteError("loss", f"while perturbing {where}")
    return value


def _partial(loss_fn: LossFn, name: str, param: Tensor, flat_index: int, step: float) -> float:
    position = np.unravel_index(flat_index, param.shape)
    original = param.data[position]
    where = f"{name}[{flat_index}]"
    try:
        param.data[position] = original + step
        upper = _evaluate(loss_fn, where)
        param.data[position] = original - step
        lower = _evaluate(loss_fn, where)
    finally:
        param.data[position] = original
    return (upper - lower) / (2.0 * step)


def finite_difference_gradients(loss_fn: LossFn, params: Mapping[str, Tensor],
                                h: float = DEFAULT_STEP) -> Dict[str, np.ndarray]:
    """
    @brief Numeric gradient of ``loss_fn`` for every coordinate of every parameter
    @param loss_fn deterministic, pure closure reading the parameters
    @param params name -> tensor; perturbed in place and restored
    @param h central-difference half-step
    """
    gradients = {}
    for name, param in params.items():
        numeric = np.zeros(param.data.size)
        for flat_index in range(param.data.size):
            numeric[flat_index] = _partial(loss_fn, name, param, flat_index, h)
        gradients[name] = numeric.reshape(param.shape)
    return gradients


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter: Optional[str]
    per_parameter: Dict[str, float] = field(default_factory=dict)
    coordinates_checked: int = 0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = RELATIVE_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(loss_fn: LossFn, params: Mapping[str, Tensor], h: float = DEFAULT_STEP,
                    max_coords_per_tensor: Optional[int] = None, seed: int = 0,
                    atol: float = ABSOLUTE_AGREEMENT) -> GradCheckReport:
    """
    Compare reverse-mode gradients of ``loss_fn`` with central differences.

    :param loss_fn: closure returning a scalar Tensor built from ``params``
    :param params: tensors to check (every one is visited)
    :param h: finite-difference half-step
    :param max_coords_per_tensor: sample at most this many coordinates per tensor (None = all)
    :param seed: seed for coordinate sampling
    :param atol: coordinates agreeing within this absolute gap count as exact
    :return: GradCheckReport with the worst relative error
    """
    zero_grads(params.values())
    loss = loss_fn()
    loss.backward()
    analytic = {name: param.grad.copy() for name, param in params.items()}
    zero_grads(params.values())

    rng = make_rng(seed, "gradcheck")
    report = GradCheckReport(max_relative_error=0.0, worst_parameter=None)
    for name, param in params.items():
        size = param.data.size
        if max_coords_per_tensor is None or size <= max_coords_per_tensor:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, size=max_coords_per_tensor, replace=False))
        worst = 0.0
        flat_analytic = analytic[name].reshape(-1)
        for flat_index in coords:
            numeric = _partial(loss_fn, name, param, int(flat_index), h)
            gap = abs(flat_analytic[flat_index] - numeric)
            if gap > atol:
                worst = max(worst, relative_error(flat_analytic[flat_index], numeric))
        report.per_parameter[name] = worst
        report.coordinates_checked += len(coords)
        if worst >= report.max_relative_error:
            report.max_relative_error = worst
            report.worst_parameter = name
    return report
