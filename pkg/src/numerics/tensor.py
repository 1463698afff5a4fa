"""
@file tensor.py
@brief Reverse-mode differentiable tensor on top of numpy float64 arrays
@details Every Tensor owns a ``data`` array and a same-shape ``grad`` buffer.
Operations (see functional.py) record their parents and a backward closure;
``Tensor.backward`` walks the recorded graph in reverse topological order and
accumulates exact gradients into every tensor that requires them.
"""

from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from errors import ContractViolation, NonFiniteError


def ensure_finite(values: np.ndarray, op: str) -> None:
    """Raise NonFiniteError when ``values`` holds NaN or Inf."""
    if not np.isfinite(values).all():
        bad = int(np.size(values) - np.count_nonzero(np.isfinite(values)))
        raise NonFiniteError(op, f"{bad} of {np.size(values)} entries")


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze_axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if squeeze_axes:
        grad = grad.sum(axis=squeeze_axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """
    @brief n-dimensional float64 array with an accumulated-gradient slot
    @details Invariants: ``data.shape == grad.shape`` and all data entries are
    finite. Leaves created by users are checked on construction; op results
    are checked by ``Tensor.from_op``.
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        ensure_finite(self.data, name or "tensor")
        self.grad = np.zeros_like(self.data)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable[[np.ndarray], None],
                op: str) -> "Tensor":
        """
        Wrap an op result, linking it into the graph only when a parent needs gradients.

        :param data: freshly computed output array (not copied)
        :param parents: input tensors of the op
        :param backward: closure receiving the output gradient and accumulating into parents
        :param op: op name used in non-finite diagnostics
        """
        ensure_finite(data, op)
        out = cls.__new__(cls)
        out.data = data if data.dtype == np.float64 else data.astype(np.float64)
        out.grad = np.zeros_like(out.data)
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying data."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def accumulate(self, grad: np.ndarray) -> None:
        """Add ``grad`` into this tensor's gradient buffer."""
        self.grad = self.grad + grad

    def backward(self) -> None:
        """
        @brief Back-propagate from a scalar output
        @details Seeds this tensor's gradient with one and runs every recorded
        backward closure in reverse topological order.
        """
        if self.data.size != 1:
            raise ContractViolation(f"backward() needs a scalar output, got shape {self.shape}")
        self.grad = np.ones_like(self.data)
        for node in reversed(self._topological_order()):
            if node._backward is not None:
                node._backward(node.grad)

    def _topological_order(self) -> list:
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, finished = stack.pop()
            if finished:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Arithmetic sugar delegating to functional.py
    def __add__(self, other):
        from numerics import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from numerics import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from numerics import functional as F
        return F.sub(as_tensor(other), self)

    def __mul__(self, other):
        from numerics import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from numerics import functional as F
        return F.div(self, other)

    def __neg__(self):
        from numerics import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from numerics import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from numerics import functional as F
        return F.index(self, index)


def as_tensor(value) -> Tensor:
    """Wrap constants (floats, arrays) as non-differentiable tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def parameter(data, name: Optional[str] = None) -> Tensor:
    """Create a trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


def zero_grads(params: Iterable[Tensor]) -> None:
    for param in params:
        param.zero_grad()
