""" Dense tensors with define-by-run reverse-mode differentiation.

A `Tensor` wraps a numpy array. Operations in `spvd.autodiff.ops` create result tensors with
`make_node`, which records the parents and a backward rule whenever gradient recording is
enabled and at least one parent requires a gradient. `backward()` traces the recorded graph
from a scalar loss and accumulates gradients into the `grad` buffer of every leaf tensor that
requires one.

The numeric precision of newly created tensors is a process-wide setting:

    # Verify gradients in 64-bit precision
    set_precision("float64")

Example: recording and differentiating a small graph

    w = Tensor(np.ones((2, 2)), requires_grad=True)
    loss = ops.sum(ops.mul(w, w))
    loss.backward()
    w.grad  # 2 * w
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional, Sequence

import numpy as np
import numpy.typing as npt

from spvd.errors import ConfigError, ContractError, NumericalError

Array = npt.NDArray[Any]

# A backward rule maps the gradient of an output to one gradient (or None) per input.
BackwardFn = Callable[[Array], Sequence[Optional[Array]]]

PRECISIONS = {"float32": np.float32, "float64": np.float64}

PRECISION = "float32"
_GRAD_ENABLED = True


def set_precision(precision: str) -> str:
    """Set the floating point precision of newly created tensors.

    Args:
        precision: Either "float32" (training) or "float64" (verification).

    Returns:
        The previous precision, so callers can restore it.

    Raises:
        ConfigError: If the precision is not supported.
    """

    global PRECISION

    if precision not in PRECISIONS:
        raise ConfigError(f"Precision {precision} is not supported.")
    previous = PRECISION
    logging.debug(f"Setting tensor precision: precision={precision}")
    PRECISION = precision
    return previous


def default_dtype() -> Any:
    return PRECISIONS[PRECISION]


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the tensor precision."""

    previous = set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend graph recording, e.g. while sampling or probing finite differences."""

    global _GRAD_ENABLED

    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        *,
        name: Optional[str] = None,
        dtype: Any = None,
    ):
        self.data: Array = np.array(data, dtype=dtype or default_dtype())
        if not np.isfinite(self.data).all():
            raise NumericalError(f"Tensor {name or ''} contains NaN or Inf.")
        self.requires_grad = requires_grad
        self.grad: Optional[Array] = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> Any:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self, inputs: Sequence["Tensor"] = ()) -> None:
        backward(self, inputs)

    def __add__(self, other: Any) -> "Tensor":
        from spvd.autodiff import ops

        return ops.add(self, other)

    def __sub__(self, other: Any) -> "Tensor":
        from spvd.autodiff import ops

        return ops.sub(self, other)

    def __mul__(self, other: Any) -> "Tensor":
        from spvd.autodiff import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from spvd.autodiff import ops

        return ops.matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        grad = self.requires_grad
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={grad})"


def make_node(
    data: Array,
    parents: Sequence[Tensor],
    backward_fn: BackwardFn,
    op: str,
) -> Tensor:
    """Create the result tensor of an operation and record it in the graph.

    Args:
        data: The computed output values.
        parents: The input tensors of the operation.
        backward_fn: Maps the output gradient to one gradient per parent.
        op: Operation name, kept for error messages and graph inspection.

    Returns:
        The output tensor.

    Raises:
        NumericalError: If the output contains NaN or Inf.
    """

    if not np.isfinite(data).all():
        raise NumericalError(f"Operation {op} produced NaN or Inf.")

    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


@dataclass(frozen=True)
class GraphNode:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn
    op: str


class ComputationGraph:
    """Topologically ordered record of the operations leading to one output."""

    def __init__(self, nodes: list[GraphNode]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[GraphNode]:
        return iter(self.nodes)

    @staticmethod
    def trace(output: Tensor) -> "ComputationGraph":
        """Collect the recorded operations reachable from `output`, inputs first."""

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited or tensor._backward is None:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            for parent in reversed(tensor._parents):
                if parent._backward is not None and id(parent) not in visited:
                    stack.append((parent, False))

        nodes = [
            GraphNode(t, t._parents, t._backward, t.op)  # type: ignore[arg-type]
            for t in order
        ]
        return ComputationGraph(nodes)


def backward(loss: Tensor, inputs: Sequence[Tensor] = ()) -> None:
    """Populate the grad buffers of every leaf that `loss` depends on.

    Gradients accumulate into existing leaf buffers; call `zero_grad()` on parameters
    between steps. Leaves that the loss does not reach, and the listed `inputs`, end with a
    zero buffer rather than None when they require a gradient.

    Raises:
        ContractError: If the loss is not a scalar.
    """

    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")

    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        _fill_zero_grads(inputs)
        return

    graph = ComputationGraph.trace(loss)
    pending: dict[int, Array] = {id(loss): seed}
    for node in reversed(graph.nodes):
        grad = pending.pop(id(node.output), None)
        if grad is None:
            continue
        input_grads = node.backward(grad)
        for tensor, input_grad in zip(node.inputs, input_grads):
            if input_grad is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                if tensor.grad is None:
                    tensor.grad = np.array(input_grad, dtype=tensor.data.dtype)
                else:
                    tensor.grad = tensor.grad + input_grad
            elif id(tensor) in pending:
                pending[id(tensor)] = pending[id(tensor)] + input_grad
            else:
                pending[id(tensor)] = input_grad

    _fill_zero_grads([t for node in graph.nodes for t in node.inputs if t.is_leaf])
    _fill_zero_grads(inputs)


def _fill_zero_grads(tensors: Sequence[Tensor]) -> None:
    for tensor in tensors:
        if tensor.requires_grad and tensor.grad is None:
            tensor.zero_grad()
