"""Dense tensors and the tape that records operations for reverse-mode differentiation.

Operations only record onto a tape while one is active (``with Tape():``).
Outside a tape every result is a plain value with no node handle, which is
the inference mode used by evaluation and retrieval.
"""

import threading
from contextlib import contextmanager
from typing import Any, Callable, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ContractError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


def _stack() -> List["Tape"]:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def get_default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextmanager
def numeric_mode(dtype: Any) -> Iterator[None]:
    """Create new tensors in ``dtype``: float32 for training, float64 for verification."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported numeric mode {dtype}")
    previous = get_default_dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = previous


class Node:
    """One recorded operation: inputs, output and the rule mapping output grad to input grads."""

    __slots__ = ("op", "inputs", "output", "backward_fn", "index", "tape")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], output: "Tensor", backward_fn: BackwardFn, index: int, tape: "Tape"):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.index = index
        self.tape = tape


class Tape:
    """Ordered record of operations; append order is a topological order."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []

    def record(self, op: str, inputs: Tuple["Tensor", ...], output: "Tensor", backward_fn: BackwardFn) -> None:
        node = Node(op, inputs, output, backward_fn, len(self.nodes), self)
        self.nodes.append(node)
        output.node = node

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, even inside an active tape."""
    stack = _stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


class Tensor:
    """An n-dimensional float array with an optional gradient slot and tape handle."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None, dtype: Any = None) -> None:
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else get_default_dtype()
        self.data: np.ndarray = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    # Introspection
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype} requires_grad={self.requires_grad}>"

    # Operators delegate to autograd.functional
    def __add__(self, other: Any) -> "Tensor":
        from autograd import functional as F

        return F.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from autograd import functional as F

        return F.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from autograd import functional as F

        return F.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from autograd import functional as F

        return F.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from autograd import functional as F

        return F.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from autograd import functional as F

        return F.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        from autograd import functional as F

        return F.div(self, other)

    def __neg__(self) -> "Tensor":
        from autograd import functional as F

        return F.neg(self)

    def __matmul__(self, other: Any) -> "Tensor":
        from autograd import functional as F

        return F.matmul(self, other)

    def __getitem__(self, key: Any) -> "Tensor":
        from autograd import functional as F

        return F.index(self, key)

    def reshape(self, *shape: Any) -> "Tensor":
        from autograd import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from autograd import functional as F

        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        from autograd import functional as F

        return F.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: Any) -> Tensor:
    """Wrap a constant as a non-differentiable tensor; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad leaf reachable from a scalar loss.

    Gradients accumulate into existing ``.grad`` arrays; call ``zero_grad`` between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise ContractError("backward() needs a loss produced under an active tape")

    tape = loss.node.tape
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: loss.node.index + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp.node is None or inp.node.tape is not tape:
                if inp.grad is None:
                    inp.grad = np.array(ig, dtype=inp.data.dtype, copy=True)
                else:
                    inp.grad = inp.grad + ig
            else:
                key = id(inp)
                grads[key] = ig if key not in grads else grads[key] + ig
