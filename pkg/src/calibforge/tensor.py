"""
Dense Tensors with Reverse-Mode Differentiation
===============================================

A deliberately small numeric kernel: float64 NumPy arrays wrapped in :class:`Tensor`
nodes that remember how they were produced. Calling :func:`backward` on a scalar result
records a :class:`Tape` (the reachable nodes in topological order) and walks it in
reverse, accumulating gradients into every node that requires them.

Only the primitives needed by small MLPs and the calibration losses are provided.
Broadcasting is limited to the row-wise bias add; every other binary primitive requires
equal shapes.

Example:
    >>> import numpy as np
    >>> from calibforge.tensor import Tensor, matmul, softmax, gather_rows, log, mean, backward
    >>> w = Tensor(np.zeros((2, 3)), requires_grad=True)
    >>> x = Tensor([[1.0, 2.0]])
    >>> p = softmax(matmul(x, w))
    >>> loss = -mean(log(gather_rows(p, np.array([0]))))
    >>> tape = backward(loss)
    >>> w.grad.shape
    (2, 3)
"""

from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import NumericError, ShapeError

# log() clamps its argument here; KL terms see softmax outputs that can underflow
LOG_CLAMP = 1e-12

Number = Union[int, float]
BackwardFn = Callable[[np.ndarray], None]


class Tensor:
    """
    Float64 array participating in a gradient tape.

    Attributes:
        data (np.ndarray): Values, always float64
        grad (np.ndarray | None): Gradient buffer of the same shape, set by backward()
        requires_grad (bool): Whether gradients flow into this node
        op (str): Name of the primitive that produced the node ("leaf" for inputs)

    Args:
        data: Array-like values (copied and converted to float64)
        requires_grad: Mark as a trainable leaf (default: False)
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        """Return the single value of a one-element tensor."""
        if self.data.size != 1:
            raise ShapeError(f"expected a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the values."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        """Return a constant view of the values, cut from the tape."""
        return detach(self)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -other)

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Number):
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], op: str, fn: BackwardFn) -> Tensor:
    """Wrap a primitive's output, checking finiteness and wiring the tape only when needed."""
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad += g


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# --- Primitives -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of ``a [m×k]`` and ``b [k×n]``.

    Raises:
        ShapeError: If either operand is not 2-D or the inner dimensions disagree
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), "matmul", _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require_same_shape("add", a, b)

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), "add", _backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require_same_shape("sub", a, b)

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), "sub", _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    _require_same_shape("mul", a, b)

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), "mul", _backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-k bias to every row of ``x [n×k]`` (the only broadcast supported)."""
    x, bias = _as_tensor(x), _as_tensor(bias)
    if x.ndim != 2 or bias.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: cannot add bias {bias.shape} to rows of {x.shape}")

    def _backward(g: np.ndarray) -> None:
        _accumulate(x, g)
        _accumulate(bias, g.sum(axis=0))

    return _result(x.data + bias.data, (x, bias), "add_bias", _backward)


def scale(a: Tensor, c: Number) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g * c)

    return _result(a.data * c, (a,), "scale", _backward)


def shift(a: Tensor, c: Number) -> Tensor:
    """Add a scalar constant to every element."""
    a = _as_tensor(a)
    c = float(c)

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g)

    return _result(a.data + c, (a,), "shift", _backward)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g * (a.data > 0.0))

    return _result(np.maximum(a.data, 0.0), (a,), "relu", _backward)


def log(a: Tensor) -> Tensor:
    """Natural log with the argument clamped at ``LOG_CLAMP``; zero gradient below the clamp."""
    a = _as_tensor(a)
    safe = np.maximum(a.data, LOG_CLAMP)

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, np.where(a.data > LOG_CLAMP, g / safe, 0.0))

    return _result(np.log(safe), (a,), "log", _backward)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g * out_data)

    return _result(out_data, (a,), "exp", _backward)


def sqrt(a: Tensor) -> Tensor:
    """Square root of nonnegative values; zero gradient at zero."""
    a = _as_tensor(a)
    out_data = np.sqrt(np.maximum(a.data, 0.0))

    def _backward(g: np.ndarray) -> None:
        positive = out_data > 0.0
        _accumulate(a, np.where(positive, 0.5 * g / np.where(positive, out_data, 1.0), 0.0))

    return _result(out_data, (a,), "sqrt", _backward)


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    """Sum all elements (scalar result) or along one axis."""
    a = _as_tensor(a)
    out_data = np.asarray(a.data.sum(axis=axis), dtype=np.float64)

    def _backward(g: np.ndarray) -> None:
        expanded = g if axis is None else np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(expanded, a.shape))

    return _result(out_data, (a,), "sum", _backward)


def mean(a: Tensor) -> Tensor:
    """Mean of all elements as a scalar tensor."""
    a = _as_tensor(a)
    n = a.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _result(np.asarray(a.data.mean(), dtype=np.float64), (a,), "mean", _backward)


def gather_rows(a: Tensor, index: Sequence[int]) -> Tensor:
    """Pick ``a[i, index[i]]`` from every row of ``a [n×C]``, giving a length-n vector."""
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError(f"gather_rows: index {idx.shape} does not match rows of {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad[rows, idx] += g

    return _result(a.data[rows, idx], (a,), "gather_rows", _backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    try:
        out_data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {e}") from e

    def _backward(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _result(out_data, (a,), "reshape", _backward)


def softmax_array(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array with max-subtraction."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax(z: Tensor) -> Tensor:
    """
    Row-wise softmax of ``z [n×C]``.

    Raises:
        NumericError: If ``z`` contains NaN or Inf
        ShapeError: If ``z`` is not 2-D
    """
    z = _as_tensor(z)
    if z.ndim != 2:
        raise ShapeError(f"softmax expects [n×C], got {z.shape}")
    if not np.all(np.isfinite(z.data)):
        raise NumericError("softmax received non-finite logits")
    s = softmax_array(z.data)

    def _backward(g: np.ndarray) -> None:
        _accumulate(z, s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _result(s, (z,), "softmax", _backward)


def detach(a: Tensor) -> Tensor:
    """Constant tensor sharing ``a``'s values; gradients stop here."""
    out = Tensor.__new__(Tensor)
    out.data = a.data
    out.grad = None
    out.requires_grad = False
    out.op = "detach"
    out._parents = ()
    out._backward = None
    return out


# --- Tape and backward ------------------------------------------------------


@dataclass(frozen=True)
class TapeEntry:
    """One recorded primitive: its name, input nodes and output node."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor


class Tape:
    """
    Nodes reachable from a root, in topological order (inputs before outputs).

    Args:
        nodes: Topologically ordered nodes
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        """Collect every node reachable from ``root`` exactly once, inputs first."""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    @property
    def entries(self) -> List[TapeEntry]:
        return [TapeEntry(n.op, n._parents, n) for n in self.nodes if n._parents]

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)


def backward(loss: Tensor, tape: Optional[Tape] = None) -> Tape:
    """
    Populate ``grad`` on every node of the tape leading to a scalar ``loss``.

    Gradients are reset to zero for all recorded nodes before the sweep, so each call
    reports the gradient of this loss alone. Trainable tensors not reachable from the loss
    keep whatever ``grad`` they had; call ``zero_grad()`` on them first (ParameterSet does).

    Args:
        loss: Scalar tensor
        tape: Previously recorded tape for ``loss`` (recorded here when omitted)

    Returns:
        The tape that was walked

    Raises:
        ShapeError: If ``loss`` is not a scalar
    """
    if loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = Tape.record(loss)
    for node in tape.nodes:
        if node.requires_grad:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None:
            node._backward(node.grad)
    return tape


__all__ = [
    "LOG_CLAMP",
    "Tensor",
    "Tape",
    "TapeEntry",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "add_bias",
    "scale",
    "shift",
    "relu",
    "log",
    "exp",
    "sqrt",
    "sum",
    "mean",
    "gather_rows",
    "reshape",
    "softmax",
    "softmax_array",
    "detach",
]
