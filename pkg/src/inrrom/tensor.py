"""Dense float64 tensors with a reverse-mode autodiff tape.

Arithmetic is delegated to numpy; the tape, the op set and every backward
rule live here. Operations only record onto the tape when a ``Tape`` is
active and at least one input is tracked, so model code doubles as an
untracked inference path.

    with Tape() as tape:
        loss = (W @ x).sin().sum()
        tape.backward(loss)
    W.grad  # d loss / d W
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A precondition of an operation or model was violated."""


class NonFiniteError(FloatingPointError):
    pass


_TAPES: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


@dataclass
class TapeNode:
    op: str
    inputs: tuple  # parent Tensors
    backward: Callable[[np.ndarray], tuple]
    saved: tuple = ()


class Tensor:
    """Row-major float64 array, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._node: TapeNode | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        if self._node is not None:
            return self._tape is not None and self._tape.open
        return self.requires_grad

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = ", tracked" if self.tracked else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sin(self):
        return sin(self)

    def tanh(self):
        return tanh(self)

    def square(self):
        return square(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf tensor with a dotted name path."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(shape, float(arr))
    return Tensor(arr)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of tracked operations for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.open = False

    def __enter__(self) -> "Tape":
        self.open = True
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)
        self.discard()

    def discard(self) -> None:
        self.open = False
        for t in self.nodes:
            t._node = None
            t._tape = None
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)

    def op_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for t in self.nodes:
            counts[t._node.op] = counts.get(t._node.op, 0) + 1
        return counts

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable tracked leaf."""
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            if loss.requires_grad:
                loss.grad = loss.grad + np.ones_like(loss.data)
                return
            raise ContractError("loss was not produced by tracked operations on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            node = out._node
            for parent, pg in zip(node.inputs, node.backward(g)):
                if pg is None or not parent.tracked:
                    continue
                if parent._node is not None:
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
                else:
                    parent.grad += pg


def _record(op: str, out_data: np.ndarray, inputs: tuple, backward, saved: tuple = ()) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = False
    out.grad = None
    out._node = None
    out._tape = None
    tape = active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        out._node = TapeNode(op, inputs, backward, saved)
        out._tape = tape
        tape.nodes.append(out)
    return out


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return (g @ bd.T if a.tracked else None, ad.T @ g if b.tracked else None)

    return _record("matmul", ad @ bd, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same("hadamard", a, b)
    ad, bd = a.data, b.data
    return _record("hadamard", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def sin(a: Tensor) -> Tensor:
    x = a.data
    return _record("sin", np.sin(x), (a,), lambda g: (g * np.cos(x),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _record("square", x * x, (a,), lambda g: (2.0 * x * g,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record("sum", np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _record("mean", np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: needs a matrix, got {a.shape}")
    return _record("transpose", a.data.T, (a,), lambda g: (g.T,))


def index(a: Tensor, key) -> Tensor:
    """Basic/advanced numpy indexing; backward scatters into zeros."""
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        if _is_advanced(key):
            np.add.at(out, key, g)
        else:
            out[key] = g
        return (out,)

    return _record("index", a.data[key], (a,), back)


def _is_advanced(key) -> bool:
    """True when integer index arrays may repeat entries and need scatter-add."""
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) and np.asarray(k).dtype != bool for k in keys)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise DimensionError(f"concat: incompatible shapes {[x.shape for x in tensors]} on axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))

    return _record("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    for t in tensors[1:]:
        _check_same("stack", tensors[0], t)
    n = len(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _record("stack", np.stack([t.data for t in tensors], axis=axis), tensors, back)


def tile_rows(a: Tensor, n: int) -> Tensor:
    """Repeat a single row ``n`` times: [1, w] -> [n, w]."""
    if a.data.ndim != 2 or a.shape[0] != 1:
        raise DimensionError(f"tile_rows: needs a [1, w] row, got {a.shape}")
    return _record("tile_rows", np.repeat(a.data, n, axis=0), (a,), lambda g: (g.sum(axis=0, keepdims=True),))


def row_outer(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise row products: out[i * p + j] = a[i] * b[j] for a [s, w], b [p, w]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"row_outer: column mismatch {a.shape} vs {b.shape}")
    s, w = a.shape
    p = b.shape[0]
    ad, bd = a.data, b.data
    out = (ad[:, None, :] * bd[None, :, :]).reshape(s * p, w)

    def back(g):
        g3 = g.reshape(s, p, w)
        ga = np.einsum("spw,pw->sw", g3, bd) if a.tracked else None
        gb = np.einsum("spw,sw->pw", g3, ad) if b.tracked else None
        return ga, gb

    return _record("row_outer", out, (a, b), back)


def frobenius_norm(a: Tensor) -> Tensor:
    x = a.data
    nrm = float(np.sqrt(np.sum(x * x)))

    def back(g):
        if nrm == 0.0:
            return (np.zeros_like(x),)
        return (x * (float(g) / nrm),)

    return _record("frobenius_norm", np.array(nrm), (a,), back)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias, the [1, n] bias applied to every row of the [m, k] input."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"affine: cannot multiply {x.shape} by {weight.shape}")
    if bias.shape != (1, weight.shape[1]):
        raise DimensionError(f"affine: bias must be (1, {weight.shape[1]}), got {bias.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    out += bias.data

    def back(g):
        return (g @ wd.T if x.tracked else None,
                xd.T @ g if weight.tracked else None,
                g.sum(axis=0, keepdims=True) if bias.tracked else None)

    return _record("affine", out, (x, weight, bias), back)


def modulate(h: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """out[i * p + j] = h[i * p + j] * a[i] * b[j]; equals hadamard(h, row_outer(a, b))."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"modulate: column mismatch {a.shape} vs {b.shape}")
    s, w = a.shape
    p = b.shape[0]
    if h.shape != (s * p, w):
        raise DimensionError(f"modulate: input {h.shape} does not match {(s * p, w)}")
    hd3 = h.data.reshape(s, p, w)
    ad, bd = a.data, b.data
    ab = ad[:, None, :] * bd[None, :, :]
    out = (hd3 * ab).reshape(s * p, w)

    def back(g):
        g3 = g.reshape(s, p, w)
        gh = (g3 * ab).reshape(s * p, w) if h.tracked else None
        gxh = g3 * hd3 if (a.tracked or b.tracked) else None
        ga = np.einsum("spw,pw->sw", gxh, bd, optimize=True) if a.tracked else None
        gb = np.einsum("spw,sw->pw", gxh, ad, optimize=True) if b.tracked else None
        return gh, ga, gb

    return _record("modulate", out, (h, a, b), back)


def check_finite(a: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return a


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape))


def ones(*shape) -> Tensor:
    return Tensor(np.ones(shape))
