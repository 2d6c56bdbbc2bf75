"""Dense float64 tensors with a reverse-mode differentiation tape.

Every operation is eager: it computes its numpy result immediately and, when a
`Tape` is active and an operand requires gradients, appends one record holding
the operand references and a backward closure. The closures capture the numpy
arrays (never the `Tensor` objects' mutable `.data` slot), so a tape can be
replayed after an optimizer has swapped parameter values.

Tensors are treated as immutable values: no operation writes into an operand's
array, and the optimizer replaces `.data` with a fresh array instead of
updating in place. Broadcasting is deliberately restricted to scalar-vs-tensor
so each backward rule stays auditable.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractError, DivergenceError, NumericError, ShapeError

Array = np.ndarray

_TLS = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_TLS, "tape", None)


def _set_active_tape(tape: "Tape | None") -> None:
    _TLS.tape = tape


class Tensor:
    """A dense array of 64-bit floats, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad")

    # Force numpy to defer binary ops to our reflected operators.
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False):
        self.data = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A constant tensor sharing this tensor's values."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[Array], tuple[Array | None, ...]]):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive operations.

    Records are appended in execution order, which is automatically a
    topological order: an operand tensor always exists before the operation
    that consumes it. `backward` walks the record once in reverse and returns
    a gradient map without mutating the tape, so repeated calls yield
    identical results.

    The active-tape pointer is thread-local: each thread records on its own
    tape, and a tape must stay confined to the thread that built it.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._seen: set[int] = set()
        self._prev: "Tape | None" = None

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _set_active_tape(self)
        return self

    def __exit__(self, *exc) -> bool:
        _set_active_tape(self._prev)
        self._prev = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    @staticmethod
    def active() -> "Tape | None":
        return _active_tape()

    class _Paused:
        def __enter__(self):
            self._prev = _active_tape()
            _set_active_tape(None)
            return self

        def __exit__(self, *exc):
            _set_active_tape(self._prev)
            return False

    @staticmethod
    def paused() -> "_Paused":
        """Context manager suspending recording (pure numeric evaluation)."""
        return Tape._Paused()

    def records(self, tensor: Tensor) -> bool:
        return id(tensor) in self._seen

    def backward(self, loss: Tensor, wrt: Iterable[Tensor]) -> dict[Tensor, Array]:
        """Gradients of a scalar `loss` with respect to each tensor in `wrt`.

        Tensors in `wrt` that the loss does not depend on get zero gradients.
        The tape itself is left unchanged.
        """
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        targets = list(wrt)
        for t in targets:
            if not t.requires_grad:
                raise ContractError("cannot differentiate w.r.t. a constant tensor")
            if not self.records(t):
                raise ContractError("requested tensor does not appear on this tape")
        grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            for operand, g_in in zip(node.inputs, node.backward(g_out)):
                if g_in is None or not operand.requires_grad:
                    continue
                key = id(operand)
                if key in grads:
                    grads[key] = grads[key] + g_in
                else:
                    grads[key] = g_in
        return {t: grads.get(id(t), np.zeros_like(t.data)) for t in targets}


def _record(inputs: tuple[Tensor, ...], out_data: Array,
            backward: Callable[[Array], tuple[Array | None, ...]],
            op: str) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values produced by '{op}'")
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._nodes.append(_Node(inputs, out, backward))
        tape._seen.update(id(t) for t in inputs)
        tape._seen.add(id(out))
    return out


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"'{op}' operands have shapes {a.shape} and {b.shape}; "
                     "only equal shapes or scalar broadcast are supported")


def _reduce_to(shape: tuple[int, ...], grad: Array) -> Array:
    # Undo scalar broadcast: a size-1 operand collects the summed gradient.
    if grad.shape == shape:
        return grad
    return np.full(shape, grad.sum()) if np.prod(shape, dtype=int) == 1 else grad.reshape(shape)


# -- binary operations ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "add")
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _reduce_to(ash, g), _reduce_to(bsh, g)

    return _record((a, b), a.data + b.data, backward, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "sub")
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _reduce_to(ash, g), _reduce_to(bsh, -g)

    return _record((a, b), a.data - b.data, backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _reduce_to(ash, g * bd), _reduce_to(bsh, g * ad)

    return _record((a, b), ad * bd, backward, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "div")
    if np.any(b.data == 0.0):
        raise NumericError("division by zero")
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _reduce_to(ash, g / bd), _reduce_to(bsh, -g * ad / (bd * bd))

    return _record((a, b), ad / bd, backward, "div")


def maximum(a, b) -> Tensor:
    """Elementwise maximum; on ties the gradient goes to the first operand."""
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "maximum")
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape
    take_a = ad >= bd

    def backward(g):
        return _reduce_to(ash, g * take_a), _reduce_to(bsh, g * ~take_a)

    return _record((a, b), np.maximum(ad, bd), backward, "maximum")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _record((a, b), ad @ bd, backward, "matmul")


# -- unary operations -------------------------------------------------------

def exp(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _record((a,), out, backward, "exp")


def log(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise NumericError("log of a non-positive value")
    ad = a.data

    def backward(g):
        return (g / ad,)

    return _record((a,), np.log(ad), backward, "log")


def relu(a) -> Tensor:
    a = _wrap(a)
    positive = a.data > 0.0

    def backward(g):
        return (g * positive,)

    return _record((a,), np.maximum(a.data, 0.0), backward, "relu")


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _record((a,), out, backward, "sigmoid")


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _record((a,), out, backward, "tanh")


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably; backward is the sigmoid."""
    a = _wrap(a)
    ad = a.data

    def backward(g):
        s = np.empty_like(ad)
        pos = ad >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
        ez = np.exp(ad[~pos])
        s[~pos] = ez / (1.0 + ez)
        return (g * s,)

    return _record((a,), np.logaddexp(0.0, ad), backward, "softplus")


def elu(a) -> Tensor:
    """x for x > 0, exp(x) - 1 otherwise."""
    a = _wrap(a)
    ad = a.data
    positive = ad > 0.0
    out = np.where(positive, ad, np.expm1(np.minimum(ad, 0.0)))

    def backward(g):
        return (g * np.where(positive, 1.0, np.exp(np.minimum(ad, 0.0))),)

    return _record((a,), out, backward, "elu")


def square(a) -> Tensor:
    a = _wrap(a)
    ad = a.data

    def backward(g):
        return (g * 2.0 * ad,)

    return _record((a,), ad * ad, backward, "square")


def tsum(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape

    def backward(g):
        return (np.full(shape, g.reshape(())),)

    return _record((a,), np.asarray(a.data.sum()), backward, "sum")


def tmean(a) -> Tensor:
    a = _wrap(a)
    shape, n = a.shape, a.size

    def backward(g):
        return (np.full(shape, g.reshape(()) / n),)

    return _record((a,), np.asarray(a.data.mean()), backward, "mean")


# -- structured operations --------------------------------------------------

def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor (stabilized by the row maximum)."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-d tensor, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _record((a,), out, backward, "softmax_rows")


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols needs matching row counts, got {a.shape} and {b.shape}")
    na = a.shape[1]

    def backward(g):
        return g[:, :na], g[:, na:]

    return _record((a, b), np.concatenate([a.data, b.data], axis=1), backward, "concat_cols")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-m bias row to every row of an (n, m) tensor."""
    x, b = _wrap(x), _wrap(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias needs (n, m) and (m,), got {x.shape} and {b.shape}")

    def backward(g):
        return g, g.sum(axis=0)

    return _record((x, b), x.data + b.data, backward, "add_bias")


def scale_rows(x: Tensor, c: Tensor) -> Tensor:
    """Multiply each row of an (n, m) tensor by the matching (n, 1) scalar."""
    x, c = _wrap(x), _wrap(c)
    if x.data.ndim != 2 or c.shape != (x.shape[0], 1):
        raise ShapeError(f"scale_rows needs (n, m) and (n, 1), got {x.shape} and {c.shape}")
    xd, cd = x.data, c.data

    def backward(g):
        return g * cd, (g * xd).sum(axis=1, keepdims=True)

    return _record((x, c), xd * cd, backward, "scale_rows")


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_ELEMENTWISE_UNARY = {"exp": exp, "log": log, "relu": relu,
                      "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op_kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ContractError(f"'{op_kind}' needs two operands")
        return _ELEMENTWISE_BINARY[op_kind](a, b)
    if op_kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ContractError(f"'{op_kind}' takes a single operand")
        return _ELEMENTWISE_UNARY[op_kind](a)
    raise ContractError(f"unknown elementwise op '{op_kind}'")


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error between a tensor and a (usually constant) target."""
    return tmean(square(sub(pred, target)))


# -- optimizer ----------------------------------------------------------------

class Adam:
    """Adam with bias correction over a fixed parameter list.

    m(t) = b1 m(t-1) + (1 - b1) g        v(t) = b2 v(t-1) + (1 - b2) g^2
    p   -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)

    Parameter values are replaced, not mutated, so tensors already captured by
    a tape keep their recorded values.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 param_lrs: Mapping[Tensor, float] | None = None):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        # per-parameter learning rates (parameter groups), default `lr`
        self._lrs = [float((param_lrs or {}).get(p, lr)) for p in self.params]

    def step(self, grads: Mapping[Tensor, Array]) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise DivergenceError("non-finite gradient in Adam step")
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / c1
            v_hat = self._v[i] / c2
            p.data = p.data - self._lrs[i] * m_hat / (np.sqrt(v_hat) + self.eps)


def snapshot_params(params: Iterable[Tensor]) -> list[Array]:
    return [p.data.copy() for p in params]


def restore_params(params: Iterable[Tensor], saved: list[Array]) -> None:
    for p, arr in zip(params, saved):
        p.data = arr.copy()
