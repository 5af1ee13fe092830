"""Define-by-run reverse-mode differentiation over numpy arrays.

Every differentiable value is a :class:`Tensor`. Primitive applications are
appended to the thread's active :class:`ComputationRecord` whenever one of
their inputs requires a gradient; :func:`backward` walks that record once in
reverse order and then clears it.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractViolation, DomainError

__all__ = [
    "Tensor",
    "ComputationRecord",
    "AdamW",
    "apply_primitive",
    "backward",
    "grad_check",
    "no_grad",
    "count_primitives",
    "set_precision",
    "get_dtype",
    "precision",
    "PRIMITIVES",
]

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_dtype = np.float32


def set_precision(name: str) -> None:
    """Select the global numeric precision ("f32" or "f64")."""
    global _dtype
    if name not in _PRECISIONS:
        raise ContractViolation(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(name: str):
    old = "f64" if _dtype is np.float64 else "f32"
    set_precision(name)
    try:
        yield
    finally:
        set_precision(old)


class Tensor:
    """An n-dimensional real array that can take part in gradient computation."""

    __slots__ = ("data", "requires_grad", "node", "name", "grad")
    __array_ufunc__ = None  # ndarray (op) Tensor defers to the Tensor's reflected operator

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: int | None = None
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; every method dispatches to a catalogue primitive
    def __add__(self, other):
        return apply_primitive("add", [self, other])

    __radd__ = __add__

    def __sub__(self, other):
        return apply_primitive("subtract", [self, other])

    def __rsub__(self, other):
        return apply_primitive("subtract", [other, self])

    def __mul__(self, other):
        return apply_primitive("multiply", [self, other])

    __rmul__ = __mul__

    def __truediv__(self, other):
        return apply_primitive("divide", [self, other])

    def __rtruediv__(self, other):
        return apply_primitive("divide", [other, self])

    def __neg__(self):
        return apply_primitive("multiply", [self, -1.0])

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other])

    def __rmatmul__(self, other):
        return apply_primitive("matmul", [other, self])

    def __pow__(self, exponent: float):
        return apply_primitive("power", [self], exponent=float(exponent))

    def __getitem__(self, index):
        return apply_primitive("slice", [self], index=index)

    def sum(self, axis=None, keepdims=False):
        return apply_primitive("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply_primitive("mean", [self], axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", [self], shape=tuple(shape))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply_primitive("transpose", [self], axes=tuple(axes) if axes else None)

    def exp(self):
        return apply_primitive("exp", [self])

    def log(self):
        return apply_primitive("log", [self])

    def sqrt(self):
        return apply_primitive("sqrt", [self])

    def relu(self):
        return apply_primitive("maximum", [self], value=0.0)

    def sigmoid(self):
        return apply_primitive("sigmoid", [self])

    def gelu(self):
        return apply_primitive("gelu", [self])

    def softmax(self):
        return apply_primitive("softmax", [self])

    def layer_norm(self, eps: float = 1e-5):
        return apply_primitive("layernorm", [self], eps=eps)

    def clamp(self, lo: float, hi: float):
        up = apply_primitive("maximum", [self], value=lo)
        return -apply_primitive("maximum", [-up], value=-hi)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    kind: str
    inputs: tuple
    output: Tensor
    saved: dict


@dataclass
class ComputationRecord:
    """Ordered log of primitive applications, topological by construction."""

    nodes: list = field(default_factory=list)
    leaves: dict = field(default_factory=dict)  # node id -> leaf Tensor
    next_id: int = 0

    def new_id(self) -> int:
        nid = self.next_id
        self.next_id += 1
        return nid

    def register_leaf(self, t: Tensor) -> None:
        if t.node is None or t.node not in self.leaves or self.leaves[t.node] is not t:
            t.node = self.new_id()
            self.leaves[t.node] = t

    def clear(self) -> None:
        for leaf in self.leaves.values():
            leaf.node = None
        for n in self.nodes:
            n.output.node = None
        self.nodes.clear()
        self.leaves.clear()
        self.next_id = 0


class _ThreadState(threading.local):
    def __init__(self):
        self.record = ComputationRecord()
        self.grad_enabled = True
        self.counters: list = []


_state = _ThreadState()


def active_record() -> ComputationRecord:
    return _state.record


@contextlib.contextmanager
def no_grad():
    """Run primitives without recording them."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class _Counter:
    def __init__(self):
        self.count = 0
        self.kinds: dict[str, int] = {}


@contextlib.contextmanager
def count_primitives():
    """Count primitive applications executed inside the block."""
    c = _Counter()
    _state.counters.append(c)
    try:
        yield c
    finally:
        _state.counters.remove(c)


# ---------------------------------------------------------------------------
# primitive catalogue

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{kind}: shape mismatch {a.shape} vs {b.shape}") from None


def _fw_add(xs, attrs, saved):
    _check_broadcast("add", *xs)
    return xs[0] + xs[1]


def _bw_add(g, xs, out, attrs, saved):
    return [_unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)]


def _fw_sub(xs, attrs, saved):
    _check_broadcast("subtract", *xs)
    return xs[0] - xs[1]


def _bw_sub(g, xs, out, attrs, saved):
    return [_unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)]


def _fw_mul(xs, attrs, saved):
    _check_broadcast("multiply", *xs)
    return xs[0] * xs[1]


def _bw_mul(g, xs, out, attrs, saved):
    return [_unbroadcast(g * xs[1], xs[0].shape), _unbroadcast(g * xs[0], xs[1].shape)]


def _fw_div(xs, attrs, saved):
    _check_broadcast("divide", *xs)
    return xs[0] / xs[1]


def _bw_div(g, xs, out, attrs, saved):
    a, b = xs
    return [_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)]


def _fw_matmul(xs, attrs, saved):
    a, b = xs
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ContractViolation(f"matmul: batch shape mismatch {a.shape} vs {b.shape}") from None
    return a @ b


def _bw_matmul(g, xs, out, attrs, saved):
    a, b = xs
    ga = g @ np.swapaxes(b, -1, -2)
    gb = np.swapaxes(a, -1, -2) @ g
    return [_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)]


def _fw_transpose(xs, attrs, saved):
    return np.transpose(xs[0], attrs["axes"])


def _bw_transpose(g, xs, out, attrs, saved):
    axes = attrs["axes"]
    if axes is None:
        return [np.transpose(g)]
    return [np.transpose(g, np.argsort(axes))]


def _fw_reshape(xs, attrs, saved):
    shape = attrs["shape"]
    try:
        return xs[0].reshape(shape)
    except ValueError:
        raise ContractViolation(f"reshape: cannot view {xs[0].shape} as {shape}") from None


def _bw_reshape(g, xs, out, attrs, saved):
    return [g.reshape(xs[0].shape)]


def _fw_concat(xs, attrs, saved):
    axis = attrs["axis"]
    ref = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(ref) or any(
            i != axis % len(ref) and p != q for i, (p, q) in enumerate(zip(ref, other))
        ):
            raise ContractViolation(f"concatenate: shape mismatch {tuple(ref)} vs {tuple(other)}")
    return np.concatenate(xs, axis=axis)


def _bw_concat(g, xs, out, attrs, saved):
    axis = attrs["axis"]
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return np.split(g, bounds, axis=axis)


def _fw_slice(xs, attrs, saved):
    return xs[0][attrs["index"]]


def _bw_slice(g, xs, out, attrs, saved):
    full = np.zeros_like(xs[0])
    index = attrs["index"]
    parts = index if isinstance(index, tuple) else (index,)
    if any(isinstance(p, (np.ndarray, list)) for p in parts):
        np.add.at(full, index, g)
    else:
        full[index] = g
    return [full]


def _fw_broadcast(xs, attrs, saved):
    try:
        return np.broadcast_to(xs[0], attrs["shape"]).copy()
    except ValueError:
        raise ContractViolation(f"broadcast: cannot expand {xs[0].shape} to {attrs['shape']}") from None


def _bw_broadcast(g, xs, out, attrs, saved):
    return [_unbroadcast(g, xs[0].shape)]


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        g = np.expand_dims(g, tuple(a % len(shape) for a in axes))
    return np.broadcast_to(g, shape)


def _fw_sum(xs, attrs, saved):
    return np.sum(xs[0], axis=attrs["axis"], keepdims=attrs["keepdims"])


def _bw_sum(g, xs, out, attrs, saved):
    return [_expand_reduced(g, xs[0].shape, attrs["axis"], attrs["keepdims"]).copy()]


def _reduced_count(shape, axis):
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if isinstance(axis, int) else axis
    return int(np.prod([shape[a] for a in axes]))


def _fw_mean(xs, attrs, saved):
    return np.mean(xs[0], axis=attrs["axis"], keepdims=attrs["keepdims"])


def _bw_mean(g, xs, out, attrs, saved):
    n = _reduced_count(xs[0].shape, attrs["axis"])
    return [_expand_reduced(g / n, xs[0].shape, attrs["axis"], attrs["keepdims"]).copy()]


def _fw_exp(xs, attrs, saved):
    return np.exp(xs[0])


def _bw_exp(g, xs, out, attrs, saved):
    return [g * out]


def _fw_log(xs, attrs, saved):
    if np.any(xs[0] < 0):
        raise DomainError("log of negative input")
    with np.errstate(divide="ignore"):
        return np.log(xs[0])


def _bw_log(g, xs, out, attrs, saved):
    return [g / xs[0]]


def _fw_sqrt(xs, attrs, saved):
    if np.any(xs[0] < 0):
        raise DomainError("sqrt of negative input")
    return np.sqrt(xs[0])


def _bw_sqrt(g, xs, out, attrs, saved):
    return [g * 0.5 / out]


def _fw_power(xs, attrs, saved):
    p = attrs["exponent"]
    if np.any(xs[0] < 0) and not float(p).is_integer():
        raise DomainError("fractional power of negative input")
    if p == 2:
        return xs[0] * xs[0]  # np.power is slow for float32
    return np.power(xs[0], p)


def _bw_power(g, xs, out, attrs, saved):
    p = attrs["exponent"]
    if p == 0:
        return [np.zeros_like(xs[0])]
    return [g * p * np.power(xs[0], p - 1)]


def _fw_maximum(xs, attrs, saved):
    return np.maximum(xs[0], attrs["value"])


def _bw_maximum(g, xs, out, attrs, saved):
    return [g * (xs[0] > attrs["value"])]


_GELU_C = math.sqrt(2.0 / math.pi)


def _fw_gelu(xs, attrs, saved):
    x = xs[0]
    t = np.tanh(_GELU_C * (x + 0.044715 * x * x * x))
    saved["t"] = t
    return 0.5 * x * (1.0 + t)


def _bw_gelu(g, xs, out, attrs, saved):
    x, t = xs[0], saved["t"]
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return [g * (0.5 * (1.0 + t) + 0.5 * x * dt)]


def _fw_sigmoid(xs, attrs, saved):
    x = xs[0]
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)


def _bw_sigmoid(g, xs, out, attrs, saved):
    return [g * out * (1.0 - out)]


def _fw_softmax(xs, attrs, saved):
    x = xs[0]
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _bw_softmax(g, xs, out, attrs, saved):
    return [out * (g - (g * out).sum(axis=-1, keepdims=True))]


def _fw_layernorm(xs, attrs, saved):
    x = xs[0]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + attrs["eps"])
    saved["inv"] = inv
    return xc * inv


def _bw_layernorm(g, xs, out, attrs, saved):
    inv = saved["inv"]
    gm = g.mean(axis=-1, keepdims=True)
    gy = (g * out).mean(axis=-1, keepdims=True)
    return [inv * (g - gm - out * gy)]


@dataclass(frozen=True)
class Primitive:
    forward: Callable
    backward: Callable
    arity: int | None  # None = variadic


PRIMITIVES: dict[str, Primitive] = {
    "add": Primitive(_fw_add, _bw_add, 2),
    "subtract": Primitive(_fw_sub, _bw_sub, 2),
    "multiply": Primitive(_fw_mul, _bw_mul, 2),
    "divide": Primitive(_fw_div, _bw_div, 2),
    "matmul": Primitive(_fw_matmul, _bw_matmul, 2),
    "transpose": Primitive(_fw_transpose, _bw_transpose, 1),
    "reshape": Primitive(_fw_reshape, _bw_reshape, 1),
    "concatenate": Primitive(_fw_concat, _bw_concat, None),
    "slice": Primitive(_fw_slice, _bw_slice, 1),
    "broadcast": Primitive(_fw_broadcast, _bw_broadcast, 1),
    "sum": Primitive(_fw_sum, _bw_sum, 1),
    "mean": Primitive(_fw_mean, _bw_mean, 1),
    "exp": Primitive(_fw_exp, _bw_exp, 1),
    "log": Primitive(_fw_log, _bw_log, 1),
    "sqrt": Primitive(_fw_sqrt, _bw_sqrt, 1),
    "power": Primitive(_fw_power, _bw_power, 1),
    "maximum": Primitive(_fw_maximum, _bw_maximum, 1),
    "gelu": Primitive(_fw_gelu, _bw_gelu, 1),
    "sigmoid": Primitive(_fw_sigmoid, _bw_sigmoid, 1),
    "softmax": Primitive(_fw_softmax, _bw_softmax, 1),
    "layernorm": Primitive(_fw_layernorm, _bw_layernorm, 1),
}

_DEFAULT_ATTRS = {
    "transpose": {"axes": None},
    "concatenate": {"axis": 0},
    "sum": {"axis": None, "keepdims": False},
    "mean": {"axis": None, "keepdims": False},
    "maximum": {"value": 0.0},
    "layernorm": {"eps": 1e-5},
}


def apply_primitive(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Evaluate one catalogue primitive and record it if any input needs a gradient."""
    prim = PRIMITIVES.get(kind)
    if prim is None:
        raise ContractViolation(f"unknown primitive {kind!r}")
    if prim.arity is not None and len(inputs) != prim.arity:
        raise ContractViolation(f"{kind} takes {prim.arity} inputs, got {len(inputs)}")
    if kind == "power" and "exponent" not in attrs:
        raise ContractViolation("power needs an exponent")
    attrs = {**_DEFAULT_ATTRS.get(kind, {}), **attrs}
    ts = [as_tensor(x) for x in inputs]
    saved: dict = {}
    out_data = prim.forward([t.data for t in ts], attrs, saved)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(out_data, dtype=_dtype)
    out.name = None
    out.grad = None
    out.node = None
    for c in _state.counters:
        c.count += 1
        c.kinds[kind] = c.kinds.get(kind, 0) + 1
    out.requires_grad = _state.grad_enabled and any(t.requires_grad for t in ts)
    if out.requires_grad:
        rec = _state.record
        for t in ts:
            if t.requires_grad and t.node is None:
                rec.register_leaf(t)
        out.node = rec.new_id()
        rec.nodes.append(_Node(kind, tuple(ts), out, {"attrs": attrs, **saved}))
    return out


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    return apply_primitive("concatenate", list(tensors), axis=axis)


def broadcast_to(t, shape) -> Tensor:
    return apply_primitive("broadcast", [t], shape=tuple(shape))


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every recorded leaf and consume the record.

    Returns a map from leaf name to its accumulated gradient (unnamed leaves are
    still accumulated into ``.grad`` but not returned).
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    rec = _state.record
    grads: dict[int, np.ndarray] = {}
    try:
        if loss.node is None:
            return {}
        grads[loss.node] = np.ones_like(loss.data)
        for node in reversed(rec.nodes):
            g = grads.pop(node.output.node, None)
            if g is None:
                continue
            saved = node.saved
            in_grads = PRIMITIVES[node.kind].backward(
                g, [t.data for t in node.inputs], node.output.data, saved["attrs"], saved
            )
            for t, gi in zip(node.inputs, in_grads):
                if not t.requires_grad or t.node is None:
                    continue
                prev = grads.get(t.node)
                grads[t.node] = gi if prev is None else prev + gi
        out: dict[str, np.ndarray] = {}
        for nid, leaf in rec.leaves.items():
            g = grads.get(nid)
            if g is None:
                continue
            g = np.asarray(g, dtype=leaf.data.dtype)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
            if leaf.name is not None:
                out[leaf.name] = leaf.grad
        return out
    finally:
        rec.clear()


def discard_record() -> None:
    """Drop whatever the active record holds (used after forward-only passes)."""
    _state.record.clear()


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f: Callable, point, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``point`` is a Tensor or a name -> Tensor mapping; ``f`` is called with the
    same structure and must return a scalar Tensor. Evaluation runs at 64-bit.
    """
    with precision("f64"):
        if isinstance(point, Mapping):
            leaves = {k: Tensor(np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64),
                                requires_grad=True, name=k) for k, v in point.items()}
            call = lambda: f(leaves)  # noqa: E731
        else:
            base = point.data if isinstance(point, Tensor) else point
            leaf = Tensor(np.array(base, dtype=np.float64), requires_grad=True, name="x")
            leaves = {"x": leaf}
            call = lambda: f(leaf)  # noqa: E731
        discard_record()
        out = call()
        if not isinstance(out, Tensor) or out.data.size != 1:
            discard_record()
            shape = out.shape if isinstance(out, Tensor) else type(out)
            raise ContractViolation(f"grad_check needs a scalar-valued function, got {shape}")
        out = out.reshape(()) if out.ndim else out
        for t in leaves.values():
            t.grad = None
        backward(out)
        worst = 0.0
        with no_grad():
            for t in leaves.values():
                analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
                flat = t.data.reshape(-1)
                an = analytic.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + step
                    fp = float(call().data)
                    flat[i] = orig - step
                    fm = float(call().data)
                    flat[i] = orig
                    num = (fp - fm) / (2 * step)
                    err = abs(an[i] - num) / max(1e-12, abs(an[i]) + abs(num))
                    worst = max(worst, err)
        return worst


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamW:
    """Adam with decoupled weight decay.

    Decay is applied to the parameter directly, never folded into the gradient.
    """

    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr <= 0:
            raise ContractViolation(f"learning rate must be positive, got {lr}")
        missing = [k for k in params if k not in grads]
        if missing:
            raise ContractViolation(f"missing gradient for parameters {missing[:5]}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = np.asarray(grads[name], dtype=p.data.dtype)
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = m / bc1 if bc1 > 0 else m
            v_hat = v / bc2 if bc2 > 0 else v
            denom = np.sqrt(v_hat) + self.eps
            with np.errstate(invalid="ignore", divide="ignore"):
                upd = np.where(denom > 0, m_hat / np.where(denom > 0, denom, 1), 0.0)
            new = p.data - lr * upd - lr * self.weight_decay * p.data
            p.data = new.astype(p.data.dtype)

    def state_arrays(self) -> dict:
        return {"m": self.m, "v": self.v, "step_count": self.step_count}


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
