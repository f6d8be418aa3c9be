"""Dense float64 tensors with reverse-mode differentiation on a recorded tape.

Every op records a node holding its input tensors and a vector-Jacobian
product (vjp).  Each vjp is itself written with the ops of this module, so
when ``backward(..., create_graph=True)`` runs it appends the backward
computation to the same tape and the resulting gradients can be
differentiated again.  Gradient penalties need exactly this.

Typical use::

    with Tape() as tape:
        tape.watch(w)
        loss = mean(relu(dense(x, w, b)))
        (gw,) = backward(loss, [w])
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64
LEAKY_SLOPE = 0.2
LAYERNORM_EPS = 1e-5
NORM_EPS = 1e-12

_local = threading.local()


class ShapeError(ValueError):
    """Raised when an op receives inputs with incompatible shapes."""


def _tape_stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def set_grad_enabled(flag: bool):
    prev = grad_enabled()
    _local.grad_enabled = flag
    try:
        yield
    finally:
        _local.grad_enabled = prev


def no_grad():
    return set_grad_enabled(False)


class Node:
    __slots__ = ("kind", "inputs", "input_ids", "vjp", "out")

    def __init__(self, kind, inputs, input_ids, vjp, out):
        self.kind = kind
        self.inputs = inputs
        self.input_ids = input_ids
        self.vjp = vjp
        self.out = out


class Tape:
    """Append-only op record.  Nodes are topologically ordered by construction."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.alive = True

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        self.close()

    def close(self):
        self.alive = False
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def watch(self, *tensors: "Tensor") -> None:
        """Register tensors as differentiable leaves on this tape."""
        for t in tensors:
            if t._on(self):
                continue
            t._tape = self
            t._idx = len(self.nodes)
            self.nodes.append(Node("leaf", (), (), None, t))

    def _record(self, kind, out, inputs, vjp):
        ids = tuple(t._idx if t._on(self) else -1 for t in inputs)
        out._tape = self
        out._idx = len(self.nodes)
        self.nodes.append(Node(kind, tuple(inputs), ids, vjp, out))


class Tensor:
    """An n-dimensional float64 array, optionally tracked on a live tape."""

    __slots__ = ("data", "_tape", "_idx", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self._tape = None
        self._idx = -1

    def _on(self, tape) -> bool:
        return self._tape is tape and tape is not None and tape.alive

    @property
    def node(self):
        """(tape, index) handle, or None for detached tensors."""
        if self._tape is not None and self._tape.alive:
            return (self._tape, self._idx)
        return None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = "tracked" if self.node else "detached"
        return f"Tensor(shape={self.shape}, {tag})\n{self.data!r}"

    def __len__(self):
        return self.shape[0]

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(kind: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(data)
    if grad_enabled():
        tape = active_tape()
        if tape is not None:
            for t in inputs:
                if t._on(tape):
                    tape._record(kind, out, inputs, vjp)
                    break
    return out


# ---------------------------------------------------------------- broadcasting

def _sum_to_np(a: np.ndarray, shape: tuple) -> np.ndarray:
    if a.shape == tuple(shape):
        return a
    lead = a.ndim - len(shape)
    if lead:
        a = a.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if t == 1 and s != 1)
    if axes:
        a = a.sum(axis=axes, keepdims=True)
    return a.reshape(shape)


def sum_to(x: Tensor, shape) -> Tensor:
    """Sum a broadcast tensor back down to ``shape`` (adjoint of broadcast_to)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x

    def vjp(g, needs):
        return (broadcast_to(g, x.shape),)

    return _make("sum_to", _sum_to_np(x.data, shape), (x,), vjp)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x

    def vjp(g, needs):
        return (sum_to(g, x.shape),)

    return _make("broadcast_to", np.broadcast_to(x.data, shape), (x,), vjp)


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def vjp(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(g, b.shape) if needs[1] else None)

    return _make("add", a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def vjp(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                neg(sum_to(g, b.shape)) if needs[1] else None)

    return _make("sub", a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def vjp(g, needs):
        return (sum_to(mul(g, b), a.shape) if needs[0] else None,
                sum_to(mul(g, a), b.shape) if needs[1] else None)

    return _make("mul", a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = None

    def vjp(g, needs):
        ga = sum_to(div(g, b), a.shape) if needs[0] else None
        gb = sum_to(neg(div(mul(g, out), b)), b.shape) if needs[1] else None
        return ga, gb

    out = _make("div", a.data / b.data, (a, b), vjp)
    return out


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _make("neg", -x.data, (x,), lambda g, needs: (neg(g),))


def scale(x, c: float) -> Tensor:
    """Multiply by a Python constant."""
    x = as_tensor(x)
    c = float(c)
    return _make("scale", x.data * c, (x,), lambda g, needs: (scale(g, c),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = Tensor((x.data > 0).astype(DTYPE))
    return _make("relu", x.data * mask.data, (x,), lambda g, needs: (mul(g, mask),))


def leakyrelu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    factor = Tensor(np.where(x.data > 0, 1.0, slope))
    return _make("leakyrelu", x.data * factor.data, (x,), lambda g, needs: (mul(g, factor),))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    p = float(p)

    def vjp(g, needs):
        return (mul(g, scale(power(x, p - 1.0), p)),)

    return _make("power", np.power(x.data, p), (x,), vjp)


def square(x) -> Tensor:
    x = as_tensor(x)
    return mul(x, x)


def sqrt(x) -> Tensor:
    return power(x, 0.5)


def clamp_abs_min(x, m: float) -> Tensor:
    """sign(x) * max(|x|, m), with sign(0) taken as +1."""
    x = as_tensor(x)
    keep = np.abs(x.data) >= m
    sign = np.where(x.data < 0, -1.0, 1.0)
    mask = Tensor(keep.astype(DTYPE))
    return _make("clamp_abs_min", np.where(keep, x.data, sign * m), (x,),
                 lambda g, needs: (mul(g, mask),))


# ------------------------------------------------------------------ reductions

def _axes(ndim, axis):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _axes(x.ndim, axis)
    kept = tuple(1 if i in axes else s for i, s in enumerate(x.shape))

    def vjp(g, needs):
        return (broadcast_to(reshape(g, kept), x.shape),)

    return _make("sum", x.data.sum(axis=axes, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _axes(x.ndim, axis)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    kept = tuple(1 if i in axes else s for i, s in enumerate(x.shape))

    def vjp(g, needs):
        return (broadcast_to(reshape(scale(g, 1.0 / n), kept), x.shape),)

    return _make("mean", x.data.mean(axis=axes, keepdims=keepdims), (x,), vjp)


def l2norm(x) -> Tensor:
    """Per-sample Euclidean norm over all non-batch axes, guarded at zero."""
    x = as_tensor(x)
    axes = tuple(range(1, x.ndim))
    kept = (x.shape[0],) + (1,) * (x.ndim - 1)
    out = None

    def vjp(g, needs):
        return (mul(x, reshape(div(g, out), kept)),)

    out = _make("l2norm", np.sqrt((x.data * x.data).sum(axis=axes) + NORM_EPS), (x,), vjp)
    return out


# ----------------------------------------------------------------- shape ops

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _make("reshape", data, (x,), lambda g, needs: (reshape(g, x.shape),))


def transpose(x, perm) -> Tensor:
    x = as_tensor(x)
    perm = tuple(perm)
    inv = tuple(int(i) for i in np.argsort(perm))
    return _make("transpose", x.data.transpose(perm), (x,),
                 lambda g, needs: (transpose(g, inv),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    axis = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(x.shape, ref)) if i != axis):
            raise ShapeError(f"concat: shapes {ref} and {x.shape} differ off axis {axis}")
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def vjp(g, needs):
        return tuple(slice_axis(g, axis, int(bounds[i]), int(bounds[i + 1])) if needs[i] else None
                     for i in range(len(xs)))

    return _make("concat", np.concatenate([x.data for x in xs], axis=axis), tuple(xs), vjp)


def channel_concat(*xs: Tensor) -> Tensor:
    return concat(xs, axis=1)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    axis = axis % x.ndim
    n = x.shape[axis]
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)

    def vjp(g, needs):
        return (pad_axis(g, axis, start, n - stop),)

    return _make("slice", x.data[tuple(idx)], (x,), vjp)


def pad_axis(x, axis: int, before: int, after: int) -> Tensor:
    x = as_tensor(x)
    axis = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    n = x.shape[axis]

    def vjp(g, needs):
        return (slice_axis(g, axis, before, before + n),)

    return _make("pad", np.pad(x.data, widths), (x,), vjp)


def subsample2(x) -> Tensor:
    """Average pooling, window and stride 2, over every spatial axis (axes 2:)."""
    x = as_tensor(x)
    d = x.ndim - 2
    if d not in (1, 2):
        raise ShapeError(f"subsample2: expected 3D or 4D input, got shape {x.shape}")
    if any(s % 2 for s in x.shape[2:]):
        raise ShapeError(f"subsample2: spatial dims {x.shape[2:]} must be even")
    if d == 1:
        b, c, n = x.shape
        data = x.data.reshape(b, c, n // 2, 2).mean(axis=3)
    else:
        b, c, h, w = x.shape
        data = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    k = 0.5 ** d
    return _make("subsample2", data, (x,), lambda g, needs: (scale(upsample2(g), k),))


def upsample2(x) -> Tensor:
    """Nearest-neighbour upsampling by 2 over every spatial axis."""
    x = as_tensor(x)
    d = x.ndim - 2
    if d not in (1, 2):
        raise ShapeError(f"upsample2: expected 3D or 4D input, got shape {x.shape}")
    data = x.data
    for ax in range(2, x.ndim):
        data = np.repeat(data, 2, axis=ax)
    k = float(2 ** d)
    return _make("upsample2", data, (x,), lambda g, needs: (scale(subsample2(g), k),))


# ------------------------------------------------------------ linear algebra

def _swap_last(x: Tensor) -> Tensor:
    perm = list(range(x.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return transpose(x, perm)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

    def vjp(g, needs):
        ga = sum_to(matmul(g, _swap_last(b)), a.shape) if needs[0] else None
        gb = sum_to(matmul(_swap_last(a), g), b.shape) if needs[1] else None
        return ga, gb

    return _make("matmul", np.matmul(a.data, b.data), (a, b), vjp)


def dense(x, w, b=None) -> Tensor:
    """Affine map x @ w + b for x of shape [batch, features_in]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {w.shape}")
    out = x.data @ w.data
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"dense: bias {b.shape} does not match out features {w.shape[1]}")
        out = out + b.data
        inputs = (x, w, b)

    def vjp(g, needs):
        gx = matmul(g, transpose(w, (1, 0))) if needs[0] else None
        gw = matmul(transpose(x, (1, 0)), g) if needs[1] else None
        if len(needs) == 2:
            return gx, gw
        return gx, gw, (sum(g, axis=0) if needs[2] else None)

    return _make("dense", out, inputs, vjp)


# -------------------------------------------------------------- convolution

def _unfold_np(x: np.ndarray, k: int) -> np.ndarray:
    p = k // 2
    if x.ndim == 3:
        b, c, n = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        win = sliding_window_view(xp, k, axis=2)  # b, c, n, k
        return win.transpose(0, 2, 1, 3).reshape(b, n, c * k)
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # b, c, h, w, k, k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, h * w, c * k * k)


def _fold_np(cols: np.ndarray, k: int, c: int, spatial: tuple) -> np.ndarray:
    p = k // 2
    b = cols.shape[0]
    if len(spatial) == 1:
        (n,) = spatial
        parts = cols.reshape(b, n, c, k).transpose(0, 2, 3, 1)  # b, c, k, n
        out = np.zeros((b, c, n + 2 * p))
        for j in range(k):
            out[:, :, j:j + n] += parts[:, :, j]
        return out[:, :, p:p + n]
    h, w = spatial
    parts = cols.reshape(b, h, w, c, k, k).transpose(0, 3, 4, 5, 1, 2)  # b, c, k, k, h, w
    out = np.zeros((b, c, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + h, j:j + w] += parts[:, :, i, j]
    return out[:, :, p:p + h, p:p + w]


def unfold(x, k: int) -> Tensor:
    """Zero-padded 'same' patch extraction: [B,C,*S] -> [B, prod(S), C*k^d]."""
    x = as_tensor(x)
    c, spatial = x.shape[1], x.shape[2:]

    def vjp(g, needs):
        return (fold(g, k, c, spatial),)

    return _make("unfold", _unfold_np(x.data, k), (x,), vjp)


def fold(cols, k: int, c: int, spatial) -> Tensor:
    """Adjoint of :func:`unfold`: scatter-add patches back into an image."""
    cols = as_tensor(cols)
    spatial = tuple(spatial)
    return _make("fold", _fold_np(cols.data, k, c, spatial), (cols,),
                 lambda g, needs: (unfold(g, k),))


def conv(x, w, b=None) -> Tensor:
    """Zero-padded 'same' convolution (cross-correlation) in 1 or 2 spatial dims.

    x: [B, C_in, *S], w: [C_out, C_in, k(, k)], b: [C_out] or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    d = x.ndim - 2
    kind = "conv1d" if d == 1 else "conv2d"
    if d not in (1, 2) or w.ndim != d + 2:
        raise ShapeError(f"{kind}: input {x.shape} and kernel {w.shape} ranks disagree")
    cout, cin = w.shape[:2]
    k = w.shape[2]
    if cin != x.shape[1]:
        raise ShapeError(f"{kind}: input has {x.shape[1]} channels, kernel expects {cin}")
    if k % 2 == 0 or any(s != k for s in w.shape[2:]):
        raise ShapeError(f"{kind}: kernel size must be odd and square, got {w.shape[2:]}")
    bsz, spatial = x.shape[0], x.shape[2:]
    npix = int(np.prod(spatial))
    cols_np = _unfold_np(x.data, k)
    wm_np = w.data.reshape(cout, -1)
    out = (cols_np @ wm_np.T).transpose(0, 2, 1).reshape((bsz, cout) + spatial)
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(f"{kind}: bias {b.shape} does not match {cout} output channels")
        out = out + b.data.reshape((cout,) + (1,) * d)
        inputs = (x, w, b)

    def vjp(g, needs):
        gm = reshape(g, (bsz, cout, npix))
        gx = gw = gb = None
        if needs[0]:
            wm = reshape(w, (cout, cin * k ** d))
            gx = fold(matmul(transpose(gm, (0, 2, 1)), wm), k, cin, spatial)
        if needs[1]:
            tape = active_tape()
            cols = unfold(x, k) if (grad_enabled() and tape is not None and x._on(tape)) \
                else Tensor(cols_np)
            g2 = reshape(transpose(gm, (1, 0, 2)), (cout, bsz * npix))
            gw = reshape(matmul(g2, reshape(cols, (bsz * npix, cin * k ** d))), w.shape)
        if len(needs) == 3 and needs[2]:
            gb = sum(g, axis=(0,) + tuple(range(2, g.ndim)))
        return (gx, gw) if len(needs) == 2 else (gx, gw, gb)

    return _make(kind, out, inputs, vjp)


conv1d = conv
conv2d = conv


# ------------------------------------------------------------ normalisation

def layernorm(x, gain=None, bias=None, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize each sample over all non-batch axes, then apply per-feature affine."""
    x = as_tensor(x)
    feat = x.shape[1:]
    for name, p in (("gain", gain), ("bias", bias)):
        if p is not None and as_tensor(p).shape != feat:
            raise ShapeError(f"layernorm: {name} shape {as_tensor(p).shape} != feature shape {feat}")
    axes = tuple(range(1, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    xhat_np = xc * inv
    out = xhat_np
    inputs = [x]
    if gain is not None:
        gain = as_tensor(gain)
        out = out * gain.data
        inputs.append(gain)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs.append(bias)

    def vjp(g, needs):
        tape = active_tape()
        if grad_enabled() and tape is not None and x._on(tape):
            # differentiable recomputation so second-order terms are exact
            xc_t = sub(x, mean(x, axis=axes, keepdims=True))
            inv_t = power(add(mean(mul(xc_t, xc_t), axis=axes, keepdims=True), eps), -0.5)
            xhat = mul(xc_t, inv_t)
        else:
            inv_t, xhat = Tensor(inv), Tensor(xhat_np)
        grads = []
        gg = mul(g, gain) if gain is not None else g
        if needs[0]:
            t1 = mean(gg, axis=axes, keepdims=True)
            t2 = mul(xhat, mean(mul(gg, xhat), axis=axes, keepdims=True))
            grads.append(mul(inv_t, sub(sub(gg, t1), t2)))
        else:
            grads.append(None)
        if gain is not None:
            grads.append(sum(mul(g, xhat), axis=0) if needs[len(grads)] else None)
        if bias is not None:
            grads.append(sum(g, axis=0) if needs[len(grads)] else None)
        return tuple(grads)

    return _make("layernorm", out, tuple(inputs), vjp)


# ----------------------------------------------------------------- backward

def backward(scalar: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a single-element tensor with respect to each of ``wrt``.

    Tensors that the scalar does not depend on get a zero gradient.  With
    ``create_graph`` the backward ops are recorded on the same tape.
    """
    if scalar.size != 1:
        raise ShapeError(f"backward: expected a single-element tensor, got shape {scalar.shape}")
    wrt = list(wrt)
    node = scalar.node
    if node is None:
        return [Tensor(np.zeros(t.shape)) for t in wrt]
    tape, top = node
    wrt_ids = {}
    for i, t in enumerate(wrt):
        if t._on(tape) and t._idx <= top:
            wrt_ids.setdefault(t._idx, []).append(i)

    nodes = tape.nodes
    needed = bytearray(top + 1)
    for j in wrt_ids:
        needed[j] = 1
    for i in range(top + 1):
        if not needed[i]:
            for j in nodes[i].input_ids:
                if j >= 0 and needed[j]:
                    needed[i] = 1
                    break

    result: list[Tensor | None] = [None] * len(wrt)
    grads: dict[int, Tensor] = {top: Tensor(np.ones(scalar.shape))}
    with set_grad_enabled(create_graph):
        for i in range(top, -1, -1):
            g = grads.pop(i, None)
            if g is None or not needed[i]:
                continue
            if i in wrt_ids:
                for pos in wrt_ids[i]:
                    result[pos] = g
            nd = nodes[i]
            if nd.vjp is None:
                continue
            needs = tuple(j >= 0 and bool(needed[j]) for j in nd.input_ids)
            if not any(needs):
                continue
            for j, gj in zip(nd.input_ids, nd.vjp(g, needs)):
                if gj is None or j < 0 or not needed[j]:
                    continue
                grads[j] = add(grads[j], gj) if j in grads else gj
    return [r if r is not None else Tensor(np.zeros(t.shape)) for r, t in zip(result, wrt)]


# ------------------------------------------------------------ op dispatcher

_OPS: dict[str, Callable] = {
    "dense": dense,
    "conv1d": conv,
    "conv2d": conv,
    "layernorm": layernorm,
    "relu": relu,
    "leakyrelu": leakyrelu,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale": scale,
    "neg": neg,
    "mean": mean,
    "sum": sum,
    "l2norm": l2norm,
    "channel_concat": channel_concat,
    "subsample2": subsample2,
    "upsample2": upsample2,
    "reshape": reshape,
    "clamp_abs_min": clamp_abs_min,
    "power": power,
    "matmul": matmul,
    "transpose": transpose,
}


def record_op(kind: str, inputs: Iterable, **attrs) -> Tensor:
    """Apply the op named ``kind``; it is recorded if any input is tracked."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)
