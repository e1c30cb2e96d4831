"""Dense float tensors with reverse-mode automatic differentiation.

The engine is deliberately small: NCHW layout for 4-D data, float32 by
default with a float64 path for gradient verification, and exactly the
operations the super-resolution networks need.  Every operation records
its inputs and a backward closure on the output tensor; ``backward``
walks the resulting graph once in reverse topological order.

Broadcasting is restricted to two forms: a per-channel bias ``[C]``
against ``[N,C,H,W]``, and a single-element tensor against anything
(needed by the batch-mean terms of the adversarial losses).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (e.g. inference, detached forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense float array plus an optional gradient slot.

    Tensors are immutable after creation except for gradient accumulation;
    optimizers may rebind ``data`` between training steps (the graph of a
    step is never reused).  ``grad`` stays ``None`` until a backward pass
    deposits into it, and accumulates across passes until reset.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = np.float32
        arr = np.array(data, dtype=dtype)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


def tensor_from_data(shape: Sequence[int], values: Sequence[float],
                     requires_grad: bool = False, dtype=np.float32) -> Tensor:
    """Build a tensor from an explicit shape and a flat row-major value list."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"tensor dimensions must be positive, got {shape}")
    values = np.asarray(values, dtype=dtype)
    if values.ndim != 1:
        values = values.reshape(-1)
    expected = math.prod(shape) if shape else 1
    if values.size != expected:
        raise ShapeError(f"shape {shape} needs {expected} values, got {values.size}")
    return Tensor(values.reshape(shape), requires_grad=requires_grad, dtype=dtype)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, recording the graph edge when autograd is active."""
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = requires
    if requires:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def _broadcast_kind(a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if b.data.size == 1:
        return "scalar_b"
    if a.data.size == 1:
        return "scalar_a"
    if a.data.ndim == 4 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return "bias_b"
    raise ShapeError(f"incompatible shapes for add/sub: {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, kind: str, side: str, shape) -> np.ndarray:
    # Undo the forward broadcast by summing the expanded axes.
    if kind == "same":
        return g
    if kind == "scalar_b" and side == "b":
        return g.sum().reshape(shape)
    if kind == "scalar_a" and side == "a":
        return g.sum().reshape(shape)
    if kind == "bias_b" and side == "b":
        return g.sum(axis=(0, 2, 3))
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b (same shape, per-channel bias, or single-element broadcast)."""
    kind = _broadcast_kind(a, b)
    bd = b.data.reshape(1, -1, 1, 1) if kind == "bias_b" else b.data
    data = a.data + bd

    def back(g):
        return (_reduce_to(g, kind, "a", a.shape), _reduce_to(g, kind, "b", b.shape))

    return _make(data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a - b with the same broadcast rules as add."""
    kind = _broadcast_kind(a, b)
    bd = b.data.reshape(1, -1, 1, 1) if kind == "bias_b" else b.data
    data = a.data - bd

    def back(g):
        return (_reduce_to(g, kind, "a", a.shape), -_reduce_to(g, kind, "b", b.shape))

    return _make(data, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply every element by the constant s."""
    s = float(s)
    data = a.data * a.data.dtype.type(s)

    def back(g):
        return (g * s,)

    return _make(data, (a,), back)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def absolute(a: Tensor) -> Tensor:
    """Elementwise |a|; the subgradient at 0 is 0."""
    data = np.abs(a.data)
    sign = np.sign(a.data)

    def back(g):
        return (g * sign,)

    return _make(data, (a,), back)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    """max(x, slope*x); gradient is slope for x <= 0 (the x == 0 convention)."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in [0, 1), got {slope}")
    data = np.where(a.data > 0, a.data, a.data * a.data.dtype.type(slope))

    def back(g):
        return (np.where(a.data > 0, g, g * slope),)

    return _make(data, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, computed without exponentiating positive arguments."""
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def back(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), back)


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x) in the overflow-free form max(x,0) + log1p(e^-|x|)."""
    x = a.data
    data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)

    def back(g):
        return (g * sig,)

    return _make(data, (a,), back)


def reduce_mean(a: Tensor) -> Tensor:
    """Mean over all elements, returned as a 0-d tensor."""
    if a.data.size == 0:
        raise ValueError("reduce_mean of an empty tensor")
    n = a.data.size
    data = np.asarray(a.data.mean(dtype=a.dtype), dtype=a.dtype)

    def back(g):
        return (np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=False),)

    return _make(data, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.data.size} elements) to {shape}")
    data = a.data.reshape(shape)

    def back(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), back)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 4-D tensors along the channel axis."""
    if not tensors:
        raise ValueError("concat_channels needs at least one tensor")
    first = tensors[0]
    for t in tensors[1:]:
        if t.data.ndim != 4 or first.data.ndim != 4:
            raise ShapeError("concat_channels expects 4-D tensors")
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ShapeError(f"concat_channels mismatch: {first.shape} vs {t.shape}")
    data = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=1))

    return _make(data, tuple(tensors), back)


# ---------------------------------------------------------------------------
# convolution and friends
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Return (cols, ho, wo): cols has shape (N*Ho*Wo, C*kh*kw)."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, c, kh, kw, ho, wo), (s0, s1, s2, s3, s2 * stride, s3 * stride))
    cols = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3))
    return cols.reshape(n * ho * wo, c * kh * kw), ho, wo


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, NCHW in, NCHW out.

    Forward runs as an im2col matrix product.  The input gradient is the
    stride-dilated output gradient fully convolved with the spatially
    flipped kernel, which keeps the backward pass on the same fast path.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, kernel expects {kcin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output would be {ho}x{wo} for input {h}x{w}, kernel {kh}x{kw}")

    cols, _, _ = _im2col(x.data, kh, kw, stride, padding)
    wmat = kernel.data.reshape(cout, cin * kh * kw)
    out = cols @ wmat.T + bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        grad_w = (gmat.T @ cols).reshape(kernel.shape)
        grad_b = g.sum(axis=(0, 2, 3))
        # Dilate g by the stride, then full-convolve with the flipped kernel.
        rh = (h + 2 * padding - kh) % stride
        rw = (w + 2 * padding - kw) % stride
        z = np.zeros((n, cout, (ho - 1) * stride + 1 + rh, (wo - 1) * stride + 1 + rw),
                     dtype=g.dtype)
        z[:, :, ::stride, ::stride][:, :, :ho, :wo] = g
        wflip = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        zcols, zh, zw = _im2col(z, kh, kw, 1, kh - 1)
        gx = zcols @ wflip.reshape(cin, cout * kh * kw).T
        gx = gx.reshape(n, zh, zw, cin).transpose(0, 3, 1, 2)
        grad_x = gx[:, :, padding:padding + h, padding:padding + w]
        return (np.ascontiguousarray(grad_x), grad_w, grad_b)

    return _make(out, (x, kernel, bias), back)


def nearest_upsample2x(x: Tensor) -> Tensor:
    """Replicate each pixel into a 2x2 block; backward sums each block."""
    if x.data.ndim != 4:
        raise ShapeError(f"nearest_upsample2x expects a 4-D tensor, got {x.shape}")
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def back(g):
        n, c, h2, w2 = g.shape
        return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return _make(data, (x,), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C] spatial mean."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects a 4-D tensor, got {x.shape}")
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3))

    def back(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(g.dtype, copy=False),)

    return _make(data, (x,), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """[N,C] @ [C,K] + [K]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"linear expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear mismatch: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear bias must have shape ({weight.shape[1]},), got {bias.shape}")
    data = x.data @ weight.data + bias.data

    def back(g):
        return (g @ weight.data.T, x.data.T @ g, g.sum(axis=0))

    return _make(data, (x, weight, bias), back)


# ---------------------------------------------------------------------------
# backward traversal
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every requires_grad tensor behind loss.

    Each graph node is visited exactly once per call; calling again without
    clearing grads adds another unit of gradient (useful for loss sums).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not (parent.requires_grad or parent._parents):
                continue
            held = grads.get(id(parent))
            grads[id(parent)] = pg if held is None else held + pg


def zero_grads(tensors) -> None:
    """Reset the grad slot of every tensor in a dict or iterable."""
    values = tensors.values() if hasattr(tensors, "values") else tensors
    for t in values:
        t.grad = None


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def finite_difference_check(f, x: Tensor, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every element of x; use finite_difference_sample for large
    tensors.  Meant to run on float64 tensors.
    """
    flat = np.arange(x.data.size)
    return finite_difference_sample(f, x, flat, epsilon)


def finite_difference_sample(f, x: Tensor, indices, epsilon: float = 1e-5) -> float:
    """Finite-difference check restricted to the given flat indices of x."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    probe = Tensor(x.data.copy(), requires_grad=True, dtype=x.dtype)
    out = f(probe)
    if out.data.size != 1:
        raise ValueError("finite_difference_check needs a scalar-valued function")
    backward(out)
    analytic = probe.grad.reshape(-1)

    base = x.data.copy().reshape(-1)
    worst = 0.0
    for idx in np.asarray(indices, dtype=np.intp):
        saved = base[idx]
        base[idx] = saved + epsilon
        with no_grad():
            hi = f(Tensor(base.reshape(x.shape), dtype=x.dtype)).item()
        base[idx] = saved - epsilon
        with no_grad():
            lo = f(Tensor(base.reshape(x.shape), dtype=x.dtype)).item()
        base[idx] = saved
        numeric = (hi - lo) / (2.0 * epsilon)
        err = abs(float(analytic[idx]) - numeric) / max(abs(float(analytic[idx])), 1e-8)
        worst = max(worst, err)
    return worst
