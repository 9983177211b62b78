"""Minimal dense tensor with reverse-mode differentiation.

Everything is float64 and laid out NCHW for 4-D data. Each operation builds
its output through :meth:`Tensor.from_op`, handing over a closure that maps the
upstream gradient to one gradient per parent; this is also the hook used by
layers that need custom local derivatives (truncations, power maps).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording a graph."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.isfinite(values).all():
        raise FloatingPointError(f"non-finite values produced by {what}")


class Tensor:
    """Dense float64 array with an optional gradient and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
        op: str = "op",
    ) -> "Tensor":
        """Wrap the result of an operation and attach its backward closure.

        ``backward(grad_out)`` must return one gradient (or None) per parent.
        """
        _check_finite(data, op)
        out = cls(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    _check_finite(g, "backward")
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic; only same-shape operands or python scalars
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -other if not isinstance(other, Tensor) else neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def elementwise(x: Tensor, value: np.ndarray, local_grad: np.ndarray, op: str) -> Tensor:
    """Custom-derivative hook for elementwise maps: d out / d x = ``local_grad``."""
    return Tensor.from_op(value, (x,), lambda g: (g * local_grad,), op)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
        return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")
    return Tensor.from_op(a.data + float(b), (a,), lambda g: (g,), "add")


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
        return Tensor.from_op(
            a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul"
        )
    if isinstance(b, np.ndarray) and b.ndim:
        if b.shape != a.shape:
            raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
        c = b
    else:
        c = float(b)
    return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,), "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return elementwise(x, np.where(mask, x.data, 0.0), mask.astype(np.float64), "relu")


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor.from_op(
        np.array(x.data.sum()), (x,), lambda g: (np.full(shape, g.item()),), "sum"
    )


def tensor_mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return Tensor.from_op(
        np.array(x.data.mean()), (x,), lambda g: (np.full(shape, g.item() / n),), "mean"
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return Tensor.from_op(
        x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape"
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


# ---------------------------------------------------------------- convolution


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding (no kernel flip)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects x[N,C,H,W] and weight[O,C,k,k]")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {ci}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({o},)")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv2d: stride, dilation must be >= 1 and padding >= 0")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: output extent {ho}x{wo} < 1")

    p = padding
    # channels-last im2col: each window row is (kh, kw, c) with c contiguous
    xh = x.data.transpose(0, 2, 3, 1)
    xp = np.pad(xh, ((0, 0), (p, p), (p, p), (0, 0))) if p else np.ascontiguousarray(xh)
    sn, sh, sw, sc = xp.strides
    windows = as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh * dilation, sw * dilation, sc),
        writeable=False,
    )
    cols = windows.reshape(n * ho * wo, kh * kw * c)
    wmat = np.ascontiguousarray(weight.data.transpose(0, 2, 3, 1)).reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gw = None
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            w4 = wmat.reshape(o, kh, kw, c)
            gxp = np.zeros(xp.shape)
            for i in range(kh):
                r0 = i * dilation
                for j in range(kw):
                    c0 = j * dilation
                    gxp[
                        :,
                        r0:r0 + stride * (ho - 1) + 1:stride,
                        c0:c0 + stride * (wo - 1) + 1:stride,
                    ] += (gm @ w4[:, i, j, :]).reshape(n, ho, wo, c)
            gx = (gxp[:, p:p + h, p:p + w] if p else gxp).transpose(0, 3, 1, 2)
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)

    return Tensor.from_op(out, parents, backward, "conv2d")


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def avg_pool(x: Tensor, window, stride=None) -> Tensor:
    """Non-overlapping average pooling (stride equal to window)."""
    kh, kw = _pair(window)
    if stride is not None and _pair(stride) != (kh, kw):
        raise ValueError("avg_pool only supports stride == window")
    n, c, h, w = x.shape
    if h % kh or w % kw:
        raise ValueError(f"avg_pool: extent {h}x{w} not divisible by window {kh}x{kw}")
    out = x.data.reshape(n, c, h // kh, kh, w // kw, kw).mean(axis=(3, 5))
    scale = 1.0 / (kh * kw)

    def backward(g):
        return (np.repeat(np.repeat(g * scale, kh, axis=2), kw, axis=3),)

    return Tensor.from_op(out, (x,), backward, "avg_pool")


def upsample(x: Tensor, factor) -> Tensor:
    """Nearest-neighbour upsampling by replication."""
    fh, fw = _pair(factor)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, fh, axis=2), fw, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, fh, w, fw).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), backward, "upsample")


# ---------------------------------------------------------------- dense / loss


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with x[N,D], weight[K,D]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"fully_connected: cannot apply {weight.shape} to {x.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"fully_connected: bias shape {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=0))

    return Tensor.from_op(out, parents, backward, "fully_connected")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ValueError("one label per row expected")
    logp = log_softmax(logits.data)
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        return (d * (g.item() / n),)

    return Tensor.from_op(np.array(loss), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------- checking


def numerical_gradient(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` with respect to ``t`` (in place)."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ``|a-b| / max(|a|, |b|)``; 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Largest relative error between analytic and numerical gradients."""
    for t in inputs:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numerical_gradient(f, t, eps)))
    return worst
