"""Dense float64 tensors with reverse-mode automatic differentiation.

The tape is implicit: every non-leaf Tensor keeps references to its parents
and a backward closure. Backward rules are swappable, so a forward op can be
paired with a surrogate derivative instead of the true one (see
``register_custom_grad``). All compute is float64; 32-bit only appears at
checkpoint serialization.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "backward",
    "register_custom_grad",
    "apply_custom",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "sin",
    "cos",
    "absolute",
    "relu",
    "matmul",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "transpose",
    "conv2d",
    "im2col",
    "col2im",
    "batch_stats_normalize",
    "softmax_cross_entropy",
]

_grad_enabled = True


class no_grad:
    """Context manager that suppresses tape recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite output in op '{op}'")


class Tensor:
    """A dense float64 array with an optional gradient slot.

    ``grad`` accumulates additively during backward; call ``zero_grad``
    between steps. Leaf tensors are built directly; op results carry the
    parent references and backward rule that make the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self._backward_ran = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # operator sugar; the functions below do the work
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return power(self, c)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._op = op
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.array(g)  # own the buffer; upstream arrays may be shared
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over axes that numpy broadcasting introduced or stretched."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Fills ``grad`` on every requires_grad leaf. A second call on the same
    forward pass raises: the tape holds no state to replay.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._backward_ran:
        raise RuntimeError("backward already ran for this forward pass; rerun the forward first")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(loss, 0)]
    while stack:
        node, idx = stack.pop()
        if idx == 0:
            if id(node) in visited:
                continue
            visited.add(id(node))
        if idx < len(node._parents):
            stack.append((node, idx + 1))
            child = node._parents[idx]
            if id(child) not in visited:
                stack.append((child, 0))
        else:
            topo.append(node)

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    loss._backward_ran = True


# ---------------------------------------------------------------------------
# custom (surrogate) backward rules
# ---------------------------------------------------------------------------

_CUSTOM_OPS: dict[str, tuple] = {}


def register_custom_grad(forward_fn, surrogate_grad_fn, name: str | None = None) -> str:
    """Register a unary op whose backward uses a surrogate derivative.

    ``forward_fn(x: ndarray) -> ndarray`` runs in the forward pass;
    ``surrogate_grad_fn(x: ndarray) -> ndarray`` evaluates d(out)/d(x) on the
    saved forward input and replaces the true derivative during backward.
    Returns the operation id for ``apply_custom``.
    """
    op_id = name if name is not None else f"custom_{len(_CUSTOM_OPS)}"
    _CUSTOM_OPS[op_id] = (forward_fn, surrogate_grad_fn)
    return op_id


def apply_custom(op_id: str, x: Tensor, grad_tap=None) -> Tensor:
    """Apply a registered custom-gradient op to ``x``.

    ``grad_tap(upstream, downstream)``, when given, observes the gradients
    flowing through the node during backward (used for gradient-norm
    bookkeeping; must not mutate them).
    """
    if op_id not in _CUSTOM_OPS:
        raise KeyError(f"unknown custom op id {op_id!r}")
    forward_fn, surrogate_fn = _CUSTOM_OPS[op_id]
    x = _coerce(x)
    y = np.asarray(forward_fn(x.data), dtype=np.float64)

    def bw(g):
        gx = surrogate_fn(x.data) * g
        if grad_tap is not None:
            grad_tap(g, gx)
        _accum(x, gx)

    return _make(y, (x,), bw, op_id)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw, "neg")


def power(a, c: float) -> Tensor:
    """Elementwise a**c for a constant exponent."""
    a = _coerce(a)
    c = float(c)
    out = a.data ** c

    def bw(g):
        _accum(a, g * c * a.data ** (c - 1.0))

    return _make(out, (a,), bw, "power")


def exp(a) -> Tensor:
    a = _coerce(a)
    out = np.exp(a.data)

    def bw(g):
        _accum(a, g * out)

    return _make(out, (a,), bw, "exp")


def log(a) -> Tensor:
    a = _coerce(a)
    out = np.log(a.data)

    def bw(g):
        _accum(a, g / a.data)

    return _make(out, (a,), bw, "log")


def sin(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        _accum(a, g * np.cos(a.data))

    return _make(np.sin(a.data), (a,), bw, "sin")


def cos(a) -> Tensor:
    a = _coerce(a)

    def bw(g):
        _accum(a, -g * np.sin(a.data))

    return _make(np.cos(a.data), (a,), bw, "cos")


def absolute(a) -> Tensor:
    """|a|, with subgradient sign(a) (0 at 0)."""
    a = _coerce(a)

    def bw(g):
        _accum(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bw, "abs")


def relu(a) -> Tensor:
    a = _coerce(a)
    out = np.maximum(a.data, 0.0)

    def bw(g):
        _accum(a, g * (a.data > 0.0))

    return _make(out, (a,), bw, "relu")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.data.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g / count, a.data.shape).copy())

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "mean")


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw, "transpose")


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out, (a, b), bw, "matmul")


def _conv_out_size(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def im2col_array(x: np.ndarray, kh: int, kw: int, stride: int, pad: int,
                 pad_value: float = 0.0) -> np.ndarray:
    """Extract conv patches from (N,C,H,W) into rows of shape (N*OH*OW, C*kh*kw).

    This is the one patch-layout kernel; the float conv path and the
    bit-packed path both build on it so their reduction orders agree.
    """
    n, c, h, w = x.shape
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv geometry collapses: input {h}x{w}, kernel {kh}x{kw}, "
                         f"stride {stride}, pad {pad}")
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=pad_value)
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        i_max = i + stride * oh
        for j in range(kw):
            j_max = j + stride * ow
            cols[:, :, i, j, :, :] = x[:, :, i:i_max:stride, j:j_max:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)


def col2im_array(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add patch rows back to an (N,C,H,W) array; adjoint of im2col_array."""
    n, c, h, w = x_shape
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(w, kw, stride, pad)
    cols = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        i_max = i + stride * oh
        for j in range(kw):
            j_max = j + stride * ow
            img[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j, :, :]
    if pad > 0:
        return img[:, :, pad:pad + h, pad:pad + w]
    return img


def im2col(x, kh: int, kw: int, stride: int = 1, pad: int = 0) -> Tensor:
    x = _coerce(x)
    if x.data.ndim != 4:
        raise ValueError(f"im2col expects (N,C,H,W), got shape {x.data.shape}")
    x_shape = x.data.shape
    out = im2col_array(x.data, kh, kw, stride, pad)

    def bw(g):
        _accum(x, col2im_array(g, x_shape, kh, kw, stride, pad))

    return _make(out, (x,), bw, "im2col")


def col2im(cols, x_shape, kh: int, kw: int, stride: int = 1, pad: int = 0) -> Tensor:
    cols = _coerce(cols)
    x_shape = tuple(x_shape)

    def bw(g):
        _accum(cols, im2col_array(g, kh, kw, stride, pad))

    return _make(col2im_array(cols.data, x_shape, kh, kw, stride, pad), (cols,), bw, "col2im")


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) of (N,C,H,W) with (Cout,C,KH,KW).

    Implemented as im2col + matmul so the inner kernel is shared with the
    bit-packed path. Zero padding.
    """
    x, w = _coerce(x), _coerce(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.data.shape}, {w.data.shape}")
    n, c, h, wid = x.data.shape
    cout, cin, kh, kw = w.data.shape
    if c != cin:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {cin}")
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(wid, kw, stride, pad)
    cols = im2col(x, kh, kw, stride, pad)                      # (N*OH*OW, C*KH*KW)
    wmat = reshape(w, (cout, cin * kh * kw))
    out = matmul(cols, transpose(wmat, (1, 0)))                # (N*OH*OW, Cout)
    out = reshape(out, (n, oh, ow, cout))
    return transpose(out, (0, 3, 1, 2))


# ---------------------------------------------------------------------------
# batch normalization and loss
# ---------------------------------------------------------------------------

def batch_stats_normalize(x, gamma, beta, *, eps: float = 1e-5,
                          running: tuple[np.ndarray, np.ndarray] | None = None,
                          momentum: float = 0.1, training: bool = True) -> Tensor:
    """Normalize by batch statistics with a per-channel affine transform.

    For 4-D input the channel axis is 1 and statistics reduce over (0,2,3);
    for 2-D input they reduce over axis 0. ``running`` is an optional
    (mean, var) ndarray pair updated in place during training and used
    verbatim in eval mode.
    """
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    if x.data.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    elif x.data.ndim == 2:
        axes, bshape = (0,), (1, -1)
    else:
        raise ValueError(f"batch_stats_normalize expects 2-D or 4-D input, got {x.data.shape}")
    g = reshape(gamma, bshape)
    b = reshape(beta, bshape)
    if training:
        m = reduce_mean(x, axis=axes, keepdims=True)
        xc = sub(x, m)
        v = reduce_mean(mul(xc, xc), axis=axes, keepdims=True)
        if running is not None:
            rm, rv = running
            rm *= 1.0 - momentum
            rm += momentum * m.data.reshape(-1)
            rv *= 1.0 - momentum
            rv += momentum * v.data.reshape(-1)
        inv = power(add(v, eps), -0.5)
        return add(mul(mul(xc, inv), g), b)
    if running is None:
        raise ValueError("eval-mode batch_stats_normalize needs running statistics")
    rm, rv = running
    inv = 1.0 / np.sqrt(rv + eps)
    xc = sub(x, Tensor(rm.reshape(bshape)))
    return add(mul(mul(xc, Tensor(inv.reshape(bshape))), g), b)


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer class targets.

    Stable log-sum-exp forward; fused backward (softmax - onehot) / N.
    """
    logits = _coerce(logits)
    z = logits.data
    if z.ndim == 1:
        z2 = z[None, :]
    elif z.ndim == 2:
        z2 = z
    else:
        raise ValueError(f"softmax_cross_entropy expects 1-D or 2-D logits, got {z.shape}")
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n, k = z2.shape
    if t.shape != (n,):
        raise ValueError(f"target shape {t.shape} does not match batch size {n}")
    if t.min() < 0 or t.max() >= k:
        raise ValueError(f"target labels out of range [0, {k})")
    zmax = z2.max(axis=1, keepdims=True)
    ez = np.exp(z2 - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    p = ez / sez
    lse = zmax[:, 0] + np.log(sez[:, 0])
    loss = float(np.mean(lse - z2[np.arange(n), t]))

    def bw(g):
        gz = p.copy()
        gz[np.arange(n), t] -= 1.0
        gz *= float(g) / n
        _accum(logits, gz.reshape(z.shape))

    return _make(np.asarray(loss), (logits,), bw, "softmax_cross_entropy")
