"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays (float32 for training, float64 for gradient
checks); the differentiation graph is built eagerly as ops run. Each op
returns a new Tensor holding a closure that knows how to push the output
gradient back into its parents, and `backward` replays those closures in
reverse topological order. Tensors are treated as immutable once created;
only `.grad` buffers and batch-norm running stats mutate.

Convolution uses the cross-correlation convention and is lowered to
im2col + GEMM; the transposed convolution forward is exactly the
input-gradient pass of the matching convolution.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DomainError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_grad_owned", "_prev", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, op: str = "leaf"):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._grad_owned = False
        self._prev: tuple = ()
        self._backward = None
        self.op = op

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op}, grad={'set' if self.grad is not None else 'none'})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None
        self._grad_owned = False

    # -- graph plumbing -----------------------------------------------------

    def _accumulate(self, g: np.ndarray):
        # copy-on-write: the first contribution is borrowed (closures never
        # mutate the arrays they hand over); a second contribution forces an
        # owned buffer so += cannot corrupt an aliased gradient elsewhere
        if self.grad is None:
            if g.dtype != self.data.dtype or g.shape != self.data.shape:
                g = np.broadcast_to(g, self.data.shape).astype(self.data.dtype)
            self.grad = g
            self._grad_owned = False
        elif not self._grad_owned:
            self.grad = self.grad + g
            self._grad_owned = True
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar loss; fills `.grad` on ancestors."""
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        self._grad_owned = True
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # Interior activations are not needed after their closure ran;
            # keep buffers only on leaves so big graphs do not pin memory.
            if node._prev and node is not self:
                node.grad = None
                node._grad_owned = False

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    @property
    def T(self):
        return transpose(self)

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)

    def detach(self):
        return stop_gradient(self)


def _toposort(root: Tensor):
    """Iterative DFS postorder over grad-requiring ancestors."""
    topo, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in visited:
                stack.append((p, False))
    return topo


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _finalize(out_data, parents, op, backward) -> Tensor:
    req = _grad_enabled and any(p.requires_grad for p in parents)
    t = Tensor.__new__(Tensor)
    t.data = out_data
    t.requires_grad = req
    t.grad = None
    t._grad_owned = False
    t.op = op
    if req:
        t._prev = tuple(p for p in parents if p.requires_grad)
        t._backward = backward
    else:
        t._prev = ()
        t._backward = None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ------------------------------------------------------------


def add(a, b):
    a = _wrap(a, None if isinstance(b, Tensor) else np.float32)
    b = _wrap(b, a.dtype)
    _check_broadcast(a, b, "add")
    out = a.data + b.data
    ra, rb = a.requires_grad, b.requires_grad

    def backward(g):
        if ra:
            a._accumulate(_unbroadcast(g, a.shape))
        if rb:
            b._accumulate(_unbroadcast(g, b.shape))

    return _finalize(out, (a, b), "add", backward)


def sub(a, b):
    a = _wrap(a, None if isinstance(b, Tensor) else np.float32)
    b = _wrap(b, a.dtype)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data
    ra, rb = a.requires_grad, b.requires_grad

    def backward(g):
        if ra:
            a._accumulate(_unbroadcast(g, a.shape))
        if rb:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _finalize(out, (a, b), "sub", backward)


def mul(a, b):
    a = _wrap(a, None if isinstance(b, Tensor) else np.float32)
    b = _wrap(b, a.dtype)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    ra, rb = a.requires_grad, b.requires_grad

    def backward(g):
        if ra:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if rb:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _finalize(out, (a, b), "mul", backward)


def neg(a):
    a = _wrap(a, np.float32)
    out = -a.data

    ra = a.requires_grad

    def backward(g):
        if ra:
            a._accumulate(-g)

    return _finalize(out, (a,), "neg", backward)


def exp(a):
    a = _wrap(a, np.float32)
    out = np.exp(a.data)

    ra = a.requires_grad

    def backward(g):
        if ra:
            a._accumulate(g * out)

    return _finalize(out, (a,), "exp", backward)


def log(a, lenient: bool = False):
    """Natural log. Strict mode raises on non-positive input; lenient mode
    propagates -inf (and nan for negatives) like IEEE."""
    a = _wrap(a, np.float32)
    if not lenient and np.any(a.data <= 0):
        raise DomainError("log of non-positive value in strict mode")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    ra = a.requires_grad

    def backward(g):
        if ra:
            with np.errstate(divide="ignore", invalid="ignore"):
                a._accumulate(g / a.data)

    return _finalize(out, (a,), "log", backward)


def clip(a, lo: float, hi: float):
    """Clamp values; gradient passes only through the unclamped region."""
    a = _wrap(a, np.float32)
    out = np.clip(a.data, lo, hi)

    ra = a.requires_grad

    def backward(g):
        if ra:
            mask = (a.data >= lo) & (a.data <= hi)
            a._accumulate(g * mask.astype(g.dtype))

    return _finalize(out, (a,), "clip", backward)


# -- activations ------------------------------------------------------------


def relu(a):
    a = _wrap(a, np.float32)
    out = np.maximum(a.data, 0)

    ra = a.requires_grad

    def backward(g):
        if ra:
            a._accumulate(g * (a.data > 0))

    return _finalize(out, (a,), "relu", backward)


def leaky_relu(a, alpha: float = 0.2):
    a = _wrap(a, np.float32)
    out = np.where(a.data > 0, a.data, a.data * a.dtype.type(alpha))

    ra = a.requires_grad

    def backward(g):
        if ra:
            factor = np.where(a.data > 0, g.dtype.type(1), g.dtype.type(alpha))
            a._accumulate(g * factor)

    return _finalize(out, (a,), "leaky_relu", backward)


def tanh(a):
    a = _wrap(a, np.float32)
    out = np.tanh(a.data)

    ra = a.requires_grad

    def backward(g):
        if ra:
            a._accumulate(g * (1 - out * out))

    return _finalize(out, (a,), "tanh", backward)


def sigmoid(a):
    a = _wrap(a, np.float32)
    out = 1.0 / (1.0 + np.exp(-a.data))
    out = out.astype(a.dtype, copy=False)

    ra = a.requires_grad

    def backward(g):
        if ra:
            a._accumulate(g * out * (1 - out))

    return _finalize(out, (a,), "sigmoid", backward)


_ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "none": lambda t: t,
}


def activation(name: str, a, **kw):
    if name not in _ACTIVATIONS:
        raise ContractError(f"unknown activation {name!r}")
    return _ACTIVATIONS[name](a, **kw)


# -- shape ops --------------------------------------------------------------


def reshape(a, shape):
    a = _wrap(a, np.float32)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None

    ra = a.requires_grad

    def backward(g):
        if ra:
            a._accumulate(g.reshape(a.shape))

    return _finalize(out, (a,), "reshape", backward)


def transpose(a, axes=None):
    a = _wrap(a, np.float32)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    ra = a.requires_grad

    def backward(g):
        if ra:
            a._accumulate(np.transpose(g, inv))

    return _finalize(out, (a,), "transpose", backward)


def getitem(a, idx):
    """Basic slicing with gradient scatter (no advanced indexing)."""
    a = _wrap(a, np.float32)
    out = a.data[idx]

    ra = a.requires_grad

    def backward(g):
        if ra:
            buf = np.zeros_like(a.data)
            buf[idx] = g
            a._accumulate(buf)

    return _finalize(out, (a,), "getitem", backward)


def stop_gradient(a) -> Tensor:
    """Value-identical tensor with no edge back into the graph."""
    a = _wrap(a, np.float32)
    t = Tensor.__new__(Tensor)
    t.data = a.data
    t.requires_grad = False
    t.grad = None
    t._grad_owned = False
    t._prev = ()
    t._backward = None
    t.op = "stop_gradient"
    return t


# -- reductions -------------------------------------------------------------


def _norm_axes(a: Tensor, axes):
    if axes is None or (isinstance(axes, (list, tuple)) and len(axes) == 0):
        return tuple(range(a.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    if any(ax >= a.ndim or ax < -a.ndim for ax in axes):
        raise ShapeError(f"invalid reduction axes {tuple(axes)} for shape {a.shape}")
    axes = tuple(ax % a.ndim for ax in axes)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate reduction axes {axes}")
    return axes


def reduce_sum(a, axes=None, keepdims: bool = False):
    a = _wrap(a, np.float32)
    ax = _norm_axes(a, axes)
    out = a.data.sum(axis=ax, keepdims=keepdims)

    ra = a.requires_grad

    def backward(g):
        if ra:
            gg = g if keepdims else np.expand_dims(g, ax)
            a._accumulate(np.broadcast_to(gg, a.shape))

    return _finalize(np.asarray(out), (a,), "sum", backward)


def reduce_mean(a, axes=None, keepdims: bool = False):
    a = _wrap(a, np.float32)
    ax = _norm_axes(a, axes)
    count = int(np.prod([a.shape[i] for i in ax])) if a.ndim else 1
    out = a.data.mean(axis=ax, keepdims=keepdims) if count else a.data.sum(axis=ax, keepdims=keepdims)

    ra = a.requires_grad

    def backward(g):
        if ra:
            gg = g if keepdims else np.expand_dims(g, ax)
            a._accumulate(np.broadcast_to(gg, a.shape) / count)

    return _finalize(np.asarray(out), (a,), "mean", backward)


def reduce(op: str, a, axes=None, keepdims: bool = False):
    if op == "sum":
        return reduce_sum(a, axes, keepdims)
    if op == "mean":
        return reduce_mean(a, axes, keepdims)
    raise ContractError(f"unknown reduction {op!r}")


# -- matmul -----------------------------------------------------------------


def matmul(a, b):
    a = _wrap(a, np.float32)
    b = _wrap(b, a.dtype)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    ra, rb = a.requires_grad, b.requires_grad

    def backward(g):
        if ra:
            a._accumulate(g @ b.data.T)
        if rb:
            b._accumulate(a.data.T @ g)

    return _finalize(out, (a, b), "matmul", backward)


# -- convolution ------------------------------------------------------------


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, :, p : p + h, p : p + w] = x
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    """[N,C,Hp,Wp] -> [N*ho*wo, C*kh*kw] patch matrix (row-major patches)."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, c, ho, wo, kh, kw), (sn, sc, sh * s, sw * s, sh, sw), writeable=False
    )
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def _col2im_t(cols_t: np.ndarray, n: int, c: int, hp: int, wp: int, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of _im2col from a transposed [C*kh*kw, N*ho*wo] patch matrix.

    Scatter positions i*s+a are decomposed into (parity a%s, block i+a//s)
    so every += lands on a contiguous slab; one interleave at the end
    restores the row-major padded image.
    """
    cols6 = cols_t.reshape(c, kh, kw, n, ho, wo)
    hq = max((hp + s - 1) // s, ho + (kh - 1) // s)
    wq = max((wp + s - 1) // s, wo + (kw - 1) // s)
    acc = np.zeros((n, c, s, hq, s, wq), dtype=cols_t.dtype)
    for a in range(kh):
        pa, qa = a % s, a // s
        for b in range(kw):
            pb, qb = b % s, b // s
            acc[:, :, pa, qa : qa + ho, pb, qb : qb + wo] += cols6[:, a, b].transpose(1, 0, 2, 3)
    full = acc.transpose(0, 1, 3, 2, 5, 4).reshape(n, c, hq * s, wq * s)
    return np.ascontiguousarray(full[:, :, :hp, :wp])


def conv2d(x, w, stride: int = 1, padding: int = 0):
    """Cross-correlation of [N,C,H,W] with kernel [F,C,kh,kw] -> [N,F,H',W']."""
    x = _wrap(x, np.float32)
    w = _wrap(w, x.dtype)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    f, ck, kh, kw = w.shape
    if ck != c:
        raise ShapeError(f"conv2d channel mismatch: input {c}, kernel {ck}")
    s, p = int(stride), int(padding)
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    if kh > h + 2 * p or kw > wd + 2 * p or ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output extent non-positive for input {x.shape}, kernel {w.shape}, stride {s}, pad {p}")

    xp = _pad_hw(x.data, p)
    cols = _im2col(xp, kh, kw, s, ho, wo)
    out = (cols @ w.data.reshape(f, -1).T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    rx, rw = x.requires_grad, w.requires_grad

    def backward(g):
        g_mat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        if rw:
            w._accumulate((g_mat.T @ cols).reshape(w.shape))
        if rx:
            dcols_t = w.data.reshape(f, -1).T @ g_mat.T  # [C*kh*kw, N*ho*wo]
            dxp = _col2im_t(dcols_t, n, c, h + 2 * p, wd + 2 * p, kh, kw, s, ho, wo)
            x._accumulate(np.ascontiguousarray(dxp[:, :, p : p + h, p : p + wd]) if p else dxp)

    return _finalize(out, (x, w), "conv2d", backward)


def default_output_padding(stride: int, kernel: int) -> int:
    """Convention for stride-2 odd-kernel stacks so geometry halves/doubles exactly."""
    return 1 if (stride == 2 and kernel % 2 == 1) else 0


def deconv2d(x, k, stride: int = 1, padding: int = 0, output_padding=None):
    """Transposed convolution of [N,C,H,W] with kernel [C,F,kh,kw].

    Forward equals the input-gradient pass of conv2d with the same
    (kernel, stride, padding); H' = (H-1)*stride - 2*padding + kh + output_padding.
    """
    x = _wrap(x, np.float32)
    k = _wrap(k, x.dtype)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"deconv2d expects 4-D input/kernel, got {x.shape}, {k.shape}")
    n, c, h, wd = x.shape
    ck, f, kh, kw = k.shape
    if ck != c:
        raise ShapeError(f"deconv2d channel mismatch: input {c}, kernel {ck}")
    s, p = int(stride), int(padding)
    op = default_output_padding(s, kh) if output_padding is None else int(output_padding)
    if op < 0 or op >= s:
        raise ShapeError(f"output_padding {op} must satisfy 0 <= op < stride {s}")
    ho = (h - 1) * s - 2 * p + kh + op
    wo = (wd - 1) * s - 2 * p + kw + op
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"deconv2d output extent non-positive for input {x.shape}, kernel {k.shape}")

    x_mat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, c)
    cols_t = k.data.reshape(c, -1).T @ x_mat.T  # [F*kh*kw, N*H*W]
    buf = _col2im_t(cols_t, n, f, ho + 2 * p, wo + 2 * p, kh, kw, s, h, wd)
    out = np.ascontiguousarray(buf[:, :, p : p + ho, p : p + wo]) if p else buf

    rx, rk = x.requires_grad, k.requires_grad

    def backward(g):
        gp = _pad_hw(g, p)
        gcols = _im2col(gp, kh, kw, s, h, wd)  # [N*H*W, F*kh*kw]
        if rx:
            dx = (gcols @ k.data.reshape(c, -1).T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
            x._accumulate(np.ascontiguousarray(dx))
        if rk:
            k._accumulate((x_mat.T @ gcols).reshape(k.shape))

    return _finalize(out, (x, k), "deconv2d", backward)


# -- batch normalization ------------------------------------------------------


class BnState:
    """Per-channel running statistics for batch norm.

    `eval_before_init` counts eval-mode uses before any train-mode update,
    which fall back to the initialized stats (mean 0, var 1).
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.initialized = False
        self.eval_before_init = 0

    def snapshot(self):
        return (self.mean.copy(), self.var.copy(), self.initialized, self.eval_before_init)

    def restore(self, snap):
        self.mean, self.var, self.initialized, self.eval_before_init = snap[0].copy(), snap[1].copy(), snap[2], snap[3]


def batchnorm(x, gamma, beta, state: BnState, train: bool):
    """Normalize per channel (axis 1). Train mode uses population batch stats
    and updates `state` with momentum; eval mode uses the running stats."""
    x = _wrap(x, np.float32)
    gamma = _wrap(gamma, x.dtype)
    beta = _wrap(beta, x.dtype)
    if x.ndim not in (2, 4):
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")
    ch = x.shape[1]
    if gamma.shape != (ch,) or beta.shape != (ch,):
        raise ShapeError(f"gamma/beta must have shape ({ch},), got {gamma.shape}, {beta.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, ch) if x.ndim == 2 else (1, ch, 1, 1)
    eps = state.eps

    if train:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)  # population variance
        m = state.momentum
        state.mean = (m * state.mean + (1 - m) * mu).astype(state.mean.dtype)
        state.var = (m * state.var + (1 - m) * var).astype(state.var.dtype)
        state.initialized = True
    else:
        if not state.initialized:
            state.eval_before_init += 1
        mu, var = state.mean.astype(x.dtype), state.var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    rx, rgam, rbet = x.requires_grad, gamma.requires_grad, beta.requires_grad

    def backward(g):
        if rbet:
            beta._accumulate(g.sum(axis=axes))
        if rgam:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if rx:
            gs = g * gamma.data.reshape(shape)
            if train:
                # d/dx of (x - mu(x)) / sqrt(var(x) + eps), population stats
                mean_gs = gs.mean(axis=axes, keepdims=True)
                mean_gs_xhat = (gs * xhat).mean(axis=axes, keepdims=True)
                dx = inv_std.reshape(shape) * (gs - mean_gs - xhat * mean_gs_xhat)
            else:
                dx = gs * inv_std.reshape(shape)
            x._accumulate(dx.astype(x.dtype, copy=False))

    return _finalize(out.astype(x.dtype, copy=False), (x, gamma, beta), "batchnorm", backward)
