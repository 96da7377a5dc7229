"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything downstream (losses, guided samplers, network training) differentiates
through compositions of the ops defined here. The tape is per-computation: it is
built while ops execute on tensors that require gradients and freed by
``backward``. float64 throughout; speed is secondary to verifiability.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "ShapeMismatch",
    "NonFiniteValue",
    "backward",
    "check_gradient",
    "add", "sub", "mul", "div", "neg", "matmul",
    "tsum", "tmean", "relu", "tanh", "sigmoid", "square", "sqrt", "texp",
    "reshape", "permute_flat", "gather_flat",
    "pad2d", "crop2d", "conv2d", "conv2d_mc",
    "downsample_mean", "upsample_repeat",
    "norm_sq", "l2_norm", "dot",
]


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteValue(FloatingPointError):
    """An op produced NaN or Inf."""


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """n-dimensional float64 array, row-major, optionally on the gradient tape.

    Immutable after construction except for gradient accumulation. ``grad`` is
    populated on requires_grad leaves by ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    __array_priority__ = 1000  # numpy defers mixed expressions to Tensor operators

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("tensor constructed with non-finite entries")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    @classmethod
    def _wrap(cls, data: np.ndarray, parents: tuple["Tensor", ...], bwd, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue(f"op '{op}' produced non-finite output")
        out = cls.__new__(cls)
        data = np.ascontiguousarray(data, dtype=np.float64)
        data.setflags(write=False)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = bwd
        else:
            out._parents = ()
            out._backward = None
        out._op = op
        return out

    # -- introspection -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._item_err()

    def _item_err(self):
        raise ShapeMismatch(f"item() on non-scalar tensor of shape {self.shape}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- autodiff ------------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        # grad buffers are treated as read-only everywhere, so the first
        # contribution may alias the producing op's buffer
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        backward(self)


def _ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Populates ``grad`` on every requires_grad leaf reachable from ``loss`` and
    frees the tape. Intermediate gradients are discarded.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ShapeMismatch(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Iterative topological order; each tape node visited exactly once.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
        node._backward = None
        parents = node._parents
        node._parents = ()
        if parents:  # interior node: gradient no longer needed
            node.grad = None if node is not loss else node.grad
    # Restore leaf-only grads: interior nodes above already cleared; leaves keep theirs.


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, op_name: str, fwd, bwd_a, bwd_b) -> Tensor:
    ta, tb = _ensure_tensor(a), _ensure_tensor(b)
    try:
        np.broadcast_shapes(ta.shape, tb.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op_name}: shapes {ta.shape} and {tb.shape} do not broadcast") from exc
    with np.errstate(all="ignore"):  # finiteness is checked on the result
        out_data = fwd(ta.data, tb.data)

    def bwd(g: np.ndarray) -> None:
        if ta.requires_grad:
            ta._accumulate(_unbroadcast(bwd_a(g, ta.data, tb.data), ta.shape))
        if tb.requires_grad:
            tb._accumulate(_unbroadcast(bwd_b(g, ta.data, tb.data), tb.shape))

    return Tensor._wrap(out_data, (ta, tb), bwd, op_name)


def add(a, b) -> Tensor:
    return _binary(a, b, "add", np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, "sub", np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, "mul", np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(a, b, "div", np.divide, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def _unary(x, op_name: str, fwd, bwd_rule) -> Tensor:
    tx = _ensure_tensor(x)
    out_data = fwd(tx.data)

    def bwd(g: np.ndarray) -> None:
        if tx.requires_grad:
            tx._accumulate(bwd_rule(g, tx.data, out_data))

    return Tensor._wrap(out_data, (tx,), bwd, op_name)


def neg(x) -> Tensor:
    return _unary(x, "neg", np.negative, lambda g, x_, y: -g)


def relu(x) -> Tensor:
    return _unary(x, "relu", lambda d: np.maximum(d, 0.0), lambda g, x_, y: g * (x_ > 0.0))


def tanh(x) -> Tensor:
    return _unary(x, "tanh", np.tanh, lambda g, x_, y: g * (1.0 - y * y))


def sigmoid(x) -> Tensor:
    def fwd(d):
        out = np.empty_like(d)
        pos = d >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ez = np.exp(d[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out

    return _unary(x, "sigmoid", fwd, lambda g, x_, y: g * y * (1.0 - y))


def square(x) -> Tensor:
    return _unary(x, "square", np.square, lambda g, x_, y: g * 2.0 * x_)


def sqrt(x) -> Tensor:
    return _unary(x, "sqrt", np.sqrt, lambda g, x_, y: g * 0.5 / y)


def texp(x) -> Tensor:
    return _unary(x, "exp", np.exp, lambda g, x_, y: g * y)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    tx = _ensure_tensor(x)
    out_data = tx.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g: np.ndarray) -> None:
        if not tx.requires_grad:
            return
        if axis is None:
            tx._accumulate(np.broadcast_to(g, tx.shape).copy())
            return
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % tx.data.ndim for a in axes)
        gg = g
        if not keepdims:
            for a in sorted(axes):
                gg = np.expand_dims(gg, a)
        tx._accumulate(np.broadcast_to(gg, tx.shape).copy())

    return Tensor._wrap(np.asarray(out_data), (tx,), bwd, "sum")


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    tx = _ensure_tensor(x)
    if axis is None:
        n = tx.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for a in axes:
            n *= tx.shape[a % tx.data.ndim]
    return div(tsum(tx, axis=axis, keepdims=keepdims), float(n))


def reshape(x, shape) -> Tensor:
    tx = _ensure_tensor(x)
    out_data = tx.data.reshape(shape)

    def bwd(g: np.ndarray) -> None:
        if tx.requires_grad:
            tx._accumulate(g.reshape(tx.shape))

    return Tensor._wrap(out_data, (tx,), bwd, "reshape")


def matmul(a, b) -> Tensor:
    ta, tb = _ensure_tensor(a), _ensure_tensor(b)
    if ta.data.ndim not in (1, 2) or tb.data.ndim not in (1, 2):
        raise ShapeMismatch("matmul supports 1-D and 2-D operands only")
    if ta.shape[-1] != tb.shape[0]:
        raise ShapeMismatch(f"matmul: inner dims {ta.shape} @ {tb.shape}")
    out_data = ta.data @ tb.data

    def bwd(g: np.ndarray) -> None:
        A, B = ta.data, tb.data
        # Promote to 2-D so one rule covers all four vector/matrix cases.
        A2 = A[None, :] if A.ndim == 1 else A
        B2 = B[:, None] if B.ndim == 1 else B
        g2 = g.reshape(A2.shape[0], B2.shape[1])
        if ta.requires_grad:
            ta._accumulate((g2 @ B2.T).reshape(A.shape))
        if tb.requires_grad:
            tb._accumulate((A2.T @ g2).reshape(B.shape))

    return Tensor._wrap(out_data, (ta, tb), bwd, "matmul")


# -- gather / permutation ops -------------------------------------------------


def gather_flat(x, index: np.ndarray, out_shape, mask: np.ndarray | None = None) -> Tensor:
    """out.flat[j] = x.flat[index[j]] (0 where mask[j] is False).

    Backward is the exact scatter-add transpose, so permutations, pads and
    nearest-neighbour resampling all differentiate exactly.
    """
    tx = _ensure_tensor(x)
    flat = tx.data.reshape(-1)
    vals = flat[index]
    if mask is not None:
        vals = np.where(mask, vals, 0.0)
    out_data = vals.reshape(out_shape)

    def bwd(g: np.ndarray) -> None:
        if not tx.requires_grad:
            return
        gflat = g.reshape(-1)
        if mask is not None:
            gflat = np.where(mask, gflat, 0.0)
        acc = np.bincount(index, weights=gflat, minlength=tx.size)
        tx._accumulate(acc.reshape(tx.shape))

    return Tensor._wrap(out_data, (tx,), bwd, "gather")


def permute_flat(x, index: np.ndarray) -> Tensor:
    """Entry permutation of the flattened buffer; shape preserved."""
    tx = _ensure_tensor(x)
    if index.size != tx.size:
        raise ShapeMismatch(f"permutation of length {index.size} on tensor of size {tx.size}")
    return gather_flat(tx, index, tx.shape)


# -- padding, cropping, convolution --------------------------------------------

_PAD_MODES = ("zero", "reflect", "circular")
_pad_map_cache: dict[tuple, tuple[np.ndarray, np.ndarray | None, tuple[int, ...]]] = {}


def _pad_map(shape: tuple[int, ...], ph: int, pw: int, mode: str):
    """Index map from a spatially padded array back into the source."""
    key = (shape, ph, pw, mode)
    hit = _pad_map_cache.get(key)
    if hit is not None:
        return hit
    h, w = shape[-2], shape[-1]
    rows = np.arange(-ph, h + ph)
    cols = np.arange(-pw, w + pw)
    if mode == "circular":
        rr, cc = rows % h, cols % w
        mask = None
    elif mode == "reflect":
        if ph >= h or pw >= w:
            raise ShapeMismatch("reflect padding wider than the source grid")
        rr = np.abs(rows)
        rr = np.where(rr >= h, 2 * (h - 1) - rr, rr)
        cc = np.abs(cols)
        cc = np.where(cc >= w, 2 * (w - 1) - cc, cc)
        mask = None
    elif mode == "zero":
        rr, cc = rows.copy(), cols.copy()
        inside_r = (rows >= 0) & (rows < h)
        inside_c = (cols >= 0) & (cols < w)
        rr = np.where(inside_r, rr, 0)
        cc = np.where(inside_c, cc, 0)
        mask2d = inside_r[:, None] & inside_c[None, :]
        mask = mask2d
    else:
        raise ValueError(f"unknown padding mode '{mode}'")

    lead = shape[:-2]
    nlead = int(np.prod(lead)) if lead else 1
    base = np.arange(nlead).reshape(lead + (1, 1)) * (h * w) if lead else 0
    idx2d = rr[:, None] * w + cc[None, :]
    index = (base + idx2d).reshape(-1) if lead else idx2d.reshape(-1)
    if mask is not None:
        full_mask = np.broadcast_to(mask, lead + mask.shape).reshape(-1) if lead else mask.reshape(-1)
    else:
        full_mask = None
    out_shape = lead + (h + 2 * ph, w + 2 * pw)
    res = (index, full_mask, out_shape)
    _pad_map_cache[key] = res
    return res


def pad2d(x, ph: int, pw: int, mode: str = "zero") -> Tensor:
    """Pad the last two axes by (ph, pw) on each side."""
    tx = _ensure_tensor(x)
    if tx.data.ndim < 2:
        raise ShapeMismatch("pad2d needs at least 2 dimensions")
    if mode not in _PAD_MODES:
        raise ValueError(f"padding mode must be one of {_PAD_MODES}")
    if mode == "zero":
        # fast path: plain pad forward, slice backward
        pads = [(0, 0)] * (tx.data.ndim - 2) + [(ph, ph), (pw, pw)]
        out_data = np.pad(tx.data, pads)

        def bwd(g: np.ndarray) -> None:
            if tx.requires_grad:
                h, w = tx.shape[-2], tx.shape[-1]
                tx._accumulate(g[..., ph : ph + h, pw : pw + w])

        return Tensor._wrap(out_data, (tx,), bwd, "pad2d")
    index, mask, out_shape = _pad_map(tx.shape, ph, pw, mode)
    return gather_flat(tx, index, out_shape, mask)


def crop2d(x, ph: int, pw: int) -> Tensor:
    """Remove a border of (ph, pw) from the last two axes."""
    tx = _ensure_tensor(x)
    h, w = tx.shape[-2], tx.shape[-1]
    if 2 * ph >= h or 2 * pw >= w:
        raise ShapeMismatch("crop larger than grid")
    lead = tx.shape[:-2]
    grid = np.arange(tx.size).reshape(tx.shape)
    sl = (Ellipsis, slice(ph, h - ph), slice(pw, w - pw))
    index = grid[sl].reshape(-1)
    out_shape = lead + (h - 2 * ph, w - 2 * pw)
    return gather_flat(tx, index, out_shape)


def _corr2d_valid(xp, kernel) -> Tensor:
    """Valid cross-correlation of the last two axes with one 2-D kernel."""
    txp, tk = _ensure_tensor(xp), _ensure_tensor(kernel)
    kh, kw = tk.shape
    win = sliding_window_view(txp.data, (kh, kw), axis=(-2, -1))
    out_data = np.einsum("...ijuv,uv->...ij", win, tk.data, optimize=True)

    def bwd(g: np.ndarray) -> None:
        if txp.requires_grad:
            gfull = np.pad(
                g, [(0, 0)] * (g.ndim - 2) + [(kh - 1, kh - 1), (kw - 1, kw - 1)]
            )
            wing = sliding_window_view(gfull, (kh, kw), axis=(-2, -1))
            txp._accumulate(
                np.einsum("...ijuv,uv->...ij", wing, tk.data[::-1, ::-1], optimize=True)
            )
        if tk.requires_grad:
            winx = sliding_window_view(txp.data, (kh, kw), axis=(-2, -1))
            tk._accumulate(np.einsum("...ijuv,...ij->uv", winx, g, optimize=True))

    return Tensor._wrap(out_data, (txp, tk), bwd, "corr2d")


def conv2d(x, kernel, padding: str = "zero") -> Tensor:
    """Same-size 2-D cross-correlation of an HxW or CxHxW input with one kxk kernel.

    Linear in both input and kernel; padding mode controls boundary handling.
    """
    tx, tk = _ensure_tensor(x), _ensure_tensor(kernel)
    if tk.data.ndim != 2 or tk.shape[0] != tk.shape[1]:
        raise ShapeMismatch(f"conv2d kernel must be square 2-D, got {tk.shape}")
    k = tk.shape[0]
    if k % 2 == 0:
        raise ShapeMismatch(f"conv2d kernel size must be odd, got {k}")
    if tx.data.ndim not in (2, 3):
        raise ShapeMismatch(f"conv2d input must be HxW or CxHxW, got {tx.shape}")
    p = k // 2
    xp = pad2d(tx, p, p, padding) if p > 0 else tx
    return _corr2d_valid(xp, tk)


def _im2col(arr: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(..., C, Hp, Wp) -> contiguous (..., C*kh*kw, H*W) patch matrix."""
    win = sliding_window_view(arr, (kh, kw), axis=(-2, -1))
    if arr.ndim == 3:
        c, h, w = win.shape[0], win.shape[1], win.shape[2]
        cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2))
        return cols.reshape(c * kh * kw, h * w)
    b, c, h, w = win.shape[0], win.shape[1], win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(b, c * kh * kw, h * w)


def conv2d_mc(x, kernels, padding: str = "zero") -> Tensor:
    """Multi-channel convolution: input (...,C,H,W), kernels (O,C,kh,kw).

    Fused equivalent of summing per-channel ``conv2d`` calls; runs as an
    im2col matrix product so the small networks stay fast.
    """
    tx, tk = _ensure_tensor(x), _ensure_tensor(kernels)
    if tk.data.ndim != 4:
        raise ShapeMismatch(f"conv2d_mc kernels must be (O,C,kh,kw), got {tk.shape}")
    kh, kw = tk.shape[2], tk.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch("conv2d_mc kernel dims must be odd")
    if tx.data.ndim not in (3, 4):
        raise ShapeMismatch(f"conv2d_mc input must be (C,H,W) or (B,C,H,W), got {tx.shape}")
    if tx.shape[-3] != tk.shape[1]:
        raise ShapeMismatch(f"channel mismatch: input {tx.shape} vs kernels {tk.shape}")
    xp = pad2d(tx, kh // 2, kw // 2, padding)
    batched = xp.data.ndim == 4
    n_out, c_in = tk.shape[0], tk.shape[1]
    h, w = tx.shape[-2], tx.shape[-1]

    cols = _im2col(xp.data, kh, kw)
    kr = tk.data.reshape(n_out, c_in * kh * kw)
    prod = np.matmul(kr, cols)
    out_shape = (xp.shape[0], n_out, h, w) if batched else (n_out, h, w)
    out_data = prod.reshape(out_shape)

    def bwd(g: np.ndarray) -> None:
        g3 = g.reshape(prod.shape)
        if tk.requires_grad:
            if batched:
                dk = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
            else:
                dk = g3 @ cols.T
            tk._accumulate(dk.reshape(tk.shape))
        if xp.requires_grad:
            # col2im: scatter the patch gradients back with 9 strided adds
            dcols = np.matmul(kr.T, g3)
            lead = (xp.shape[0],) if batched else ()
            dwin = dcols.reshape(lead + (c_in, kh, kw, h, w))
            dxp = np.zeros(xp.shape)
            for u in range(kh):
                for v in range(kw):
                    dxp[..., u : u + h, v : v + w] += dwin[..., u, v, :, :]
            xp._accumulate(dxp)

    return Tensor._wrap(out_data, (xp, tk), bwd, "conv2d_mc")


def downsample_mean(x, factor: int) -> Tensor:
    """Area-average downsampling of the last two axes by an integer factor."""
    tx = _ensure_tensor(x)
    h, w = tx.shape[-2], tx.shape[-1]
    if h % factor or w % factor:
        raise ShapeMismatch(f"factor {factor} does not divide grid {h}x{w}")
    lead = tx.shape[:-2]
    mid = reshape(tx, lead + (h // factor, factor, w // factor, factor))
    return tmean(mid, axis=(-3, -1))


def upsample_repeat(x, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes; adjoint of block-sum."""
    tx = _ensure_tensor(x)
    h, w = tx.shape[-2], tx.shape[-1]
    lead = tx.shape[:-2]
    grid = np.arange(tx.size).reshape(tx.shape)
    idx = grid.repeat(factor, axis=-2).repeat(factor, axis=-1).reshape(-1)
    out_shape = lead + (h * factor, w * factor)
    return gather_flat(tx, idx, out_shape)


# -- composed conveniences -----------------------------------------------------


def norm_sq(x) -> Tensor:
    return tsum(square(x))


def l2_norm(x) -> Tensor:
    return sqrt(norm_sq(x))


def dot(a, b) -> Tensor:
    return tsum(mul(a, b))


def check_gradient(f, x, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor and must be evaluable repeatedly at
    perturbed inputs. Relative error per coordinate is
    |autodiff - fd| / (|fd| + 1e-12).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    x0 = _as_array(x).copy()
    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    if out.size != 1:
        raise ShapeMismatch("check_gradient needs a scalar-valued function")
    backward(out)
    auto = np.zeros(x0.size) if leaf.grad is None else leaf.grad.reshape(-1).copy()

    flat = x0.reshape(-1)
    fd = np.empty_like(flat)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = eps
        hi = f(Tensor((flat + bump).reshape(x0.shape))).item()
        lo = f(Tensor((flat - bump).reshape(x0.shape))).item()
        fd[i] = (hi - lo) / (2.0 * eps)
    rel = np.abs(auto - fd) / (np.abs(fd) + 1e-12)
    return float(rel.max()) if rel.size else 0.0
