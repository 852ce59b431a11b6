"""Minimal reverse-mode differentiation over dense (bands, rows, cols) arrays.

Only the node kinds needed by the pansharpening network and its loss are
provided. Every op returns a new :class:`Node`; values are never mutated
after construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.ndimage import correlate1d

KINDS = (
    "input", "conv2d", "relu", "add", "sub", "mul", "div", "concat-bands",
    "pad-replicate", "crop", "box-sum", "sqrt", "clamp-min", "abs",
    "reduce-mean", "scale", "window-var", "window-cov",
)

class Node:
    __slots__ = ("kind", "value", "parents", "requires_grad", "is_param", "name", "_vjp")

    def __init__(self, kind, value, parents=(), vjp=None, requires_grad=False,
                 is_param=False, name=None):
        self.kind = kind
        self.value = value
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.is_param = is_param
        self.name = name
        # vjp(grad_out) -> tuple of grads, one per parent (None where not needed)
        self._vjp = vjp

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def dtype(self):
        return np.asarray(self.value).dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.kind}{label}, shape={self.shape})"

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

    def __rtruediv__(self, other):
        return div(other, self)


def constant(value, name=None) -> Node:
    return Node("input", np.asarray(value), name=name)


def parameter(value, name=None) -> Node:
    """Leaf that receives a gradient from :func:`backward` by default."""
    return Node("input", np.asarray(value), requires_grad=True, is_param=True, name=name)


def variable(value, name=None) -> Node:
    """Differentiable leaf that is not a registered parameter."""
    return Node("input", np.asarray(value), requires_grad=True, name=name)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Node("add", a.value + b.value, (a, b), vjp)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Node("sub", a.value - b.value, (a, b), vjp)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    va, vb = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g * vb, np.shape(va)) if a.requires_grad else None
        gb = _unbroadcast(g * va, np.shape(vb)) if b.requires_grad else None
        return ga, gb

    return Node("mul", va * vb, (a, b), vjp)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    va, vb = a.value, b.value
    out = va / vb

    def vjp(g):
        ga = _unbroadcast(g / vb, np.shape(va)) if a.requires_grad else None
        gb = _unbroadcast(-g * out / vb, np.shape(vb)) if b.requires_grad else None
        return ga, gb

    return Node("div", out, (a, b), vjp)


def scale(x, factor: float, dtype=None) -> Node:
    """Multiply by a fixed constant, optionally casting the result."""
    x = as_node(x)
    src = x.dtype
    out = x.value * factor
    if dtype is not None:
        out = out.astype(dtype)

    def vjp(g):
        return ((g * factor).astype(src, copy=False),)

    return Node("scale", out, (x,), vjp)


# ---------------------------------------------------------------- pointwise

def relu(x) -> Node:
    x = as_node(x)
    mask = x.value > 0

    def vjp(g):
        return (g * mask,)

    return Node("relu", np.where(mask, x.value, 0).astype(x.dtype), (x,), vjp)


def abs_(x) -> Node:
    x = as_node(x)
    sign = np.sign(x.value)  # sign(0) = 0

    def vjp(g):
        return (g * sign,)

    return Node("abs", np.abs(x.value), (x,), vjp)


def sqrt(x) -> Node:
    x = as_node(x)
    out = np.sqrt(x.value)

    def vjp(g):
        return (g * 0.5 / out,)

    return Node("sqrt", out, (x,), vjp)


def clamp_min(x, floor: float) -> Node:
    x = as_node(x)
    mask = x.value > floor

    def vjp(g):
        return (g * mask,)

    return Node("clamp-min", np.maximum(x.value, floor), (x,), vjp)


def reduce_mean(x) -> Node:
    x = as_node(x)
    shape, n = x.shape, np.size(x.value)

    def vjp(g):
        return (np.full(shape, g / n, dtype=x.dtype),)

    return Node("reduce-mean", np.asarray(x.value.mean()), (x,), vjp)


# ---------------------------------------------------------------- layout

def concat_bands(nodes: Sequence) -> Node:
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[0] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(nodes)))

    return Node("concat-bands", np.concatenate([n.value for n in nodes], axis=0), nodes, vjp)


def pad_replicate(x, top: int, bottom: int, left: int, right: int) -> Node:
    x = as_node(x)
    _, h, w = x.shape
    out = np.pad(x.value, ((0, 0), (top, bottom), (left, right)), mode="edge")

    def vjp(g):
        g = g.copy()
        # fold the replicated borders back onto the edge pixels
        if top:
            g[:, top] += g[:, :top].sum(axis=1)
        if bottom:
            g[:, top + h - 1] += g[:, top + h:].sum(axis=1)
        g = g[:, top:top + h]
        if left:
            g[:, :, left] += g[:, :, :left].sum(axis=2)
        if right:
            g[:, :, left + w - 1] += g[:, :, left + w:].sum(axis=2)
        return (np.ascontiguousarray(g[:, :, left:left + w]),)

    return Node("pad-replicate", out, (x,), vjp)


def crop(x, bands=slice(None), rows=slice(None), cols=slice(None)) -> Node:
    """Sub-array selection; each index is a slice, an int or an index array.

    Index arrays may repeat entries (gradients accumulate), which is how
    clamped, border-replicating sampling grids are expressed.
    """
    x = as_node(x)
    shape = x.shape
    parts = (bands, rows, cols)
    if all(isinstance(p, slice) for p in parts):
        idx = parts
    else:
        idx = np.ix_(*[np.arange(n)[p] if isinstance(p, slice)
                       else np.atleast_1d(np.asarray(p, dtype=np.intp))
                       for p, n in zip(parts, shape)])

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Node("crop", np.ascontiguousarray(x.value[idx]), (x,), vjp)


def box_sum(x, size: int) -> Node:
    """Valid-mode sum over size x size windows, built from 1-D running sums.

    Output spatial dims shrink by size - 1; pad first to keep them.
    """
    x = as_node(x)
    if size < 1:
        raise ValueError("box size must be >= 1")
    out = _running_sum(_running_sum(x.value, size, 1), size, 2)

    def vjp(g):
        return (_box_adjoint(g, size),)

    return Node("box-sum", out, (x,), vjp)


def _box_adjoint(g, size):
    gp = np.pad(g, ((0, 0), (size - 1, size - 1), (size - 1, size - 1)))
    return _running_sum(_running_sum(gp, size, 1), size, 2)


def window_moments(x, y, size: int) -> tuple[Node, Node, Node]:
    """Population variances of x and y and their covariance per valid window.

    Values are computed two-pass (window mean first, then summed products of
    deviations), so they stay accurate when a window's mean dwarfs its
    spread. ``x`` may have one band, shared by every band of ``y``.
    """
    x, y = as_node(x), as_node(y)
    if size < 1:
        raise ValueError("box size must be >= 1")
    if x.shape[1:] != y.shape[1:] or x.shape[0] not in (1, y.shape[0]):
        raise ValueError(f"incompatible shapes {x.shape} and {y.shape}")
    n = float(size * size)
    xv, yv = x.value, y.value
    _, h, w = yv.shape
    oh, ow = h - size + 1, w - size + 1
    mx = _running_sum(_running_sum(xv, size, 1), size, 2) / n
    my = _running_sum(_running_sum(yv, size, 1), size, 2) / n
    vx, vy = np.zeros_like(mx), np.zeros_like(my)
    cov = np.zeros_like(my)
    for i in range(size):
        for j in range(size):
            dx = xv[:, i:i + oh, j:j + ow] - mx
            dy = yv[:, i:i + oh, j:j + ow] - my
            vx += dx * dx
            vy += dy * dy
            cov += dx * dy
    vx /= n
    vy /= n
    cov /= n

    def deviation_grad(g, a, mean):
        # d/da of sum_s g_s * (1/n) sum_{i in W_s} a_i b_i - mean_a(s) mean_b(s), b given
        return (a * _box_adjoint(g, size) - _box_adjoint(g * mean, size)) / n

    def vjp_vx(g):
        return (2 * deviation_grad(g, xv, mx),)

    def vjp_vy(g):
        return (2 * deviation_grad(g, yv, my),)

    def vjp_cov(g):
        gx = _unbroadcast(deviation_grad(g, yv, my), x.shape)
        return gx, deviation_grad(g, xv, mx)

    return (Node("window-var", vx, (x,), vjp_vx), Node("window-var", vy, (y,), vjp_vy),
            Node("window-cov", cov, (x, y), vjp_cov))


def _running_sum(a, k, axis):
    c = np.cumsum(a, axis=axis, dtype=a.dtype)
    zero_shape = list(a.shape)
    zero_shape[axis] = 1
    c = np.concatenate([np.zeros(zero_shape, dtype=a.dtype), c], axis=axis)
    n = a.shape[axis]
    hi = np.take(c, np.arange(k, n + 1), axis=axis)
    lo = np.take(c, np.arange(0, n + 1 - k), axis=axis)
    return hi - lo


# ---------------------------------------------------------------- convolution

def conv2d(x, weight, bias=None, padding: str = "replicate", groups: int = 1) -> Node:
    """2-D cross-correlation of a (C, H, W) image with an (O, C/groups, kh, kw) kernel.

    ``groups`` is 1 (dense) or C (depthwise). Replicate padding keeps the
    spatial size; ``valid`` shrinks it by (kh - 1, kw - 1).
    """
    x, weight = as_node(x), as_node(weight)
    out_ch, in_per_group, kh, kw = weight.shape
    c = x.shape[0]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {kh}x{kw}")
    if groups not in (1, c):
        raise ValueError("groups must be 1 or equal to the input channel count")
    if in_per_group * groups != c or (groups > 1 and out_ch != c):
        raise ValueError(f"channel mismatch: input has {c} bands, kernel expects "
                         f"{in_per_group * groups}")
    if padding == "replicate":
        x = pad_replicate(x, kh // 2, kh // 2, kw // 2, kw // 2)
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")

    xv, wv = x.value, weight.value
    # one input and one output channel is also a depthwise filter
    depthwise = groups > 1 or (c == 1 and out_ch == 1)
    # the shift stack is reused by the weight gradient
    stack = None if depthwise else _shift_stack(xv, kw)
    out = _dw_valid(xv, wv) if depthwise else _conv_valid(xv, wv, stack)
    parents = [x, weight]
    if bias is not None:
        bias = as_node(bias)
        out += bias.value[:, None, None]
        parents.append(bias)

    def vjp(g):
        gx = gw = gb = None
        if x.requires_grad:
            gpad = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            flipped = wv[:, :, ::-1, ::-1]
            if depthwise:
                gx = _dw_valid(gpad, flipped)
            else:
                gx = _conv_valid(gpad, np.ascontiguousarray(flipped.transpose(1, 0, 2, 3)))
        if weight.requires_grad:
            gw = _dw_grad_w(xv, g, kh, kw) if depthwise else _conv_grad_w(xv, g, kh, kw, stack)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(1, 2))
        return (gx, gw, gb)[:len(parents)]

    return Node("conv2d", out, parents, vjp)


def _shift_stack(x, kw):
    """Pixel-major stack: row p, column block j holds input pixel p + j.

    With the input flattened over its padded width ``wp``, rows
    ``i*wp .. i*wp + n`` line up kernel row i with every output site, so a
    kernel row costs one (n, kw*C) x (kw*C, O) GEMM on a contiguous view.
    """
    c, hp, wp = x.shape
    length = hp * wp
    # rows past the end read zeros; each stack row is kw consecutive pixels
    ext = np.zeros((length + kw - 1, c), dtype=x.dtype)
    ext[:length].reshape(hp, wp, c)[...] = x.transpose(1, 2, 0)
    item = ext.itemsize
    view = as_strided(ext, (length, kw * c), (c * item, item), writeable=False)
    return np.ascontiguousarray(view)


def _merge_rows(c, o, kw):
    # few output channels: one GEMM over all kernel rows keeps BLAS busier
    return o <= 32 and kw * c >= 128


def _conv_valid(x, w, stack=None):
    c, hp, wp = x.shape
    o, _, kh, kw = w.shape
    h, wd = hp - kh + 1, wp - kw + 1
    n = h * wp
    if stack is None:
        stack = _shift_stack(x, kw)
    if _merge_rows(c, o, kw):
        taps = np.ascontiguousarray(w.transpose(3, 1, 2, 0)).reshape(kw * c, kh * o)
        rows = (stack @ taps).reshape(-1, kh, o)
        out = rows[:n, 0].copy()
        for i in range(1, kh):
            out += rows[i * wp:i * wp + n, i]
    else:
        taps = w.transpose(2, 3, 1, 0).reshape(kh, kw * c, o)
        out = np.zeros((n, o), dtype=np.result_type(x, w))
        for i in range(kh):
            out += stack[i * wp:i * wp + n] @ taps[i]
    return out.reshape(h, wp, o)[:, :wd].transpose(2, 0, 1)


def _conv_grad_w(x, g, kh, kw, stack=None):
    c, hp, wp = x.shape
    o, h, wd = g.shape
    n = h * wp
    if stack is None:
        stack = _shift_stack(x, kw)
    dtype = np.result_type(x, g)
    pixels = g.transpose(1, 2, 0)
    if _merge_rows(c, o, kw):
        # column block i holds the output gradient delayed by i padded rows
        delayed = np.zeros((stack.shape[0], kh, o), dtype=g.dtype)
        for i in range(kh):
            delayed[i * wp:i * wp + n, i].reshape(h, wp, o)[:, :wd] = pixels
        gw = (stack.T @ delayed.reshape(-1, kh * o)).reshape(kw, c, kh, o)
        return np.ascontiguousarray(gw.transpose(3, 1, 2, 0), dtype=dtype)
    gfull = np.zeros((h, wp, o), dtype=g.dtype)
    gfull[:, :wd] = pixels
    gfull = gfull.reshape(n, o)
    gw = np.empty((kh, kw * c, o), dtype=dtype)
    for i in range(kh):
        gw[i] = stack[i * wp:i * wp + n].T @ gfull
    return np.ascontiguousarray(gw.reshape(kh, kw, c, o).transpose(3, 2, 0, 1))


def _dw_valid(x, w):
    c, hp, wp = x.shape
    _, _, kh, kw = w.shape
    h, wd = hp - kh + 1, wp - kw + 1
    if kh == 1 or kw == 1:
        axis = 2 if kh == 1 else 1
        out = np.empty((c, h, wd), dtype=np.result_type(x, w))
        for b in range(c):
            full = correlate1d(x[b], w[b, 0].ravel(), axis=axis - 1, mode="constant")
            out[b] = full[kh // 2:kh // 2 + h, kw // 2:kw // 2 + wd]
        return out
    out = np.zeros((c, h, wd), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            out += w[:, 0, i, j, None, None] * x[:, i:i + h, j:j + wd]
    return out


def _dw_grad_w(x, g, kh, kw):
    c, h, wd = g.shape
    gw = np.empty((c, 1, kh, kw), dtype=np.result_type(x, g))
    for i in range(kh):
        for j in range(kw):
            gw[:, 0, i, j] = np.einsum("chw,chw->c", x[:, i:i + h, j:j + wd], g)
    return gw


# ---------------------------------------------------------------- backward

def _topo(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, wrt: Iterable[Node] | None = None) -> dict[Node, np.ndarray]:
    """Gradients of a scalar node.

    By default returns ``{param: dloss/dparam}`` for every parameter leaf in
    the graph; pass ``wrt`` to request other differentiable nodes instead.
    """
    if np.size(loss.value) != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo(loss)
    if wrt is None:
        targets = [n for n in order if n.kind == "input" and n.is_param]
    else:
        targets = list(wrt)
    keep = {id(n) for n in targets}

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return {n: grads.get(id(n), np.zeros_like(n.value)) for n in targets}


# ---------------------------------------------------------------- grad check

_MACHINE_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class GradCheckReport:
    op: str
    max_rel_error: float
    points: int


def grad_check(builder: Callable[[Node], Node], point, eps: float = 1e-5, *,
               op: str = "", samples: int = 20, seed: int = 0) -> GradCheckReport:
    """Compare the analytic gradient of ``builder`` against central differences.

    ``eps`` is a relative step: each probed coordinate moves by
    ``eps * max(|x|, 1)``. Coordinates are sampled at random (seeded).
    The error of one coordinate is |a - n| / max(|a|, |n|, floor). The
    floor is the larger of 1e-6 * max|analytic| and 1e5 times the round-off
    level eps_mach * |f| / h of the difference quotient: entries that
    finite differences cannot resolve are compared in absolute terms.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    point = np.array(point, dtype=np.float64)
    x = variable(point)
    loss = builder(x)
    analytic = backward(loss, wrt=[x])[x]

    floor = max(1e-6 * float(np.max(np.abs(analytic))), 1e-300)
    rng = np.random.default_rng(seed)
    flat = point.reshape(-1)
    coords = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
    worst = 0.0
    for k in coords:
        h = eps * max(abs(flat[k]), 1.0)
        plus, minus = flat.copy(), flat.copy()
        plus[k] += h
        minus[k] -= h
        f_plus = float(builder(constant(plus.reshape(point.shape))).value)
        f_minus = float(builder(constant(minus.reshape(point.shape))).value)
        numeric = (f_plus - f_minus) / (2 * h)
        a = float(analytic.reshape(-1)[k])
        resolution = 1e5 * _MACHINE_EPS * max(abs(f_plus), abs(f_minus)) / h
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor, resolution)
        if not np.isfinite(err):
            err = float("inf")
        worst = max(worst, err)
    return GradCheckReport(op, worst, len(coords))
