"""Reverse-mode automatic differentiation on float64 numpy arrays.

A small tape: every operation returns a :class:`Var` holding the forward
value and a closure computing vector-Jacobian products for its parents.
All arithmetic is float64; no implicit down-casting anywhere. The op set
is exactly what the conv/GLU/batch-norm networks and the scalar losses
need, nothing more.
"""

from __future__ import annotations

import numpy as np


_grad_enabled = True


class no_grad:
    """Context manager: primitives built inside record no graph.

    Forward values are identical; only the vjp bookkeeping is skipped.
    Used by the finite-difference harness, whose probe evaluations never
    call backward.
    """

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Var:
    """A node in the computation graph.

    ``value`` is a float64 ndarray (0-d for scalars), ``grad`` is filled
    by :meth:`backward` for every node reachable from the output.
    """

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        if _grad_enabled:
            self._parents = _parents
            self._vjp = _vjp
        else:
            self._parents = ()
            self._vjp = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every ancestor's .grad."""
        if self.value.ndim != 0:
            raise ValueError("backward() requires a scalar output")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise and reduction primitives ------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.shape),
        ),
    )


def neg(a) -> Var:
    a = as_var(a)
    return Var(-a.value, (a,), lambda g: (-g,))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)
    return Var(out, (a,), lambda g: (g * 0.5 / out,))


def power(a, p: float) -> Var:
    """a ** p for constant float p (a > 0 whenever p is non-integer)."""
    a = as_var(a)
    out = a.value ** p
    return Var(out, (a,), lambda g: (g * p * a.value ** (p - 1.0),))


def absolute(a) -> Var:
    # Subgradient at 0 taken as 0; callers that finite-difference across
    # the kink must detect sign flips themselves.
    a = as_var(a)
    return Var(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def sigmoid(a) -> Var:
    a = as_var(a)
    # exp overflow on very negative inputs saturates to the correct limit 0
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-a.value))
    return Var(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a, lo: float, hi: float) -> Var:
    """Clamp with zero gradient outside [lo, hi]."""
    a = as_var(a)
    out = np.clip(a.value, lo, hi)
    inside = ((a.value > lo) & (a.value < hi)).astype(np.float64)
    return Var(out, (a,), lambda g: (g * inside,))


def sum_(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gx = g
        if not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            ax = tuple(i % a.value.ndim for i in ax)
            shape = [1 if i in ax else n for i, n in enumerate(a.shape)]
            gx = g.reshape(shape)
        return (np.broadcast_to(gx, a.shape).copy(),)

    return Var(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    s = sum_(a, axis=axis, keepdims=keepdims)
    n = a.value.size // max(s.value.size, 1)
    return mul(s, 1.0 / float(n))


def glu(x, axis: int = 1):
    """Gated linear unit: first half of ``axis`` times sigmoid of second half."""
    x = as_var(x)
    c = x.shape[axis] // 2
    sl_a = [slice(None)] * x.value.ndim
    sl_b = [slice(None)] * x.value.ndim
    sl_a[axis] = slice(0, c)
    sl_b[axis] = slice(c, 2 * c)
    sl_a, sl_b = tuple(sl_a), tuple(sl_b)
    a = x.value[sl_a]
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x.value[sl_b]))
    out = a * s

    def vjp(g):
        buf = np.empty_like(x.value)
        buf[sl_a] = g * s
        buf[sl_b] = g * a * s * (1.0 - s)
        return (buf,)

    return Var(out, (x,), vjp)


def batchnorm_train(x, gamma, beta, eps: float):
    """Training-mode channel batch-norm over axes (0, 2, 3), fused.

    Returns (out, batch_mean, batch_var) with the statistics as plain
    per-channel arrays (population variance). The backward is the
    closed-form whitening gradient, covering the dependence of the batch
    statistics on x.
    """
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    axes = (0, 2, 3)
    c = x.shape[1]
    n = x.value.size // c
    m = x.value.mean(axis=axes, keepdims=True)
    xc = x.value - m
    v = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(v + eps)
    xhat = xc * inv
    gs = gamma.value.reshape(1, c, 1, 1)
    out = xhat * gs + beta.value.reshape(1, c, 1, 1)

    def vjp(g):
        gxhat = g * gs
        sum_g = gxhat.sum(axis=axes, keepdims=True)
        sum_gx = (gxhat * xhat).sum(axis=axes, keepdims=True)
        gx = (inv / n) * (n * gxhat - sum_g - xhat * sum_gx)
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        return (gx, ggamma, gbeta)

    return (
        Var(out, (x, gamma, beta), vjp),
        m.reshape(-1).copy(),
        v.reshape(-1).copy(),
    )


def softmax(a, axis: int) -> Var:
    a = as_var(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Var(out, (a,), vjp)


# -- shape manipulation -------------------------------------------------

def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Var:
    a = as_var(a)
    inv = np.argsort(axes)
    return Var(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(vars_, axis: int) -> Var:
    vars_ = [as_var(v) for v in vars_]
    sizes = [v.shape[axis] for v in vars_]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Var(np.concatenate([v.value for v in vars_], axis=axis), tuple(vars_), vjp)


def narrow(a, axis: int, start: int, length: int) -> Var:
    """Contiguous slice along one axis; backward scatters into zeros."""
    a = as_var(a)
    sl = [slice(None)] * a.value.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def vjp(g):
        buf = np.zeros(a.shape, dtype=np.float64)
        buf[sl] = g
        return (buf,)

    return Var(a.value[sl], (a,), vjp)


def take_rows(a, idx: np.ndarray) -> Var:
    """Select rows along axis 0; backward scatter-adds."""
    a = as_var(a)
    idx = np.asarray(idx)

    def vjp(g):
        buf = np.zeros(a.shape, dtype=np.float64)
        np.add.at(buf, idx, g)
        return (buf,)

    return Var(a.value[idx], (a,), vjp)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def vjp(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return Var(a.value @ b.value, (a, b), vjp)


# -- convolution --------------------------------------------------------

def _zero_pad(x: np.ndarray, pt: int, pb: int, pl: int, pr: int) -> np.ndarray:
    if pt == pb == pl == pr == 0:
        return x
    b, c, h, w = x.shape
    buf = np.zeros((b, c, h + pt + pb, w + pl + pr), dtype=np.float64)
    buf[:, :, pt:pt + h, pl:pl + w] = x
    return buf


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            oh: int, ow: int) -> np.ndarray:
    b, c, _, _ = xp.shape
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols


def _col2im(cols: np.ndarray, out_shape: tuple, sh: int, sw: int) -> np.ndarray:
    b, c, kh, kw, oh, ow = cols.shape
    buf = np.zeros(out_shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += cols[:, :, i, j]
    return buf


def conv2d(x, w, b, stride, pads) -> Var:
    """2-d convolution, NCHW layout, weight (out, in, kh, kw).

    ``pads`` is (top, bottom, left, right) zero padding; may be
    asymmetric (needed for even kernels with 'same' geometry).
    """
    x, w, b = as_var(x), as_var(w), as_var(b)
    sh, sw = stride
    pt, pb, pl, pr = pads
    xp = _zero_pad(x.value, pt, pb, pl, pr)
    nb, cin, hp, wp = xp.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ValueError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    cols2 = cols.reshape(nb, cin * kh * kw, oh * ow)
    y = np.matmul(w.value.reshape(cout, -1), cols2)
    y = y.reshape(nb, cout, oh, ow) + b.value.reshape(1, cout, 1, 1)

    def vjp(g):
        g2 = g.reshape(nb, cout, oh * ow)
        gb = g.sum(axis=(0, 2, 3))
        gw = np.einsum("bop,bkp->ok", g2, cols2).reshape(w.shape)
        gcols = np.matmul(w.value.reshape(cout, -1).T, g2)
        gxp = _col2im(gcols.reshape(nb, cin, kh, kw, oh, ow), xp.shape, sh, sw)
        gx = gxp[:, :, pt:pt + x.shape[2], pl:pl + x.shape[3]]
        return (gx, gw, gb)

    return Var(y, (x, w, b), vjp)


def conv2d_transpose(x, w, b, stride, pads, out_hw) -> Var:
    """Transposed 2-d convolution: the exact adjoint of :func:`conv2d`.

    Weight layout (in, out, kh, kw). ``pads``/``stride`` are those of the
    forward conv being transposed; ``out_hw`` the target (H, W) before
    that conv's padding.
    """
    x, w, b = as_var(x), as_var(w), as_var(b)
    sh, sw = stride
    pt, pb, pl, pr = pads
    oh_t, ow_t = out_hw
    nb, cin, h, wdt = x.shape
    cin_w, cout, kh, kw = w.shape
    if cin_w != cin:
        raise ValueError(f"conv2d_transpose channel mismatch: input {cin}, weight {cin_w}")
    hp, wp = oh_t + pt + pb, ow_t + pl + pr
    if (hp - kh) // sh + 1 != h or (wp - kw) // sw + 1 != wdt:
        raise ValueError("conv2d_transpose geometry inconsistent with target size")
    x2 = x.value.reshape(nb, cin, h * wdt)
    gcols = np.matmul(w.value.reshape(cin, -1).T, x2)
    yp = _col2im(gcols.reshape(nb, cout, kh, kw, h, wdt), (nb, cout, hp, wp), sh, sw)
    y = yp[:, :, pt:pt + oh_t, pl:pl + ow_t] + b.value.reshape(1, cout, 1, 1)

    def vjp(g):
        gp = _zero_pad(g, pt, pb, pl, pr)
        cols = _im2col(gp, kh, kw, sh, sw, h, wdt)
        cols2 = cols.reshape(nb, cout * kh * kw, h * wdt)
        gx = np.matmul(w.value.reshape(cin, -1), cols2).reshape(x.shape)
        gw = np.einsum("bip,bkp->ik", x2, cols2).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    return Var(y, (x, w, b), vjp)


def same_pads(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """'same' padding (ceil-mode output size); asymmetric for even kernels."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    lo = total // 2
    return lo, total - lo
