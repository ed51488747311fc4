"""Reverse-mode automatic differentiation over complex arrays.

Gradient convention
-------------------
For a real scalar loss ``L`` and a complex array ``w = a + j b`` the stored
gradient is

    w.grad = dL/da + j dL/db        (= 2 dL/dw*, the conjugate cogradient)

and for a real array it is the ordinary ``dL/dw``. With this convention
``dL = Re tr(grad^H dw)`` and ``w - lr * w.grad`` is a descent step; the
optimiser treats ``(Re, Im)`` as independent real coordinates.

Adjoint rules (``g`` is the output gradient, all in the convention above)
------------------------------------------------------------------------
add/sub        g_x = g, g_y = +/- g               (summed over broadcast axes)
mul  z = x y   g_x = g conj(y),  g_y = g conj(x)
div  z = x / y g_x = g / conj(y), g_y = -g conj(z / y)
matmul Z = XY  g_X = g Y^H,  g_Y = X^H g
conj           g_x = conj(g)
transpose      g_x = g^T;  herm (conjugate transpose): g_x = g^H
abs  y = |x|   g_x = g x / |x|   (0 where x = 0)
real, imag     g_x = g,  g_x = j g
complex(a, b)  g_a = Re g, g_b = Im g
tanh (real)    g_x = g (1 - y^2)
sqrt (real)    g_x = g / (2 y)
trace          g_X = g I
hsolve X = A^{-1} B, A Hermitian PD
               g_B = A^{-H} g = A^{-1} g (same Cholesky factor),  g_A = -g_B X^H
concat/getitem/reshape/sum/mean   the obvious scatter / broadcast.

When a real input meets a complex output the real part of the contribution
is kept, which is the derivative along the real line.
"""

import numpy as np

from .linalg import cholesky_solve


class NoAdjointError(NotImplementedError):
    def __init__(self, op):
        self.op = op
        super().__init__(f"no adjoint rule for primitive {op!r}")


class Tensor:
    """A value in a computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "op", "ctx", "name")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad=False, name=None):
        v = np.asarray(value)
        if v.dtype.kind not in "fc":
            v = v.astype(np.float64)
        self.value = v
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.op = "leaf"
        self.ctx = None
        self.name = name

    @classmethod
    def from_op(cls, op, value, parents, ctx=None):
        t = cls(value)
        if any(p.requires_grad for p in parents):
            t.requires_grad = True
            t.parents = tuple(parents)
            t.op = op
            t.ctx = ctx
        return t

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.value.dtype})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_complex(self):
        return self.value.dtype.kind == "c"

    @property
    def T(self):
        return transpose(self)

    @property
    def H(self):
        return herm(self)

    def conj(self):
        return conj(self)

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self):
        return backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape, real):
    if g.shape != shape:
        extra = g.ndim - len(shape)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    if real and np.iscomplexobj(g):
        g = g.real
    return g


def _swap(x):
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------------------
# primitives: forward builders
# ---------------------------------------------------------------------------

def add(x, y):
    x, y = as_tensor(x), as_tensor(y)
    return Tensor.from_op("add", x.value + y.value, (x, y))


def sub(x, y):
    x, y = as_tensor(x), as_tensor(y)
    return Tensor.from_op("sub", x.value - y.value, (x, y))


def neg(x):
    x = as_tensor(x)
    return Tensor.from_op("neg", -x.value, (x,))


def mul(x, y):
    x, y = as_tensor(x), as_tensor(y)
    return Tensor.from_op("mul", x.value * y.value, (x, y))


def div(x, y):
    x, y = as_tensor(x), as_tensor(y)
    return Tensor.from_op("div", x.value / y.value, (x, y))


def matmul(x, y):
    x, y = as_tensor(x), as_tensor(y)
    return Tensor.from_op("matmul", np.matmul(x.value, y.value), (x, y))


def conj(x):
    x = as_tensor(x)
    return Tensor.from_op("conj", np.conj(x.value), (x,))


def transpose(x):
    x = as_tensor(x)
    return Tensor.from_op("transpose", _swap(x.value), (x,))


def herm(x):
    x = as_tensor(x)
    return Tensor.from_op("herm", _swap(x.value).conj(), (x,))


def abs_(x):
    x = as_tensor(x)
    return Tensor.from_op("abs", np.abs(x.value), (x,))


def real(x):
    x = as_tensor(x)
    return Tensor.from_op("real", np.real(x.value).copy(), (x,))


def imag(x):
    x = as_tensor(x)
    return Tensor.from_op("imag", np.imag(x.value).copy(), (x,))


def complex_(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor.from_op("complex", a.value + 1j * b.value, (a, b))


def tanh(x):
    x = as_tensor(x)
    if x.is_complex:
        raise TypeError("tanh takes a real tensor; use ctanh for complex input")
    return Tensor.from_op("tanh", np.tanh(x.value), (x,))


def sqrt(x):
    x = as_tensor(x)
    if x.is_complex:
        raise TypeError("sqrt takes a real tensor")
    return Tensor.from_op("sqrt", np.sqrt(x.value), (x,))


def trace(x):
    x = as_tensor(x)
    return Tensor.from_op("trace", np.trace(x.value, axis1=-2, axis2=-1), (x,))


def hsolve(A, B):
    """``A^{-1} B`` for Hermitian positive definite ``A`` (batched)."""
    A, B = as_tensor(A), as_tensor(B)
    res = cholesky_solve(A.value, B.value, tol=None)
    return Tensor.from_op("hsolve", res.x, (A, B), ctx=res)


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    vals = [x.value for x in xs]
    out = np.concatenate(vals, axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])
    return Tensor.from_op("concat", out, tuple(xs), ctx=(ax, bounds))


def getitem(x, idx):
    x = as_tensor(x)
    return Tensor.from_op("getitem", x.value[idx], (x,), ctx=idx)


def reshape(x, shape):
    x = as_tensor(x)
    return Tensor.from_op("reshape", x.value.reshape(shape), (x,))


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    return Tensor.from_op("sum", x.value.sum(axis=axis, keepdims=keepdims), (x,),
                          ctx=(axis, keepdims))


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    return Tensor.from_op("mean", x.value.mean(axis=axis, keepdims=keepdims), (x,),
                          ctx=(axis, keepdims))


# composites ---------------------------------------------------------------

def ctanh(x):
    """``tanh(Re x) + j tanh(Im x)`` elementwise."""
    return complex_(tanh(real(x)), tanh(imag(x)))


def whiten2x2(vrr, vii, vri):
    """Inverse square root of per-feature 2x2 SPD matrices ``[[vrr, vri], [vri, vii]]``.

    Closed form: with ``s = sqrt(det)`` and ``t = sqrt(vrr + vii + 2 s)``,
    ``C^{-1/2} = [[vii + s, -vri], [-vri, vrr + s]] / (s t)``.
    Returns the three distinct entries ``(w_rr, w_ii, w_ri)``.
    """
    s = sqrt(vrr * vii - vri * vri)
    t = sqrt(vrr + vii + 2.0 * s)
    inv = 1.0 / (s * t)
    return (vii + s) * inv, (vrr + s) * inv, neg(vri) * inv


# ---------------------------------------------------------------------------
# adjoint rules
# ---------------------------------------------------------------------------

def _adj_add(t, g):
    x, y = t.parents
    return g, g


def _adj_sub(t, g):
    return g, -g


def _adj_neg(t, g):
    return (-g,)


def _adj_mul(t, g):
    x, y = t.parents
    return g * np.conj(y.value), g * np.conj(x.value)


def _adj_div(t, g):
    x, y = t.parents
    gx = g / np.conj(y.value)
    return gx, -gx * np.conj(t.value)


def _adj_matmul(t, g):
    x, y = t.parents
    return np.matmul(g, _swap(y.value).conj()), np.matmul(_swap(x.value).conj(), g)


def _adj_conj(t, g):
    return (np.conj(g),)


def _adj_transpose(t, g):
    return (_swap(g),)


def _adj_herm(t, g):
    return (_swap(g).conj(),)


def _adj_abs(t, g):
    x = t.parents[0].value
    mag = t.value
    safe = np.where(mag > 0, mag, 1.0)
    return (np.where(mag > 0, g * x / safe, 0.0),)


def _adj_real(t, g):
    return (g,)


def _adj_imag(t, g):
    return (1j * g,)


def _adj_complex(t, g):
    return np.real(g), np.imag(g)


def _adj_tanh(t, g):
    return (g * (1.0 - t.value ** 2),)


def _adj_sqrt(t, g):
    return (g / (2.0 * t.value),)


def _adj_trace(t, g):
    n = t.parents[0].shape[-1]
    eye = np.eye(n)
    return (np.asarray(g)[..., None, None] * eye,)


def _adj_hsolve(t, g):
    res = t.ctx
    A, B = t.parents
    gB = res.solve(np.broadcast_to(g, res.x.shape))
    gA = -np.matmul(gB, _swap(res.x).conj())
    return gA, gB


def _adj_concat(t, g):
    ax, bounds = t.ctx
    out = []
    for i in range(len(t.parents)):
        sl = [slice(None)] * g.ndim
        sl[ax] = slice(bounds[i], bounds[i + 1])
        out.append(g[tuple(sl)])
    return tuple(out)


def _adj_getitem(t, g):
    x = t.parents[0]
    gx = np.zeros(x.shape, dtype=np.result_type(g, x.value))
    np.add.at(gx, t.ctx, g)
    return (gx,)


def _adj_reshape(t, g):
    return (np.reshape(g, t.parents[0].shape),)


def _adj_sum(t, g):
    axis, keepdims = t.ctx
    shape = t.parents[0].shape
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, shape),)


def _adj_mean(t, g):
    axis, keepdims = t.ctx
    shape = t.parents[0].shape
    n = np.prod(shape) if axis is None else np.prod([shape[a] for a in np.atleast_1d(axis)])
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / n, shape),)


ADJOINTS = {
    "add": _adj_add, "sub": _adj_sub, "neg": _adj_neg, "mul": _adj_mul,
    "div": _adj_div, "matmul": _adj_matmul, "conj": _adj_conj,
    "transpose": _adj_transpose, "herm": _adj_herm, "abs": _adj_abs,
    "real": _adj_real, "imag": _adj_imag, "complex": _adj_complex,
    "tanh": _adj_tanh, "sqrt": _adj_sqrt, "trace": _adj_trace,
    "hsolve": _adj_hsolve, "concat": _adj_concat, "getitem": _adj_getitem,
    "reshape": _adj_reshape, "sum": _adj_sum, "mean": _adj_mean,
}


def _toposort(root):
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


def backward(loss):
    """Backpropagate from a real scalar ``loss``.

    Leaves with ``requires_grad`` receive ``.grad`` (accumulated if already
    set). Returns the list of leaves reached.
    """
    v = loss.value
    if v.size != 1:
        raise ValueError("backward needs a scalar loss")
    if np.iscomplexobj(v) and abs(v.imag).max() > 1e-12:
        raise ValueError(f"loss has imaginary part {complex(v.ravel()[0]).imag:.3e}")
    if not loss.requires_grad:
        return []
    grads = {id(loss): np.ones_like(np.real(v))}
    leaves = []
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op == "leaf":
            g = np.array(g, copy=True)
            node.grad = g if node.grad is None else node.grad + g
            leaves.append(node)
            continue
        rule = ADJOINTS.get(node.op)
        if rule is None:
            raise NoAdjointError(node.op)
        for p, gp in zip(node.parents, rule(node, g)):
            if not p.requires_grad:
                continue
            gp = _unbroadcast(np.asarray(gp), p.shape, not p.is_complex)
            key = id(p)
            grads[key] = gp if key not in grads else grads[key] + gp
    return leaves
