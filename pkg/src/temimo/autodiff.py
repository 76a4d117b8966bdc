"""Reverse-mode automatic differentiation over numpy values.

A :class:`Node` wraps a float64 or complex128 array and remembers how it was
computed.  Calling :func:`backward` on a real scalar node fills the ``grad``
slot of every reachable leaf.  For a complex node the stored gradient follows
the convention ``G = dL/dRe + j*dL/dIm``, so adjoints of real-valued losses
agree with finite differences applied to the real and imaginary parts
independently.

Every op in this module accepts plain numpy arrays as well; when no argument
is a Node the op short-circuits to the raw numpy computation, so the same
formula code serves both differentiable and plain numeric paths.
"""

from __future__ import annotations

import numpy as np

COND_LIMIT = 1e14


class NumericalError(RuntimeError):
    """A matrix operation hit a numerically unusable input."""


class Node:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp", "op", "_done")

    def __init__(self, value, requires_grad=False, parents=(), vjp=None, op="leaf"):
        v = np.asarray(value)
        if np.iscomplexobj(v):
            v = v.astype(np.complex128, copy=False)
        else:
            v = v.astype(np.float64, copy=False)
        self.value = v
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents
        )
        self._parents = tuple(parents)
        self._vjp = vjp
        self.op = op
        self._done = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape}, grad={self.grad is not None})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def value_of(x):
    return x.value if isinstance(x, Node) else np.asarray(x)


def is_node(*xs):
    return any(isinstance(x, Node) for x in xs)


def _lift(x):
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accumulate(node, g):
    if g is None or not node.requires_grad:
        return
    g = _unbroadcast(np.asarray(g), node.shape)
    if not np.iscomplexobj(node.value) and np.iscomplexobj(g):
        g = g.real
    if node.grad is None:
        node.grad = g.astype(node.value.dtype if np.iscomplexobj(node.value) else np.float64, copy=True)
    else:
        node.grad = node.grad + g


def backward(loss):
    """Backpropagate from a real scalar ``loss`` node into all leaf grads.

    A second call on the same loss node raises; gradients accumulate across
    distinct losses until explicitly zeroed.
    """
    if not isinstance(loss, Node):
        raise TypeError("backward expects a Node")
    if loss.value.size != 1 or np.iscomplexobj(loss.value):
        raise ValueError(f"loss must be a real scalar, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.value)):
        raise NumericalError("non-finite loss value in primal pass")
    if loss._done:
        raise RuntimeError("backward already called on this loss; build a new graph")
    loss._done = True

    order = []
    seen = set()
    stack = [(loss, False)]
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

    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            _accumulate(node, g)
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = _unbroadcast(np.asarray(pg), p.shape)
            if not np.iscomplexobj(p.value) and np.iscomplexobj(pg):
                pg = pg.real
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


def _make(value, parents, vjp, op):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value produced by op '{op}'")
    return Node(value, parents=parents, vjp=vjp, op=op)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b):
    if not is_node(a, b):
        return np.asarray(a) + np.asarray(b)
    a, b = _lift(a), _lift(b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if not is_node(a, b):
        return np.asarray(a) - np.asarray(b)
    a, b = _lift(a), _lift(b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def neg(a):
    if not is_node(a):
        return -np.asarray(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    """Elementwise product; for complex factors the adjoint conjugates."""
    if not is_node(a, b):
        return np.asarray(a) * np.asarray(b)
    a, b = _lift(a), _lift(b)
    va, vb = a.value, b.value
    return _make(
        va * vb, (a, b), lambda g: (g * np.conj(vb), np.conj(va) * g), "mul"
    )


def div(a, b):
    """Elementwise quotient of real values."""
    if not is_node(a, b):
        return np.asarray(a) / np.asarray(b)
    a, b = _lift(a), _lift(b)
    va, vb = a.value, b.value
    out = va / vb
    return _make(out, (a, b), lambda g: (g / vb, -g * out / vb), "div")


def sqrt(a):
    if not is_node(a):
        return np.sqrt(np.asarray(a))
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


def exp(a):
    if not is_node(a):
        return np.exp(np.asarray(a))
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if not is_node(a):
        return np.log(np.asarray(a))
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def relu(a):
    if not is_node(a):
        return np.maximum(np.asarray(a), 0.0)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def clamp(a, lo, hi):
    if not is_node(a):
        return np.clip(np.asarray(a), lo, hi)
    mask = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def sum_axis(a, axis=None, keepdims=False):
    if not is_node(a):
        return np.asarray(a).sum(axis=axis, keepdims=keepdims)
    va = a.value

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, va.shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, va.shape),)

    return _make(va.sum(axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def mean_all(a):
    n = value_of(a).size
    return mul(sum_axis(a), 1.0 / n) if is_node(a) else value_of(a).mean()


def reshape(a, shape):
    if not is_node(a):
        return np.asarray(a).reshape(shape)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def moveaxis(a, src, dst):
    if not is_node(a):
        return np.moveaxis(np.asarray(a), src, dst)
    return _make(
        np.moveaxis(a.value, src, dst),
        (a,),
        lambda g: (np.moveaxis(g, dst, src),),
        "moveaxis",
    )


def index_axis(a, axis, i):
    """Integer indexing along ``axis`` (removes the axis)."""
    if not is_node(a):
        return np.take(np.asarray(a), i, axis=axis)
    va = a.value
    ax = axis % va.ndim

    def vjp(g):
        z = np.zeros_like(va)
        sl = (slice(None),) * ax + (i,)
        z[sl] = g
        return (z,)

    return _make(np.take(va, i, axis=ax), (a,), vjp, "index")


def concat(parts, axis):
    if not is_node(*parts):
        return np.concatenate([np.asarray(p) for p in parts], axis=axis)
    parts = [_lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(
        np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp, "concat"
    )


def stack(parts, axis=0):
    if not is_node(*parts):
        return np.stack([np.asarray(p) for p in parts], axis=axis)
    parts = [_lift(p) for p in parts]

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0)[i] for i in range(len(parts)))

    return _make(np.stack([p.value for p in parts], axis=axis), tuple(parts), vjp, "stack")


def mean_broadcast(a, dims):
    """Mean over 1-based ``dims`` repeated to full shape (self-adjoint)."""
    from . import tensor_ops

    if not is_node(a):
        return tensor_ops.mean_broadcast(np.asarray(a), dims)
    dims = tuple(sorted(set(int(d) for d in dims)))
    out = tensor_ops.mean_broadcast(a.value, dims)
    return _make(
        out, (a,), lambda g: (tensor_ops.mean_broadcast(g, dims),), "mean_broadcast"
    )


def permute_dim(a, dim, p):
    """Permute 1-based dimension ``dim`` by Permutation ``p``."""
    from . import tensor_ops

    if not is_node(a):
        return tensor_ops.permute_dim(np.asarray(a), dim, p)
    pinv = p.inverse()
    out = tensor_ops.permute_dim(a.value, dim, p)
    return _make(
        out, (a,), lambda g: (tensor_ops.permute_dim(g, dim, pinv),), "permute"
    )


def softmax(a, axis=-1):
    if not is_node(a):
        v = np.asarray(a)
        e = np.exp(v - v.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True)
    v = a.value
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (a,), vjp, "softmax")


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize the trailing feature dimension, then apply the affine pair."""
    if not is_node(a, gamma, beta):
        v = np.asarray(a)
        mu = v.mean(axis=-1, keepdims=True)
        xc = v - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        return np.asarray(gamma) * (xc * inv) + np.asarray(beta)
    a, gamma, beta = _lift(a), _lift(gamma), _lift(beta)
    v = a.value
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xh = xc * inv
    out = gamma.value * xh + beta.value

    def vjp(g):
        dxh = g * gamma.value
        m1 = dxh.mean(axis=-1, keepdims=True)
        m2 = (dxh * xh).mean(axis=-1, keepdims=True)
        dx = inv * (dxh - m1 - xh * m2)
        return dx, g * xh, g

    return _make(out, (a, gamma, beta), vjp, "layer_norm")


# ---------------------------------------------------------------------------
# matrix ops (real and complex, batched over leading dims)
# ---------------------------------------------------------------------------


def _ct(x):
    """Conjugate transpose of the trailing two axes (plain transpose if real)."""
    return np.conj(np.swapaxes(x, -1, -2))


def matmul(a, b):
    if not is_node(a, b):
        return np.asarray(a) @ np.asarray(b)
    a, b = _lift(a), _lift(b)
    va, vb = a.value, b.value

    def vjp(g):
        return g @ _ct(vb), _ct(va) @ g

    return _make(va @ vb, (a, b), vjp, "matmul")


def hermitian(a):
    """Conjugate transpose of the trailing two axes."""
    if not is_node(a):
        return _ct(np.asarray(a))
    return _make(_ct(a.value), (a,), lambda g: (_ct(g),), "hermitian")


def inv(a):
    """Matrix inverse over the trailing two axes.

    Rejects inputs whose condition number exceeds ``COND_LIMIT``.
    """
    v = value_of(a)
    if v.shape[-1] != v.shape[-2]:
        raise ValueError(f"inverse needs square matrices, got {v.shape}")
    cond = np.linalg.cond(v)
    if not np.all(np.isfinite(cond)) or np.max(cond) > COND_LIMIT:
        raise NumericalError(f"matrix is numerically singular (cond={np.max(cond):.3e})")
    out = np.linalg.inv(v)
    if not is_node(a):
        return out

    def vjp(g):
        ch = _ct(out)
        return (-(ch @ g @ ch),)

    return _make(out, (a,), vjp, "inv")


def _chol_logdet(v):
    sym = 0.5 * (v + _ct(v))
    try:
        chol = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"input to logdet_hpd is not positive definite: {e}")
    diag = np.diagonal(chol, axis1=-2, axis2=-1).real
    return sym, 2.0 * np.log(diag).sum(axis=-1)


def logdet_hpd(a):
    """log det of a Hermitian positive-definite matrix (real output).

    The input is symmetrized as (A + A^H)/2 before the Cholesky factorization
    to absorb roundoff.
    """
    if not is_node(a):
        return _chol_logdet(value_of(a))[1]
    sym, out = _chol_logdet(a.value)
    inv_sym = np.linalg.inv(sym)

    def vjp(g):
        return (np.asarray(g)[..., None, None] * inv_sym,)

    return _make(out, (a,), vjp, "logdet_hpd")


def trace(a):
    """Complex trace over the trailing two axes."""
    if not is_node(a):
        v = np.asarray(a)
        return np.trace(v, axis1=-2, axis2=-1)
    v = a.value
    n = v.shape[-1]
    eye = np.eye(n, dtype=v.dtype)

    def vjp(g):
        return (np.asarray(g)[..., None, None] * eye,)

    return _make(np.trace(v, axis1=-2, axis2=-1), (a,), vjp, "trace")


def trace_real(a):
    """Real part of the trace over the trailing two axes."""
    if not is_node(a):
        return np.trace(np.asarray(a), axis1=-2, axis2=-1).real
    v = a.value
    eye = np.eye(v.shape[-1])

    def vjp(g):
        return (np.asarray(g)[..., None, None] * eye,)

    return _make(np.trace(v, axis1=-2, axis2=-1).real, (a,), vjp, "trace_real")


def add_scaled_eye(a, s):
    """``a + s * I`` with ``s`` a scalar or a batch of scalars."""
    va = value_of(a)
    n = va.shape[-1]
    eye = np.eye(n, dtype=np.complex128 if np.iscomplexobj(va) else np.float64)
    if not is_node(a, s):
        return va + np.asarray(s)[..., None, None] * eye
    a, s = _lift(a), _lift(s)

    def vjp(g):
        return g, np.trace(np.asarray(g), axis1=-2, axis2=-1)

    return _make(a.value + s.value[..., None, None] * eye, (a, s), vjp, "add_eye")


def complex_from(re, im):
    """Assemble a complex node from real and imaginary parts."""
    if not is_node(re, im):
        return np.asarray(re) + 1j * np.asarray(im)
    re, im = _lift(re), _lift(im)
    return _make(
        re.value + 1j * im.value,
        (re, im),
        lambda g: (g.real, g.imag),
        "complex",
    )


def real_part(a):
    if not is_node(a):
        return np.asarray(a).real
    return _make(a.value.real, (a,), lambda g: (g.astype(np.complex128),), "real")


def imag_part(a):
    if not is_node(a):
        return np.asarray(a).imag
    return _make(a.value.imag, (a,), lambda g: (1j * g,), "imag")


def blkdiag(a):
    """Scatter (..., K, m, m) blocks into a (..., K*m, K*m) block-diagonal."""
    v = value_of(a)
    k, m = v.shape[-3], v.shape[-1]
    out_v = np.zeros(v.shape[:-3] + (k * m, k * m), dtype=v.dtype)
    for i in range(k):
        out_v[..., i * m : (i + 1) * m, i * m : (i + 1) * m] = v[..., i, :, :]
    if not is_node(a):
        return out_v

    def vjp(g):
        blocks = [
            g[..., i * m : (i + 1) * m, i * m : (i + 1) * m] for i in range(k)
        ]
        return (np.stack(blocks, axis=-3),)

    return _make(out_v, (a,), vjp, "blkdiag")


# ---------------------------------------------------------------------------
# parameters and the Adam optimizer
# ---------------------------------------------------------------------------


class ParamStore:
    """Named learnable arrays with gradient slots and Adam moments."""

    def __init__(self):
        self._params = {}
        self._m = {}
        self._v = {}
        self.step = 0

    def parameter(self, name, value):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        node = Node(np.array(value, dtype=np.float64), requires_grad=True, op=name)
        self._params[name] = node
        self._m[name] = np.zeros_like(node.value)
        self._v[name] = np.zeros_like(node.value)
        return node

    def names(self):
        return list(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def nodes(self):
        return list(self._params.values())

    def total_size(self):
        return int(sum(p.value.size for p in self._params.values()))

    def zero_grads(self):
        for p in self._params.values():
            p.grad = None

    def state_arrays(self):
        """All persistent state as named float64 arrays (for checkpoints)."""
        out = {}
        for name, p in self._params.items():
            out[f"param/{name}"] = p.value
            out[f"adam_m/{name}"] = self._m[name]
            out[f"adam_v/{name}"] = self._v[name]
        out["adam_step"] = np.array([float(self.step)])
        return out

    def load_state_arrays(self, arrays):
        for name, p in self._params.items():
            for prefix, target in (
                ("param", None),
                ("adam_m", self._m),
                ("adam_v", self._v),
            ):
                key = f"{prefix}/{name}"
                if key not in arrays:
                    raise ValueError(f"checkpoint is missing tensor '{key}'")
                arr = np.asarray(arrays[key], dtype=np.float64)
                if arr.shape != p.value.shape:
                    raise ValueError(
                        f"shape mismatch for '{key}': {arr.shape} vs {p.value.shape}"
                    )
                if target is None:
                    p.value = arr.copy()
                else:
                    target[name] = arr.copy()
        self.step = int(arrays["adam_step"][0])


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction; clears gradients afterwards."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in store.names():
        p = store[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        m = store._m[name] = beta1 * store._m[name] + (1.0 - beta1) * g
        v = store._v[name] = beta2 * store._v[name] + (1.0 - beta2) * (g * g)
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None
    return store
