"""Dense real-tensor primitives: permutation, mean-broadcast, stacking, batching.

All functions are pure and operate on float64 (or complex128) numpy arrays in
row-major layout.  Dimensions in the public API are 1-based, with the trailing
dimension conventionally reserved for features.
"""

from __future__ import annotations

import itertools

import numpy as np


class Permutation:
    """A bijection on {1..M}, stored as the 1-based image tuple.

    ``p(i)`` gives the image of index ``i``.  Applying ``p`` to a vector ``x``
    produces ``y`` with ``y[i] = x[p(i)]`` (gather semantics).
    """

    __slots__ = ("map",)

    def __init__(self, mapping):
        m = tuple(int(i) for i in mapping)
        if sorted(m) != list(range(1, len(m) + 1)):
            raise ValueError(f"not a bijection on 1..{len(m)}: {m}")
        self.map = m

    def __len__(self):
        return len(self.map)

    def __call__(self, i):
        return self.map[i - 1]

    def __eq__(self, other):
        return isinstance(other, Permutation) and self.map == other.map

    def __hash__(self):
        return hash(self.map)

    def __repr__(self):
        return f"Permutation{self.map}"

    def inverse(self):
        inv = [0] * len(self.map)
        for src, dst in enumerate(self.map, start=1):
            inv[dst - 1] = src
        return Permutation(inv)

    def indices(self):
        """0-based gather indices as an integer array."""
        return np.asarray(self.map, dtype=np.intp) - 1

    @staticmethod
    def identity(m):
        return Permutation(range(1, m + 1))

    @staticmethod
    def random(m, rng):
        return Permutation(np.asarray(rng.permutation(m)) + 1)


def _check_dim(x, dim):
    if not 1 <= dim <= x.ndim:
        raise ValueError(f"dim {dim} out of range for rank-{x.ndim} tensor")


def permute_dim(x, dim, p):
    """Permute 1-based dimension ``dim`` of ``x``: out[..,i,..] = x[..,p(i),..]."""
    x = np.asarray(x)
    _check_dim(x, dim)
    if len(p) != x.shape[dim - 1]:
        raise ValueError(
            f"permutation length {len(p)} != extent {x.shape[dim - 1]} of dim {dim}"
        )
    return np.take(x, p.indices(), axis=dim - 1)


def mean_broadcast(x, dims):
    """Average ``x`` over the 1-based dims in ``dims`` and repeat to full shape.

    ``mean_broadcast(x, ()) == x``.
    """
    x = np.asarray(x)
    dims = sorted(set(int(d) for d in dims))
    if not dims:
        return x
    for d in dims:
        _check_dim(x, d)
    axes = tuple(d - 1 for d in dims)
    m = x.mean(axis=axes, keepdims=True)
    return np.ascontiguousarray(np.broadcast_to(m, x.shape))


def stack(tensors, dim=0):
    """Stack equal-shape tensors along a new axis inserted at position ``dim``."""
    tensors = [np.asarray(t) for t in tensors]
    if not tensors:
        raise ValueError("cannot stack an empty list")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch in stack: {t.shape} vs {shape}")
    return np.stack(tensors, axis=dim)


def concat_feature(tensors):
    """Concatenate along the trailing feature dimension."""
    tensors = [np.asarray(t) for t in tensors]
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ValueError(
                f"leading-shape mismatch in concat_feature: {t.shape} vs {lead + ('*',)}"
            )
    return np.concatenate(tensors, axis=-1)


def batch_apply(f, x, batch_dims):
    """Apply ``f`` independently to every slice of ``x`` over ``batch_dims``.

    ``batch_dims`` is a set of 1-based dimensions.  ``f`` receives slices with
    the batch dims removed; results are reassembled in index order so the
    output is identical to a sequential loop.
    """
    x = np.asarray(x)
    batch_dims = sorted(set(int(d) for d in batch_dims))
    for d in batch_dims:
        _check_dim(x, d)
    if not batch_dims:
        return f(x)
    axes = [d - 1 for d in batch_dims]
    moved = np.moveaxis(x, axes, range(len(axes)))
    bshape = moved.shape[: len(axes)]
    flat = moved.reshape((-1,) + moved.shape[len(axes):])
    outs = [np.asarray(f(flat[i])) for i in range(flat.shape[0])]
    out = np.stack(outs, axis=0).reshape(bshape + outs[0].shape)
    return np.moveaxis(out, range(len(axes)), axes)


def powerset(n):
    """All subsets of {1..n} ordered by cardinality then lexicographically."""
    subs = []
    for r in range(n + 1):
        subs.extend(frozenset(c) for c in itertools.combinations(range(1, n + 1), r))
    return subs
