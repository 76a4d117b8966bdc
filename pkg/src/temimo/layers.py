"""Permutation-equivariant neural modules.

The layer zoo: the multidimensional equivariant linear layer built from
subset-wise mean broadcasting, high-order equivariant layers whose feature
family is indexed by set partitions, attention pooling with a learnable seed,
and the multidimensional invariant module that chains attention pooling over
several dimensions.  ReLU and layer normalization glue live in
:mod:`temimo.autodiff`.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import autodiff as ad
from . import tensor_ops


def glorot_uniform(rng, d_in, d_out, shape=None, scale=1.0):
    a = np.sqrt(6.0 / (d_in + d_out)) * scale
    return rng.uniform(-a, a, size=shape if shape is not None else (d_in, d_out))


class FeatureLinear:
    """Affine map applied to the trailing feature dimension."""

    def __init__(self, store, name, d_in, d_out, rng):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = store.parameter(f"{name}.w", glorot_uniform(rng, d_in, d_out))
        self.bias = store.parameter(f"{name}.b", np.zeros(d_out))

    def __call__(self, x):
        if ad.value_of(x).shape[-1] != self.d_in:
            raise ValueError(
                f"expected trailing extent {self.d_in}, got {ad.value_of(x).shape}"
            )
        return ad.add(ad.matmul(x, self.weight), self.bias)

    @property
    def param_count(self):
        return self.d_in * self.d_out + self.d_out


class LayerNorm:
    """Learnable normalization of the trailing feature dimension (eps=1e-5)."""

    def __init__(self, store, name, dim):
        self.gamma = store.parameter(f"{name}.gamma", np.ones(dim))
        self.beta = store.parameter(f"{name}.beta", np.zeros(dim))

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta)


# ---------------------------------------------------------------------------
# multidimensional equivariant layer
# ---------------------------------------------------------------------------


def canonical_subsets(subsets):
    """Normalize to frozensets ordered by cardinality then lexicographically."""
    subs = [frozenset(int(d) for d in s) for s in subsets]
    if len(set(subs)) != len(subs):
        raise ValueError("duplicate subsets")
    return sorted(subs, key=lambda s: (len(s), tuple(sorted(s))))


class MDELayer:
    """Equivariant linear layer: a weighted sum of subset means plus a bias.

    ``subsets`` selects which dimension combinations contribute a mean path;
    the empty set (the identity path) must always be present.
    """

    def __init__(self, store, name, n_dims, d_in, d_out, rng, subsets=None):
        self.n_dims = n_dims
        self.d_in = d_in
        self.d_out = d_out
        if subsets is None:
            subsets = tensor_ops.powerset(n_dims)
        self.subsets = canonical_subsets(subsets)
        if frozenset() not in self.subsets:
            raise ValueError("the empty subset (identity path) must be present")
        for s in self.subsets:
            if any(not 1 <= d <= n_dims for d in s):
                raise ValueError(f"subset {set(s)} outside dims 1..{n_dims}")
        scale = 1.0 / len(self.subsets)
        self.weights = [
            store.parameter(
                f"{name}.w{i}", glorot_uniform(rng, d_in, d_out, scale=scale)
            )
            for i in range(len(self.subsets))
        ]
        self.bias = store.parameter(f"{name}.b", np.zeros(d_out))

    @property
    def param_count(self):
        return len(self.subsets) * self.d_in * self.d_out + self.d_out

    def _offset(self, x):
        nd = ad.value_of(x).ndim
        off = nd - (self.n_dims + 1)
        if off not in (0, 1):
            raise ValueError(
                f"expected rank {self.n_dims + 1} (plus optional batch dim), got {nd}"
            )
        return off

    def __call__(self, x):
        v = ad.value_of(x)
        if v.shape[-1] != self.d_in:
            raise ValueError(f"expected trailing extent {self.d_in}, got {v.shape}")
        off = self._offset(x)
        out = None
        for s, w in zip(self.subsets, self.weights):
            dims = tuple(d + off for d in sorted(s))
            term = ad.matmul(ad.mean_broadcast(x, dims), w)
            out = term if out is None else ad.add(out, term)
        return ad.add(out, self.bias)


def pattern_subsets(pattern, n_dims, n_layers, schedule=None):
    """Per-layer subset families for the low-complexity sharing patterns.

    Returns a list of ``n_layers`` subset families.  A supplied schedule that
    loses global-feature coverage in any dimension is rejected.
    """
    pattern = str(pattern).upper()
    if n_layers < 1:
        raise ValueError("need at least one layer")
    if pattern in ("FULL", "P1"):
        if schedule is not None:
            raise ValueError(f"pattern {pattern} does not take a schedule")
        if pattern == "FULL":
            fam = tensor_ops.powerset(n_dims)
        else:
            fam = [frozenset()] + [frozenset({d}) for d in range(1, n_dims + 1)]
        return [list(fam) for _ in range(n_layers)]
    if pattern not in ("P2", "P3"):
        raise ValueError(f"unknown pattern {pattern!r}")

    if schedule is None:
        schedule = []
        if pattern == "P3":
            for l in range(n_layers):
                schedule.append([frozenset(), frozenset({l % n_dims + 1})])
        else:
            # sliding window of singletons, widened so few layers still cover
            width = max(2, -(-n_dims // n_layers))
            for l in range(n_layers):
                fam = [frozenset()]
                fam += [frozenset({(l * width + j) % n_dims + 1}) for j in range(width)]
                schedule.append(sorted(set(fam), key=lambda s: tuple(sorted(s))))
    if len(schedule) != n_layers:
        raise ValueError(f"schedule has {len(schedule)} entries, expected {n_layers}")

    families = [canonical_subsets(fam) for fam in schedule]
    covered = set()
    for fam in families:
        if frozenset() not in fam:
            raise ValueError("every layer family must contain the empty set")
        if any(len(s) > 1 for s in fam):
            raise ValueError(f"pattern {pattern} allows only singleton subsets")
        if pattern == "P3" and len(fam) != 2:
            raise ValueError("pattern P3 families contain exactly the empty set and one singleton")
        for s in fam:
            covered.update(s)
    missing = set(range(1, n_dims + 1)) - covered
    if missing:
        raise ValueError(
            f"schedule loses global features in dims {sorted(missing)}: "
            "the union over layers must cover every dimension"
        )
    return families


# ---------------------------------------------------------------------------
# set partitions and the high-order equivariant layer
# ---------------------------------------------------------------------------


def enumerate_partitions(n):
    """All set partitions of an n-element set, in restricted-growth order.

    Each partition is a tuple of blocks; each block is a tuple of 0-based
    element indices.
    """
    if not 1 <= n <= 6:
        raise ValueError(f"partition enumeration supports 1 <= n <= 6, got {n}")
    out = []

    def rec(rgs, maxblock):
        if len(rgs) == n:
            blocks = [[] for _ in range(maxblock + 1)]
            for elem, b in enumerate(rgs):
                blocks[b].append(elem)
            out.append(tuple(tuple(b) for b in blocks))
            return
        for b in range(maxblock + 2):
            rec(rgs + [b], max(maxblock, b))

    rec([0], 0)
    return out


def bell_number(n):
    return len(enumerate_partitions(n)) if n >= 1 else 1


def hoe_partitions(in_order, out_order):
    """Partitions of the labeled index set (o_1..o_q, i_1..i_p)."""
    q, p = out_order, in_order
    labels = [("o", j) for j in range(1, q + 1)] + [("i", j) for j in range(1, p + 1)]
    parts = []
    for partition in enumerate_partitions(p + q):
        parts.append(tuple(tuple(labels[e] for e in block) for block in partition))
    return parts


def hoe_pattern_matrix(partition, in_order, out_order, m):
    """The linear map carrying a flattened input to one partition's pattern.

    Output positions that no index assignment reaches stay zero; blocks made
    of input indices only are averaged.
    """
    p, q = in_order, out_order
    blocks = []
    n_free_inputs = 0
    for block in partition:
        opos = [j - 1 for kind, j in block if kind == "o"]
        ipos = [j - 1 for kind, j in block if kind == "i"]
        if not opos:
            n_free_inputs += 1
        blocks.append((opos, ipos))
    phi = np.zeros((m**q, m**p))
    for a, r in enumerate(itertools.product(range(m), repeat=q)):
        for b, c in enumerate(itertools.product(range(m), repeat=p)):
            ok = True
            for opos, ipos in blocks:
                if opos:
                    tied = {r[t] for t in opos} | {c[t] for t in ipos}
                    if len(tied) > 1:
                        ok = False
                        break
                else:
                    if len({c[t] for t in ipos}) > 1:
                        ok = False
                        break
            if ok:
                phi[a, b] = 1.0
    return phi * float(m) ** (-n_free_inputs)


def hoe_build_feature(x, partition, in_order, out_order):
    """Apply one partition pattern: (..., M^p dims, D) -> (..., M^q dims, D)."""
    v = ad.value_of(x)
    p, q = in_order, out_order
    if v.ndim < p + 1:
        raise ValueError(f"input rank {v.ndim} too small for order {p}")
    m = v.shape[-2]
    if any(v.shape[-1 - k] != m for k in range(1, p + 1)):
        raise ValueError(f"the {p} equivariant dims must share one extent, got {v.shape}")
    d = v.shape[-1]
    lead = v.shape[: v.ndim - p - 1]
    phi = hoe_pattern_matrix(partition, p, q, m)
    flat = ad.reshape(x, lead + (m**p, d))
    out = ad.matmul(phi, flat)
    return ad.reshape(out, lead + (m,) * q + (d,))


def _bias_patterns(q, m):
    """0/1 masks over the q output dims, one per partition of the output labels."""
    pats = []
    for partition in enumerate_partitions(q):
        mask = np.zeros((m,) * q)
        for idx in itertools.product(range(m), repeat=q):
            if all(len({idx[e] for e in block}) == 1 for block in partition):
                mask[idx] = 1.0
        pats.append(mask)
    return pats


class HOELayer:
    """High-order equivariant layer for p input / q output equivariant dims.

    One weight matrix per retained set partition of the combined index set,
    one bias vector per partition of the output index set.  Leading dims are
    treated as batch; the layer is size-agnostic in the shared extent M.
    """

    def __init__(self, store, name, in_order, out_order, d_in, d_out, rng, partitions=None):
        if not (1 <= in_order <= 2 and out_order == 2):
            raise ValueError("supported orders: 1-2 and 2-2")
        self.in_order = in_order
        self.out_order = out_order
        self.d_in = d_in
        self.d_out = d_out
        full = hoe_partitions(in_order, out_order)
        if partitions is None:
            partitions = full
        else:
            partitions = [tuple(tuple(b) for b in p) for p in partitions]
            unknown = [p for p in partitions if p not in full]
            if unknown:
                raise ValueError(f"invalid partitions: {unknown}")
        self.partitions = partitions
        scale = 1.0 / len(partitions)
        self.weights = [
            store.parameter(
                f"{name}.w{i}", glorot_uniform(rng, d_in, d_out, scale=scale)
            )
            for i in range(len(partitions))
        ]
        self.n_biases = bell_number(out_order)
        self.biases = [
            store.parameter(f"{name}.b{i}", np.zeros(d_out))
            for i in range(self.n_biases)
        ]
        self._cache = {}

    @property
    def param_count(self):
        return len(self.partitions) * self.d_in * self.d_out + self.n_biases * self.d_out

    def _tables(self, m):
        if m not in self._cache:
            mats = [
                hoe_pattern_matrix(p, self.in_order, self.out_order, m)
                for p in self.partitions
            ]
            self._cache[m] = (mats, _bias_patterns(self.out_order, m))
        return self._cache[m]

    def __call__(self, x):
        v = ad.value_of(x)
        p, q = self.in_order, self.out_order
        if v.shape[-1] != self.d_in:
            raise ValueError(f"expected trailing extent {self.d_in}, got {v.shape}")
        m = v.shape[-2]
        if any(v.shape[-1 - k] != m for k in range(1, p + 1)):
            raise ValueError(f"equivariant dims must share one extent, got {v.shape}")
        lead = v.shape[: v.ndim - p - 1]
        mats, bias_masks = self._tables(m)
        flat = ad.reshape(x, lead + (m**p, self.d_in))
        out = None
        for phi, w in zip(mats, self.weights):
            term = ad.matmul(ad.matmul(phi, flat), w)
            out = term if out is None else ad.add(out, term)
        out = ad.reshape(out, lead + (m,) * q + (self.d_out,))
        for mask, b in zip(bias_masks, self.biases):
            out = ad.add(out, ad.mul(mask[..., None], b))
        return out


# ---------------------------------------------------------------------------
# attention pooling and the multidimensional invariant module
# ---------------------------------------------------------------------------


class PMALayer:
    """Attention pooling with a single learnable seed query (J = 1).

    Pools a length-M axis down to 1 while staying invariant to permutations
    of that axis.  The feature length is preserved (the residual inside the
    attention block requires equal input/output feature lengths).
    """

    def __init__(self, store, name, dim, heads, rng):
        if dim % heads != 0:
            raise ValueError(f"feature length {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.seed = store.parameter(f"{name}.seed", glorot_uniform(rng, 1, dim, shape=(1, dim)))
        self.w_pre = store.parameter(f"{name}.pre.w", glorot_uniform(rng, dim, dim))
        self.b_pre = store.parameter(f"{name}.pre.b", np.zeros(dim))
        self.w_q = store.parameter(f"{name}.wq", glorot_uniform(rng, dim, dim))
        self.w_k = store.parameter(f"{name}.wk", glorot_uniform(rng, dim, dim))
        self.w_v = store.parameter(f"{name}.wv", glorot_uniform(rng, dim, dim))
        self.w_o = store.parameter(f"{name}.wo", glorot_uniform(rng, dim, dim))
        self.ln = LayerNorm(store, f"{name}.ln", dim)
        self.w_out = store.parameter(f"{name}.out.w", glorot_uniform(rng, dim, dim))
        self.b_out = store.parameter(f"{name}.out.b", np.zeros(dim))

    @property
    def param_count(self):
        d = self.dim
        return d + 6 * d * d + 4 * d

    def _split(self, z):
        # (..., M, D) -> (..., H, M, D/H)
        v = ad.value_of(z)
        lead = v.shape[:-2]
        m = v.shape[-2]
        z = ad.reshape(z, lead + (m, self.heads, self.dim // self.heads))
        return ad.moveaxis(z, -2, -3)

    def __call__(self, x, axis=-2):
        v = ad.value_of(x)
        if v.shape[-1] != self.dim:
            raise ValueError(f"expected trailing extent {self.dim}, got {v.shape}")
        ax = axis % v.ndim
        if ax == v.ndim - 1:
            raise ValueError("cannot pool the feature dimension")
        z = ad.moveaxis(x, ax, -2)
        y = ad.add(ad.matmul(z, self.w_pre), self.b_pre)

        q = self._split(ad.matmul(self.seed, self.w_q))
        k = self._split(ad.matmul(y, self.w_k))
        vv = self._split(ad.matmul(y, self.w_v))
        scores = ad.mul(
            ad.matmul(q, ad.hermitian(k)), 1.0 / np.sqrt(self.dim / self.heads)
        )
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.moveaxis(ad.matmul(attn, vv), -3, -2)
        lead = ad.value_of(ctx).shape[:-3]
        ctx = ad.reshape(ctx, lead + (1, self.dim))
        heads_out = ad.matmul(ctx, self.w_o)

        m1 = self.ln(ad.add(self.seed, heads_out))
        out = ad.add(m1, ad.relu(ad.add(ad.matmul(m1, self.w_out), self.b_out)))
        return ad.moveaxis(out, -2, ax)


class MDILayer:
    """Sequential attention pooling along each dimension in a set.

    One PMA per pooled dimension; pooled axes are kept at extent 1 while
    iterating and squeezed away at the end.
    """

    def __init__(self, store, name, n_dims, pool_dims, dim, heads, rng):
        self.n_dims = n_dims
        self.pool_dims = sorted(set(int(d) for d in pool_dims))
        if any(not 1 <= d <= n_dims for d in self.pool_dims):
            raise ValueError(f"pool dims {self.pool_dims} outside 1..{n_dims}")
        self.pmas = [
            PMALayer(store, f"{name}.pma{d}", dim, heads, rng) for d in self.pool_dims
        ]

    @property
    def param_count(self):
        return sum(p.param_count for p in self.pmas)

    def __call__(self, x):
        v = ad.value_of(x)
        off = v.ndim - (self.n_dims + 1)
        if off not in (0, 1):
            raise ValueError(
                f"expected rank {self.n_dims + 1} (plus optional batch dim), got {v.ndim}"
            )
        for d, pma in zip(self.pool_dims, self.pmas):
            x = pma(x, axis=d - 1 + off)
        shape = list(ad.value_of(x).shape)
        keep = [
            s
            for i, s in enumerate(shape)
            if (i - off + 1) not in self.pool_dims or i < off
        ]
        return ad.reshape(x, tuple(keep))
