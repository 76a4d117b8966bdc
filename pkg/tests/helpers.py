"""Shared test utilities: finite-difference oracles and schoolbook references."""

import numpy as np

from temimo import autodiff as ad
from temimo.tensor_ops import Permutation, permute_dim


def fd_param(build_loss, node, idx, eps=1e-6, imag=False):
    """Central finite difference of a scalar loss w.r.t. one parameter entry."""
    orig = node.value.copy()
    delta = (1j if imag else 1.0) * eps
    vp = orig.copy()
    vp[idx] += delta
    node.value = vp
    fp = float(ad.value_of(build_loss()))
    vm = orig.copy()
    vm[idx] -= delta
    node.value = vm
    fm = float(ad.value_of(build_loss()))
    node.value = orig
    return (fp - fm) / (2 * eps)


def assert_fd_matches(build_loss, nodes, rng, per_node=2, eps=1e-6, rtol=1e-4, floor=1e-8):
    """Backprop build_loss() once and compare random entries against FD."""
    for n in nodes:
        n.zero_grad()
    loss = build_loss()
    ad.backward(loss)
    worst = 0.0
    for node in nodes:
        assert node.grad is not None, f"no gradient reached {node.op}"
        for _ in range(per_node):
            idx = tuple(rng.integers(0, s) for s in node.shape)
            if np.iscomplexobj(node.value):
                for imag in (False, True):
                    fd = fd_param(build_loss, node, idx, eps, imag)
                    got = node.grad[idx].imag if imag else node.grad[idx].real
                    rel = abs(got - fd) / max(abs(fd), floor)
                    worst = max(worst, rel)
                    assert rel < rtol, f"{node.op}[{idx}] imag={imag}: {got} vs FD {fd}"
            else:
                fd = fd_param(build_loss, node, idx, eps)
                rel = abs(node.grad[idx] - fd) / max(abs(fd), floor)
                worst = max(worst, rel)
                assert rel < rtol, f"{node.op}[{idx}]: {node.grad[idx]} vs FD {fd}"
    return worst


def school_cmatmul(a, b):
    """Complex matrix product from four real products (reference path)."""
    return (a.real @ b.real - a.imag @ b.imag) + 1j * (a.real @ b.imag + a.imag @ b.real)


def real_embedding(z):
    return np.block([[z.real, -z.imag], [z.imag, z.real]])


def school_cinv(z):
    """Complex inverse through the real 2n x 2n block embedding."""
    n = z.shape[0]
    mi = np.linalg.inv(real_embedding(z))
    return mi[:n, :n] + 1j * mi[n:, :n]


def school_logdet_hpd(z):
    """log det of an HPD matrix from the real embedding (det M = |det Z|^2)."""
    sign, ld = np.linalg.slogdet(real_embedding(z))
    assert sign > 0
    return 0.5 * ld


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def mde_dense_matrix(layer, extents):
    """Explicit shared-weight matrix of an equivariant layer (oracle path).

    Returns (full, bias_vec) with full of shape (M*D_O, M*D_I), flattened
    row-major with the feature index fastest, such that the layer equals
    ``full @ vec(x) + bias_vec``.
    """
    import itertools

    d_in, d_out = layer.d_in, layer.d_out
    n = len(extents)
    m_bar = int(np.prod(extents))
    full = np.zeros((m_bar * d_out, m_bar * d_in))
    for si, s in enumerate(layer.subsets):
        w = layer.weights[si].value
        scale = 1.0 / np.prod([extents[i - 1] for i in s]) if s else 1.0
        for pi, p in enumerate(itertools.product(*map(range, extents))):
            for qi, q in enumerate(itertools.product(*map(range, extents))):
                if all(p[i - 1] == q[i - 1] for i in range(1, n + 1) if i not in s):
                    for do in range(d_out):
                        for di in range(d_in):
                            full[pi * d_out + do, qi * d_in + di] += scale * w[di, do]
    return full, np.tile(layer.bias.value, m_bar)


def rand_perm(rng, m):
    return Permutation.random(m, rng)


def permute_pair(x, dim, p):
    """Apply the same permutation to dims (dim, dim+1)."""
    return permute_dim(permute_dim(x, dim, p), dim + 1, p)
