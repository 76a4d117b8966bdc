"""Analytic real-multiplication counts for the inference paths.

One complex multiplication is counted as three real multiplications;
additions are ignored.  Structural copies inside the equivariant pattern
tensors cost nothing; a mean costs one multiplication per produced element.
Rate evaluation used only for convergence monitoring is not part of an
algorithm's count.
"""

from __future__ import annotations

from . import layers

CMUL = 3


def _cmatmul(m, k, n):
    return m * k * n * CMUL


def _cinv(n):
    return n**3 * CMUL


def ffc_mults(positions, d_in, d_out):
    return positions * d_in * d_out


def layer_norm_mults(positions, dim):
    return 2 * positions * dim


def mde_mults(positions, d_in, d_out, n_subsets):
    """Weighted sum of subset means: one matrix product per retained subset."""
    means = (n_subsets - 1) * positions * d_in  # scale by 1/|P| per averaged element
    return n_subsets * positions * d_in * d_out + means


def pma_mults(m, batch, dim):
    """Attention pooling of an m-item axis at feature length ``dim``."""
    per = (
        m * dim * dim  # pre-FFC
        + 2 * m * dim * dim  # key/value projections
        + dim * dim  # query projection
        + m * dim  # scores
        + m  # score scaling
        + m * dim  # attention-weighted values
        + dim * dim  # head mixing
        + 2 * dim  # layer norm
        + dim * dim  # output FFC
    )
    return batch * per


def hoe_mults(m, batch, d_in, d_out, n_partitions, out_order=2):
    """High-order layer: one matrix product per retained partition."""
    means = n_partitions * m**out_order * d_in
    return batch * (n_partitions * m**out_order * d_in * d_out + means)


def cfp_mults(k, nr, nt):
    """Closed-form precoder on stacked (K*N_R, N_T) channels."""
    knr = k * nr
    total = 0
    total += k * nr * nr * nt * CMUL  # A H (block rows)
    total += _cmatmul(knr, nt, knr)  # (AH)(AH)^H
    total += k * knr * nr * nr * CMUL  # ... U (block columns)
    total += 2 * k * nr**3 * CMUL + CMUL  # trace multiplier
    total += _cinv(knr)
    total += k * nt * nr * nr * CMUL  # H^H A^H U
    total += _cmatmul(nt, knr, knr)  # solve against the inverse
    total += knr * nt * CMUL  # power trace
    total += knr * nt * CMUL  # rescale
    return total


def linear_precoder_mults(k, nr, nt):
    """ZF / regularized pseudo-inverse: Gram matrix, inverse, back-product."""
    knr = k * nr
    total = _cmatmul(knr, nt, knr) + _cinv(knr) + _cmatmul(nt, knr, knr)
    total += 2 * knr * nt * CMUL  # power trace and rescale
    return total


def wmmse_iteration_mults(k, nr, nt):
    """Receive-filter and weight updates plus one closed-form transmit solve."""
    total = k * k * nr * nr * nt * CMUL  # all H_k W_i^H products
    total += k * k * nr**3 * CMUL  # covariance accumulation
    total += k * (_cinv(nr) + 2 * _cmatmul(nr, nr, nr) + _cinv(nr))
    total += cfp_mults(k, nr, nt)
    return total


def _trunk_mults(positions, depth, hidden, pattern, in_features=3):
    families = layers.pattern_subsets(pattern, 3, depth)
    total = ffc_mults(positions, in_features, hidden)
    for fam in families:
        total += mde_mults(positions, hidden, hidden, len(fam))
        total += layer_norm_mults(positions, hidden)
    return total


def precoding_net_mults(k, nr, nt, depth, hidden, pattern="FULL"):
    """Forward pass of the precoding network including the closed-form head."""
    positions = k * nr * nt
    total = _trunk_mults(positions, depth, hidden, pattern)
    total += pma_mults(nt, k * nr, hidden)
    total += hoe_mults(nr, k, hidden, hidden, len(layers.hoe_partitions(1, 2)))
    total += ffc_mults(k * nr * nr, hidden, 4)
    total += cfp_mults(k, nr, nt)
    return total


def scheduling_net_mults(k_cand, nr, nt, depth, hidden, pattern="FULL"):
    """Forward pass of the scheduling network (scores only)."""
    positions = k_cand * nr * nt
    total = _trunk_mults(positions, depth, hidden, pattern)
    total += pma_mults(nr, k_cand * nt, hidden)
    total += pma_mults(nt, k_cand, hidden)
    total += ffc_mults(k_cand, hidden, 1)
    return total


def count_mults(method, k, nr, nt, k_cand=None, depth=3, hidden=8, pattern="FULL", iterations=300):
    """Real-multiplication count of one inference for the named method."""
    method = method.lower()
    if method == "zf" or method == "mmse":
        return linear_precoder_mults(k, nr, nt)
    if method == "wmmse":
        return linear_precoder_mults(k, nr, nt) + iterations * wmmse_iteration_mults(k, nr, nt)
    if method == "tecfp":
        return precoding_net_mults(k, nr, nt, depth, hidden, pattern)
    if method == "teus":
        if k_cand is None:
            raise ValueError("teus needs the candidate count k_cand")
        return scheduling_net_mults(k_cand, nr, nt, depth, hidden, pattern)
    raise ValueError(f"unknown method {method!r}")


def mde_pattern_ratio(pattern, n_dims, n_layers, schedule=None):
    """Weight-matrix count of a pattern relative to the full power set.

    The ratio applies to both parameters and multiplications of the
    equivariant modules, since each retained subset contributes one
    D_I x D_O matrix and one matrix product.
    """
    families = layers.pattern_subsets(pattern, n_dims, n_layers, schedule)
    full = n_layers * 2**n_dims
    return sum(len(f) for f in families) / full
