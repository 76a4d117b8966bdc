"""Equivariant networks for precoding and user scheduling.

Both networks share the same trunk: a feature lift, a stack of equivariant
linear layers with ReLU and layer normalization, and invariant pooling.  The
precoding head pairs the receive-antenna dimension through a 1-2-order
equivariant layer and decodes auxiliary tensors for the closed-form precoder;
the scheduling head pools everything but the user dimension down to one score
per candidate.  Parameter counts are independent of K, N_R and N_T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import layers, mimo, seeding


def build_input(h, noise):
    """Feature tensor [Re H, Im H, noise * 1] on a trailing length-3 axis."""
    h = np.asarray(h)
    noise_field = np.broadcast_to(
        np.asarray(noise, dtype=np.float64)[..., None, None, None], h.shape
    )
    return np.stack([h.real, h.imag, noise_field], axis=-1)


@dataclass
class PrecodingNetConfig:
    depth: int = 3
    hidden: int = 8
    pattern: str = "FULL"
    heads: int = 2
    hermitian_aux: bool = False

    def __post_init__(self):
        if self.depth < 1 or self.hidden < 1:
            raise ValueError(f"invalid network configuration: {self}")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")


class PrecodingNetwork:
    """CSI -> auxiliary tensors -> closed-form precoder."""

    IN_FEATURES = 3
    OUT_FEATURES = 4

    def __init__(self, cfg, seed=0, store=None):
        self.cfg = cfg
        self.store = store if store is not None else ad.ParamStore()
        rng = seeding.stream(seed, "init")
        d = cfg.hidden
        families = layers.pattern_subsets(cfg.pattern, 3, cfg.depth)
        self.ffc_in = layers.FeatureLinear(self.store, "ffc_in", self.IN_FEATURES, d, rng)
        self.mde = [
            layers.MDELayer(self.store, f"mde{l}", 3, d, d, rng, subsets=families[l])
            for l in range(cfg.depth)
        ]
        self.norms = [layers.LayerNorm(self.store, f"ln{l}", d) for l in range(cfg.depth)]
        self.pool_tx = layers.MDILayer(self.store, "pool_tx", 3, [3], d, cfg.heads, rng)
        self.pair_rx = layers.HOELayer(self.store, "pair_rx", 1, 2, d, d, rng)
        self.ffc_out = layers.FeatureLinear(self.store, "ffc_out", d, self.OUT_FEATURES, rng)

    @property
    def parameter_count(self):
        return self.store.total_size()

    def forward(self, x):
        """(..., K, N_R, N_T, 3) -> (..., K, N_R, N_R, 4)."""
        z = self.ffc_in(x)
        for mde, ln in zip(self.mde, self.norms):
            z = ln(ad.relu(mde(z)))
        z = self.pool_tx(z)
        z = self.pair_rx(z)
        return self.ffc_out(z)

    def aux_from_output(self, y):
        """Decode (A, U) from the four output feature channels."""
        a = ad.complex_from(ad.index_axis(y, -1, 0), ad.index_axis(y, -1, 1))
        u = ad.complex_from(ad.index_axis(y, -1, 2), ad.index_axis(y, -1, 3))
        if self.cfg.hermitian_aux:
            a = ad.mul(ad.add(a, ad.hermitian(a)), 0.5)
        return a, u

    def precode(self, h, noise, power=1.0):
        x = build_input(h, noise)
        a, u = self.aux_from_output(self.forward(x))
        return mimo.cfp(h, a, u, noise, power)

    def loss(self, h, noise, power=1.0):
        """Negative mean sum-rate over the batch (differentiable)."""
        w = self.precode(h, noise, power)
        _, total = mimo.sum_rate(h, w, noise)
        n = max(1, int(np.prod(ad.value_of(total).shape)))
        return ad.mul(ad.sum_axis(total), -1.0 / n)


@dataclass
class SchedulingNetConfig:
    k: int
    depth: int = 3
    hidden: int = 8
    pattern: str = "FULL"
    heads: int = 2

    def __post_init__(self):
        if self.depth < 1 or self.hidden < 1 or self.k < 1:
            raise ValueError(f"invalid network configuration: {self}")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")


class SchedulingNetwork:
    """Candidate CSI -> per-user scheduling scores."""

    IN_FEATURES = 3

    def __init__(self, cfg, seed=0, store=None):
        self.cfg = cfg
        self.store = store if store is not None else ad.ParamStore()
        rng = seeding.stream(seed, "init")
        d = cfg.hidden
        families = layers.pattern_subsets(cfg.pattern, 3, cfg.depth)
        self.ffc_in = layers.FeatureLinear(self.store, "ffc_in", self.IN_FEATURES, d, rng)
        self.mde = [
            layers.MDELayer(self.store, f"mde{l}", 3, d, d, rng, subsets=families[l])
            for l in range(cfg.depth)
        ]
        self.norms = [layers.LayerNorm(self.store, f"ln{l}", d) for l in range(cfg.depth)]
        self.pool = layers.MDILayer(self.store, "pool_rx_tx", 3, [2, 3], d, cfg.heads, rng)
        self.ffc_out = layers.FeatureLinear(self.store, "ffc_out", d, 1, rng)

    @property
    def parameter_count(self):
        return self.store.total_size()

    def forward(self, x):
        """(..., K_cand, N_R, N_T, 3) -> scores (..., K_cand)."""
        z = self.ffc_in(x)
        for mde, ln in zip(self.mde, self.norms):
            z = ln(ad.relu(mde(z)))
        z = self.pool(z)
        z = self.ffc_out(z)
        shape = ad.value_of(z).shape
        return ad.reshape(z, shape[:-1])

    def loss(self, h, noise, targets):
        """Binary cross-entropy of softmax scores against the labels."""
        scores = self.forward(build_input(h, noise))
        probs = ad.softmax(scores, axis=-1)
        return bce_loss(probs, targets)


def softmax_topk(scores, k):
    """Softmax probabilities and the top-K indicator (ties to lower index)."""
    scores = np.asarray(ad.value_of(scores), dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError(f"expected a score vector, got shape {scores.shape}")
    if k > scores.shape[0]:
        raise ValueError(f"cannot select {k} of {scores.shape[0]} users")
    e = np.exp(scores - scores.max())
    probs = e / e.sum()
    order = np.argsort(-probs, kind="stable")
    eta = np.zeros(scores.shape[0], dtype=np.int64)
    eta[order[:k]] = 1
    return eta, probs


def bce_loss(probs, targets):
    """Mean binary cross-entropy, clamped away from the log singularities."""
    targets = np.asarray(ad.value_of(targets), dtype=np.float64)
    pv = ad.value_of(probs)
    if pv.shape != targets.shape:
        raise ValueError(f"probability/label shape mismatch: {pv.shape} vs {targets.shape}")
    p = ad.clamp(probs, 1e-12, 1.0 - 1e-12)
    terms = ad.add(
        ad.mul(targets, ad.log(p)),
        ad.mul(1.0 - targets, ad.log(ad.sub(1.0, p))),
    )
    n = int(np.prod(targets.shape))
    return ad.mul(ad.sum_axis(terms), -1.0 / n)
