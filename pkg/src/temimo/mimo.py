"""Communication-theory substrate: channels, rates, precoders, scheduling.

Channels are dense complex arrays of shape (K, N_R, N_T) (optionally with a
leading batch dimension); precoders W share that shape, with W_k paired
against H_k^H in the rate.  The closed-form precoder and the sum-rate are
written against :mod:`temimo.autodiff` ops, so they accept either plain
arrays or graph nodes and the training loss can differentiate through them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

LN2 = float(np.log(2.0))
_MASK64 = (1 << 64) - 1


@dataclass
class SystemConfig:
    """Static system shape: K served users out of k_cand candidates."""

    k: int
    n_r: int
    n_t: int
    k_cand: int | None = None
    power: float = 1.0

    def __post_init__(self):
        if min(self.k, self.n_r, self.n_t) < 1 or self.power <= 0:
            raise ValueError(f"invalid system configuration: {self}")
        if self.k_cand is not None and self.k_cand < self.k:
            raise ValueError(f"candidate count {self.k_cand} < served count {self.k}")

    def noise_power(self, snr_db):
        return self.power / 10.0 ** (snr_db / 10.0)


@dataclass
class ChannelSample:
    """One CSI realization with its noise level and power budget."""

    h: np.ndarray
    noise: float
    power: float = 1.0


@dataclass
class PrecodingSolution:
    w: np.ndarray
    rates: np.ndarray
    total: float
    iterations: int = 0


@dataclass
class AuxTensors:
    a: np.ndarray
    u: np.ndarray


def splitmix64(seed, index):
    """Stateless splitmix64 mix of (seed, index) into a 64-bit stream seed."""
    z = (int(seed) + (int(index) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def gen_channels(cfg, count, seed, normalize=True, candidates=False):
    """I.i.d. complex Gaussian channels, one independent stream per sample.

    Each sample is scaled so that sum_k Tr(H_k H_k^H) = K * N_R * N_T.
    Returns an array of shape (count, K, N_R, N_T).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    k = cfg.k_cand if candidates else cfg.k
    if k is None:
        raise ValueError("candidate generation requires k_cand")
    out = np.empty((count, k, cfg.n_r, cfg.n_t), dtype=np.complex128)
    target = k * cfg.n_r * cfg.n_t
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64(splitmix64(seed, i)))
        parts = rng.standard_normal((k, cfg.n_r, cfg.n_t, 2))
        h = (parts[..., 0] + 1j * parts[..., 1]) / np.sqrt(2.0)
        if normalize:
            h = h * np.sqrt(target / np.sum(np.abs(h) ** 2))
        out[i] = h
    return out


def channel_norm_gap(h):
    """Relative deviation of sum_k Tr(H_k H_k^H) from K * N_R * N_T."""
    h = np.asarray(h)
    target = h.shape[-3] * h.shape[-2] * h.shape[-1]
    total = np.sum(np.abs(h) ** 2, axis=(-3, -2, -1))
    return np.max(np.abs(total - target) / target)


def _lead(shape):
    return shape[:-3]


def sum_rate(h, w, noise):
    """Per-user rates and their total, in bits.

    ``h`` and ``w`` have shape (..., K, N_R, N_T); ``noise`` is a scalar or an
    array matching the leading dims.  Differentiable in ``w`` when given
    nodes.
    """
    hv, wv = ad.value_of(h), ad.value_of(w)
    if hv.shape != wv.shape:
        raise ValueError(f"channel/precoder shape mismatch: {hv.shape} vs {wv.shape}")
    lead = _lead(hv.shape)
    k, nr, nt = hv.shape[-3:]
    noise_arr = np.asarray(noise, dtype=np.float64)
    if np.any(noise_arr <= 0):
        raise ValueError("noise power must be positive")

    he = ad.reshape(h, lead + (k, 1, nr, nt))
    we = ad.reshape(w, lead + (1, k, nr, nt))
    cross = ad.matmul(he, ad.hermitian(we))            # (..., K, K, N_R, N_R)
    cov_all = ad.sum_axis(ad.matmul(cross, ad.hermitian(cross)), axis=-3)
    sig = ad.matmul(h, ad.hermitian(w))                # (..., K, N_R, N_R)
    interf = ad.sub(cov_all, ad.matmul(sig, ad.hermitian(sig)))
    noise_b = noise_arr[..., None] if noise_arr.ndim else noise_arr
    omega = ad.add_scaled_eye(interf, noise_b)
    gain = ad.matmul(ad.hermitian(sig), ad.matmul(ad.inv(omega), sig))
    rates = ad.mul(ad.logdet_hpd(ad.add_scaled_eye(gain, 1.0)), 1.0 / LN2)
    return rates, ad.sum_axis(rates, axis=-1)


def cfp(h, a, u, noise, power):
    """Closed-form precoder from CSI and the pair of auxiliary tensors.

    Builds the block-diagonal auxiliaries and the stacked channel, solves the
    regularized system with the trace-derived multiplier, and rescales so the
    power constraint is met with equality.  Differentiable in ``a`` and
    ``u``.
    """
    hv = ad.value_of(h)
    lead = _lead(hv.shape)
    k, nr, nt = hv.shape[-3:]
    for t in (a, u):
        tv = ad.value_of(t)
        if tv.shape != lead + (k, nr, nr):
            raise ValueError(f"auxiliary tensor shape {tv.shape} inconsistent with {hv.shape}")

    hs = ad.reshape(h, lead + (k * nr, nt))
    ab = ad.blkdiag(a)
    ub = ad.blkdiag(u)

    noise_arr = np.asarray(noise, dtype=np.float64)
    power_arr = np.asarray(power, dtype=np.float64)
    mu = ad.mul(
        ad.trace(ad.matmul(ub, ad.matmul(ab, ad.hermitian(ab)))),
        noise_arr / power_arr,
    )

    s1 = ad.matmul(ab, hs)                              # A H
    inner = ad.matmul(ad.matmul(s1, ad.hermitian(s1)), ub)
    m = ad.add_scaled_eye(inner, mu)
    w_tilde = ad.matmul(ad.matmul(ad.hermitian(s1), ub), ad.inv(m))

    tr = ad.trace_real(ad.matmul(ad.hermitian(w_tilde), w_tilde))
    if np.any(ad.value_of(tr) <= 0.0):
        raise ad.NumericalError("zero-power intermediate precoder: scaling undefined")
    gamma = ad.sqrt(ad.div(power_arr, tr))
    gv = ad.reshape(gamma, lead + (1, 1)) if lead or ad.value_of(gamma).ndim else gamma
    w = ad.mul(w_tilde, gv)

    blocks = ad.reshape(w, lead + (nt, k, nr))
    return ad.hermitian(ad.moveaxis(blocks, -2, -3))


def _stacked(h):
    hv = np.asarray(h)
    k, nr, nt = hv.shape[-3:]
    return hv.reshape(_lead(hv.shape) + (k * nr, nt)), k, nr, nt


def _per_user(t, k, nr, nt):
    """Columns of the (N_T, K*N_R) transmit matrix back to per-user blocks."""
    lead = t.shape[:-2]
    blocks = np.moveaxis(t.reshape(lead + (nt, k, nr)), -2, -3)
    return np.conj(np.swapaxes(blocks, -1, -2))


def _normalize_power(t, power):
    tr = np.sum(np.abs(t) ** 2, axis=(-2, -1), keepdims=True)
    return t * np.sqrt(power / tr)


def zf_precoder(h, noise, power):
    """Zero-forcing (pseudo-inverse) precoder, power-normalized."""
    hs, k, nr, nt = _stacked(h)
    if k * nr > nt:
        raise ValueError(f"zero-forcing needs K*N_R <= N_T, got {k * nr} > {nt}")
    g = hs @ np.conj(np.swapaxes(hs, -1, -2))
    cond = np.linalg.cond(g)
    if not np.all(np.isfinite(cond)) or np.max(cond) > ad.COND_LIMIT:
        raise ad.NumericalError(f"rank-deficient channel in zero-forcing (cond={np.max(cond):.3e})")
    t = np.conj(np.swapaxes(hs, -1, -2)) @ np.linalg.inv(g)
    w = _per_user(_normalize_power(t, power), k, nr, nt)
    rates, total = sum_rate(h, w, noise)
    return PrecodingSolution(w, rates, total)


def mmse_precoder(h, noise, power):
    """Regularized pseudo-inverse precoder, power-normalized."""
    hs, k, nr, nt = _stacked(h)
    g = hs @ np.conj(np.swapaxes(hs, -1, -2))
    g = g + (k * nr * noise / power) * np.eye(k * nr)
    t = np.conj(np.swapaxes(hs, -1, -2)) @ np.linalg.inv(g)
    w = _per_user(_normalize_power(t, power), k, nr, nt)
    rates, total = sum_rate(h, w, noise)
    return PrecodingSolution(w, rates, total)


def wmmse(h, noise, power, init="mmse", max_iter=300, tol=1e-4, seed=0):
    """Alternating sum-rate maximization around the closed-form precoder.

    Each iteration recomputes the MMSE receive filters and the inverse-MSE
    weight matrices from the current precoder and then re-solves the transmit
    side through :func:`cfp`.  Returns the solution, the final auxiliary
    tensors, and the sum-rate trace (initial value plus one entry per
    iteration).
    """
    h = np.asarray(h)
    k, nr, nt = h.shape[-3:]
    eye = np.eye(nr)
    if init == "mmse":
        w = mmse_precoder(h, noise, power).w
    elif init == "random":
        rng = np.random.Generator(np.random.PCG64(splitmix64(seed, 0)))
        parts = rng.standard_normal((k, nr, nt, 2))
        w = _normalize_power((parts[..., 0] + 1j * parts[..., 1]) / np.sqrt(2.0), power)
    else:
        raise ValueError(f"unknown init {init!r}")

    trace = [float(sum_rate(h, w, noise)[1])]
    a = u = None
    iterations = 0
    for _ in range(max_iter):
        cross = h[:, None] @ np.conj(np.swapaxes(w, -1, -2))[None, :]  # (K, K, nr, nr)
        j = noise * eye + np.sum(cross @ np.conj(np.swapaxes(cross, -1, -2)), axis=1)
        sig = np.einsum("kkij->kij", cross)
        a = np.conj(np.swapaxes(sig, -1, -2)) @ np.linalg.inv(j)  # receive filters
        err = eye - a @ sig
        u = np.linalg.inv(0.5 * (err + np.conj(np.swapaxes(err, -1, -2))))  # weights
        w = np.asarray(cfp(h, a, u, noise, power))
        iterations += 1
        trace.append(float(sum_rate(h, w, noise)[1]))
        if abs(trace[-1] - trace[-2]) < tol:
            break
    rates, total = sum_rate(h, w, noise)
    return (
        PrecodingSolution(w, rates, float(total), iterations),
        AuxTensors(a=a, u=u),
        np.asarray(trace),
    )


# ---------------------------------------------------------------------------
# user scheduling
# ---------------------------------------------------------------------------


def greedy_schedule(h_cand, noise, power, k, precoder):
    """Greedy user selection maximizing post-precoding sum-rate.

    ``precoder`` maps a channel subset to its precoder W.  Ties break toward
    the lower user index.  Returns a binary vector with exactly k ones.
    """
    h_cand = np.asarray(h_cand)
    k_cand = h_cand.shape[0]
    if k > k_cand:
        raise ValueError(f"cannot select {k} of {k_cand} users")
    selected = []
    for _ in range(k):
        best, best_rate = None, -np.inf
        for cand in range(k_cand):
            if cand in selected:
                continue
            idx = sorted(selected + [cand])
            sub = h_cand[idx]
            rate = float(sum_rate(sub, precoder(sub), noise)[1])
            if rate > best_rate:
                best, best_rate = cand, rate
        selected.append(best)
    eta = np.zeros(k_cand, dtype=np.int64)
    eta[selected] = 1
    return eta


def random_schedule(k_cand, k, seed):
    """Uniformly random K-subset as a binary indicator vector."""
    if k > k_cand:
        raise ValueError(f"cannot select {k} of {k_cand} users")
    rng = np.random.Generator(np.random.PCG64(splitmix64(seed, 0)))
    eta = np.zeros(k_cand, dtype=np.int64)
    eta[rng.choice(k_cand, size=k, replace=False)] = 1
    return eta


def eval_schedule(h_cand, eta, noise, power, precoder):
    """Sum-rate achieved by the selected users under the given precoder."""
    h_cand = np.asarray(h_cand)
    eta = np.asarray(eta)
    if eta.shape[0] != h_cand.shape[0]:
        raise ValueError("indicator length does not match candidate count")
    idx = np.flatnonzero(eta)
    sub = h_cand[idx]
    return float(sum_rate(sub, precoder(sub), noise)[1])


def mmse_callback(noise, power):
    return lambda h: mmse_precoder(h, noise, power).w


def zf_callback(noise, power):
    return lambda h: zf_precoder(h, noise, power).w


def wmmse_callback(noise, power, **kw):
    return lambda h: wmmse(h, noise, power, **kw)[0].w
