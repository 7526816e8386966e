"""Spectral filters and the regularized two-sample statistic.

The statistic is evaluated in the span of the sampled kernel sections. With
``M = (1/s) H~^{1/2} K_s H~^{1/2}`` eigendecomposed as ``sum_i l_i a_i a_i^T``,
the filtered covariance acts as

    g(Sigma_hat) = g(0) I + S_z^* H~^{1/2} G H~^{1/2} S_z,
    G = sum_i (g(l_i) - g(0)) / l_i * a_i a_i^T,

so every inner product ``<g(Sigma_hat) K(., u), K(., v)>`` becomes an entry of
the pooled matrix ``Q = g(0) K_pool + (1/s) K_ps H~^{1/2} G H~^{1/2} K_ps^T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# below this ratio x / lambda the Showalter filter switches to its series
SHOWALTER_SERIES_CUTOFF = 1e-8


class RegularizerKind(str, Enum):
    TIKHONOV = "tikhonov"
    SHOWALTER = "showalter"
    SPECTRAL_CUTOFF = "cutoff"


@dataclass(frozen=True)
class Regularizer:
    """Spectral filter ``g_lambda`` approximating ``1/x``.

    All three kinds satisfy ``x g(x) <= 1`` and ``lambda g(x) <= 1`` on
    ``[0, 1]`` and have infinite qualification. Only Tikhonov and Showalter
    also satisfy ``g(x)(x + lambda) >= 1``; the spectral cutoff has
    ``g(0) = 0``.
    """

    kind: RegularizerKind
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "kind", RegularizerKind(self.kind))
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lambda must be positive, got {self.lam!r}")

    # qualification is infinite for every supported kind
    qualification = float("inf")

    @property
    def g0(self) -> float:
        """``g_lambda(0)``."""
        if self.kind is RegularizerKind.SPECTRAL_CUTOFF:
            return 0.0
        return 1.0 / self.lam

    def __call__(self, x):
        return regularizer_value(self, x)


def regularizer_value(reg: Regularizer, x):
    """Evaluate ``g_lambda`` elementwise on non-negative ``x``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("regularizer is defined on [0, inf)")
    lam = reg.lam
    if reg.kind is RegularizerKind.TIKHONOV:
        out = 1.0 / (x + lam)
    elif reg.kind is RegularizerKind.SHOWALTER:
        t = x / lam
        small = t < SHOWALTER_SERIES_CUTOFF
        safe_x = np.where(small, 1.0, x)
        out = np.where(
            small,
            1.0 / lam - x / (2.0 * lam * lam),
            -np.expm1(-t) / safe_x,
        )
    else:
        keep = x >= lam
        out = np.divide(1.0, x, out=np.zeros_like(x), where=keep)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class EigenSystem:
    """Retained eigenpairs of the centred, scaled Z-Gram matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    s: int
    rank_epsilon: float

    @property
    def rank(self) -> int:
        return self.eigenvalues.shape[0]


def sqrt_centering(s: int) -> np.ndarray:
    """``H~_s^{1/2} = sqrt(s/(s-1)) (I - 11^T/s)``; exact because ``H_s`` is idempotent."""
    if s < 2:
        raise ValueError(f"need s >= 2, got {s}")
    H = np.eye(s) - np.full((s, s), 1.0 / s)
    return np.sqrt(s / (s - 1.0)) * H


def _double_center(K: np.ndarray) -> np.ndarray:
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    return K - row - col + K.mean()


def centered_kernel_eigs(K_s) -> EigenSystem:
    """Eigendecompose ``M = (1/s) H~^{1/2} K_s H~^{1/2} = H K_s H / (s - 1)``.

    Eigenvalues are returned in descending order. Negative round-off is
    clamped to zero and everything at or below
    ``rank_epsilon = s * eps * max(max_eigenvalue, max |K_s|)`` is dropped as
    null space; the second term covers round-off left by the centering.
    """
    K_s = np.asarray(K_s, dtype=float)
    if K_s.ndim != 2 or K_s.shape[0] != K_s.shape[1]:
        raise ValueError(f"K_s must be square, got shape {K_s.shape}")
    s = K_s.shape[0]
    if s < 2:
        raise ValueError(f"need s >= 2, got {s}")
    M = _double_center(K_s) / (s - 1.0)
    M = 0.5 * (M + M.T)
    try:
        vals, vecs = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    top = max(vals[0], np.abs(K_s).max()) if vals[0] > 0 else 0.0
    eps = s * np.finfo(float).eps * top
    keep = vals > eps
    return EigenSystem(
        eigenvalues=vals[keep].copy(),
        eigenvectors=vecs[:, keep].copy(),
        s=s,
        rank_epsilon=float(eps),
    )


def filter_coefficients(eigs: EigenSystem, reg: Regularizer) -> np.ndarray:
    """``(g(l_i) - g(0)) / l_i`` for each retained eigenvalue."""
    lam_hat = eigs.eigenvalues
    if lam_hat.size == 0:
        return np.zeros(0)
    if reg.kind is RegularizerKind.TIKHONOV:
        # closed form avoids the subtraction
        return -1.0 / (reg.lam * (lam_hat + reg.lam))
    if reg.kind is RegularizerKind.SHOWALTER:
        return _showalter_ratio(lam_hat / reg.lam) / reg.lam**2
    return regularizer_value(reg, lam_hat) / lam_hat


def _showalter_ratio(t: np.ndarray) -> np.ndarray:
    """``((1 - exp(-t)) - t) / t^2``, accurate for small ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = t < 0.5
    ts = t[small]
    # -(1/2! - t/3! + t^2/4! - ...); 25 terms reach round-off for t < 0.5
    acc = np.zeros_like(ts)
    term = np.full_like(ts, 0.5)
    for k in range(25):
        acc += term
        term = term * (-ts) / (k + 3)
    out[small] = -acc
    tl = t[~small]
    out[~small] = (-np.expm1(-tl) - tl) / (tl * tl)
    return out


def g_matrix(eigs: EigenSystem, reg: Regularizer) -> np.ndarray:
    """``G = sum_i (g(l_i) - g(0)) / l_i * a_i a_i^T`` over retained pairs."""
    coef = filter_coefficients(eigs, reg)
    V = eigs.eigenvectors
    G = (V * coef) @ V.T
    return 0.5 * (G + G.T)


@dataclass(frozen=True)
class PooledOperator:
    """``Q[i, j] = <g(Sigma_hat) K(., U_i), K(., U_j)>`` over pooled main samples ``U``."""

    Q: np.ndarray
    n: int
    m: int
    g0: float

    @property
    def size(self) -> int:
        return self.n + self.m


def pooled_operator(K_pool, K_pool_s, G, g0: float, n: int | None = None) -> PooledOperator:
    """Assemble ``Q = g0 K_pool + (1/s) K_ps H~^{1/2} G H~^{1/2} K_ps^T``.

    ``n`` marks how many leading rows are X-main samples; when omitted the
    pool is split in half.
    """
    K_pool = np.asarray(K_pool, dtype=float)
    K_pool_s = np.asarray(K_pool_s, dtype=float)
    G = np.asarray(G, dtype=float)
    N = K_pool.shape[0]
    s = G.shape[0]
    if K_pool.shape != (N, N):
        raise ValueError(f"K_pool must be square, got {K_pool.shape}")
    if K_pool_s.shape != (N, s) or G.shape != (s, s):
        raise ValueError(
            f"shape mismatch: K_pool {K_pool.shape}, K_pool_s {K_pool_s.shape}, G {G.shape}"
        )
    F = K_pool_s @ sqrt_centering(s)
    Q = g0 * K_pool + (F @ G @ F.T) / s
    Q = 0.5 * (Q + Q.T)
    if n is None:
        n = N // 2
    return PooledOperator(Q=Q, n=n, m=N - n, g0=float(g0))


def _block_terms(Q: np.ndarray, idx_x, idx_y):
    Qxx = Q[np.ix_(idx_x, idx_x)]
    Qyy = Q[np.ix_(idx_y, idx_y)]
    Qyx = Q[np.ix_(idx_y, idx_x)]
    return Qxx.sum(), np.trace(Qxx), Qyy.sum(), np.trace(Qyy), Qyx.sum()


def eta_hat(Q, idx_x, idx_y) -> float:
    """Regularized statistic from pooled-operator block sums.

    ``Q`` may be a :class:`PooledOperator` or a bare matrix. The result is a
    U-statistic and may be negative.
    """
    Q = Q.Q if isinstance(Q, PooledOperator) else np.asarray(Q, dtype=float)
    idx_x = np.asarray(idx_x, dtype=np.intp)
    idx_y = np.asarray(idx_y, dtype=np.intp)
    n, m = idx_x.size, idx_y.size
    if n < 2 or m < 2:
        raise ValueError(f"need n >= 2 and m >= 2, got n={n}, m={m}")
    t1, t2, t3, t4, t5 = _block_terms(Q, idx_x, idx_y)
    return float((t1 - t2) / (n * (n - 1)) + (t3 - t4) / (m * (m - 1)) - 2.0 * t5 / (n * m))


def mmd_u_stat(K_n, K_m, K_nm) -> float:
    """Unbiased estimate of the squared MMD from the three Gram blocks."""
    K_n = np.asarray(K_n, dtype=float)
    K_m = np.asarray(K_m, dtype=float)
    K_nm = np.asarray(K_nm, dtype=float)
    n, m = K_n.shape[0], K_m.shape[0]
    if n < 2 or m < 2:
        raise ValueError(f"need n >= 2 and m >= 2, got n={n}, m={m}")
    xx = (K_n.sum() - np.trace(K_n)) / (n * (n - 1))
    yy = (K_m.sum() - np.trace(K_m)) / (m * (m - 1))
    xy = K_nm.sum() / (n * m)
    return float(xx + yy - 2.0 * xy)


class SpectralFactors:
    """Regularizer-independent pieces of ``Q`` for one kernel.

    ``Q(reg) = g0 K_pool + (1/s) F diag(c(reg)) F^T`` with
    ``F = K_ps H~^{1/2} V``. Building this once per kernel lets every
    ``lambda`` on a grid reuse the same eigendecomposition and the same
    permutation projections.
    """

    def __init__(self, K_pool, K_pool_s, K_s):
        self.K_pool = np.asarray(K_pool, dtype=float)
        self.K_pool_s = np.asarray(K_pool_s, dtype=float)
        self.eigs = centered_kernel_eigs(K_s)
        self.s = self.eigs.s
        self.F = self.K_pool_s @ (sqrt_centering(self.s) @ self.eigs.eigenvectors)

    @classmethod
    def from_samples(cls, kernel, pooled, z):
        from .kernels import gram

        return cls(gram(kernel, pooled), gram(kernel, pooled, z), gram(kernel, z))

    def operator(self, reg: Regularizer, n: int | None = None) -> PooledOperator:
        """Materialise the pooled operator for one regularizer."""
        return pooled_operator(self.K_pool, self.K_pool_s, g_matrix(self.eigs, reg), reg.g0, n)

    def projections(self, labels: np.ndarray) -> "PermutationProjections":
        """Precompute regularizer-free sums for a batch of X-membership masks.

        ``labels`` is a boolean ``(B, N)`` array, ``True`` marking X-main rows.
        """
        return PermutationProjections(self, labels)


class PermutationProjections:
    """Block sums of ``K_pool`` and ``F`` for a batch of label assignments."""

    def __init__(self, factors: SpectralFactors, labels: np.ndarray):
        labels = np.asarray(labels, dtype=bool)
        if labels.ndim == 1:
            labels = labels[None, :]
        a = labels.astype(float)
        b = 1.0 - a
        self.n = int(labels[0].sum())
        self.m = labels.shape[1] - self.n
        if np.any(labels.sum(axis=1) != self.n):
            raise ValueError("every label row must mark the same number of X samples")
        if self.n < 2 or self.m < 2:
            raise ValueError(f"need n >= 2 and m >= 2, got n={self.n}, m={self.m}")
        K = factors.K_pool
        F = factors.F
        self.s = factors.s
        Ka = a @ K
        Kb = b @ K
        self.kxx = np.einsum("ij,ij->i", Ka, a)
        self.kyy = np.einsum("ij,ij->i", Kb, b)
        self.kyx = np.einsum("ij,ij->i", Ka, b)
        diagK = np.diag(K)
        self.kx_tr = a @ diagK
        self.ky_tr = b @ diagK
        self.px = a @ F
        self.py = b @ F
        F2 = F * F
        self.fx_tr = a @ F2
        self.fy_tr = b @ F2

    def statistics(self, reg: Regularizer, coef: np.ndarray) -> np.ndarray:
        """Statistic for every label row, given the filter coefficients."""
        g0, s, n, m = reg.g0, self.s, self.n, self.m
        px_c = self.px * coef
        t1 = g0 * self.kxx + np.einsum("ij,ij->i", px_c, self.px) / s
        t2 = g0 * self.kx_tr + self.fx_tr @ coef / s
        t3 = g0 * self.kyy + np.einsum("ij,ij->i", self.py * coef, self.py) / s
        t4 = g0 * self.ky_tr + self.fy_tr @ coef / s
        t5 = g0 * self.kyx + np.einsum("ij,ij->i", px_c, self.py) / s
        return (t1 - t2) / (n * (n - 1)) + (t3 - t4) / (m * (m - 1)) - 2.0 * t5 / (n * m)
