"""Slow brute-force oracles for validating the fast statistics.

Nothing here reuses the pooled-operator machinery of :mod:`spectral_mmd.spectral`.
The regularized statistic is evaluated by building an explicit orthonormal
feature map for the span of every sampled kernel section, forming the
covariance estimate as the pairwise-difference U-statistic in that basis,
applying the filter through its own eigendecomposition, and summing the
four-index kernel ``h`` term by term.
"""

import itertools
import math

import numpy as np

from .kernels import Kernel, KernelFamily
from .spectral import Regularizer, RegularizerKind

MAX_MAIN = 12
MAX_HELD_OUT = 10
MAX_MMD = 200
MAX_EXHAUSTIVE = 8


def _kernel_fn(kernel: Kernel):
    h2 = 2.0 * kernel.bandwidth
    if kernel.family is KernelFamily.GAUSSIAN:
        def k(a, b):
            return math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / h2)
    else:
        def k(a, b):
            return math.exp(-sum(abs(ai - bi) for ai, bi in zip(a, b)) / h2)
    return k


def _filter(reg: Regularizer, x: float) -> float:
    lam = reg.lam
    if reg.kind is RegularizerKind.TIKHONOV:
        return 1.0 / (x + lam)
    if reg.kind is RegularizerKind.SHOWALTER:
        if x == 0.0:
            return 1.0 / lam
        return -math.expm1(-x / lam) / x
    return 1.0 / x if x >= lam else 0.0


def _feature_map(points, kernel: Kernel) -> np.ndarray:
    """Rows are coordinates of ``K(., p)`` in an orthonormal basis of their span."""
    k = _kernel_fn(kernel)
    rows = [list(map(float, p)) for p in points]
    p = len(rows)
    K = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            K[i, j] = K[j, i] = k(rows[i], rows[j])
    vals, vecs = np.linalg.eigh(K)
    keep = vals > p * np.finfo(float).eps * vals.max()
    return vecs[:, keep] * np.sqrt(vals[keep])


def eta_hat_bruteforce(split, kernel: Kernel, reg: Regularizer) -> float:
    """Direct four-index U-statistic with an explicitly filtered covariance."""
    X, Y, Z = split.x_main, split.y_main, split.z
    n, m, s = len(X), len(Y), len(Z)
    if n > MAX_MAIN or m > MAX_MAIN or s > MAX_HELD_OUT:
        raise ValueError(
            f"oracle limited to n, m <= {MAX_MAIN} and s <= {MAX_HELD_OUT}; "
            f"got n={n}, m={m}, s={s}"
        )
    if n < 2 or m < 2 or s < 2:
        raise ValueError("need n, m, s >= 2")
    phi = _feature_map(np.vstack([X, Y, Z]), kernel)
    phi_x, phi_y, phi_z = phi[:n], phi[n:n + m], phi[n + m:]
    r = phi.shape[1]

    # Sigma_hat = 1/(2s(s-1)) sum_{i != j} (k_zi - k_zj) (x) (k_zi - k_zj)
    cov = np.zeros((r, r))
    for i in range(s):
        for j in range(s):
            if i != j:
                d = phi_z[i] - phi_z[j]
                cov += np.outer(d, d)
    cov /= 2.0 * s * (s - 1)
    cov = 0.5 * (cov + cov.T)

    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    g_evals = np.array([_filter(reg, float(e)) for e in evals])
    g_cov = (evecs * g_evals) @ evecs.T

    # A(x, y) = K(., x) - K(., y) for every (i, i') pair
    diffs = {(i, ip): phi_x[i] - phi_y[ip] for i in range(n) for ip in range(m)}
    filtered = {key: g_cov @ v for key, v in diffs.items()}

    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for ip in range(m):
                for jp in range(m):
                    if ip == jp:
                        continue
                    total += float(filtered[(i, ip)] @ diffs[(j, jp)])
    return total / (n * (n - 1) * m * (m - 1))


def mmd_bruteforce(X, Y, kernel: Kernel) -> float:
    """Squared-MMD U-statistic by explicit loops over sample pairs."""
    X = [list(map(float, np.atleast_1d(x))) for x in np.asarray(X, dtype=float)]
    Y = [list(map(float, np.atleast_1d(y))) for y in np.asarray(Y, dtype=float)]
    N, M = len(X), len(Y)
    if N > MAX_MMD or M > MAX_MMD:
        raise ValueError(f"oracle limited to N, M <= {MAX_MMD}")
    if N < 2 or M < 2:
        raise ValueError("need N, M >= 2")
    k = _kernel_fn(kernel)
    xx = math.fsum(k(X[i], X[j]) for i in range(N) for j in range(N) if i != j)
    yy = math.fsum(k(Y[i], Y[j]) for i in range(M) for j in range(M) if i != j)
    xy = math.fsum(k(X[i], Y[j]) for i in range(N) for j in range(M))
    return xx / (N * (N - 1)) + yy / (M * (M - 1)) - 2.0 * xy / (N * M)


def _statistic_from_q(Q, idx_x, idx_y) -> float:
    n, m = len(idx_x), len(idx_y)
    t12 = sum(Q[i][j] for i in idx_x for j in idx_x if i != j)
    t34 = sum(Q[i][j] for i in idx_y for j in idx_y if i != j)
    t5 = sum(Q[i][j] for i in idx_y for j in idx_x)
    return t12 / (n * (n - 1)) + t34 / (m * (m - 1)) - 2.0 * t5 / (n * m)


def exhaustive_permutation_distribution(Q, n: int, m: int, statistic=None) -> np.ndarray:
    """Statistic under every one of the ``(n + m)!`` relabelings, in lexicographic order.

    ``statistic(Q, idx_x, idx_y)`` defaults to a loop-based evaluation of the
    regularized statistic, which needs ``n, m >= 2``; pass another callable
    for smaller blocks.
    """
    Q = getattr(Q, "Q", Q)
    Q = np.asarray(Q, dtype=float)
    if n + m > MAX_EXHAUSTIVE:
        raise ValueError(f"exhaustive enumeration limited to n + m <= {MAX_EXHAUSTIVE}")
    if Q.shape != (n + m, n + m):
        raise ValueError(f"Q has shape {Q.shape}, expected {(n + m, n + m)}")
    stat = statistic or _statistic_from_q
    Ql = Q.tolist() if statistic is None else Q
    out = [
        stat(Ql, list(perm[:n]), list(perm[n:]))
        for perm in itertools.permutations(range(n + m))
    ]
    return np.asarray(out, dtype=float)
