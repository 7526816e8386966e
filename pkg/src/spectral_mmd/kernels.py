"""Gaussian and Laplacian kernels, Gram matrices and bandwidth grids."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist, pdist


class DegenerateDataError(ValueError):
    """Raised when the pooled sample has zero spread (median distance 0)."""


class KernelFamily(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACIAN = "laplacian"

    @property
    def metric(self) -> str:
        return "sq_euclidean" if self is KernelFamily.GAUSSIAN else "l1"


@dataclass(frozen=True)
class Kernel:
    """Translation-invariant kernel with ``K(x, x) = 1``.

    Gaussian: ``exp(-||x - y||_2^2 / (2h))``.
    Laplacian: ``exp(-||x - y||_1 / (2h))``.
    """

    family: KernelFamily
    bandwidth: float

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")

    # sup_x K(x, x); both families are normalised
    kappa = 1.0

    def __call__(self, x, y) -> float:
        """Evaluate the kernel on a single pair of points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        diff = x - y
        if self.family is KernelFamily.GAUSSIAN:
            dist = float(np.dot(diff, diff))
        else:
            dist = float(np.abs(diff).sum())
        return float(np.exp(-dist / (2.0 * self.bandwidth)))


def _as_samples(A, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[1] < 1:
        raise ValueError(f"{name} must be a 2-d array of shape (n, d), got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def pairwise_distances(A, B=None, metric: str = "sq_euclidean") -> np.ndarray:
    """Dense matrix of squared-Euclidean or l1 distances between rows."""
    A = _as_samples(A, "A")
    B = A if B is None else _as_samples(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(
            f"dimension mismatch: A has {A.shape[1]} columns, B has {B.shape[1]}"
        )
    if metric == "sq_euclidean":
        return cdist(A, B, "sqeuclidean")
    if metric == "l1":
        return cdist(A, B, "cityblock")
    raise ValueError(f"unknown metric {metric!r}")


def gram(kernel: Kernel, A, B=None) -> np.ndarray:
    """Gram matrix ``[K(a_i, b_j)]``; ``B=None`` means ``B = A``.

    Distances come from scipy's ``cdist``, which evaluates each pair with the
    same arithmetic regardless of argument order, so ``gram(k, A, A)`` is
    exactly symmetric.
    """
    D = pairwise_distances(A, B, kernel.family.metric)
    return np.exp(D / (-2.0 * kernel.bandwidth))


def median_heuristic(pooled, metric: str = "sq_euclidean") -> float:
    """Median of the pairwise distances over distinct unordered pairs.

    Raises
    ------
    DegenerateDataError
        If the median is zero.
    """
    pooled = _as_samples(pooled, "pooled")
    if pooled.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    if metric == "sq_euclidean":
        dists = pdist(pooled, "sqeuclidean")
    elif metric == "l1":
        dists = pdist(pooled, "cityblock")
    else:
        raise ValueError(f"unknown metric {metric!r}")
    h = float(np.median(dists))
    if h <= 0.0:
        raise DegenerateDataError("median pairwise distance is zero")
    return h


def doubling_grid(low: float, high: float) -> np.ndarray:
    """``{low, 2 low, 4 low, ...}`` up to ``high``, with ``high`` appended if missed.

    A final doubling that lands within floating-point round-off of ``high``
    counts as hitting it exactly.
    """
    if not (low > 0 and high >= low):
        raise ValueError(f"need 0 < low <= high, got low={low}, high={high}")
    values = [low]
    while True:
        nxt = values[-1] * 2.0
        if nxt > high * (1 + 1e-12):
            break
        values.append(nxt)
    if not np.isclose(values[-1], high, rtol=1e-12, atol=0.0):
        values.append(high)
    else:
        values[-1] = high
    return np.asarray(values, dtype=float)


def bandwidth_grid(h_m: float, w_low: float, w_high: float) -> np.ndarray:
    """Bandwidths ``{w_L h_m, 2 w_L h_m, ..., w_U h_m}``."""
    if not h_m > 0:
        raise ValueError(f"h_m must be positive, got {h_m}")
    if not (0 < w_low <= w_high):
        raise ValueError(f"need 0 < w_L <= w_U, got w_L={w_low}, w_U={w_high}")
    return doubling_grid(w_low * h_m, w_high * h_m)
