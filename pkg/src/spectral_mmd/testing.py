"""Permutation tests built on the regularized statistic, plus MMD baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .kernels import Kernel, KernelFamily, bandwidth_grid, doubling_grid, gram, median_heuristic
from .spectral import (
    Regularizer,
    RegularizerKind,
    SpectralFactors,
    eta_hat,
    filter_coefficients,
    mmd_u_stat,
)

# experiment defaults
ALPHA = 0.05
N_PERMUTATIONS = 250
LAMBDA_LOW = 1e-6
LAMBDA_HIGH = 5.0
W_LOW = 0.01
W_HIGH = 100.0


@dataclass(frozen=True)
class SplitData:
    """Main samples for the mean embeddings and the mixed block ``z`` for the covariance."""

    x_main: np.ndarray
    y_main: np.ndarray
    z: np.ndarray
    from_x: np.ndarray
    seed: object = None

    @property
    def n(self) -> int:
        return self.x_main.shape[0]

    @property
    def m(self) -> int:
        return self.y_main.shape[0]

    @property
    def s(self) -> int:
        return self.z.shape[0]

    @property
    def pooled(self) -> np.ndarray:
        return np.vstack([self.x_main, self.y_main])


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _samples(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {A.shape}")
    return A


def split_samples(X, Y, s: int, rng=None, *, shuffle: bool = False, from_x=None) -> SplitData:
    """Hold out the last ``s`` rows of each sample and mix them into ``z``.

    ``z[i]`` is the i-th held-out X row with probability 1/2, otherwise the
    i-th held-out Y row. ``shuffle=True`` permutes each sample first, for
    inputs whose row order is not exchangeable. ``from_x`` forces the
    Bernoulli choices.
    """
    X = _samples(X, "X")
    Y = _samples(Y, "Y")
    N, M = X.shape[0], Y.shape[0]
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: X has d={X.shape[1]}, Y has d={Y.shape[1]}")
    if not (1 <= s <= min(N, M) - 2):
        raise ValueError(f"s must lie in [1, min(N, M) - 2] = [1, {min(N, M) - 2}], got {s}")
    gen = _rng(rng)
    if shuffle:
        X = X[gen.permutation(N)]
        Y = Y[gen.permutation(M)]
    if from_x is None:
        from_x = gen.random(s) < 0.5
    else:
        from_x = np.broadcast_to(np.asarray(from_x, dtype=bool), (s,)).copy()
    x_held, y_held = X[N - s:], Y[M - s:]
    z = np.where(from_x[:, None], x_held, y_held)
    return SplitData(
        x_main=X[: N - s].copy(),
        y_main=Y[: M - s].copy(),
        z=z,
        from_x=from_x,
        seed=rng if not isinstance(rng, np.random.Generator) else None,
    )


def draw_permutations(size: int, B: int, rng=None) -> np.ndarray:
    """``B`` independent uniform permutations of ``range(size)``, one per row."""
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    gen = _rng(rng)
    base = np.tile(np.arange(size), (B, 1))
    return gen.permuted(base, axis=1)


def permutation_statistics(Q, n: int, m: int, B: int, rng=None, perms=None) -> np.ndarray:
    """Statistic recomputed on ``B`` random relabelings of the pooled main samples.

    Only the labels move; ``Q`` (and hence the held-out block) is fixed.
    """
    if perms is None:
        perms = draw_permutations(n + m, B, rng)
    return np.array([eta_hat(Q, p[:n], p[n:]) for p in perms])


def permutation_quantile(stats, level: float) -> float:
    """Smallest ``q`` with empirical CDF ``>= level``: the ``ceil(level B)``-th order statistic."""
    stats = np.asarray(stats, dtype=float).ravel()
    if stats.size == 0:
        raise ValueError("no statistics to take a quantile of")
    if not (0 < level <= 1):
        raise ValueError(f"level must lie in (0, 1], got {level}")
    B = stats.size
    # tolerance absorbs round-off in level * B, e.g. 0.9 * 10
    k = math.ceil(level * B - 1e-9)
    k = min(max(k, 1), B)
    return float(np.partition(stats, k - 1)[k - 1])


def monte_carlo_pvalue(observed: float, null_stats) -> float:
    """``(1 + #{null >= observed}) / (B + 1)``."""
    null_stats = np.asarray(null_stats)
    return float((1 + np.count_nonzero(null_stats >= observed)) / (null_stats.size + 1))


def min_permutations(alpha: float, w: float, w_tilde: float) -> int:
    """Number of permutations sufficient for level ``alpha`` with slack ``w, w_tilde``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not w_tilde > 0:
        raise ValueError(f"w_tilde must be positive, got {w_tilde}")
    if not (0 < w + w_tilde < 1):
        raise ValueError(f"need 0 < w + w_tilde < 1, got {w + w_tilde}")
    bound = math.log(2.0 / (alpha * (1.0 - w - w_tilde))) / (2.0 * w_tilde**2 * alpha**2)
    return math.ceil(bound)


def _best_permutation_bound(alpha: float, w: float) -> int:
    """Smallest admissible bound over ``w_tilde`` in ``(0, 1 - w)``."""

    def bound(wt):
        return math.log(2.0 / (alpha * (1.0 - w - wt))) / (2.0 * wt**2 * alpha**2)

    hi = 1.0 - w
    res = minimize_scalar(bound, bounds=(hi * 1e-6, hi * (1 - 1e-9)), method="bounded")
    return min_permutations(alpha, w, float(res.x))


def theory_bound_met(alpha: float, w: float, B: int, w_tilde: float | None = None,
                     n_configs: int = 1) -> bool:
    """Whether ``B`` satisfies the permutation-count condition for the union test.

    With ``n_configs`` thresholds the level per configuration is
    ``alpha / n_configs``. When ``w_tilde`` is None the most favourable
    admissible value is used.
    """
    if not (0 < w < 1):
        return False
    a = alpha / n_configs
    if w_tilde is None:
        needed = _best_permutation_bound(a, w)
    else:
        if not (0 < w_tilde < 1 - w):
            return False
        needed = min_permutations(a, w, w_tilde)
    return B >= needed


@dataclass
class ConfigResult:
    statistic: float
    threshold: float
    null_stats: np.ndarray
    p_value: float

    @property
    def reject(self) -> bool:
        return bool(self.statistic >= self.threshold)


@dataclass
class TestOutcome:
    """Decision of a (possibly aggregated) permutation test.

    ``per_config`` is keyed by ``(lam, kernel)``; the MMD baselines use
    ``lam = None``. ``p_value`` is the smallest per-configuration Monte-Carlo
    p-value and is meant to be compared with ``effective_level``.
    """

    __test__ = False

    reject: bool
    per_config: dict
    alpha: float
    effective_level: float
    p_value: float
    n_permutations: int = 0
    theory_bound_met: bool | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_configs(self) -> int:
        return len(self.per_config)

    @property
    def statistic(self) -> float:
        """Statistic of the single configuration (errors on grids)."""
        if len(self.per_config) != 1:
            raise ValueError("statistic is only defined for single-configuration outcomes")
        return next(iter(self.per_config.values())).statistic

    @property
    def adjusted_p_value(self) -> float:
        """``p_value`` rescaled to the nominal level ``alpha``: ``min(1, p * alpha / effective_level)``."""
        return min(1.0, self.p_value * self.alpha / self.effective_level)


def lambda_grid(lam_low: float = LAMBDA_LOW, lam_high: float = LAMBDA_HIGH) -> np.ndarray:
    """``{lam_L, 2 lam_L, ..., lam_U}``; ``lam_U`` is appended if the doubling misses it."""
    return doubling_grid(lam_low, lam_high)


def median_bandwidth(X, Y, family=KernelFamily.GAUSSIAN, fallback: float | None = None) -> float:
    """Median heuristic on the full pooled sample, in the metric of ``family``.

    With ``fallback`` set, degenerate data (median 0) returns ``fallback``
    instead of raising.
    """
    from .kernels import DegenerateDataError

    family = KernelFamily(family)
    pooled = np.vstack([_samples(X, "X"), _samples(Y, "Y")])
    try:
        return median_heuristic(pooled, family.metric)
    except DegenerateDataError:
        if fallback is None:
            raise
        return float(fallback)


def kernel_grid(X, Y, family=KernelFamily.GAUSSIAN, w_low: float = W_LOW, w_high: float = W_HIGH,
                fallback: float | None = 1.0) -> list[Kernel]:
    """Kernels at bandwidths ``{w_L h_m, 2 w_L h_m, ..., w_U h_m}``."""
    family = KernelFamily(family)
    h_m = median_bandwidth(X, Y, family, fallback=fallback)
    return [Kernel(family, float(h)) for h in bandwidth_grid(h_m, w_low, w_high)]


def _run_grid(split: SplitData, kernels, regs, alpha, w, B, rng) -> TestOutcome:
    n, m = split.n, split.m
    if n < 2 or m < 2:
        raise ValueError(f"need n, m >= 2 after splitting, got n={n}, m={m}")
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    if not (0 < alpha < 1) or not (0 < w <= 1):
        raise ValueError(f"need 0 < alpha < 1 and 0 < w <= 1, got alpha={alpha}, w={w}")
    kernels, regs = list(kernels), list(regs)
    n_configs = len(kernels) * len(regs)
    if n_configs == 0:
        raise ValueError("empty kernel or regularizer grid")
    effective = w * alpha / n_configs
    level = 1.0 - effective

    perms = draw_permutations(n + m, B, rng)
    labels = np.zeros((B + 1, n + m), dtype=bool)
    labels[0, :n] = True
    labels[np.repeat(np.arange(1, B + 1), n), perms[:, :n].ravel()] = True

    pooled, z = split.pooled, split.z
    per_config = {}
    for kernel in kernels:
        factors = SpectralFactors.from_samples(kernel, pooled, z)
        proj = factors.projections(labels)
        for reg in regs:
            stats = proj.statistics(reg, filter_coefficients(factors.eigs, reg))
            observed, null = float(stats[0]), stats[1:]
            per_config[(reg.lam, kernel)] = ConfigResult(
                statistic=observed,
                threshold=permutation_quantile(null, level),
                null_stats=null,
                p_value=monte_carlo_pvalue(observed, null),
            )
    reject = any(r.reject for r in per_config.values())
    return TestOutcome(
        reject=reject,
        per_config=per_config,
        alpha=alpha,
        effective_level=effective,
        p_value=min(r.p_value for r in per_config.values()),
        n_permutations=B,
        info={"n": n, "m": m, "s": split.s},
    )


def single_level_test(X, Y, kernel: Kernel, reg: Regularizer, s: int, alpha: float = ALPHA,
                      w: float = 1.0, B: int = N_PERMUTATIONS, rng=None,
                      w_tilde: float | None = None, shuffle: bool = False) -> TestOutcome:
    """Permutation test at one ``(lambda, kernel)``: reject iff the statistic reaches the ``1 - w alpha`` quantile."""
    gen = _rng(rng)
    split = split_samples(X, Y, s, gen, shuffle=shuffle)
    out = _run_grid(split, [kernel], [reg], alpha, w, B, gen)
    out.theory_bound_met = theory_bound_met(alpha, w, B, w_tilde)
    return out


def adaptive_test(X, Y, kernels, lambdas, s: int, alpha: float = ALPHA, w: float = 1.0,
                  B: int = N_PERMUTATIONS, rng=None, regularizer=RegularizerKind.TIKHONOV,
                  w_tilde: float | None = None, shuffle: bool = False) -> TestOutcome:
    """Union of permutation tests over a ``lambda`` grid and a kernel grid.

    Every configuration is thresholded at level ``1 - w alpha / (|lambdas| |kernels|)``.
    One split and one stream of ``B`` permutations are shared by the whole
    grid; each kernel's eigendecomposition is reused for every ``lambda``.

    Parameters
    ----------
    kernels
        Sequence of :class:`Kernel`.
    lambdas
        Regularization parameters, or ready-made :class:`Regularizer` objects
        (then ``regularizer`` is ignored).
    """
    kernels = list(kernels)
    regs = [
        lam if isinstance(lam, Regularizer) else Regularizer(regularizer, float(lam))
        for lam in lambdas
    ]
    gen = _rng(rng)
    split = split_samples(X, Y, s, gen, shuffle=shuffle)
    out = _run_grid(split, kernels, regs, alpha, w, B, gen)
    out.theory_bound_met = theory_bound_met(alpha, w, B, w_tilde, out.n_configs)
    out.info.update(n_lambdas=len(regs), n_kernels=len(kernels))
    return out


def _pooled_mmd_blocks(X, Y, kernel):
    X = _samples(X, "X")
    Y = _samples(Y, "Y")
    N, M = X.shape[0], Y.shape[0]
    if N < 2 or M < 2:
        raise ValueError(f"need N, M >= 2, got N={N}, M={M}")
    return gram(kernel, np.vstack([X, Y])), N, M


def _mmd_from_pooled(K, idx_x, idx_y) -> float:
    return mmd_u_stat(K[np.ix_(idx_x, idx_x)], K[np.ix_(idx_y, idx_y)], K[np.ix_(idx_x, idx_y)])


def mmd_chebyshev_threshold(N: int, M: int, alpha: float, kappa: float = 1.0) -> float:
    return 2.0 * math.sqrt(6.0) * kappa / math.sqrt(alpha) * (1.0 / N + 1.0 / M)


def mmd_chebyshev_test(X, Y, kernel: Kernel, alpha: float = ALPHA) -> TestOutcome:
    """MMD test with the distribution-free Chebyshev threshold (conservative)."""
    K, N, M = _pooled_mmd_blocks(X, Y, kernel)
    stat = _mmd_from_pooled(K, np.arange(N), np.arange(N, N + M))
    gamma = mmd_chebyshev_threshold(N, M, alpha, kernel.kappa)
    res = ConfigResult(statistic=stat, threshold=gamma, null_stats=np.empty(0), p_value=1.0)
    return TestOutcome(
        reject=res.reject,
        per_config={(None, kernel): res},
        alpha=alpha,
        effective_level=alpha,
        p_value=1.0,
    )


def mmd_permutation_test(X, Y, kernel: Kernel, alpha: float = ALPHA, B: int = N_PERMUTATIONS,
                         rng=None) -> TestOutcome:
    """MMD test with a permutation threshold at level ``1 - alpha``."""
    K, N, M = _pooled_mmd_blocks(X, Y, kernel)
    stat = _mmd_from_pooled(K, np.arange(N), np.arange(N, N + M))
    perms = draw_permutations(N + M, B, rng)
    null = np.array([_mmd_from_pooled(K, p[:N], p[N:]) for p in perms])
    res = ConfigResult(
        statistic=stat,
        threshold=permutation_quantile(null, 1.0 - alpha),
        null_stats=null,
        p_value=monte_carlo_pvalue(stat, null),
    )
    return TestOutcome(
        reject=res.reject,
        per_config={(None, kernel): res},
        alpha=alpha,
        effective_level=alpha,
        p_value=res.p_value,
        n_permutations=B,
    )
