"""Monte-Carlo power studies and the data-file test."""

from __future__ import annotations

import csv
import io
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import binomtest
from threadpoolctl import threadpool_limits

from .. import distributions as dist
from .. import testing
from ..kernels import Kernel, doubling_grid, gram
from ..spectral import Regularizer
from .config import Experiment, ExperimentConfig, Method

CSV_COLUMNS = ["experiment", "d", "sweep_param", "sweep_value", "reps", "rejections",
               "power", "ci_lo", "ci_hi", "seconds"]


@dataclass
class PowerResult:
    experiment: str
    d: int
    sweep_param: str
    sweep_value: float
    reps: int
    rejections: int
    ci_lo: float
    ci_hi: float
    seconds: float | None = None

    @property
    def power(self) -> float:
        return self.rejections / self.reps

    @property
    def std_error(self) -> float:
        p = self.power
        return float(np.sqrt(p * (1 - p) / self.reps))


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def replication_rng(master_seed: int, point: int, rep: int) -> np.random.Generator:
    """Independent stream for one replication, fixed by its coordinates alone."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, point, rep]))


@lru_cache(maxsize=4)
def _mnist_pool(images: str, labels: str) -> tuple[np.ndarray, np.ndarray]:
    raw = dist.read_idx(images, dist.IDX_IMAGES_MAGIC)
    lab = dist.read_idx(labels, dist.IDX_LABELS_MAGIC)
    if raw.shape[0] != lab.shape[0]:
        raise ValueError(f"{raw.shape[0]} images but {lab.shape[0]} labels")
    return dist.downsample_7x7(raw), lab.astype(int)


@lru_cache(maxsize=4)
def _csv_pair(x_path: str, y_path: str, has_header: bool):
    return dist.load_csv(x_path, has_header), dist.load_csv(y_path, has_header)


def draw_samples(cfg: ExperimentConfig, value, rng) -> tuple[np.ndarray, np.ndarray]:
    """One ``(X, Y)`` draw for a sweep point; X follows the null family."""
    exp, N, M, d = cfg.experiment, cfg.N, cfg.M, cfg.d
    if exp is Experiment.GAUSSIAN_SHIFT:
        return (dist.sample_gaussian(d, 0.0, 1.0, N, rng),
                dist.sample_gaussian(d, float(value), 1.0, M, rng))
    if exp is Experiment.GAUSSIAN_SCALE:
        return (dist.sample_gaussian(d, 0.0, 1.0, N, rng),
                dist.sample_gaussian(d, 0.0, float(value), M, rng))
    if exp is Experiment.TYPE1:
        return (dist.sample_gaussian(d, 0.0, 1.0, N, rng),
                dist.sample_gaussian(d, 0.0, 1.0, M, rng))
    if exp is Experiment.CAUCHY_SHIFT:
        return (dist.sample_cauchy(d, 0.0, N, rng),
                dist.sample_cauchy(d, float(value), M, rng))
    if exp is Experiment.PERTURBED_UNIFORM:
        spec = dist.PerturbedUniformSpec.random(d, int(value), rng)
        return rng.random((N, d)), dist.sample_perturbed_uniform(spec, M, rng)
    if exp is Experiment.VMF_VS_UNIFORM:
        mu = np.ones(d) / np.sqrt(d)
        return (dist.sample_uniform_sphere(d, N, rng),
                dist.sample_vmf(d, mu, float(value), M, rng))
    if exp is Experiment.WATSON_VS_UNIFORM:
        mu1, mu2 = dist.watson_means(d)
        return (dist.sample_uniform_sphere(d, N, rng),
                dist.sample_watson_mixture(d, mu1, mu2, float(value), M, rng))
    if exp is Experiment.MNIST_SUBSETS:
        feats, labels = _mnist_pool(cfg.mnist_images, cfg.mnist_labels)
        p_idx = np.flatnonzero(np.isin(labels, sorted(dist.MNIST_P)))
        q_idx = np.flatnonzero(np.isin(labels, sorted(dist.MNIST_Q[int(value)])))
        return feats[rng.choice(p_idx, N)], feats[rng.choice(q_idx, M)]
    if exp is Experiment.CSV_TWO_SAMPLE:
        X, Y = _csv_pair(cfg.x_path, cfg.y_path, cfg.has_header)
        return X[rng.integers(0, len(X), N)], Y[rng.integers(0, len(Y), M)]
    raise ValueError(f"unknown experiment {exp}")


def run_test(cfg: ExperimentConfig, X, Y, rng, B: int | None = None) -> testing.TestOutcome:
    """Apply the configured test to one dataset."""
    B = cfg.B if B is None else int(B)
    if cfg.method is Method.SPECTRAL:
        kernels = testing.kernel_grid(X, Y, cfg.kernel, cfg.w_L, cfg.w_U, fallback=1.0)
        lambdas = testing.lambda_grid(cfg.lambda_L, cfg.lambda_U)
        return testing.adaptive_test(
            X, Y, kernels, lambdas, cfg.held_out, alpha=cfg.alpha, w=cfg.w, B=B, rng=rng,
            regularizer=cfg.regularizer, w_tilde=cfg.w_tilde,
        )
    h = testing.median_bandwidth(X, Y, cfg.kernel, fallback=1.0)
    kernel = Kernel(cfg.kernel, h)
    if cfg.method is Method.MMD_PERMUTATION:
        return testing.mmd_permutation_test(X, Y, kernel, cfg.alpha, B, rng)
    return testing.mmd_chebyshev_test(X, Y, kernel, cfg.alpha)


def _replicate(cfg: ExperimentConfig, point: int, value, rep: int) -> tuple[bool, float]:
    start = time.perf_counter()
    rng = replication_rng(cfg.master_seed, point, rep)
    X, Y = draw_samples(cfg, value, rng)
    B = int(value) if cfg.experiment is Experiment.TYPE1 else None
    out = run_test(cfg, X, Y, rng, B)
    return bool(out.reject), time.perf_counter() - start


def _replicate_item(args):
    return _replicate(*args)


def _worker_init():
    # single-threaded BLAS in every worker keeps results independent of pool size
    threadpool_limits(1)


def run_experiment(cfg: ExperimentConfig, progress=None) -> list[PowerResult]:
    """Rejection rate at every sweep point over ``cfg.reps`` fresh replications."""
    cfg.validate()
    values = cfg.sweep_values
    items = [(cfg, i, v, r) for i, v in enumerate(values) for r in range(cfg.reps)]
    if cfg.threads == 1:
        with threadpool_limits(1):
            outcomes = []
            for item in items:
                outcomes.append(_replicate_item(item))
                if progress:
                    progress(len(outcomes), len(items))
    else:
        with ProcessPoolExecutor(cfg.threads, initializer=_worker_init) as pool:
            outcomes = list(pool.map(_replicate_item, items, chunksize=max(1, cfg.reps // 8)))
    results = []
    for i, v in enumerate(values):
        chunk = outcomes[i * cfg.reps:(i + 1) * cfg.reps]
        k = sum(rej for rej, _ in chunk)
        lo, hi = wilson_interval(k, cfg.reps)
        results.append(PowerResult(
            experiment=cfg.experiment.value,
            d=cfg.d,
            sweep_param=cfg.sweep_name,
            sweep_value=float(v),
            reps=cfg.reps,
            rejections=int(k),
            ci_lo=lo,
            ci_hi=hi,
            seconds=float(np.mean([t for _, t in chunk])) if cfg.timing else None,
        ))
    return results


def effective_parameters(cfg: ExperimentConfig) -> dict:
    """Every parameter that determines the output, including the derived grids."""
    lambdas = testing.lambda_grid(cfg.lambda_L, cfg.lambda_U)
    multiples = doubling_grid(cfg.w_L, cfg.w_U)
    spectral = cfg.method is Method.SPECTRAL
    n_configs = len(lambdas) * len(multiples) if spectral else 1
    params = {
        "experiment": cfg.experiment.value,
        "method": cfg.method.value,
        "N": cfg.N,
        "M": cfg.M,
        "s": cfg.held_out,
        "d": cfg.d,
        "reps": cfg.reps,
        "alpha": cfg.alpha,
        "w": cfg.w,
        "w_tilde": cfg.w_tilde,
        "B": cfg.B,
        "kernel": cfg.kernel.value,
        "regularizer": cfg.regularizer.value,
        "lambda_L": cfg.lambda_L,
        "lambda_U": cfg.lambda_U,
        "Lambda": " ".join(f"{v:.6g}" for v in lambdas),
        "|Lambda|": len(lambdas),
        "w_L": cfg.w_L,
        "w_U": cfg.w_U,
        "W/h_m": " ".join(f"{v:.6g}" for v in multiples),
        "|W|": len(multiples),
        "|Lambda||W|": n_configs,
        "effective_level": cfg.w * cfg.alpha / n_configs,
        "master_seed": cfg.master_seed,
        "sweep": " ".join(f"{v:g}" for v in cfg.sweep_values),
    }
    if spectral:
        params["theory_bound_met"] = testing.theory_bound_met(
            cfg.alpha, cfg.w, cfg.B, cfg.w_tilde, n_configs)
    return params


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def format_results(results: list[PowerResult], params: dict | None = None) -> str:
    buf = io.StringIO()
    for key, value in (params or {}).items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in results:
        writer.writerow([r.experiment, r.d, r.sweep_param, _fmt(r.sweep_value), r.reps,
                         r.rejections, _fmt(r.power), _fmt(r.ci_lo), _fmt(r.ci_hi),
                         _fmt(r.seconds)])
    return buf.getvalue()


def plot_data_path(out_path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.stem + ".plot.csv")


def emit_results(results: list[PowerResult], out_path, params: dict | None = None) -> Path:
    """Write the results CSV and its ``x,y,y_lo,y_hi`` companion; returns the companion path."""
    out_path = Path(out_path)
    out_path.write_text(format_results(results, params), encoding="utf-8")
    companion = plot_data_path(out_path)
    with open(companion, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "y_lo", "y_hi"])
        for r in results:
            writer.writerow([_fmt(r.sweep_value), _fmt(r.power), _fmt(r.ci_lo), _fmt(r.ci_hi)])
    return companion


def _print(text: str) -> None:
    print(text, end="")


def run_file_test(x_csv, y_csv, cfg: ExperimentConfig, out=None) -> tuple[testing.TestOutcome, int]:
    """Test two CSV samples; returns the outcome and exit code (1 reject, 0 otherwise)."""
    X = dist.load_csv(x_csv, cfg.has_header)
    Y = dist.load_csv(y_csv, cfg.has_header)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {x_csv} has d={X.shape[1]}, {y_csv} has d={Y.shape[1]}")
    s = cfg.s if cfg.s is not None else max(2, (len(X) + len(Y)) // 20)
    cfg = cfg.replace(N=len(X), M=len(Y), d=X.shape[1], s=s)
    rng = replication_rng(cfg.master_seed, 0, 0)
    outcome = run_test(cfg, X, Y, rng)
    write = out.write if out is not None else _print
    write(f"# N={len(X)} M={len(Y)} d={X.shape[1]} s={s} method={cfg.method.value} "
          f"configs={outcome.n_configs} effective_level={outcome.effective_level:.6g}\n")
    write("lambda,bandwidth,statistic,threshold,p_value,reject\n")
    for (lam, kernel), res in outcome.per_config.items():
        lam_txt = "" if lam is None else f"{lam:.6g}"
        write(f"{lam_txt},{kernel.bandwidth:.6g},{res.statistic:.10g},{res.threshold:.10g},"
              f"{res.p_value:.6g},{int(res.reject)}\n")
    write(f"# decision={'reject' if outcome.reject else 'fail-to-reject'} "
          f"p_value={outcome.p_value:.6g} level={outcome.effective_level:.6g} "
          f"adjusted_p_value={outcome.adjusted_p_value:.6g} alpha={outcome.alpha:.6g}\n")
    return outcome, int(outcome.reject)


def oracle_check(instances: int = 50, seed: int = 0, out=None) -> dict:
    """Compare fast statistics with the brute-force oracles; ``report['passed']`` is the verdict."""
    from .. import reference, spectral

    rng = np.random.default_rng(seed)
    write = out.write if out is not None else _print
    report = {}

    worst = 0.0
    for i in range(instances):
        X = rng.normal(size=(14, 2))
        Y = rng.normal(size=(14, 2)) + 0.5 * rng.normal(size=2)
        split = testing.split_samples(X, Y, 6, rng)
        kernel = Kernel("gaussian", (0.5, 2.0)[i % 2])
        reg = Regularizer(("tikhonov", "showalter")[(i // 2) % 2], (1e-4, 0.1, 1.0)[i % 3])
        factors = spectral.SpectralFactors.from_samples(kernel, split.pooled, split.z)
        fast = spectral.eta_hat(factors.operator(reg, split.n), np.arange(8), np.arange(8, 16))
        slow = reference.eta_hat_bruteforce(split, kernel, reg)
        worst = max(worst, abs(fast - slow) / max(abs(slow), 1e-300))
    report["eta_max_rel_err"] = worst

    worst = 0.0
    for i in range(instances):
        N, M = rng.integers(2, 51, size=2)
        X = rng.normal(size=(N, 2))
        Y = rng.normal(size=(M, 2)) + 1.0
        kernel = Kernel("gaussian", 1.0)
        pooled = np.vstack([X, Y])
        K = gram(kernel, pooled)
        fast = spectral.mmd_u_stat(K[:N, :N], K[N:, N:], K[:N, N:])
        slow = reference.mmd_bruteforce(X, Y, kernel)
        worst = max(worst, abs(fast - slow) / max(abs(slow), 1e-300))
    report["mmd_max_rel_err"] = worst

    X = rng.normal(size=(5, 1))
    Y = rng.normal(size=(5, 1))
    split = testing.split_samples(X, Y, 2, rng)
    factors = spectral.SpectralFactors.from_samples(Kernel("gaussian", 1.0), split.pooled, split.z)
    Q = factors.operator(Regularizer("tikhonov", 0.1), 3)
    exact = reference.exhaustive_permutation_distribution(Q, 3, 3)
    observed = spectral.eta_hat(Q, [0, 1, 2], [3, 4, 5])
    identity = testing.permutation_statistics(Q, 3, 3, 1, perms=np.arange(6)[None, :])
    report["identity_reproduced"] = bool(identity[0] == observed)
    fast = testing.permutation_statistics(
        Q, 3, 3, exact.size, perms=np.array(list(itertools.permutations(range(6)))))
    report["exhaustive_max_abs_err"] = float(np.max(np.abs(fast - exact)))
    sorted_exact = np.sort(exact)
    k = int(np.ceil(0.95 * exact.size - 1e-9))
    report["quantile_matches"] = bool(
        testing.permutation_quantile(exact, 0.95) == sorted_exact[k - 1])

    report["passed"] = bool(
        report["eta_max_rel_err"] <= 1e-8
        and report["mmd_max_rel_err"] <= 1e-12
        and report["identity_reproduced"]
        and report["quantile_matches"]
        and report["exhaustive_max_abs_err"] <= 1e-10 * max(1.0, float(np.max(np.abs(exact))))
    )
    write(f"eta_hat vs brute force: max rel err {report['eta_max_rel_err']:.3e} (tol 1e-8)\n")
    write(f"MMD vs brute force:     max rel err {report['mmd_max_rel_err']:.3e} (tol 1e-12)\n")
    write(f"identity permutation reproduces statistic: {report['identity_reproduced']}\n")
    write(f"exhaustive permutations vs fast path: max abs err {report['exhaustive_max_abs_err']:.3e}\n")
    write(f"permutation quantile matches order statistic: {report['quantile_matches']}\n")
    write(f"oracle check {'PASSED' if report['passed'] else 'FAILED'}\n")
    return report
