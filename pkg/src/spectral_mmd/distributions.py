"""Seeded samplers for the synthetic benchmarks and loaders for real data."""

from __future__ import annotations

import csv
import gzip
import math
from dataclasses import dataclass

import numpy as np

# amplitude of the perturbation, indexed by dimension
PERTURBATION_AMPLITUDE = {1: 2.7, 2: 7.3}

MAX_CONSECUTIVE_REJECTIONS = 10**6

# digit sets for the MNIST benchmark; P is every digit, Q_i drops a few
MNIST_P = frozenset(range(10))
MNIST_Q = {
    1: frozenset({1, 3, 5, 7, 9}),
    2: frozenset({0, 1, 3, 5, 7, 9}),
    3: frozenset({0, 1, 2, 3, 5, 7, 9}),
    4: frozenset({0, 1, 2, 3, 4, 5, 7, 9}),
    5: frozenset({0, 1, 2, 3, 4, 5, 6, 7, 9}),
}


class SamplingError(RuntimeError):
    """A rejection sampler exceeded its cap on consecutive rejections."""


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def bump(x):
    """Smooth mean-zero bump supported on ``(-1, 0)``: positive lobe, then negative."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    left = (x > -1.0) & (x < -0.5)
    right = (x > -0.5) & (x < 0.0)
    u = 4.0 * x[left] + 3.0
    out[left] = np.exp(-1.0 / (1.0 - u * u))
    u = 4.0 * x[right] + 1.0
    out[right] = -np.exp(-1.0 / (1.0 - u * u))
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class PerturbedUniformSpec:
    d: int
    P: int
    signs: np.ndarray
    amplitude: float

    def __post_init__(self):
        signs = np.asarray(self.signs, dtype=float).reshape((self.P,) * self.d)
        if not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be +1 or -1")
        object.__setattr__(self, "signs", signs)
        if self.envelope_slack > 1.0 + 1e-12:
            raise ValueError(
                f"amplitude {self.amplitude} with P={self.P}, d={self.d} gives a negative density"
            )

    @classmethod
    def random(cls, d: int, P: int, rng=None, amplitude: float | None = None):
        """Perturbation with signs drawn uniformly from ``{-1, +1}^(P^d)``."""
        if d not in PERTURBATION_AMPLITUDE and amplitude is None:
            raise ValueError(f"no default amplitude for d={d}")
        c = PERTURBATION_AMPLITUDE[d] if amplitude is None else amplitude
        signs = _rng(rng).choice([-1.0, 1.0], size=(P,) * d)
        return cls(d=d, P=P, signs=signs, amplitude=c)

    @property
    def envelope_slack(self) -> float:
        # largest |perturbation|: each bump factor is at most e^{-1}
        return self.amplitude / self.P * math.exp(-self.d)

    @property
    def envelope(self) -> float:
        return 1.0 + self.envelope_slack

    def density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}")
        inside = np.all((x >= 0.0) & (x <= 1.0), axis=1)
        # bump(P x_i - v_i) is non-zero only for the cell v_i = floor(P x_i) + 1
        cell = np.clip(np.floor(self.P * x).astype(int), 0, self.P - 1)
        prod = np.ones(x.shape[0])
        for i in range(self.d):
            prod *= bump(self.P * x[:, i] - (cell[:, i] + 1))
        w = self.signs[tuple(cell[:, i] for i in range(self.d))]
        return np.where(inside, 1.0 + self.amplitude / self.P * w * prod, 0.0)


def sample_perturbed_uniform(spec: PerturbedUniformSpec, n: int, rng=None) -> np.ndarray:
    """Rejection sampling from the perturbed density against Uniform[0, 1]^d."""
    gen = _rng(rng)
    out = np.empty((n, spec.d))
    filled = 0
    misses = 0
    batch = max(64, int(1.2 * n * spec.envelope))
    while filled < n:
        x = gen.random((batch, spec.d))
        u = gen.random(batch)
        accepted = x[u * spec.envelope <= spec.density(x)]
        if accepted.size == 0:
            misses += batch
            if misses >= MAX_CONSECUTIVE_REJECTIONS:
                raise SamplingError("perturbed-uniform sampler stalled")
            continue
        misses = 0
        take = min(n - filled, accepted.shape[0])
        out[filled:filled + take] = accepted[:take]
        filled += take
    return out


def sample_gaussian(d: int, mean_shift=0.0, scale: float = 1.0, n: int = 1, rng=None) -> np.ndarray:
    """Rows from ``N(mu, scale * I_d)``; ``scale`` is the variance.

    A scalar ``mean_shift`` moves the first coordinate only.
    """
    if not scale > 0:
        raise ValueError(f"variance must be positive, got {scale}")
    mu = np.zeros(d)
    shift = np.asarray(mean_shift, dtype=float)
    if shift.ndim == 0:
        mu[0] = float(shift)
    else:
        if shift.shape != (d,):
            raise ValueError(f"mean_shift must be a scalar or length-{d} vector")
        mu = shift
    return mu + math.sqrt(scale) * _rng(rng).standard_normal((n, d))


def sample_cauchy(d: int, median_shift=0.0, n: int = 1, rng=None) -> np.ndarray:
    """Independent standard Cauchy coordinates plus a shift, by inverse CDF.

    A scalar shift applies to every coordinate.
    """
    u = _rng(rng).random((n, d))
    return np.tan(np.pi * (u - 0.5)) + np.asarray(median_shift, dtype=float)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("direction must be non-zero")
    return v / norm


def sample_uniform_sphere(d: int, n: int, rng=None) -> np.ndarray:
    x = _rng(rng).standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _vmf_cosines(d: int, k: float, n: int, gen: np.random.Generator) -> np.ndarray:
    """Wood's rejection sampler for ``t = mu^T x``."""
    dm1 = d - 1.0
    b = dm1 / (2.0 * k + math.sqrt(4.0 * k * k + dm1 * dm1))
    x0 = (1.0 - b) / (1.0 + b)
    c = k * x0 + dm1 * math.log(1.0 - x0 * x0)
    out = np.empty(n)
    filled = 0
    misses = 0
    while filled < n:
        size = max(16, 2 * (n - filled))
        z = gen.beta(dm1 / 2.0, dm1 / 2.0, size)
        t = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = gen.random(size)
        ok = k * t + dm1 * np.log(1.0 - x0 * t) - c >= np.log(u)
        acc = t[ok]
        if acc.size == 0:
            misses += size
            if misses >= MAX_CONSECUTIVE_REJECTIONS:
                raise SamplingError("von Mises-Fisher sampler stalled")
            continue
        misses = 0
        take = min(n - filled, acc.size)
        out[filled:filled + take] = acc[:take]
        filled += take
    return out


def sample_vmf(d: int, mu, k: float, n: int, rng=None) -> np.ndarray:
    """von Mises-Fisher draws on the unit sphere in ``R^d`` (tangent-normal decomposition)."""
    if d < 2:
        raise ValueError("need d >= 2")
    if k < 0:
        raise ValueError(f"concentration must be non-negative, got {k}")
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (d,) or abs(np.linalg.norm(mu) - 1.0) > 1e-9:
        raise ValueError("mu must be a unit vector of length d")
    gen = _rng(rng)
    t = _vmf_cosines(d, float(k), n, gen)
    v = gen.standard_normal((n, d))
    v -= np.outer(v @ mu, mu)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = t[:, None] * mu + np.sqrt(np.clip(1.0 - t * t, 0.0, None))[:, None] * v
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _watson_component(d: int, mu: np.ndarray, k: float, n: int, gen) -> np.ndarray:
    """Plain rejection from the uniform sphere; expected cost grows like ``e^k``."""
    out = np.empty((n, d))
    filled = 0
    misses = 0
    while filled < n:
        size = max(16, 2 * (n - filled))
        x = sample_uniform_sphere(d, size, gen)
        u = gen.random(size)
        acc = x[np.log(u) <= k * ((x @ mu) ** 2 - 1.0)]
        if acc.shape[0] == 0:
            misses += size
            if misses >= MAX_CONSECUTIVE_REJECTIONS:
                raise SamplingError("Watson sampler stalled")
            continue
        misses = 0
        take = min(n - filled, acc.shape[0])
        out[filled:filled + take] = acc[:take]
        filled += take
    return out


def watson_means(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalised ``(1, ..., 1)`` and ``(-1, 1, ..., 1)``."""
    mu1 = np.ones(d)
    mu2 = np.ones(d)
    mu2[0] = -1.0
    return _unit(mu1), _unit(mu2)


def sample_watson_mixture(d: int, mu1, mu2, k: float, n: int, rng=None,
                          weight: float = 0.5) -> np.ndarray:
    """Two-component Watson mixture; ``weight`` is the probability of the first component."""
    if k < 0:
        raise ValueError(f"concentration must be non-negative, got {k}")
    if not 0 <= weight <= 1:
        raise ValueError("weight must lie in [0, 1]")
    mu1, mu2 = _unit(mu1), _unit(mu2)
    gen = _rng(rng)
    first = gen.random(n) < weight
    n1 = int(first.sum())
    out = np.empty((n, d))
    out[first] = _watson_component(d, mu1, float(k), n1, gen)
    out[~first] = _watson_component(d, mu2, float(k), n - n1, gen)
    return out


def load_csv(path, has_header: bool = False) -> np.ndarray:
    """Read a rectangular numeric CSV into an ``(n, d)`` float array."""
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and has_header:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ValueError(
                    f"{path}:{lineno}: expected {width} fields, found {len(row)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path, magic: int) -> np.ndarray:
    """Read an unsigned-byte IDX file (big-endian header)."""
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    found = int.from_bytes(data[:4], "big")
    if found != magic:
        raise ValueError(f"{path}: bad magic number {found:#010x}, expected {magic:#010x}")
    ndim = data[3]
    header = 4 + 4 * ndim
    dims = tuple(int.from_bytes(data[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))
    body = np.frombuffer(data, dtype=np.uint8, offset=header)
    if body.size != math.prod(dims):
        raise ValueError(f"{path}: expected {math.prod(dims)} bytes of data, found {body.size}")
    return body.reshape(dims)


def downsample_7x7(images) -> np.ndarray:
    """Rescale 28x28 uint8 images to [0, 1], average-pool 4x4 blocks, flatten row-major."""
    images = np.asarray(images, dtype=float) / 255.0
    if images.shape[1:] != (28, 28):
        raise ValueError(f"expected 28x28 images, got {images.shape[1:]}")
    pooled = images.reshape(-1, 7, 4, 7, 4).mean(axis=(2, 4))
    return pooled.reshape(-1, 49)


def load_mnist_7x7(images_path, labels_path, digit_filter=None) -> np.ndarray:
    """MNIST images with labels in ``digit_filter``, as 49-dimensional rows."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3 or labels.ndim != 1:
        raise ValueError("unexpected IDX dimensions for MNIST")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    if digit_filter is not None:
        keep = np.isin(labels, sorted(digit_filter))
        images = images[keep]
    return downsample_7x7(images)
