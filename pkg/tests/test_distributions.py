import gzip
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from spectral_mmd.distributions import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    MNIST_Q,
    PERTURBATION_AMPLITUDE,
    PerturbedUniformSpec,
    bump,
    downsample_7x7,
    load_csv,
    load_mnist_7x7,
    read_idx,
    sample_cauchy,
    sample_gaussian,
    sample_perturbed_uniform,
    sample_uniform_sphere,
    sample_vmf,
    sample_watson_mixture,
    watson_means,
)

E1 = math.exp(-1.0)


# --- bump and perturbed density ------------------------------------------

@pytest.mark.parametrize("x, expected", [(-0.75, E1), (-0.25, -E1)])
def test_bump_peaks(x, expected):
    assert bump(x) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("x", [-1.0, -0.5, 0.0, 0.3, -1.7])
def test_bump_zero_outside_support(x):
    assert bump(x) == 0.0


def test_bump_integrates_to_zero():
    left, _ = integrate.quad(bump, -1.0, -0.5, epsabs=1e-13)
    right, _ = integrate.quad(bump, -0.5, 0.0, epsabs=1e-13)
    assert abs(left + right) <= 1e-8
    assert left > 0 > right


def test_bump_bounded():
    x = np.linspace(-1.2, 0.2, 10_001)
    assert np.abs(bump(x)).max() <= E1 + 1e-15


def test_density_value():
    spec = PerturbedUniformSpec(d=1, P=1, signs=[1.0], amplitude=2.7)
    assert spec.density([[0.25]])[0] == pytest.approx(1 + 2.7 * E1, rel=1e-14)
    assert spec.density([[0.25]])[0] == pytest.approx(1.99327, abs=5e-6)


@pytest.mark.parametrize("d, P", [(1, P) for P in range(1, 7)] + [(2, P) for P in range(1, 4)])
def test_density_nonnegative(d, P):
    rng = np.random.default_rng([d, P])
    spec = PerturbedUniformSpec.random(d, P, rng)
    if d == 1:
        grid = np.linspace(0, 1, 10_000)[:, None]
    else:
        g = np.linspace(0, 1, 100)
        grid = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    assert spec.density(grid).min() >= 0.0


@pytest.mark.parametrize("d, P", [(1, 1), (1, 3), (2, 2)])
def test_density_integrates_to_one(d, P):
    spec = PerturbedUniformSpec.random(d, P, np.random.default_rng(P))
    if d == 1:
        pieces = [integrate.quad(lambda t: spec.density([[t]])[0], a / P, (a + 1) / P, epsabs=1e-12)[0]
                  for a in range(P)]
        assert sum(pieces) == pytest.approx(1.0, abs=1e-8)
    else:
        # tensor-product bumps: each cell integrates to its area
        g = (np.arange(400) + 0.5) / 400
        pts = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
        assert spec.density(pts).mean() == pytest.approx(1.0, abs=1e-6)


def test_density_zero_outside_cube():
    spec = PerturbedUniformSpec.random(2, 2, 0)
    assert np.all(spec.density([[1.2, 0.5], [-0.1, 0.5]]) == 0.0)


def test_amplitude_too_large_rejected():
    with pytest.raises(ValueError):
        PerturbedUniformSpec(d=1, P=1, signs=[1.0], amplitude=3.0)


def test_default_amplitudes_are_admissible():
    for d, c in PERTURBATION_AMPLITUDE.items():
        assert c * math.exp(-d) <= 1.0


def _exact_mean_d1(spec):
    return sum(integrate.quad(lambda t: t * spec.density([[t]])[0], a / spec.P, (a + 1) / spec.P,
                              epsabs=1e-12)[0] for a in range(spec.P))


def test_first_moment_of_bump_is_not_zero():
    # zero integral keeps f_w normalised, but in d = 1 the bump shifts the mean
    m1, _ = integrate.quad(lambda t: t * bump(t), -1.0, 0.0, epsabs=1e-13)
    assert m1 < -0.05
    spec = PerturbedUniformSpec(d=1, P=1, signs=[-1.0], amplitude=2.7)
    assert _exact_mean_d1(spec) == pytest.approx(0.5 - 2.7 * m1, abs=1e-10)


@pytest.mark.parametrize("signs", [[1.0], [-1.0], [1.0, -1.0], [1.0, 1.0, -1.0, 1.0]])
def test_perturbed_means_d1(signs):
    spec = PerturbedUniformSpec(d=1, P=len(signs), signs=signs, amplitude=2.7)
    x = sample_perturbed_uniform(spec, 50_000, len(signs))
    assert np.all((x >= 0) & (x <= 1))
    assert x.mean() == pytest.approx(_exact_mean_d1(spec), abs=0.01)
    if sum(signs) == 0:
        assert x.mean() == pytest.approx(0.5, abs=0.01)


@pytest.mark.parametrize("P", [1, 2, 3])
def test_perturbed_means_d2(P):
    rng = np.random.default_rng(100 + P)
    spec = PerturbedUniformSpec.random(2, P, rng)
    x = sample_perturbed_uniform(spec, 50_000, rng)
    assert x.shape == (50_000, 2)
    np.testing.assert_allclose(x.mean(axis=0), 0.5, atol=0.01)


def test_perturbed_acceptance_rate():
    spec = PerturbedUniformSpec(d=1, P=1, signs=[1.0], amplitude=2.7)
    rng = np.random.default_rng(4)
    x = rng.random((200_000, 1))
    u = rng.random(200_000)
    rate = np.mean(u * spec.envelope <= spec.density(x))
    expected = 1 / spec.envelope
    assert abs(rate - expected) <= 4 * math.sqrt(expected * (1 - expected) / 200_000)


def test_perturbed_histogram_follows_density():
    spec = PerturbedUniformSpec(d=1, P=1, signs=[1.0], amplitude=2.7)
    x = sample_perturbed_uniform(spec, 100_000, 5)[:, 0]
    # positive lobe on (0, 1/2), negative lobe on (1/2, 1)
    assert np.mean(x < 0.5) > 0.5 + 0.05


# --- Gaussian and Cauchy --------------------------------------------------

def test_gaussian_mean():
    n = 10_000
    x = sample_gaussian(3, 0.0, 1.0, n, 1)
    assert np.all(np.abs(x.mean(axis=0)) <= 4 / math.sqrt(n))


def test_gaussian_variance():
    x = sample_gaussian(2, 0.0, 4.0, 10_000, 2)
    np.testing.assert_allclose(x.var(axis=0, ddof=1), 4.0, atol=0.3)


def test_gaussian_shift_first_coordinate():
    x = sample_gaussian(3, 1.0, 1.0, 10_000, 3)
    assert x[:, 0].mean() == pytest.approx(1.0, abs=0.05)
    np.testing.assert_allclose(x[:, 1:].mean(axis=0), 0.0, atol=0.05)


def test_gaussian_vector_shift():
    x = sample_gaussian(2, [0.0, -2.0], 1.0, 5_000, 3)
    assert x[:, 1].mean() == pytest.approx(-2.0, abs=0.1)


def test_gaussian_bad_scale():
    with pytest.raises(ValueError):
        sample_gaussian(1, 0.0, 0.0, 10, 0)


def test_cauchy_median():
    x = sample_cauchy(2, 0.7, 50_000, 6)
    np.testing.assert_allclose(np.median(x, axis=0), 0.7, atol=0.05)


def test_cauchy_symmetry():
    x = sample_cauchy(1, 0.0, 50_000, 7)
    assert np.mean(x > 0) == pytest.approx(0.5, abs=0.01)


def test_cauchy_inverse_cdf_identity():
    x = sample_cauchy(3, 0.0, 100, 8)
    u = np.random.default_rng(8).random((100, 3))
    assert np.array_equal(x, np.tan(np.pi * (u - 0.5)))


# --- spherical ------------------------------------------------------------

@pytest.mark.parametrize("d, k", [(2, 0.0), (3, 1.0), (3, 50.0), (10, 4.0), (50, 2.0)])
def test_vmf_unit_norm(d, k):
    mu = np.ones(d) / math.sqrt(d)
    x = sample_vmf(d, mu, k, 2_000, 9)
    assert np.abs(np.linalg.norm(x, axis=1) - 1).max() <= 1e-12


@pytest.mark.parametrize("d", [2, 3, 10])
def test_vmf_uniform_limit(d):
    n = 10_000
    mu = np.eye(d)[0]
    x = sample_vmf(d, mu, 0.0, n, 10)
    assert np.linalg.norm(x.mean(axis=0)) <= 4 / math.sqrt(n)


def test_vmf_concentrates_on_mean():
    mu = np.array([1.0, 2.0, -2.0]) / 3.0
    x = sample_vmf(3, mu, 50.0, 10_000, 11)
    m = x.mean(axis=0)
    angle = math.degrees(math.acos(min(1.0, m @ mu / np.linalg.norm(m))))
    assert angle <= 2.0


def test_vmf_mean_cosine_d3():
    # for d = 3 the mean of mu^T x is coth(k) - 1/k
    k = 5.0
    mu = np.eye(3)[2]
    x = sample_vmf(3, mu, k, 40_000, 12)
    assert (x @ mu).mean() == pytest.approx(1 / math.tanh(k) - 1 / k, abs=0.01)


def test_vmf_rejects_non_unit_mu():
    with pytest.raises(ValueError):
        sample_vmf(3, [1.0, 1.0, 0.0], 1.0, 5, 0)


def test_watson_means_unit():
    mu1, mu2 = watson_means(4)
    assert np.linalg.norm(mu1) == pytest.approx(1.0)
    assert np.linalg.norm(mu2) == pytest.approx(1.0)
    np.testing.assert_allclose(mu2 * 2, [-1, 1, 1, 1])


@pytest.mark.parametrize("d, k", [(2, 0.0), (3, 2.0), (5, 10.0)])
def test_watson_unit_norm(d, k):
    mu1, mu2 = watson_means(d)
    x = sample_watson_mixture(d, mu1, mu2, k, 2_000, 13)
    assert np.abs(np.linalg.norm(x, axis=1) - 1).max() <= 1e-12


@pytest.mark.parametrize("k", [2.0, 10.0])
def test_watson_antipodal_symmetry(k):
    mu1, mu2 = watson_means(3)
    x = sample_watson_mixture(3, mu1, mu2, k, 40_000, 14, weight=1.0)
    assert np.mean(x @ mu1 > 0) == pytest.approx(0.5, abs=0.01)


def test_watson_concentrates_on_axis():
    mu1, mu2 = watson_means(3)
    x = sample_watson_mixture(3, mu1, mu2, 10.0, 5_000, 15, weight=1.0)
    assert np.mean((x @ mu1) ** 2) > 0.8


def test_watson_zero_concentration_is_uniform():
    d, n = 4, 20_000
    mu1, mu2 = watson_means(d)
    x = sample_watson_mixture(d, mu1, mu2, 0.0, n, 16)
    u = sample_uniform_sphere(d, n, 17)
    assert np.linalg.norm(x.mean(axis=0)) <= 4 / math.sqrt(n)
    # second moments of the uniform sphere are I/d
    np.testing.assert_allclose(x.T @ x / n, np.eye(d) / d, atol=0.01)
    np.testing.assert_allclose(u.T @ u / n, np.eye(d) / d, atol=0.01)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40))
def test_samplers_are_pure_functions_of_seed(seed, n):
    mu = np.array([0.6, 0.8])
    spec = PerturbedUniformSpec.random(1, 3, seed)
    for draw in (
        lambda: sample_vmf(2, mu, 3.0, n, seed),
        lambda: sample_watson_mixture(2, mu, [-0.8, 0.6], 3.0, n, seed),
        lambda: sample_perturbed_uniform(spec, n, seed),
        lambda: sample_gaussian(2, 0.5, 2.0, n, seed),
        lambda: sample_cauchy(2, 0.5, n, seed),
    ):
        assert np.array_equal(draw(), draw())


# --- CSV ------------------------------------------------------------------

def test_load_csv(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3.5,-4\n5e-1,6\n")
    np.testing.assert_array_equal(load_csv(p), [[1, 2], [3.5, -4], [0.5, 6]])


def test_load_csv_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    assert load_csv(p, has_header=True).shape == (1, 2)


def test_load_csv_ragged_reports_line(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3,4\n5\n")
    with pytest.raises(ValueError, match=":3:"):
        load_csv(p)


def test_load_csv_non_numeric(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3,abc\n")
    with pytest.raises(ValueError, match=":2:"):
        load_csv(p)


def test_load_csv_empty(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("")
    with pytest.raises(ValueError, match="no data"):
        load_csv(p)


# --- MNIST IDX ------------------------------------------------------------

def _write_idx(path, magic, array, compress=False):
    array = np.asarray(array, dtype=np.uint8)
    header = magic.to_bytes(4, "big") + b"".join(int(s).to_bytes(4, "big") for s in array.shape)
    payload = header + array.tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def test_downsample_constants():
    images = np.stack([np.zeros((28, 28)), np.full((28, 28), 255)]).astype(np.uint8)
    out = downsample_7x7(images)
    assert out.shape == (2, 49)
    assert np.all(out[0] == 0.0)
    assert np.all(out[1] == 1.0)


def test_downsample_single_block():
    image = np.zeros((1, 28, 28), dtype=np.uint8)
    image[0, 8:12, 20:24] = 255
    out = downsample_7x7(image)[0]
    assert np.count_nonzero(out) == 1
    assert out[2 * 7 + 5] == 1.0


def test_downsample_misaligned_block_averages():
    image = np.zeros((1, 28, 28), dtype=np.uint8)
    image[0, 0:2, 0:4] = 255
    assert downsample_7x7(image)[0, 0] == 0.5


@pytest.mark.parametrize("compress", [False, True])
def test_load_mnist_filters_digits(tmp_path, compress):
    rng = np.random.default_rng(18)
    images = rng.integers(0, 256, size=(12, 28, 28))
    labels = np.arange(12) % 10
    suffix = ".gz" if compress else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    _write_idx(ip, IDX_IMAGES_MAGIC, images, compress)
    _write_idx(lp, IDX_LABELS_MAGIC, labels, compress)
    assert np.array_equal(read_idx(lp, IDX_LABELS_MAGIC), labels)
    keep = MNIST_Q[1] if 1 in MNIST_Q else {0, 1}
    out = load_mnist_7x7(ip, lp, keep)
    mask = np.isin(labels, sorted(keep))
    np.testing.assert_array_equal(out, downsample_7x7(images[mask]))
    assert load_mnist_7x7(ip, lp).shape == (12, 49)


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "img"
    _write_idx(p, IDX_LABELS_MAGIC, np.zeros(3))
    with pytest.raises(ValueError, match="magic"):
        read_idx(p, IDX_IMAGES_MAGIC)


def test_idx_truncated(tmp_path):
    p = tmp_path / "img"
    _write_idx(p, IDX_IMAGES_MAGIC, np.zeros((2, 28, 28)))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(ValueError, match="bytes"):
        read_idx(p, IDX_IMAGES_MAGIC)


def test_mnist_length_mismatch(tmp_path):
    ip, lp = tmp_path / "img", tmp_path / "lab"
    _write_idx(ip, IDX_IMAGES_MAGIC, np.zeros((3, 28, 28)))
    _write_idx(lp, IDX_LABELS_MAGIC, np.zeros(2))
    with pytest.raises(ValueError, match="labels"):
        load_mnist_7x7(ip, lp)
