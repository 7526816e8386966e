"""Experiment configuration: flat ``key=value`` files plus overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

from ..kernels import KernelFamily
from ..spectral import RegularizerKind
from .. import testing


class Experiment(str, Enum):
    GAUSSIAN_SHIFT = "gaussian_shift"
    GAUSSIAN_SCALE = "gaussian_scale"
    CAUCHY_SHIFT = "cauchy_shift"
    PERTURBED_UNIFORM = "perturbed_uniform"
    VMF_VS_UNIFORM = "vmf_vs_uniform"
    WATSON_VS_UNIFORM = "watson_vs_uniform"
    MNIST_SUBSETS = "mnist_subsets"
    CSV_TWO_SAMPLE = "csv_two_sample"
    TYPE1 = "type1"


class Method(str, Enum):
    SPECTRAL = "spectral"
    MMD_PERMUTATION = "mmd_permutation"
    MMD_CHEBYSHEV = "mmd_chebyshev"


SWEEP_NAMES = {
    Experiment.GAUSSIAN_SHIFT: "shift",
    Experiment.GAUSSIAN_SCALE: "scale",
    Experiment.CAUCHY_SHIFT: "shift",
    Experiment.PERTURBED_UNIFORM: "P",
    Experiment.VMF_VS_UNIFORM: "k",
    Experiment.WATSON_VS_UNIFORM: "k",
    Experiment.MNIST_SUBSETS: "digit_set",
    Experiment.CSV_TWO_SAMPLE: "none",
    Experiment.TYPE1: "B",
}

DEFAULT_SWEEPS = {
    Experiment.GAUSSIAN_SHIFT: [0.0, 0.25, 0.5, 1.0],
    Experiment.GAUSSIAN_SCALE: [1.0, 1.5, 2.0, 3.0],
    Experiment.CAUCHY_SHIFT: [0.0, 0.25, 0.5, 1.0],
    Experiment.PERTURBED_UNIFORM: [1, 2, 3, 4, 5, 6],
    Experiment.VMF_VS_UNIFORM: [0.0, 1.0, 2.0, 4.0],
    Experiment.WATSON_VS_UNIFORM: [0.0, 2.0, 6.0, 10.0],
    Experiment.MNIST_SUBSETS: [1, 2, 3, 4, 5],
    Experiment.CSV_TWO_SAMPLE: [0],
    Experiment.TYPE1: [testing.N_PERMUTATIONS],
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    experiment: Experiment = Experiment.TYPE1
    N: int = 100
    M: int = 100
    s: int | None = None
    d: int = 1
    sweep: list = field(default_factory=list)
    reps: int = 200
    alpha: float = testing.ALPHA
    w: float = 1.0
    w_tilde: float | None = None
    B: int = testing.N_PERMUTATIONS
    lambda_L: float = testing.LAMBDA_LOW
    lambda_U: float = testing.LAMBDA_HIGH
    w_L: float = testing.W_LOW
    w_U: float = testing.W_HIGH
    kernel: KernelFamily = KernelFamily.GAUSSIAN
    regularizer: RegularizerKind = RegularizerKind.TIKHONOV
    method: Method = Method.SPECTRAL
    master_seed: int = 0
    threads: int = 1
    x_path: str | None = None
    y_path: str | None = None
    has_header: bool = False
    mnist_images: str | None = None
    mnist_labels: str | None = None
    timing: bool = False

    @property
    def held_out(self) -> int:
        """``s``, defaulting to ``(N + M) / 20``."""
        if self.s is not None:
            return self.s
        return max(2, (self.N + self.M) // 20)

    @property
    def sweep_values(self) -> list:
        return list(self.sweep) if self.sweep else list(DEFAULT_SWEEPS[self.experiment])

    @property
    def sweep_name(self) -> str:
        return SWEEP_NAMES[self.experiment]

    def validate(self) -> "ExperimentConfig":
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if self.reps < 1:
            bad("reps", "must be >= 1")
        if self.N < 4 or self.M < 4:
            bad("N" if self.N < 4 else "M", "must be >= 4")
        if self.d < 1:
            bad("d", "must be >= 1")
        s = self.held_out
        if not (2 <= s <= min(self.N, self.M) - 2):
            bad("s", f"must lie in [2, min(N, M) - 2] = [2, {min(self.N, self.M) - 2}], got {s}")
        if not (0 < self.alpha < 1):
            bad("alpha", "must lie in (0, 1)")
        if not (0 < self.w <= 1):
            bad("w", "must lie in (0, 1]")
        if self.w_tilde is not None and not (0 < self.w_tilde < 1 - self.w):
            bad("w_tilde", "must satisfy 0 < w_tilde < 1 - w")
        if self.B < 1:
            bad("B", "must be >= 1")
        if not (0 < self.lambda_L <= self.lambda_U):
            bad("lambda_L", "need 0 < lambda_L <= lambda_U")
        if not (0 < self.w_L <= self.w_U):
            bad("w_L", "need 0 < w_L <= w_U")
        if self.threads < 1:
            bad("threads", "must be >= 1")
        exp = self.experiment
        values = self.sweep_values
        if exp is Experiment.PERTURBED_UNIFORM:
            if self.d not in (1, 2):
                bad("d", "perturbed_uniform supports d in {1, 2}")
            if any(int(v) != v or v < 1 for v in values):
                bad("sweep", "perturbation counts P must be positive integers")
        if exp in (Experiment.VMF_VS_UNIFORM, Experiment.WATSON_VS_UNIFORM):
            if self.d < 2:
                bad("d", "spherical experiments need d >= 2")
            if any(v < 0 for v in values):
                bad("sweep", "concentrations must be >= 0")
        if exp is Experiment.GAUSSIAN_SCALE and any(v <= 0 for v in values):
            bad("sweep", "variances must be positive")
        if exp is Experiment.MNIST_SUBSETS:
            if not (self.mnist_images and self.mnist_labels):
                bad("mnist_images", "mnist_subsets needs mnist_images and mnist_labels")
            if any(v not in (1, 2, 3, 4, 5) for v in values):
                bad("sweep", "digit-set indices must be in 1..5")
        if exp is Experiment.CSV_TWO_SAMPLE and not (self.x_path and self.y_path):
            bad("x_path", "csv_two_sample needs x_path and y_path")
        if exp is Experiment.TYPE1 and any(int(v) != v or v < 1 for v in values):
            bad("sweep", "type1 sweeps the permutation count B; values must be positive integers")
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return coerce(dataclasses.replace(self, **changes))


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_ALIASES = {"seed": "master_seed", "kernel_family": "kernel", "regularizer_kind": "regularizer"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(name: str, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if name == "sweep":
        return [float(v) for v in text.replace(",", " ").split()]
    if text.lower() in ("", "none") and name in ("s", "w_tilde", "x_path", "y_path",
                                                   "mnist_images", "mnist_labels"):
        return None
    if name in ("N", "M", "s", "d", "reps", "B", "master_seed", "threads"):
        return int(text)
    if name in ("alpha", "w", "w_tilde", "lambda_L", "lambda_U", "w_L", "w_U"):
        return float(text)
    if name in ("has_header", "timing"):
        return _parse_bool(text)
    return text


def coerce(cfg: ExperimentConfig) -> ExperimentConfig:
    """Convert string-valued enum fields; raises :class:`ConfigError` on unknown values."""
    for name, enum in (("experiment", Experiment), ("kernel", KernelFamily),
                       ("regularizer", RegularizerKind), ("method", Method)):
        try:
            setattr(cfg, name, enum(getattr(cfg, name)))
        except ValueError:
            choices = ", ".join(e.value for e in enum)
            raise ConfigError(f"{name}: unknown value {getattr(cfg, name)!r} (choose from {choices})") from None
    return cfg


def from_mapping(values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for key, raw in values.items():
        if raw is None:
            continue
        name = _ALIASES.get(key, key)
        if name not in _FIELDS:
            raise ConfigError(f"{key}: unknown configuration key")
        try:
            setattr(cfg, name, _parse_value(name, raw))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return coerce(cfg)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values
