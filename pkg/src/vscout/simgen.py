"""Monte Carlo scenarios: base distributions with transient or sustained mean shifts."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .numerics import make_rng, sample

DISTRIBUTIONS = ("normal", "t5", "lognormal", "mixed", "multimodal")
SHIFT_TYPES = ("transient", "sustained", "none")
MULTIMODAL_CENTER = 5.0


@dataclass
class ScenarioSpec:
    dist: str = "normal"
    n: int = 500
    p: int = 150
    delta: float = 0.0
    gamma: float = 0.0
    shift_type: str = "none"
    seed: int = 0

    def validate(self) -> None:
        if self.dist not in DISTRIBUTIONS:
            raise ConfigError(f"dist must be one of {DISTRIBUTIONS}, got {self.dist!r}")
        if self.shift_type not in SHIFT_TYPES:
            raise ConfigError(f"shift_type must be one of {SHIFT_TYPES}, got {self.shift_type!r}")
        if self.n < 2 or self.p < 1:
            raise ConfigError("need n >= 2 and p >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.delta < 0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        if self.shift_type == "none" and self.gamma > 0 and self.delta > 0:
            raise ConfigError("shift_type 'none' requires gamma = 0 or delta = 0")

    @property
    def contaminated(self) -> int:
        """Number of shifted rows, ``ceil(gamma * n)``; zero when no shift applies."""
        if self.shift_type == "none" or self.delta == 0 or self.gamma == 0:
            return 0
        if self.gamma * self.n < 1:
            return 0
        return math.ceil(self.gamma * self.n - 1e-9)


@dataclass
class LabeledSample:
    X: np.ndarray
    truth: np.ndarray
    warnings: list[str] = field(default_factory=list)


def _base_rows(dist: str, n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    if dist == "normal":
        return sample("standard_normal", rng, (n, p))
    if dist == "t5":
        return sample("student_t", rng, (n, p), df=5)
    if dist == "lognormal":
        return sample("lognormal", rng, (n, p))
    if dist == "mixed":
        use_t = rng.random(n) < 0.5
        normal = sample("standard_normal", rng, (n, p))
        heavy = sample("student_t", rng, (n, p), df=5)
        return np.where(use_t[:, None], heavy, normal)
    if dist == "multimodal":
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return sign[:, None] * MULTIMODAL_CENTER + sample("standard_normal", rng, (n, p))
    raise ConfigError(f"unknown distribution {dist!r}")


def generate(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> LabeledSample:
    """Draw one labelled sample; ``rng`` defaults to a stream seeded by ``spec.seed``."""
    spec.validate()
    rng = make_rng(spec.seed) if rng is None else rng
    X = _base_rows(spec.dist, spec.n, spec.p, rng)
    truth = np.zeros(spec.n, dtype=bool)
    warnings = []
    k = spec.contaminated
    if spec.shift_type != "none" and spec.delta > 0 and 0 < spec.gamma * spec.n < 1:
        warnings.append(
            f"gamma * n = {spec.gamma * spec.n:.3g} < 1: no rows were contaminated"
        )
    if k > 0:
        if spec.shift_type == "transient":
            idx = np.sort(rng.choice(spec.n, size=k, replace=False))
        else:
            idx = np.arange(spec.n - k, spec.n)
        X[idx] += spec.delta
        truth[idx] = True
    return LabeledSample(X=X, truth=truth, warnings=warnings)


def write_data_csv(path: str | Path, X: np.ndarray) -> None:
    """Header ``x1..xp``, one observation per line, 17 significant digits."""
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(X.shape[1])])
        for row in X:
            writer.writerow([format(v, ".17g") for v in row])


def write_labels_csv(path: str | Path, truth: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for v in np.asarray(truth, dtype=bool):
            writer.writerow([int(v)])
