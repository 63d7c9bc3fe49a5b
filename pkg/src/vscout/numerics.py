"""Small dense linear-algebra, sampling and quantile helpers.

Every other module goes through these functions so that the conventions
(sample covariance with ``n - 1``, type-7 quantiles, Philox random streams)
stay identical across the package.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from scipy.linalg import lapack

from .exceptions import DegenerateInputError, IllConditionedError

Distribution = Literal["standard_normal", "student_t", "lognormal", "uniform01"]


def make_rng(seed: int | None, *keys: int) -> np.random.Generator:
    """Return a counter-based (Philox) generator for ``seed``.

    Extra integer ``keys`` derive independent child streams, so that each
    pipeline stage can own its generator without sharing state.

    >>> a = make_rng(7).standard_normal(3)
    >>> b = make_rng(7).standard_normal(3)
    >>> bool((a == b).all())
    True
    """
    if seed is None:
        seed = 0
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    entropy = [int(seed), *[int(k) for k in keys]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def check_data_matrix(X, *, min_rows: int = 2, name: str = "X") -> np.ndarray:
    """Validate an n x p observation matrix and return it as float64."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DegenerateInputError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise DegenerateInputError(
            f"{name} needs at least {min_rows} rows, got {X.shape[0]}"
        )
    if X.shape[1] < 1:
        raise DegenerateInputError(f"{name} needs at least one column")
    if not np.isfinite(X).all():
        bad = np.argwhere(~np.isfinite(X))[0]
        raise DegenerateInputError(
            f"{name} contains a non-finite value at row {bad[0]}, column {bad[1]}"
        )
    return X


def covariance_matrix(Z) -> np.ndarray:
    """Sample covariance (denominator ``n - 1``) of the rows of ``Z``."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z.reshape(-1, 1)
    n = Z.shape[0]
    if n < 2:
        raise DegenerateInputError(f"covariance needs at least 2 rows, got {n}")
    centered = Z - Z.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    # exact symmetry, the matmul can differ in the last bit
    return 0.5 * (cov + cov.T)


def cholesky(A) -> np.ndarray:
    """Lower Cholesky factor of ``A``.

    Raises:
        IllConditionedError: with the failing 1-based pivot when ``A`` is not
            positive definite, or ``pivot=None`` when ``A`` is not finite.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.isfinite(A).all():
        raise IllConditionedError("matrix has non-finite entries", pivot=None)
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise IllConditionedError(
            f"matrix is not positive definite (leading minor {info})", pivot=int(info)
        )
    if info < 0:  # pragma: no cover - only on malformed LAPACK arguments
        raise ValueError(f"dpotrf argument {-info} invalid")
    return L


def cholesky_solve(L: np.ndarray, b) -> np.ndarray:
    """Solve ``A x = b`` given the lower Cholesky factor of ``A``."""
    b = np.asarray(b, dtype=np.float64)
    x, info = lapack.dpotrs(L, b, lower=1)
    if info != 0:  # pragma: no cover
        raise ValueError(f"dpotrs argument {-info} invalid")
    return x


def solve_spd(A, b) -> np.ndarray:
    """Solve a symmetric positive-definite system through Cholesky.

    ``b`` may be a vector or a matrix of right-hand sides.
    """
    b = np.asarray(b, dtype=np.float64)
    if not np.isfinite(b).all():
        raise IllConditionedError("right-hand side has non-finite entries", pivot=None)
    return cholesky_solve(cholesky(A), b)


def empirical_quantile(values, level: float) -> float:
    """Linear-interpolation (type 7) quantile: index ``h = (n - 1) * level``."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise DegenerateInputError("quantile of an empty sample")
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"level must lie in [0, 1], got {level}")
    return float(np.quantile(values, level, method="linear"))


def sample(
    dist: Distribution,
    rng: np.random.Generator,
    count: int | tuple[int, ...],
    *,
    df: float = 5.0,
) -> np.ndarray:
    """Draw iid samples from one of the supported base distributions.

    ``student_t`` is built as ``N(0,1) / sqrt(chi2_df / df)`` and ``lognormal``
    as ``exp(N(0,1))``.
    """
    if dist == "standard_normal":
        return rng.standard_normal(count)
    if dist == "student_t":
        if df < 1:
            raise ValueError(f"student_t needs df >= 1, got {df}")
        normal = rng.standard_normal(count)
        chi2 = rng.chisquare(df, count)
        return normal / np.sqrt(chi2 / df)
    if dist == "lognormal":
        return np.exp(rng.standard_normal(count))
    if dist == "uniform01":
        return rng.random(count)
    raise ValueError(f"unknown distribution {dist!r}")
