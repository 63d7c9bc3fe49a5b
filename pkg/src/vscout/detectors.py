"""Classical outlier detectors for the relevant latent subspace.

Every detector follows the same small protocol: ``fit(Z)`` learns from a
reference set and records leave-self-out scores of that set in
``train_scores_``; ``score(Z, ref_index)`` scores arbitrary query rows, where
``ref_index[i] >= 0`` marks query ``i`` as reference row ``ref_index[i]`` so it
is not counted as its own neighbour. Higher scores are more anomalous.

The module-level ``*_scores`` functions score a single matrix against itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from .exceptions import ConfigError, DegenerateInputError
from .numerics import cholesky, cholesky_solve, covariance_matrix, empirical_quantile, make_rng

DETECTOR_NAMES = ("knn", "lof", "iforest", "ecod", "hbos", "kde", "t2_latent", "boxplot")
CONSENSUS_RULES = ("any", "all", "majority")

RIDGE_LAMBDA = 1e-6
MAX_CONDITION = 1e8
KDE_BANDWIDTH_FLOOR = 1e-6


@dataclass
class DetectorScores:
    detector_id: str
    scores: np.ndarray
    flags: np.ndarray


@dataclass
class EnsembleConfig:
    """Ensemble membership, voting rule and detector hyperparameters.

    ``iforest_subsample`` and ``hbos_bins`` default to ``min(256, n)`` and
    ``ceil(sqrt(n))`` of the reference set when left as ``None``.
    """

    detectors: tuple[str, ...] = ("knn", "lof", "iforest", "ecod", "hbos", "kde", "t2_latent")
    rule: str = "any"
    per_detector_alpha: float = 0.05
    contamination_cap: float = 0.10
    knn_k: int = 5
    lof_k: int = 20
    iforest_trees: int = 100
    iforest_subsample: int | None = None
    hbos_bins: int | None = None
    seed: int = 0

    def validate(self) -> None:
        unknown = set(self.detectors) - set(DETECTOR_NAMES)
        if unknown:
            raise ConfigError(f"unknown detectors: {sorted(unknown)}")
        if not self.detectors:
            raise ConfigError("the ensemble needs at least one detector")
        if self.rule not in CONSENSUS_RULES:
            raise ConfigError(f"rule must be one of {CONSENSUS_RULES}, got {self.rule!r}")
        if not 0.0 < self.per_detector_alpha < 1.0:
            raise ConfigError("per_detector_alpha must lie in (0, 1)")
        if not 0.0 < self.contamination_cap <= 1.0:
            raise ConfigError("contamination_cap must lie in (0, 1]")
        if self.knn_k < 1 or self.lof_k < 1 or self.iforest_trees < 1:
            raise ConfigError("knn_k, lof_k and iforest_trees must be >= 1")


def _as_2d(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    return Z.reshape(-1, 1) if Z.ndim == 1 else Z


def _self_mask(n_query: int, n_ref: int, ref_index) -> np.ndarray | None:
    if ref_index is None:
        return None
    ref_index = np.asarray(ref_index)
    rows = np.flatnonzero(ref_index >= 0)
    mask = np.zeros((n_query, n_ref), dtype=bool)
    mask[rows, ref_index[rows]] = True
    return mask


def pairwise_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Euclidean distances between the rows of ``A`` and ``B``."""
    diff = A[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _neighbours(dist: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the ``k`` nearest columns of each row.

    Ties are broken by the lower column index.
    """
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(dist, order, axis=1)


class KNNDetector:
    name = "knn"

    def __init__(self, k: int = 5) -> None:
        self.k = k

    def fit(self, Z) -> KNNDetector:
        Z = _as_2d(Z)
        if Z.shape[0] <= self.k:
            raise ConfigError(f"knn needs more than k={self.k} rows, got {Z.shape[0]}")
        self.ref_ = Z
        self.train_scores_ = self.score(Z, np.arange(Z.shape[0]))
        return self

    def score(self, Z, ref_index=None) -> np.ndarray:
        Z = _as_2d(Z)
        dist = pairwise_distances(Z, self.ref_)
        mask = _self_mask(Z.shape[0], self.ref_.shape[0], ref_index)
        if mask is not None:
            dist[mask] = np.inf
        return np.partition(dist, self.k - 1, axis=1)[:, self.k - 1]


class LOFDetector:
    """Local outlier factor with exactly ``k`` neighbours per point."""

    name = "lof"

    def __init__(self, k: int = 20) -> None:
        self.k = k

    def fit(self, Z) -> LOFDetector:
        Z = _as_2d(Z)
        n = Z.shape[0]
        if n <= self.k:
            raise ConfigError(f"lof needs more than k={self.k} rows, got {n}")
        self.ref_ = Z
        dist = pairwise_distances(Z, Z)
        np.fill_diagonal(dist, np.inf)
        idx, nd = _neighbours(dist, self.k)
        self.k_distance_ = nd[:, -1]
        self.lrd_ = self._lrd(idx, nd)
        self.train_scores_ = self.lrd_[idx].mean(axis=1) / self.lrd_
        return self

    def _lrd(self, idx: np.ndarray, nd: np.ndarray) -> np.ndarray:
        reach = np.maximum(nd, self.k_distance_[idx])
        # duplicates give a zero mean reach distance
        return 1.0 / (reach.mean(axis=1) + 1e-10)

    def score(self, Z, ref_index=None) -> np.ndarray:
        Z = _as_2d(Z)
        dist = pairwise_distances(Z, self.ref_)
        mask = _self_mask(Z.shape[0], self.ref_.shape[0], ref_index)
        if mask is not None:
            dist[mask] = np.inf
        idx, nd = _neighbours(dist, self.k)
        lrd = self._lrd(idx, nd)
        return self.lrd_[idx].mean(axis=1) / lrd


def average_path_length(m) -> np.ndarray:
    """``c(m) = 2 H(m-1) - 2 (m-1) / m`` with exact harmonic numbers; c(1) = 0."""
    m = np.atleast_1d(np.asarray(m, dtype=np.int64))
    top = int(max(m.max(), 2))
    harmonic = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, top + 1))])
    out = np.zeros(m.shape, dtype=np.float64)
    big = m > 1
    mm = m[big]
    out[big] = 2.0 * harmonic[mm - 1] - 2.0 * (mm - 1) / mm
    return out


class _IsolationTree:
    __slots__ = ("feature", "threshold", "left", "right", "size")

    def __init__(self, Z: np.ndarray, rng: np.random.Generator, max_depth: int) -> None:
        feature: list[int] = []
        threshold: list[float] = []
        left: list[int] = []
        right: list[int] = []
        size: list[int] = []

        def build(rows: np.ndarray, depth: int) -> int:
            node = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            size.append(rows.size)
            if depth >= max_depth or rows.size <= 1:
                return node
            sub = Z[rows]
            lo, hi = sub.min(axis=0), sub.max(axis=0)
            varying = np.flatnonzero(hi > lo)
            if varying.size == 0:
                return node
            f = int(varying[rng.integers(varying.size)])
            t = float(rng.uniform(lo[f], hi[f]))
            go_left = sub[:, f] < t
            feature[node] = f
            threshold[node] = t
            left[node] = build(rows[go_left], depth + 1)
            right[node] = build(rows[~go_left], depth + 1)
            return node

        build(np.arange(Z.shape[0]), 0)
        self.feature = np.array(feature)
        self.threshold = np.array(threshold)
        self.left = np.array(left)
        self.right = np.array(right)
        self.size = np.array(size)

    def path_lengths(self, Z: np.ndarray) -> np.ndarray:
        out = np.zeros(Z.shape[0])
        stack = [(0, np.arange(Z.shape[0]), 0)]
        while stack:
            node, rows, depth = stack.pop()
            if rows.size == 0:
                continue
            f = self.feature[node]
            if f < 0:
                out[rows] = depth + average_path_length(self.size[node])[0]
                continue
            go_left = Z[rows, f] < self.threshold[node]
            stack.append((self.left[node], rows[go_left], depth + 1))
            stack.append((self.right[node], rows[~go_left], depth + 1))
        return out


class IsolationForestDetector:
    name = "iforest"

    def __init__(self, trees: int = 100, subsample: int | None = None, seed: int = 0) -> None:
        self.trees = trees
        self.subsample = subsample
        self.seed = seed

    def fit(self, Z) -> IsolationForestDetector:
        Z = _as_2d(Z)
        n = Z.shape[0]
        if n < 2:
            raise DegenerateInputError("isolation forest needs at least 2 rows")
        m = min(256, n) if self.subsample is None else min(self.subsample, n)
        rng = make_rng(self.seed, 17)
        depth = math.ceil(math.log2(m)) if m > 1 else 1
        self.subsample_ = m
        self.trees_ = [
            _IsolationTree(Z[rng.choice(n, size=m, replace=False)], rng, depth)
            for _ in range(self.trees)
        ]
        self.train_scores_ = self.score(Z)
        return self

    def mean_path_length(self, Z) -> np.ndarray:
        Z = _as_2d(Z)
        return np.mean([t.path_lengths(Z) for t in self.trees_], axis=0)

    def score(self, Z, ref_index=None) -> np.ndarray:
        c = average_path_length(self.subsample_)[0]
        return 2.0 ** (-self.mean_path_length(Z) / c)


class ECODDetector:
    """Empirical-CDF tail scores, summing the worse tail of every dimension."""

    name = "ecod"

    def fit(self, Z) -> ECODDetector:
        Z = _as_2d(Z)
        if Z.shape[0] < 2:
            raise DegenerateInputError("ecod needs at least 2 rows")
        self.sorted_ = np.sort(Z, axis=0)
        self.train_scores_ = self.score(Z)
        return self

    def score(self, Z, ref_index=None) -> np.ndarray:
        Z = _as_2d(Z)
        n = self.sorted_.shape[0]
        total = np.zeros(Z.shape[0])
        for j in range(Z.shape[1]):
            col = self.sorted_[:, j]
            left = np.searchsorted(col, Z[:, j], side="right") / n
            right = (n - np.searchsorted(col, Z[:, j], side="left")) / n
            left = np.maximum(left, 1.0 / n)
            right = np.maximum(right, 1.0 / n)
            total += np.maximum(-np.log(left), -np.log(right))
        return total


class HBOSDetector:
    """Histogram scores with +1 count smoothing and max-normalised heights."""

    name = "hbos"

    def __init__(self, bins: int | None = None) -> None:
        self.bins = bins

    def fit(self, Z) -> HBOSDetector:
        Z = _as_2d(Z)
        n = Z.shape[0]
        bins = math.ceil(math.sqrt(n)) if self.bins is None else self.bins
        if bins < 1:
            raise ConfigError(f"hbos needs at least one bin, got {bins}")
        self.bins_ = bins
        self.lo_ = Z.min(axis=0)
        self.hi_ = Z.max(axis=0)
        self.heights_ = []
        self.empty_height_ = []
        for j in range(Z.shape[1]):
            idx = self._bin_index(Z[:, j], j)
            counts = np.bincount(idx, minlength=bins).astype(np.float64) + 1.0
            self.heights_.append(counts / counts.max())
            # an empty bin holds the smoothing count only
            self.empty_height_.append(1.0 / counts.max())
        self.train_scores_ = self.score(Z)
        return self

    def _bin_index(self, col: np.ndarray, j: int) -> np.ndarray:
        lo, hi = self.lo_[j], self.hi_[j]
        if hi <= lo:
            return np.zeros(col.size, dtype=np.int64)
        idx = np.floor((col - lo) / (hi - lo) * self.bins_).astype(np.int64)
        # the maximum belongs to the last bin
        return np.minimum(idx, self.bins_ - 1)

    def score(self, Z, ref_index=None) -> np.ndarray:
        Z = _as_2d(Z)
        total = np.zeros(Z.shape[0])
        for j in range(Z.shape[1]):
            col = Z[:, j]
            lo, hi = self.lo_[j], self.hi_[j]
            outside = (col < lo) | (col > hi)
            height = self.heights_[j][self._bin_index(col, j).clip(0, self.bins_ - 1)]
            height = np.where(outside, self.empty_height_[j], height)
            total -= np.log(height)
        return total


class KDEDetector:
    """Gaussian product-kernel density with Scott's rule bandwidth."""

    name = "kde"

    def fit(self, Z) -> KDEDetector:
        Z = _as_2d(Z)
        n, d = Z.shape
        if n < 2:
            raise DegenerateInputError("kde needs at least 2 rows")
        sigma = Z.std(axis=0, ddof=1)
        self.bandwidth_ = np.maximum(sigma * n ** (-1.0 / (d + 4)), KDE_BANDWIDTH_FLOOR)
        self.ref_ = Z
        self.train_scores_ = self.score(Z)
        return self

    def log_density(self, Z) -> np.ndarray:
        Z = _as_2d(Z)
        h = self.bandwidth_
        u = (Z[:, None, :] - self.ref_[None, :, :]) / h
        log_kernel = -0.5 * np.sum(u**2, axis=2) - np.sum(np.log(h)) - 0.5 * Z.shape[1] * np.log(2 * np.pi)
        return logsumexp(log_kernel, axis=1) - np.log(self.ref_.shape[0])

    def score(self, Z, ref_index=None) -> np.ndarray:
        return -self.log_density(Z)


def _ridge_factor(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``cov``, adding a ridge when it is ill-conditioned.

    Returns the factor and the ridge that was added (0 when none).
    """
    d = cov.shape[0]
    ridge = 0.0
    try:
        L = cholesky(cov)
        diag = np.diag(L) ** 2
        if diag.min() <= 0 or np.linalg.cond(cov) > MAX_CONDITION:
            raise ArithmeticError
        return L, ridge
    except ArithmeticError:
        scale = np.trace(cov) / d
        if not scale > 0:
            scale = 1.0
        ridge = RIDGE_LAMBDA * scale
        return cholesky(cov + ridge * np.eye(d)), ridge


class HotellingDetector:
    """Squared Mahalanobis distance to the reference mean."""

    name = "t2_latent"

    def fit(self, Z) -> HotellingDetector:
        Z = _as_2d(Z)
        self.mean_ = Z.mean(axis=0)
        self.cov_ = covariance_matrix(Z)
        self.chol_, self.ridge_ = _ridge_factor(self.cov_)
        self.train_scores_ = self.score(Z)
        return self

    def score(self, Z, ref_index=None) -> np.ndarray:
        diff = _as_2d(Z) - self.mean_
        sol = cholesky_solve(self.chol_, diff.T)
        return np.einsum("ij,ji->i", diff, sol)


class BoxplotDetector:
    """Tukey fences on a single latent coordinate; flags are native."""

    name = "boxplot"

    def fit(self, Z) -> BoxplotDetector:
        Z = _as_2d(Z)
        if Z.shape[1] != 1:
            raise ConfigError("the boxplot rule needs a single latent dimension")
        q1 = empirical_quantile(Z[:, 0], 0.25)
        q3 = empirical_quantile(Z[:, 0], 0.75)
        iqr = q3 - q1
        self.fences_ = (q1 - 1.5 * iqr, q3 + 1.5 * iqr)
        self.train_scores_ = self.score(Z)
        return self

    def score(self, Z, ref_index=None) -> np.ndarray:
        z = _as_2d(Z)[:, 0]
        lo, hi = self.fences_
        return np.maximum(lo - z, 0.0) + np.maximum(z - hi, 0.0)

    def flags(self, scores: np.ndarray) -> np.ndarray:
        return scores > 0


def make_detector(name: str, cfg: EnsembleConfig):
    if name == "knn":
        return KNNDetector(cfg.knn_k)
    if name == "lof":
        return LOFDetector(cfg.lof_k)
    if name == "iforest":
        return IsolationForestDetector(cfg.iforest_trees, cfg.iforest_subsample, cfg.seed)
    if name == "ecod":
        return ECODDetector()
    if name == "hbos":
        return HBOSDetector(cfg.hbos_bins)
    if name == "kde":
        return KDEDetector()
    if name == "t2_latent":
        return HotellingDetector()
    if name == "boxplot":
        return BoxplotDetector()
    raise ConfigError(f"unknown detector {name!r}")


def threshold_by_quantile(scores, alpha0: float, reference=None) -> np.ndarray:
    """Flag scores strictly above the ``1 - alpha0`` quantile.

    The quantile is taken over ``reference`` when given (e.g. inlier scores),
    otherwise over ``scores`` themselves.
    """
    if not 0.0 < alpha0 < 1.0:
        raise ValueError(f"alpha0 must lie in (0, 1), got {alpha0}")
    scores = np.asarray(scores, dtype=np.float64)
    ref = scores if reference is None else np.asarray(reference, dtype=np.float64)
    return scores > empirical_quantile(ref, 1.0 - alpha0)


def aggregate(flag_sets: Sequence[np.ndarray], rule: str) -> np.ndarray:
    """Combine per-detector flags with the any / all / majority rule."""
    flags = np.asarray(flag_sets, dtype=bool)
    if flags.ndim != 2 or flags.shape[0] < 1:
        raise ValueError("need at least one flag vector")
    m = flags.shape[0]
    if rule == "any":
        return flags.any(axis=0)
    if rule == "all":
        return flags.all(axis=0)
    if rule == "majority":
        return flags.sum(axis=0) >= majority_votes(m)
    raise ConfigError(f"unknown rule {rule!r}")


def majority_votes(m: int) -> int:
    """Smallest strict majority of ``m`` voters, ``ceil((m + 1) / 2)``."""
    return (m + 2) // 2


def combined_rank_score(score_sets: Sequence[np.ndarray]) -> np.ndarray:
    """Mean percentile rank across detectors (average ranks for ties)."""
    score_sets = [np.asarray(s, dtype=np.float64) for s in score_sets]
    n = score_sets[0].size
    return np.mean([rankdata(s, method="average") / n for s in score_sets], axis=0)


def cap_contamination(flags, rank_score, cap: float, n: int | None = None) -> np.ndarray:
    """Keep at most ``ceil(cap * n)`` flags, preferring the highest rank scores.

    Ties in ``rank_score`` keep the lower index.
    """
    if not 0.0 < cap <= 1.0:
        raise ValueError(f"cap must lie in (0, 1], got {cap}")
    flags = np.asarray(flags, dtype=bool)
    n = flags.size if n is None else n
    limit = math.ceil(cap * n - 1e-9)
    if flags.sum() <= limit:
        return flags.copy()
    candidates = np.flatnonzero(flags)
    rank_score = np.asarray(rank_score, dtype=np.float64)
    # lexsort: last key is primary; descending score, then ascending index
    order = np.lexsort((candidates, -rank_score[candidates]))
    out = np.zeros_like(flags)
    out[candidates[order[:limit]]] = True
    return out


def _single(detector, Z, alpha0: float | None) -> DetectorScores:
    detector.fit(Z)
    scores = detector.train_scores_
    if isinstance(detector, BoxplotDetector):
        flags = detector.flags(scores)
    elif alpha0 is None:
        flags = np.zeros(scores.size, dtype=bool)
    else:
        flags = threshold_by_quantile(scores, alpha0)
    return DetectorScores(detector.name, scores, flags)


def knn_scores(Z, k: int = 5, alpha0: float | None = None) -> DetectorScores:
    return _single(KNNDetector(k), Z, alpha0)


def lof_scores(Z, k: int = 20, alpha0: float | None = None) -> DetectorScores:
    return _single(LOFDetector(k), Z, alpha0)


def iforest_scores(Z, trees: int = 100, subsample: int | None = None, seed: int = 0,
                   alpha0: float | None = None) -> DetectorScores:
    return _single(IsolationForestDetector(trees, subsample, seed), Z, alpha0)


def ecod_scores(Z, alpha0: float | None = None) -> DetectorScores:
    return _single(ECODDetector(), Z, alpha0)


def hbos_scores(Z, bins: int | None = None, alpha0: float | None = None) -> DetectorScores:
    return _single(HBOSDetector(bins), Z, alpha0)


def kde_scores(Z, alpha0: float | None = None) -> DetectorScores:
    return _single(KDEDetector(), Z, alpha0)


def t2_latent_scores(Z, alpha0: float | None = None) -> DetectorScores:
    return _single(HotellingDetector(), Z, alpha0)


def boxplot_flags(z) -> DetectorScores:
    return _single(BoxplotDetector(), z, None)


@dataclass
class EnsembleResult:
    """Per-detector outputs and the aggregated (capped) flags."""

    members: list[DetectorScores]
    raw_flags: np.ndarray
    rank_score: np.ndarray
    flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def counts(self) -> dict[str, int]:
        return {m.detector_id: int(m.flags.sum()) for m in self.members}


class LatentEnsemble:
    """Fit a set of detectors on reference latents and flag query latents.

    Thresholds come from the reference (leave-self-out) scores at the
    per-detector level ``alpha0``; the boxplot rule, added automatically for
    one-dimensional latents, uses its own fences.
    """

    def __init__(self, cfg: EnsembleConfig) -> None:
        cfg.validate()
        self.cfg = cfg

    def member_names(self, d_eff: int) -> list[str]:
        names = [n for n in self.cfg.detectors if n != "boxplot"]
        if d_eff == 1:
            names.append("boxplot")
        return names

    def fit(self, Z_ref) -> LatentEnsemble:
        Z_ref = _as_2d(Z_ref)
        self.detectors_ = []
        for name in self.member_names(Z_ref.shape[1]):
            det = make_detector(name, self.cfg)
            if name in ("knn", "lof") and Z_ref.shape[0] <= getattr(det, "k"):
                # shrink k on tiny reference sets instead of failing
                det.k = max(1, Z_ref.shape[0] - 1)
            self.detectors_.append(det.fit(Z_ref))
        return self

    def evaluate(self, Z, ref_index=None, *, cap: bool = True) -> EnsembleResult:
        Z = _as_2d(Z)
        members = []
        for det in self.detectors_:
            scores = det.score(Z, ref_index)
            if ref_index is not None:
                ref_index = np.asarray(ref_index)
                known = ref_index >= 0
                scores = scores.copy()
                scores[known] = det.train_scores_[ref_index[known]]
            if isinstance(det, BoxplotDetector):
                flags = det.flags(scores)
            else:
                flags = threshold_by_quantile(
                    scores, self.cfg.per_detector_alpha, reference=det.train_scores_
                )
            members.append(DetectorScores(det.name, scores, flags))
        raw = aggregate([m.flags for m in members], self.cfg.rule)
        rank = combined_rank_score([m.scores for m in members])
        flags = cap_contamination(raw, rank, self.cfg.contamination_cap) if cap else raw.copy()
        return EnsembleResult(members=members, raw_flags=raw, rank_score=rank, flags=flags)
