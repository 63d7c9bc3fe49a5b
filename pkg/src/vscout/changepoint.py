"""Penalised L2 changepoint segmentation (PELT) of the latent magnitude series."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError


@dataclass
class PeltConfig:
    penalty: float = 40.0
    cost: str = "l2"
    min_segment_length: int = 10

    def validate(self) -> None:
        if not self.penalty > 0:
            raise ConfigError(f"penalty must be > 0, got {self.penalty}")
        if self.cost != "l2":
            raise ConfigError(f"only the 'l2' cost is supported, got {self.cost!r}")
        if self.min_segment_length < 1:
            raise ConfigError("min_segment_length must be >= 1")


@dataclass
class Segmentation:
    """Changepoints are segment ends: ``tau`` is the last (1-based) index of a segment."""

    changepoints: list[int] = field(default_factory=list)
    total_cost: float = 0.0

    @property
    def tau_star(self) -> int | None:
        return self.changepoints[0] if self.changepoints else None


def latent_magnitude(Z) -> np.ndarray:
    """Euclidean norm of every latent row."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z.reshape(-1, 1)
    if Z.shape[0] == 0:
        raise ValueError("empty latent matrix")
    return np.linalg.norm(Z, axis=1)


class L2Cost:
    """Segment cost ``sum (s_i - mean)^2`` from running sums.

    ``cost(a, b)`` covers the half-open range ``s[a:b]``.
    """

    def __init__(self, s) -> None:
        s = np.asarray(s, dtype=np.float64)
        self.csum = np.concatenate([[0.0], np.cumsum(s)])
        self.csum2 = np.concatenate([[0.0], np.cumsum(s * s)])

    def __call__(self, a, b):
        total = self.csum[b] - self.csum[a]
        return (self.csum2[b] - self.csum2[a]) - total * total / (b - a)


def pelt_segment(s, cfg: PeltConfig | None = None) -> Segmentation:
    """Exact minimiser of ``sum_k C(segment_k) + penalty * K``.

    Candidates are pruned with constant 0. A pruning decision taken at time
    ``t`` only becomes active ``min_segment_length`` steps later, which keeps
    the search exact under the minimum-length constraint.
    """
    cfg = cfg or PeltConfig()
    cfg.validate()
    s = np.asarray(s, dtype=np.float64).ravel()
    n = s.size
    m = cfg.min_segment_length
    beta = cfg.penalty
    cost = L2Cost(s)
    if n < 2 * m:
        return Segmentation([], float(cost(0, n)) if n else 0.0)

    F = np.full(n + 1, np.inf)
    F[0] = -beta
    last = np.zeros(n + 1, dtype=np.int64)
    candidates = np.array([0], dtype=np.int64)
    pruned_at = {}  # candidate -> time its pruning condition first held
    for t in range(m, n + 1):
        admissible = candidates[candidates <= t - m]
        admissible = np.array(
            [c for c in admissible if pruned_at.get(int(c), t) > t - m], dtype=np.int64
        )
        values = F[admissible] + cost(admissible, t)
        best = int(np.argmin(values))
        F[t] = values[best] + beta
        last[t] = admissible[best]
        for c, v in zip(admissible, values):
            if v > F[t] and int(c) not in pruned_at:
                pruned_at[int(c)] = t
        # drop candidates whose pruning is already in force for every later t
        keep = [c for c in candidates if pruned_at.get(int(c), n + 1) > t + 1 - m]
        candidates = np.array(keep + [t], dtype=np.int64)

    cps = []
    t = n
    while last[t] > 0:
        t = int(last[t])
        cps.append(t)
    cps.reverse()
    return Segmentation(cps, float(F[n]))


def optimal_partitioning(s, cfg: PeltConfig | None = None) -> Segmentation:
    """Unpruned O(n^2) dynamic program over all admissible last changepoints."""
    cfg = cfg or PeltConfig()
    cfg.validate()
    s = np.asarray(s, dtype=np.float64).ravel()
    n = s.size
    m = cfg.min_segment_length
    cost = L2Cost(s)
    if n < 2 * m:
        return Segmentation([], float(cost(0, n)) if n else 0.0)
    F = np.full(n + 1, np.inf)
    F[0] = -cfg.penalty
    last = np.zeros(n + 1, dtype=np.int64)
    for t in range(m, n + 1):
        starts = np.array([0] + list(range(m, t - m + 1)), dtype=np.int64)
        values = F[starts] + cost(starts, t)
        best = int(np.argmin(values))
        F[t] = values[best] + cfg.penalty
        last[t] = starts[best]
    cps = []
    t = n
    while last[t] > 0:
        t = int(last[t])
        cps.append(t)
    cps.reverse()
    return Segmentation(cps, float(F[n]))


def segmentation_cost(s, changepoints, penalty: float) -> float:
    """Penalised cost of a given segmentation, recomputed segment by segment."""
    s = np.asarray(s, dtype=np.float64).ravel()
    bounds = [0, *changepoints, s.size]
    total = 0.0
    for a, b in zip(bounds[:-1], bounds[1:]):
        seg = s[a:b]
        total += float(np.sum((seg - seg.mean()) ** 2))
    return total + penalty * len(changepoints)


def changepoint_flags(seg: Segmentation, n: int) -> np.ndarray:
    """Flag every observation strictly after the earliest changepoint."""
    flags = np.zeros(n, dtype=bool)
    if seg.tau_star is not None:
        # 1-based i > tau  <=>  0-based index >= tau
        flags[seg.tau_star:] = True
    return flags
