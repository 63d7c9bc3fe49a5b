"""End-to-end VSCOUT run: train, filter, refine, baseline, 2-of-4 consensus."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.stats import binom, chi2, rankdata
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_is_fitted

from . import ardvae
from .ardvae import LatentSummary, TrainConfig, VaeState
from .changepoint import PeltConfig, Segmentation, changepoint_flags, latent_magnitude, pelt_segment
from .detectors import EnsembleConfig, EnsembleResult, LatentEnsemble, _ridge_factor, majority_votes
from .exceptions import CalibrationError, ConfigError, DegenerateInputError, PipelineError
from .numerics import check_data_matrix, cholesky_solve, covariance_matrix, empirical_quantile, make_rng

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 20


@dataclass
class PipelineConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    pelt: PeltConfig = field(default_factory=PeltConfig)
    alpha_t2: float = 0.05
    alpha_rec: float = 0.05
    refine_epochs: int | None = None
    alpha_global: float | None = None
    recompute_changepoints: bool = False
    seed: int = 0

    def validate(self) -> None:
        self.train.validate()
        self.ensemble.validate()
        self.pelt.validate()
        for name in ("alpha_t2", "alpha_rec"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.alpha_global is not None and not 0.0 < self.alpha_global < 1.0:
            raise ConfigError(f"alpha_global must lie in (0, 1), got {self.alpha_global}")
        if self.refine_epochs is not None and self.refine_epochs < 0:
            raise ConfigError("refine_epochs must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["ensemble"]["detectors"] = list(self.ensemble.detectors)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PipelineConfig:
        """Build a config, rejecting unknown keys at every level."""
        sub = {"train": TrainConfig, "ensemble": EnsembleConfig, "pelt": PeltConfig}
        kwargs: dict[str, Any] = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key in sub:
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                fields = {f.name for f in dataclasses.fields(sub[key])}
                extra = set(value) - fields
                if extra:
                    raise ConfigError(f"unknown keys in {key!r}: {sorted(extra)}")
                if key == "ensemble" and "detectors" in value:
                    value = {**value, "detectors": tuple(value["detectors"])}
                kwargs[key] = sub[key](**value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class IcBaseline:
    mu_ic: np.ndarray
    sigma_ic: np.ndarray
    t2_threshold: float
    recon_cutoff: float = float("nan")
    n_in: int = 0
    ridge: float = 0.0
    chol: np.ndarray | None = field(default=None, repr=False)


@dataclass
class FlagSet:
    c: np.ndarray
    e: np.ndarray
    u: np.ndarray
    q: np.ndarray
    m: np.ndarray
    y_hat: np.ndarray
    anomaly_score: np.ndarray
    c0: np.ndarray
    e0: np.ndarray


@dataclass
class VscoutResult:
    flags: FlagSet
    baseline: IcBaseline
    latent: LatentSummary
    t2: np.ndarray
    recon_error: np.ndarray
    state: VaeState = field(repr=False)
    segmentation: Segmentation = field(default_factory=Segmentation)
    diagnostics: dict[str, Any] = field(default_factory=dict)


def ensemble_rate(alpha0: float, m: int, rule: str) -> float:
    """Ensemble false-alarm rate of ``m`` independent detectors at level ``alpha0``."""
    if rule == "any":
        return m * alpha0
    if rule == "all":
        return alpha0**m
    if rule == "majority":
        k = majority_votes(m)
        return float(binom.sf(k - 1, m, alpha0))
    raise ConfigError(f"unknown rule {rule!r}")


def calibrate_alphas(alpha_global: float, m: int, rule: str) -> tuple[float, float, float]:
    """Componentwise levels that target a global 2-of-4 false-alarm rate.

    With four indicators at a common level ``a``, the six pairwise products
    give ``alpha_global ~ 6 a^2``. The ensemble level is set to that same
    ``a`` and the per-detector level is solved from the voting rule.

    Returns:
        ``(alpha_base, alpha_ens, alpha0)``.
    """
    if not 0.0 < alpha_global < 1.0:
        raise CalibrationError(f"alpha_global must lie in (0, 1), got {alpha_global}")
    if m < 1:
        raise CalibrationError(f"need at least one detector, got m={m}")
    alpha_base = math.sqrt(alpha_global / 6.0)
    alpha_ens = alpha_base
    if rule == "any":
        alpha0 = alpha_ens / m
    elif rule == "all":
        alpha0 = alpha_ens ** (1.0 / m)
    elif rule == "majority":
        lo, hi = 0.0, 1.0
        while hi - lo > 1e-12:
            mid = 0.5 * (lo + hi)
            if ensemble_rate(mid, m, rule) < alpha_ens:
                lo = mid
            else:
                hi = mid
        alpha0 = 0.5 * (lo + hi)
    else:
        raise CalibrationError(f"unknown rule {rule!r}")
    if not 0.0 < alpha0 < 1.0:
        raise CalibrationError(f"no per-detector level in (0, 1) for rule {rule!r}, m={m}")
    return alpha_base, alpha_ens, alpha0


def estimate_ic_stats(Z_in, alpha_t2: float) -> IcBaseline:
    """IC mean, covariance and T^2 limit from the refined inlier latents.

    A ridge ``1e-6 * trace / d`` is added when the covariance is not safely
    positive definite. ``h`` is the empirical ``1 - alpha_t2`` quantile of the
    inlier T^2 values, or the chi-square quantile when fewer than ``5 d``
    inliers are available.
    """
    Z_in = np.asarray(Z_in, dtype=np.float64)
    if Z_in.ndim == 1:
        Z_in = Z_in.reshape(-1, 1)
    n_in, d = Z_in.shape
    if n_in < 3:
        raise DegenerateInputError(f"need at least 3 inliers, got {n_in}")
    mu = Z_in.mean(axis=0)
    sigma = covariance_matrix(Z_in)
    L, ridge = _ridge_factor(sigma)
    baseline = IcBaseline(mu_ic=mu, sigma_ic=sigma, t2_threshold=0.0, n_in=n_in, ridge=ridge, chol=L)
    t2 = hotelling_t2(Z_in, baseline)
    if n_in < 5 * d:
        baseline.t2_threshold = float(chi2.ppf(1.0 - alpha_t2, d))
    else:
        baseline.t2_threshold = empirical_quantile(t2, 1.0 - alpha_t2)
    return baseline


def hotelling_t2(Z, baseline: IcBaseline) -> np.ndarray:
    """``(z - mu_IC)^T Sigma_IC^{-1} (z - mu_IC)`` for each row (or one vector)."""
    Z = np.asarray(Z, dtype=np.float64)
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    L = baseline.chol if baseline.chol is not None else _ridge_factor(baseline.sigma_ic)[0]
    diff = Z - baseline.mu_ic
    t2 = np.einsum("ij,ji->i", diff, cholesky_solve(L, diff.T))
    t2 = np.maximum(t2, 0.0)
    return float(t2[0]) if single else t2


def consensus_label(c, e, u, q) -> np.ndarray:
    """Out-of-control when at least two of the four indicators fire."""
    votes = sum(np.asarray(v, dtype=np.int64) for v in (c, e, u, q))
    return votes >= 2


def percentile_rank(values) -> np.ndarray:
    """``(rank - 1) / (n - 1)`` with average ranks for ties, in [0, 1]."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return np.zeros(values.size)
    return (rankdata(values, method="average") - 1.0) / (values.size - 1)


def anomaly_score(c, e, t2_values, r_values) -> np.ndarray:
    """Continuous 0-4 score: both flags plus percentile ranks of T^2 and r."""
    return (
        np.asarray(c, dtype=np.float64)
        + np.asarray(e, dtype=np.float64)
        + percentile_rank(t2_values)
        + percentile_rank(r_values)
    )


def run_vscout(X, cfg: PipelineConfig | None = None, seed: int | None = None) -> VscoutResult:
    """Run all four steps on the retrospective sample ``X``.

    ``seed`` overrides ``cfg.seed``; every stage draws from its own child
    stream so the run is fully determined by (data, config, seed).
    """
    cfg = cfg or PipelineConfig()
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    X = check_data_matrix(X)
    n, p = X.shape
    if n < MIN_OBSERVATIONS:
        raise DegenerateInputError(f"need at least {MIN_OBSERVATIONS} observations, got {n}")

    tcfg = cfg.train
    ecfg = dataclasses.replace(cfg.ensemble, seed=seed)
    alpha_t2, alpha_rec = cfg.alpha_t2, cfg.alpha_rec
    diagnostics: dict[str, Any] = {}

    # Step 1
    state = ardvae.init_state(tcfg, p, make_rng(seed, 0))
    state, summary1, history = ardvae.train(state, X, tcfg, make_rng(seed, 1))
    Z = summary1.mu_star
    diagnostics["loss_history"] = history
    diagnostics["d_eff_initial"] = summary1.d_eff
    diagnostics["relevant_initial"] = summary1.relevant.tolist()

    if cfg.alpha_global is not None:
        m = len(LatentEnsemble(ecfg).member_names(summary1.d_eff))
        alpha_base, alpha_ens, alpha0 = calibrate_alphas(cfg.alpha_global, m, ecfg.rule)
        alpha_t2 = alpha_rec = alpha_base
        ecfg = dataclasses.replace(ecfg, per_detector_alpha=alpha0)
        diagnostics["calibration"] = {
            "alpha_base": alpha_base,
            "alpha_ens": alpha_ens,
            "alpha0": alpha0,
            "note": "PELT penalty left unchanged; no mapping to alpha_cp is defined",
        }

    # Step 2b
    segmentation = pelt_segment(latent_magnitude(Z), cfg.pelt)
    c0 = changepoint_flags(segmentation, n)

    # Step 2a
    ensemble = LatentEnsemble(ecfg).fit(Z)
    provisional = ensemble.evaluate(Z, np.arange(n))
    e0 = provisional.flags
    mask = ~(e0 | c0)
    n_in = int(mask.sum())
    diagnostics["provisional_counts"] = provisional.counts
    if n_in == 0:
        raise PipelineError("no inliers retained after provisional filtering")

    # Step 3
    state, summary_in, changed = ardvae.refine(
        state, X[mask], tcfg, make_rng(seed, 2),
        relevant=summary1.relevant, max_epochs=cfg.refine_epochs,
    )
    relevant = summary_in.relevant
    mu_all, log_var_all = ardvae.encode(state, X)
    kl_all = ardvae.kl_per_dimension(mu_all, log_var_all, state.alpha).mean(axis=0)
    latent = LatentSummary(mu=mu_all, log_var=log_var_all, relevant=relevant, kl=kl_all)
    Z_ref = latent.mu_star
    Z_in = Z_ref[mask]
    diagnostics["refined_weights_kept"] = changed
    diagnostics["d_eff_final"] = latent.d_eff
    diagnostics["relevant_final"] = relevant.tolist()

    if cfg.recompute_changepoints:
        segmentation = pelt_segment(latent_magnitude(Z_ref), cfg.pelt)
    c = changepoint_flags(segmentation, n)

    # Step 4
    baseline = estimate_ic_stats(Z_in, alpha_t2)
    t2 = hotelling_t2(Z_ref, baseline)
    recon = ardvae.reconstruction_errors(state, X)
    baseline.recon_cutoff = empirical_quantile(recon[mask], 1.0 - alpha_rec)

    ref_index = np.full(n, -1)
    ref_index[mask] = np.arange(n_in)
    final: EnsembleResult = LatentEnsemble(ecfg).fit(Z_in).evaluate(Z_ref, ref_index)
    e = final.flags

    u = t2 > baseline.t2_threshold
    q = recon > baseline.recon_cutoff
    y_hat = consensus_label(c, e, u, q)
    flags = FlagSet(
        c=c, e=e, u=u, q=q, m=mask, y_hat=y_hat,
        anomaly_score=anomaly_score(c, e, t2, recon), c0=c0, e0=e0,
    )
    diagnostics.update(
        tau_star=segmentation.tau_star,
        changepoints=list(segmentation.changepoints),
        n_in=n_in,
        final_counts=final.counts,
        indicator_counts={k: int(getattr(flags, k).sum()) for k in ("c", "e", "u", "q")},
        alpha_t2=alpha_t2,
        alpha_rec=alpha_rec,
        per_detector_alpha=ecfg.per_detector_alpha,
    )
    logger.info(
        "VSCOUT: d_eff %d -> %d, tau*=%s, n_in=%d, flagged=%d",
        summary1.d_eff, latent.d_eff, segmentation.tau_star, n_in, int(y_hat.sum()),
    )
    return VscoutResult(
        flags=flags, baseline=baseline, latent=latent, t2=t2, recon_error=recon,
        state=state, segmentation=segmentation, diagnostics=diagnostics,
    )


class VSCOUT(OutlierMixin, BaseEstimator):
    """Retrospective (Phase I) outlier labelling as a scikit-learn estimator.

    ``fit`` runs the full pipeline on ``X``; ``labels_`` holds 0/1
    out-of-control labels and ``predict`` returns them in the scikit-learn
    outlier convention (-1 outlier, 1 inlier) for the fitted sample.
    ``score_samples`` on new data returns the negated T^2 against the fitted
    IC baseline.
    """

    def __init__(
        self,
        hidden: int = 64,
        latent: int = 32,
        learning_rate: float = 1e-4,
        kl_threshold: float = 1.0,
        patience: int = 10,
        max_epochs: int = 500,
        batch_size: int = 64,
        penalty: float = 40.0,
        min_segment_length: int = 10,
        rule: str = "any",
        per_detector_alpha: float = 0.05,
        contamination_cap: float = 0.10,
        alpha_t2: float = 0.05,
        alpha_rec: float = 0.05,
        alpha_global: float | None = None,
        random_state: int = 0,
    ) -> None:
        self.hidden = hidden
        self.latent = latent
        self.learning_rate = learning_rate
        self.kl_threshold = kl_threshold
        self.patience = patience
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.penalty = penalty
        self.min_segment_length = min_segment_length
        self.rule = rule
        self.per_detector_alpha = per_detector_alpha
        self.contamination_cap = contamination_cap
        self.alpha_t2 = alpha_t2
        self.alpha_rec = alpha_rec
        self.alpha_global = alpha_global
        self.random_state = random_state

    def to_config(self) -> PipelineConfig:
        return PipelineConfig(
            train=TrainConfig(
                hidden=self.hidden, latent=self.latent, learning_rate=self.learning_rate,
                kl_threshold=self.kl_threshold, patience=self.patience,
                max_epochs=self.max_epochs, batch_size=self.batch_size,
            ),
            ensemble=EnsembleConfig(
                rule=self.rule, per_detector_alpha=self.per_detector_alpha,
                contamination_cap=self.contamination_cap,
            ),
            pelt=PeltConfig(penalty=self.penalty, min_segment_length=self.min_segment_length),
            alpha_t2=self.alpha_t2,
            alpha_rec=self.alpha_rec,
            alpha_global=self.alpha_global,
            seed=self.random_state,
        )

    def fit(self, X, y=None) -> VSCOUT:
        X = check_data_matrix(X)
        self.result_ = run_vscout(X, self.to_config())
        self.labels_ = self.result_.flags.y_hat.astype(np.int64)
        self.n_features_in_ = X.shape[1]
        return self

    def fit_predict(self, X, y=None) -> np.ndarray:
        self.fit(X)
        return np.where(self.labels_ == 1, -1, 1)

    def _latent(self, X) -> np.ndarray:
        mu, _ = ardvae.encode(self.result_.state, X)
        return mu[:, self.result_.latent.relevant]

    def predict(self, X) -> np.ndarray:
        """Phase-I style labels for ``X`` from the T^2 and reconstruction limits."""
        check_is_fitted(self, "result_")
        X = check_data_matrix(X, min_rows=1)
        base = self.result_.baseline
        u = hotelling_t2(self._latent(X), base) > base.t2_threshold
        q = ardvae.reconstruction_errors(self.result_.state, X) > base.recon_cutoff
        return np.where(u & q, -1, 1)

    def score_samples(self, X) -> np.ndarray:
        """Negated T^2 of ``X`` under the fitted IC baseline (higher = more normal)."""
        check_is_fitted(self, "result_")
        X = check_data_matrix(X, min_rows=1)
        return -hotelling_t2(self._latent(X), self.result_.baseline)
