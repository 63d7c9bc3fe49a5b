"""Feed-forward variational autoencoder with an ARD latent prior.

The network has one ReLU hidden layer on each side::

    encoder:  x -> relu(x W1 + b1) -> (mu, log_var)
    decoder:  z -> relu(z Wd + bd) -> x_tilde

Each latent axis ``l`` has its own prior precision ``alpha[l]``; the KL term
of the ELBO therefore becomes dimension specific, and axes whose KL stays
below ``kl_threshold`` are pruned. Gradients are written out by hand and the
weights are trained with Adam.

Weights are stored ``(fan_in, fan_out)`` so that a layer is ``X @ W + b``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    ConfigError,
    DegenerateInputError,
    NumericalOverflowError,
    TrainingDivergedError,
)
from .numerics import check_data_matrix, make_rng

logger = logging.getLogger(__name__)

STATE_FORMAT_VERSION = 1

PARAM_NAMES = (
    "enc_w1",
    "enc_b1",
    "enc_w_mu",
    "enc_b_mu",
    "enc_w_lv",
    "enc_b_lv",
    "dec_w1",
    "dec_b1",
    "dec_w2",
    "dec_b2",
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Hyperparameters of ARD-VAE training."""

    hidden: int = 64
    latent: int = 32
    learning_rate: float = 1e-4
    beta: float = 1.0
    kl_threshold: float = 1.0
    patience: int = 10
    max_epochs: int = 500
    batch_size: int = 64
    a0: float = 1e-3
    b0: float = 1e-3
    min_delta: float = 1e-6
    seed: int = 0

    def validate(self, n: int | None = None) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.kl_threshold < 0:
            raise ConfigError(f"kl_threshold must be >= 0, got {self.kl_threshold}")
        if self.latent < 1 or self.hidden < 1:
            raise ConfigError("hidden and latent must be >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("max_epochs must be >= 0 and patience >= 1")
        if self.a0 < 0 or self.b0 < 0 or self.beta < 0:
            raise ConfigError("a0, b0 and beta must be non-negative")


@dataclass
class VaeState:
    """Network parameters, ARD precisions and Adam moments."""

    params: dict[str, np.ndarray]
    alpha: np.ndarray
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step_count: int = 0

    @property
    def n_features(self) -> int:
        return self.params["enc_w1"].shape[0]

    @property
    def hidden(self) -> int:
        return self.params["enc_w1"].shape[1]

    @property
    def latent(self) -> int:
        return self.alpha.shape[0]

    def copy(self) -> VaeState:
        return VaeState(
            params={k: v.copy() for k, v in self.params.items()},
            alpha=self.alpha.copy(),
            adam_m={k: v.copy() for k, v in self.adam_m.items()},
            adam_v={k: v.copy() for k, v in self.adam_v.items()},
            step_count=self.step_count,
        )

    def save(self, path: str | Path) -> None:
        """Write the state as an ``.npz`` archive; the round trip is bit-exact."""
        arrays = {f"param__{k}": v for k, v in self.params.items()}
        arrays.update({f"adam_m__{k}": v for k, v in self.adam_m.items()})
        arrays.update({f"adam_v__{k}": v for k, v in self.adam_v.items()})
        arrays["alpha"] = self.alpha
        arrays["step_count"] = np.array(self.step_count, dtype=np.int64)
        arrays["format_version"] = np.array(STATE_FORMAT_VERSION, dtype=np.int64)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> VaeState:
        with np.load(path) as data:
            version = int(data["format_version"])
            if version != STATE_FORMAT_VERSION:
                raise ValueError(f"unsupported VaeState format version {version}")
            params = {k: data[f"param__{k}"].copy() for k in PARAM_NAMES}
            adam_m = {k: data[f"adam_m__{k}"].copy() for k in PARAM_NAMES}
            adam_v = {k: data[f"adam_v__{k}"].copy() for k in PARAM_NAMES}
            return cls(
                params=params,
                alpha=data["alpha"].copy(),
                adam_m=adam_m,
                adam_v=adam_v,
                step_count=int(data["step_count"]),
            )


@dataclass
class LatentSummary:
    """Posterior statistics of a dataset and the selected relevant axes."""

    mu: np.ndarray
    log_var: np.ndarray
    relevant: np.ndarray
    kl: np.ndarray = field(repr=False)

    @property
    def d_eff(self) -> int:
        return int(self.relevant.size)

    @property
    def mu_star(self) -> np.ndarray:
        return self.mu[:, self.relevant]

    @property
    def var_star(self) -> np.ndarray:
        return np.exp(self.log_var[:, self.relevant])


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_state(cfg: TrainConfig, p: int, rng: np.random.Generator) -> VaeState:
    """Glorot-uniform weights, zero biases, unit precisions, zero moments."""
    if p < 1:
        raise ConfigError(f"need at least one input feature, got {p}")
    H, d = cfg.hidden, cfg.latent
    params = {
        "enc_w1": _glorot(rng, p, H),
        "enc_b1": np.zeros(H),
        "enc_w_mu": _glorot(rng, H, d),
        "enc_b_mu": np.zeros(d),
        "enc_w_lv": _glorot(rng, H, d),
        "enc_b_lv": np.zeros(d),
        "dec_w1": _glorot(rng, d, H),
        "dec_b1": np.zeros(H),
        "dec_w2": _glorot(rng, H, p),
        "dec_b2": np.zeros(p),
    }
    return VaeState(
        params=params,
        alpha=np.ones(d),
        adam_m={k: np.zeros_like(v) for k, v in params.items()},
        adam_v={k: np.zeros_like(v) for k, v in params.items()},
    )


def _relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0)


def encode(state: VaeState, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and log-variances, one row per observation."""
    P = state.params
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != state.n_features:
        raise ValueError(
            f"expected {state.n_features} columns, got array of shape {X.shape}"
        )
    h = _relu(X @ P["enc_w1"] + P["enc_b1"])
    mu = h @ P["enc_w_mu"] + P["enc_b_mu"]
    log_var = h @ P["enc_w_lv"] + P["enc_b_lv"]
    if not (np.isfinite(mu).all() and np.isfinite(log_var).all()):
        raise NumericalOverflowError("encoder produced non-finite activations")
    return mu, log_var


def reparameterize(mu, log_var, rng: np.random.Generator) -> np.ndarray:
    """``z = mu + exp(log_var / 2) * eps`` with ``eps ~ N(0, I)``."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    if mu.shape != log_var.shape:
        raise ValueError(f"shape mismatch {mu.shape} vs {log_var.shape}")
    eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * log_var) * eps


def decode(state: VaeState, z) -> np.ndarray:
    """Deterministic decoder mean ``x_tilde``."""
    P = state.params
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != state.latent:
        raise ValueError(f"expected {state.latent} latent columns, got {z.shape}")
    x_tilde = _relu(z @ P["dec_w1"] + P["dec_b1"]) @ P["dec_w2"] + P["dec_b2"]
    if not np.isfinite(x_tilde).all():
        raise NumericalOverflowError("decoder produced non-finite output")
    return x_tilde


def kl_per_dimension(mu, log_var, alpha) -> np.ndarray:
    """KL(N(mu, sigma^2) || N(0, 1/alpha)) for every observation and axis."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    return 0.5 * (alpha * (mu**2 + np.exp(log_var)) - 1.0 - np.log(alpha) - log_var)


def elbo_loss(
    state: VaeState,
    X_batch,
    beta: float,
    rng: np.random.Generator | None = None,
    *,
    eps: np.ndarray | None = None,
) -> tuple[float, dict]:
    """Negative ELBO averaged over the batch, plus the cache for :func:`backprop`.

    Per row the loss is ``0.5 * ||x - x_tilde||^2 + beta * sum_l KL_l``
    (unit-variance Gaussian likelihood, constants dropped). The noise ``eps``
    is drawn from ``rng`` unless given explicitly.
    """
    P = state.params
    X = np.asarray(X_batch, dtype=np.float64)
    B = X.shape[0]
    if B == 0:
        raise DegenerateInputError("empty batch")
    a1 = X @ P["enc_w1"] + P["enc_b1"]
    h = _relu(a1)
    mu = h @ P["enc_w_mu"] + P["enc_b_mu"]
    log_var = h @ P["enc_w_lv"] + P["enc_b_lv"]
    if eps is None:
        if rng is None:
            raise ValueError("either rng or eps is required")
        eps = rng.standard_normal(mu.shape)
    std = np.exp(0.5 * log_var)
    z = mu + std * eps
    a2 = z @ P["dec_w1"] + P["dec_b1"]
    g = _relu(a2)
    x_tilde = g @ P["dec_w2"] + P["dec_b2"]
    resid = x_tilde - X
    kl = kl_per_dimension(mu, log_var, state.alpha)
    loss = float((0.5 * np.sum(resid**2) + beta * np.sum(kl)) / B)
    if not np.isfinite(loss):
        raise NumericalOverflowError("ELBO loss is not finite")
    cache = dict(
        X=X, a1=a1, h=h, mu=mu, log_var=log_var, std=std, eps=eps,
        z=z, a2=a2, g=g, resid=resid, beta=beta, alpha=state.alpha,
    )
    return loss, cache


def backprop(
    state: VaeState, cache: dict, *, reconstruction: bool = True
) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of :func:`elbo_loss` for every parameter.

    ``eps`` and ``alpha`` are held constant (pathwise estimator). Setting
    ``reconstruction=False`` drops the reconstruction path, leaving only the
    KL contribution.
    """
    P = state.params
    X, h, g = cache["X"], cache["h"], cache["g"]
    mu, log_var, std, eps = cache["mu"], cache["log_var"], cache["std"], cache["eps"]
    beta, alpha = cache["beta"], cache["alpha"]
    B = X.shape[0]

    grads: dict[str, np.ndarray] = {}
    if reconstruction:
        d_xt = cache["resid"] / B
    else:
        d_xt = np.zeros_like(cache["resid"])
    grads["dec_w2"] = g.T @ d_xt
    grads["dec_b2"] = d_xt.sum(axis=0)
    d_a2 = (d_xt @ P["dec_w2"].T) * (cache["a2"] > 0)
    grads["dec_w1"] = cache["z"].T @ d_a2
    grads["dec_b1"] = d_a2.sum(axis=0)
    d_z = d_a2 @ P["dec_w1"].T

    d_mu = d_z + beta * alpha * mu / B
    d_lv = d_z * eps * 0.5 * std + beta * 0.5 * (alpha * std**2 - 1.0) / B
    grads["enc_w_mu"] = h.T @ d_mu
    grads["enc_b_mu"] = d_mu.sum(axis=0)
    grads["enc_w_lv"] = h.T @ d_lv
    grads["enc_b_lv"] = d_lv.sum(axis=0)
    d_a1 = (d_mu @ P["enc_w_mu"].T + d_lv @ P["enc_w_lv"].T) * (cache["a1"] > 0)
    grads["enc_w1"] = X.T @ d_a1
    grads["enc_b1"] = d_a1.sum(axis=0)
    return grads


def adam_step(state: VaeState, grads: dict[str, np.ndarray], lr: float) -> None:
    """One in-place Adam update (beta1=0.9, beta2=0.999, eps=1e-8)."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for name, grad in grads.items():
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad**2
        state.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def update_precisions(mu, log_var, a0: float, b0: float) -> np.ndarray:
    """Empirical-Bayes Gamma-Normal update of the ARD precisions.

    ``alpha_l = (a0 + n/2) / (b0 + 0.5 * sum_i (mu_il^2 + sigma_il^2))``
    """
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    n = mu.shape[0]
    if n < 1:
        raise DegenerateInputError("precision update needs at least one row")
    second = np.sum(mu**2 + np.exp(log_var), axis=0)
    alpha = (a0 + 0.5 * n) / (b0 + 0.5 * second)
    # keep alpha strictly positive and finite when a dimension fully collapses
    tiny = np.finfo(np.float64).tiny
    return np.clip(alpha, tiny, 1.0 / tiny)


def select_relevant(state: VaeState, X, tau: float) -> LatentSummary:
    """Keep the axes whose mean KL exceeds ``tau``.

    If no axis qualifies, the single axis with the largest mean KL is kept so
    that downstream statistics remain defined.
    """
    mu, log_var = encode(state, np.asarray(X, dtype=np.float64))
    kl = kl_per_dimension(mu, log_var, state.alpha).mean(axis=0)
    relevant = np.flatnonzero(kl > tau)
    if relevant.size == 0:
        relevant = np.array([int(np.argmax(kl))])
    return LatentSummary(mu=mu, log_var=log_var, relevant=relevant, kl=kl)


def _run_epochs(
    state: VaeState,
    X: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    max_epochs: int,
) -> list[float]:
    n = X.shape[0]
    batch = min(cfg.batch_size, n)
    history: list[float] = []
    best = np.inf
    stale = 0
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        total = 0.0
        try:
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                loss, cache = elbo_loss(state, X[idx], cfg.beta, rng)
                grads = backprop(state, cache)
                adam_step(state, grads, cfg.learning_rate)
                total += loss * idx.size
            mu, log_var = encode(state, X)
        except (NumericalOverflowError, FloatingPointError) as exc:
            raise TrainingDivergedError(
                f"training diverged at epoch {epoch}: {exc}", epoch=epoch
            ) from exc
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(
                f"training diverged at epoch {epoch}", epoch=epoch
            )
        state.alpha = update_precisions(mu, log_var, cfg.a0, cfg.b0)
        history.append(epoch_loss)
        if epoch_loss < best - cfg.min_delta:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.debug("early stop after %d epochs", epoch + 1)
                break
    return history


def train(
    state: VaeState, X, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[VaeState, LatentSummary, list[float]]:
    """Mini-batch Adam on the negative ELBO with once-per-epoch ARD updates.

    Returns a new state (the input is left untouched), the relevant-axis
    summary on ``X`` and the per-epoch mean losses.
    """
    X = check_data_matrix(X, min_rows=1)
    cfg.validate()
    state = state.copy()
    history = _run_epochs(state, X, cfg, rng, cfg.max_epochs)
    summary = select_relevant(state, X, cfg.kl_threshold)
    logger.info(
        "trained ARD-VAE: %d epochs, final loss %.4f, d_eff=%d",
        len(history), history[-1] if history else float("nan"), summary.d_eff,
    )
    return state, summary, history


def refine(
    state: VaeState,
    X_in,
    cfg: TrainConfig,
    rng: np.random.Generator,
    *,
    relevant: np.ndarray | None = None,
    max_epochs: int | None = None,
    restore_if_unchanged: bool = True,
) -> tuple[VaeState, LatentSummary, bool]:
    """Warm-started second training stage on the retained inliers.

    Adam continues from the existing weights and moments. When the relevant
    set after refinement equals ``relevant`` (the set before refinement), the
    original state is restored and ``relevant`` is kept.

    Returns ``(state, summary, changed)``: ``summary`` is evaluated on
    ``X_in`` and ``changed`` tells whether the refined weights were kept.
    """
    X_in = np.asarray(X_in, dtype=np.float64)
    if X_in.ndim != 2 or X_in.shape[0] == 0:
        raise DegenerateInputError("refinement needs at least one retained row")
    X_in = check_data_matrix(X_in, min_rows=1, name="X_in")
    if relevant is None:
        relevant = select_relevant(state, X_in, cfg.kl_threshold).relevant
    epochs = cfg.max_epochs if max_epochs is None else max_epochs
    refined = state.copy()
    _run_epochs(refined, X_in, cfg, rng, epochs)
    summary = select_relevant(refined, X_in, cfg.kl_threshold)
    relevant = np.asarray(relevant)
    if restore_if_unchanged and np.array_equal(summary.relevant, relevant):
        restored = state.copy()
        mu, log_var = encode(restored, X_in)
        kl = kl_per_dimension(mu, log_var, restored.alpha).mean(axis=0)
        return restored, LatentSummary(mu, log_var, relevant, kl), False
    return refined, summary, True


def decoder_jacobian(state: VaeState, mu_row) -> np.ndarray:
    """Jacobian (p x d) of the decoder mean at one latent point.

    The ReLU derivative at exactly zero is taken as zero.
    """
    P = state.params
    z = np.asarray(mu_row, dtype=np.float64).reshape(-1)
    active = (z @ P["dec_w1"] + P["dec_b1"]) > 0
    return ((P["dec_w1"] * active) @ P["dec_w2"]).T


def jacobian_column_norms(state: VaeState, mu) -> np.ndarray:
    """Mean Euclidean norm of each Jacobian column over the given latent rows."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    norms = np.array([np.linalg.norm(decoder_jacobian(state, row), axis=0) for row in mu])
    return norms.mean(axis=0)


def reconstruction_errors(state: VaeState, X) -> np.ndarray:
    """Squared reconstruction error per row, decoding the posterior mean."""
    X = np.asarray(X, dtype=np.float64)
    mu, _ = encode(state, X)
    return np.sum((X - decode(state, mu)) ** 2, axis=1)


class ARDVAE(TransformerMixin, BaseEstimator):
    """Scikit-learn wrapper around the ARD-VAE training routines.

    ``transform`` returns the posterior means restricted to the relevant axes.

    Attributes:
        state_: trained :class:`VaeState`.
        summary_: :class:`LatentSummary` on the training data.
        relevant_: indices of the retained latent axes.
        loss_history_: per-epoch mean training loss.
    """

    def __init__(
        self,
        hidden: int = 64,
        latent: int = 32,
        learning_rate: float = 1e-4,
        beta: float = 1.0,
        kl_threshold: float = 1.0,
        patience: int = 10,
        max_epochs: int = 500,
        batch_size: int = 64,
        a0: float = 1e-3,
        b0: float = 1e-3,
        random_state: int = 0,
    ) -> None:
        self.hidden = hidden
        self.latent = latent
        self.learning_rate = learning_rate
        self.beta = beta
        self.kl_threshold = kl_threshold
        self.patience = patience
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.a0 = a0
        self.b0 = b0
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            hidden=self.hidden,
            latent=self.latent,
            learning_rate=self.learning_rate,
            beta=self.beta,
            kl_threshold=self.kl_threshold,
            patience=self.patience,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            a0=self.a0,
            b0=self.b0,
            seed=self.random_state,
        )

    def fit(self, X, y=None) -> ARDVAE:
        X = check_data_matrix(X)
        cfg = self._config()
        cfg.validate(X.shape[0])
        init_rng = make_rng(cfg.seed, 0)
        train_rng = make_rng(cfg.seed, 1)
        state = init_state(cfg, X.shape[1], init_rng)
        self.state_, self.summary_, self.loss_history_ = train(state, X, cfg, train_rng)
        self.relevant_ = self.summary_.relevant
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "state_")
        mu, _ = encode(self.state_, check_data_matrix(X, min_rows=1))
        return mu[:, self.relevant_]

    def reconstruct(self, X) -> np.ndarray:
        check_is_fitted(self, "state_")
        mu, _ = encode(self.state_, check_data_matrix(X, min_rows=1))
        return decode(self.state_, mu)

    def reconstruction_error(self, X) -> np.ndarray:
        check_is_fitted(self, "state_")
        return reconstruction_errors(self.state_, check_data_matrix(X, min_rows=1))

    @property
    def d_eff_(self) -> int:
        return int(self.relevant_.size)

