"""Robustness-based nonconformity scoring of outlier directions.

For every outlier direction ``v_j`` of the pooled spectrum, each validation
input contributes a scalar ``u_ij``: the overlap of its own rank-``j``
eigenvector with ``v_j``. A conditional diagonal-Gaussian density of the input
features given ``u`` is fit under K-fold cross-validation; the held-out KL
divergence per fold gives ``Perf_jk``. The spread ``median - q-quantile`` of
those performances is ``rho_j`` and the nonconformity score is ``exp(rho_j)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CalibrationError, DegenerateInputError, DimensionMismatchError, DomainError
from .spectral import SpectralDecomposition

LOGVAR_CLAMP = 10.0
VARIANCE_FLOOR = 1e-8
DEFAULT_FOLDS = 10
DEFAULT_LOWER_Q = 0.10


def derive_seed(seed: int, *counters: int) -> int:
    """Sub-seed for a (seed, counter, ...) tuple via ``SeedSequence``."""
    return int(np.random.SeedSequence([int(seed), *map(int, counters)]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# 1-D projections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionProjection:
    direction_index: int
    values: np.ndarray
    direction: np.ndarray


def project_directions(
    decomps: Sequence[SpectralDecomposition], outlier_directions: Sequence[np.ndarray]
) -> list[DirectionProjection]:
    """``u_ij = <rank-j eigenvector of input i, v_j>`` for every direction j.

    Inputs are matched to directions by rank index; both sides carry canonical
    signs.
    """
    dirs = [np.asarray(v, dtype=float) for v in outlier_directions]
    if not decomps:
        raise DegenerateInputError("no input decompositions")
    p = decomps[0].eigenvectors.shape[0]
    for d in decomps:
        if d.eigenvectors.shape[0] != p:
            raise DimensionMismatchError("input decompositions have different dimensions")
    out = []
    for j, v in enumerate(dirs):
        if v.shape != (p,):
            raise DimensionMismatchError(f"direction {j} has shape {v.shape}, expected ({p},)")
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise DomainError(f"direction {j} is not unit norm")
        if j >= p:
            raise DomainError(f"rank {j} exceeds dimension {p}")
        values = np.array([d.eigenvectors[:, j] @ v for d in decomps])
        out.append(DirectionProjection(direction_index=j, values=values, direction=v))
    return out


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    fold_count: int
    assignments: np.ndarray
    seed: int

    def split(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(train indices, held-out indices) for fold ``k``."""
        held = self.assignments == k
        return np.flatnonzero(~held), np.flatnonzero(held)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.fold_count)


def make_folds(sample_count: int, k: int = DEFAULT_FOLDS, seed: int = 0) -> FoldPlan:
    """Seeded permutation dealt round-robin into ``k`` folds."""
    if k < 2:
        raise DomainError(f"need at least 2 folds, got {k}")
    if sample_count < k:
        raise DegenerateInputError(f"{sample_count} samples cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(sample_count)
    assignments = np.empty(sample_count, dtype=np.int64)
    assignments[perm] = np.arange(sample_count) % k
    return FoldPlan(fold_count=k, assignments=assignments, seed=seed)


# ---------------------------------------------------------------------------
# Conditional density estimator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 200
    step_size: float = 0.01
    hidden_width: int = 16
    seed: int = 0


@dataclass
class DensityEstimator:
    """Two-layer tanh MLP from scalar ``u`` to per-dimension mean and log-variance."""

    w1: np.ndarray  # (hidden,)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (2d, hidden)
    b2: np.ndarray  # (2d,)
    config: TrainingConfig = field(default_factory=TrainingConfig)
    loss_history: list[float] = field(default_factory=list)

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.b2.shape[0] // 2

    def _forward(self, u: np.ndarray):
        hidden = np.tanh(np.outer(u, self.w1) + self.b1)
        out = hidden @ self.w2.T + self.b2
        d = self.dim
        return hidden, out[:, :d], out[:, d:]

    def predict(self, u) -> tuple[np.ndarray, np.ndarray]:
        """Mean and clamped log-variance, each ``(len(u), d)``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        _, mean, raw = self._forward(u)
        return mean, np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)

    def nll(self, u, features) -> float:
        """Mean Gaussian negative log-likelihood per sample, in nats."""
        z = _as_features(features)
        mean, logvar = self.predict(u)
        return float(np.mean(_nll_terms(z, mean, logvar).sum(axis=1)))


def _as_features(features) -> np.ndarray:
    z = np.asarray(features, dtype=float)
    return z[:, None] if z.ndim == 1 else z


def _nll_terms(z, mean, logvar):
    return 0.5 * (logvar + (z - mean) ** 2 * np.exp(-logvar) + math.log(2.0 * math.pi))


def init_estimator(u: np.ndarray, z: np.ndarray, config: TrainingConfig) -> DensityEstimator:
    # output biases start at the marginal fit, so the untrained model is the
    # unconditional diagonal Gaussian of the training features
    rng = np.random.default_rng(config.seed)
    h, d = config.hidden_width, z.shape[1]
    w1 = rng.normal(0.0, 1.0, size=h)
    b1 = rng.normal(0.0, 0.5, size=h)
    w2 = rng.normal(0.0, 0.1 / math.sqrt(h), size=(2 * d, h))
    var = np.maximum(z.var(axis=0), VARIANCE_FLOOR)
    b2 = np.concatenate([z.mean(axis=0), np.clip(np.log(var), -LOGVAR_CLAMP, LOGVAR_CLAMP)])
    return DensityEstimator(w1=w1, b1=b1, w2=w2, b2=b2, config=config)


def train_density(projections, features, config: TrainingConfig | None = None) -> DensityEstimator:
    """Fit the conditional density by full-batch Adam on the Gaussian NLL."""
    config = config or TrainingConfig()
    u = np.asarray(projections, dtype=float).ravel()
    z = _as_features(features)
    if z.shape[0] != u.shape[0]:
        raise DimensionMismatchError(f"{u.shape[0]} projections but {z.shape[0]} feature rows")
    if u.shape[0] < 4:
        raise DegenerateInputError(f"need at least 4 training samples, got {u.shape[0]}")
    est = init_estimator(u, z, config)
    params = [est.w1, est.b1, est.w2, est.b2]
    m = [np.zeros_like(q) for q in params]
    v = [np.zeros_like(q) for q in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    n, d = z.shape
    history = []
    for step in range(1, config.epochs + 1):
        hidden, mean, raw = est._forward(u)
        logvar = np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
        inv = np.exp(-logvar)
        resid = z - mean
        history.append(float(np.mean(_nll_terms(z, mean, logvar).sum(axis=1))))
        g_mean = -resid * inv / n
        g_logvar = 0.5 * (1.0 - resid**2 * inv) / n
        g_logvar[np.abs(raw) > LOGVAR_CLAMP] = 0.0
        g_out = np.concatenate([g_mean, g_logvar], axis=1)
        g_w2 = g_out.T @ hidden
        g_b2 = g_out.sum(axis=0)
        g_pre = (g_out @ est.w2) * (1.0 - hidden**2)
        g_w1 = g_pre.T @ u
        g_b1 = g_pre.sum(axis=0)
        for i, (q, g) in enumerate(zip(params, (g_w1, g_b1, g_w2, g_b2))):
            m[i] = beta1 * m[i] + (1 - beta1) * g
            v[i] = beta2 * v[i] + (1 - beta2) * g * g
            mhat = m[i] / (1 - beta1**step)
            vhat = v[i] / (1 - beta2**step)
            q -= config.step_size * mhat / (np.sqrt(vhat) + eps)
    history.append(est.nll(u, z))
    est.loss_history = history
    return est


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------


def diag_gaussian_kl(mean_p, var_p, mean_q, var_q) -> np.ndarray:
    """KL(N(mean_p, var_p) || N(mean_q, var_q)) summed over the last axis, nats."""
    mean_p, var_p = np.asarray(mean_p, float), np.asarray(var_p, float)
    mean_q, var_q = np.asarray(mean_q, float), np.asarray(var_q, float)
    terms = np.log(var_q / var_p) + (var_p + (mean_p - mean_q) ** 2) / var_q - 1.0
    return 0.5 * terms.sum(axis=-1)


def kl_performance(estimator: DensityEstimator, held_out_projections, held_out_features) -> float:
    """Mean over held-out samples of KL(fold Gaussian || Q(z | u_i)), nats.

    The fold distribution is a diagonal Gaussian with the fold mean and
    (population) variance, floored at ``1e-8``.
    """
    u = np.asarray(held_out_projections, dtype=float).ravel()
    z = _as_features(held_out_features)
    if z.shape[0] != u.shape[0]:
        raise DimensionMismatchError(f"{u.shape[0]} projections but {z.shape[0]} feature rows")
    if u.shape[0] < 2:
        raise DegenerateInputError("held-out fold needs at least 2 samples")
    mean_p = z.mean(axis=0)
    var_p = np.maximum(z.var(axis=0), VARIANCE_FLOOR)
    mean_q, logvar_q = estimator.predict(u)
    return float(np.mean(diag_gaussian_kl(mean_p, var_p, mean_q, np.exp(logvar_q))))


def robustness_statistic(performances, q: float = DEFAULT_LOWER_Q) -> float:
    """Median minus the lower ``q``-quantile (type 7) of fold performances."""
    perf = np.asarray(performances, dtype=float)
    if perf.size == 0:
        raise DegenerateInputError("no performances given")
    if not 0 <= q <= 0.5:
        raise DomainError(f"lower quantile level must lie in [0, 0.5], got {q}")
    rho = float(np.median(perf) - np.quantile(perf, q, method="linear"))
    return max(rho, 0.0)


def nonconformity(rho: float) -> float:
    """``exp(rho)``; overflows to ``inf`` for rho beyond ~709 nats."""
    if not math.isfinite(rho):
        raise DomainError(f"rho must be finite, got {rho}")
    try:
        return math.exp(rho)
    except OverflowError:
        return math.inf


def quantile_threshold(alphas, gamma: float) -> float:
    a = np.asarray(alphas, dtype=float)
    if a.size == 0:
        raise DegenerateInputError("no nonconformity scores given")
    if not 0 <= gamma <= 1:
        raise DomainError(f"coverage must lie in [0, 1], got {gamma}")
    return float(np.quantile(a, gamma, method="linear"))


def log_quantile_threshold(rhos, gamma: float) -> float:
    """``log`` of the type-7 ``gamma``-quantile of ``exp(rhos)``.

    Interpolates in the exponentiated domain without forming ``exp(rho)``, so
    very nonconforming directions cannot overflow the threshold. When the
    quantile position is integral the result is exactly that order statistic
    of ``rhos``.
    """
    r = np.sort(np.asarray(rhos, dtype=float))
    if r.size == 0:
        raise DegenerateInputError("no robustness statistics given")
    if not 0 <= gamma <= 1:
        raise DomainError(f"coverage must lie in [0, 1], got {gamma}")
    h = (r.size - 1) * gamma
    lo = int(math.floor(h))
    frac = h - lo
    if frac == 0.0:
        return float(r[lo])
    mixed = np.logaddexp(math.log1p(-frac) + r[lo], math.log(frac) + r[lo + 1])
    # Rounding can land an ulp outside the bracketing pair; ties must stay ties.
    return float(min(max(mixed, r[lo]), r[lo + 1]))


@dataclass(frozen=True)
class RbnsRecord:
    direction_index: int
    performances: np.ndarray
    rho: float
    alpha: float


def causal_eigenvalue_threshold(
    records: Sequence[RbnsRecord], outlier_eigenvalues, t_hat: float, log_t_hat: float | None = None
) -> tuple[float, list[int]]:
    """``tau* = min lambda_j`` over directions with ``alpha_j <= t_hat``.

    With ``log_t_hat`` the comparison is ``rho_j <= log_t_hat`` instead, which
    is the same rule but exact when scores overflow. Returns
    ``(tau_star, causal indices)``; indices are positions in ``records``.
    """
    lam = np.asarray(outlier_eigenvalues, dtype=float)
    if len(records) != lam.size:
        raise DimensionMismatchError(f"{len(records)} records but {lam.size} eigenvalues")
    if log_t_hat is None:
        causal = [i for i, r in enumerate(records) if r.alpha <= t_hat]
    else:
        causal = [i for i, r in enumerate(records) if r.rho <= log_t_hat]
    if not causal:
        raise CalibrationError(
            f"no direction has alpha <= {t_hat!r}",
            spectrum=lam,
            alphas=[r.alpha for r in records],
            t_hat=t_hat,
        )
    return float(lam[causal].min()), causal


# ---------------------------------------------------------------------------
# Features and per-direction scoring
# ---------------------------------------------------------------------------


def input_descriptor(cov: np.ndarray) -> np.ndarray:
    """Upper triangle of an input's covariance, flattened."""
    iu = np.triu_indices(cov.shape[0])
    return cov[iu]


def whitened_pca_features(descriptors, d: int = 16) -> np.ndarray:
    """Top-``d`` principal-component scores scaled to unit variance.

    The component count is capped at ``n - 1`` and at the number of non-null
    components; each score column is sign-canonicalized by its loading.
    """
    x = np.asarray(descriptors, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise DegenerateInputError("need at least two inputs for PCA features")
    xc = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = s.max() * max(xc.shape) * np.finfo(float).eps if s.size else 0.0
    keep = min(d, n - 1, int(np.sum(s > tol)))
    if keep < 1:
        raise DegenerateInputError("inputs are identical; no principal components")
    pivots = np.argmax(np.abs(vt[:keep]), axis=1)
    signs = np.sign(vt[np.arange(keep), pivots])
    return u[:, :keep] * signs * math.sqrt(n)


def score_direction(
    direction_index: int,
    projections,
    features,
    folds: FoldPlan,
    config: TrainingConfig,
    q: float = DEFAULT_LOWER_Q,
) -> RbnsRecord:
    """Cross-validated performances, ``rho`` and ``alpha`` for one direction.

    The estimator for fold ``k`` is seeded from ``(config.seed, j, k)``.
    """
    u = np.asarray(projections, dtype=float)
    z = _as_features(features)
    perf = np.empty(folds.fold_count)
    for k in range(folds.fold_count):
        train, held = folds.split(k)
        cfg = TrainingConfig(
            epochs=config.epochs,
            step_size=config.step_size,
            hidden_width=config.hidden_width,
            seed=derive_seed(config.seed, direction_index, k),
        )
        est = train_density(u[train], z[train], cfg)
        perf[k] = kl_performance(est, u[held], z[held])
    rho = robustness_statistic(perf, q)
    return RbnsRecord(direction_index=direction_index, performances=perf, rho=rho, alpha=nonconformity(rho))


def score_directions(
    projections: Sequence[DirectionProjection],
    features,
    folds: FoldPlan,
    config: TrainingConfig,
    q: float = DEFAULT_LOWER_Q,
    threads: int = 1,
) -> list[RbnsRecord]:
    """Score every direction; results come back in direction order."""
    jobs = [(dp.direction_index, dp.values) for dp in projections]
    if threads <= 1 or len(jobs) <= 1:
        return [score_direction(j, u, features, folds, config, q) for j, u in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: score_direction(job[0], job[1], features, folds, config, q), jobs))
