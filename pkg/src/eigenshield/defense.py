"""Phase-1 calibration of the causal eigenvalue threshold and the inference filter.

Calibration pools every validation row into one covariance, finds the
eigenvalues that escape the Marchenko-Pastur bulk, scores each escaping
direction with RbNS and sets ``tau*`` to the smallest eigenvalue whose score
falls under the ``gamma``-quantile. At inference an input keeps only the
eigen-directions above ``tau*`` (``per_input``) or the stored causal
directions (``global``).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from . import rbns
from .errors import (
    CalibrationError,
    CorruptFileError,
    DegenerateInputError,
    DimensionMismatchError,
    DomainError,
    EmptySubspaceError,
    VersionMismatchError,
)
from .fileio import atomic_write_text, dumps
from .rmt import MpModel, detect_outliers, estimate_noise_variance, mp_bulk_edges
from .spectral import (
    DEFAULT_PATCH_SIDE,
    SampleMatrix,
    clip_row_norms,
    covariance,
    decompose_sample,
    patch_matrix,
    projector_from_vectors,
    reassemble,
    symmetric_eig,
)

logger = logging.getLogger(__name__)

PIPELINE_VERSION = 1
Mode = Literal["per_input", "global"]


@dataclass(frozen=True)
class CalibrationConfig:
    gamma: float = 0.75
    folds: int = rbns.DEFAULT_FOLDS
    lower_q: float = rbns.DEFAULT_LOWER_Q
    slack: float = 0.01
    feature_dim: int = 16
    patch_side: int = DEFAULT_PATCH_SIDE
    epochs: int = 200
    step_size: float = 0.01
    hidden_width: int = 16
    seed: int = 0
    threads: int = 1

    def training_config(self) -> rbns.TrainingConfig:
        return rbns.TrainingConfig(
            epochs=self.epochs, step_size=self.step_size, hidden_width=self.hidden_width, seed=self.seed
        )


@dataclass(frozen=True)
class OutlierDirection:
    index: int
    eigenvalue: float
    alpha: float
    rho: float
    vector: np.ndarray
    performances: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class CalibrationResult:
    gamma: float
    t_hat: float
    log_t_hat: float
    tau_star: float
    directions: tuple[OutlierDirection, ...]
    mp_model: MpModel
    feature_config: dict
    estimator_config: dict
    seeds: dict
    pipeline_version: int = PIPELINE_VERSION

    @property
    def p(self) -> int:
        return int(self.directions[0].vector.shape[0])

    @property
    def causal_indices(self) -> list[int]:
        return [d.index for d in self.directions if d.rho <= self.log_t_hat]

    @property
    def causal_directions(self) -> list[OutlierDirection]:
        return [d for d in self.directions if d.rho <= self.log_t_hat]

    def to_dict(self) -> dict:
        return {
            "version": self.pipeline_version,
            "gamma": self.gamma,
            "t_hat": self.t_hat,
            "log_t_hat": self.log_t_hat,
            "tau_star": self.tau_star,
            "sigma2": self.mp_model.sigma2,
            "c": self.mp_model.c,
            "lambda_minus": self.mp_model.lambda_minus,
            "lambda_plus": self.mp_model.lambda_plus,
            "directions": [
                {
                    "index": d.index,
                    "eigenvalue": d.eigenvalue,
                    "alpha": d.alpha,
                    "rho": d.rho,
                    "performances": [float(x) for x in d.performances],
                    "vector": [float(x) for x in d.vector],
                }
                for d in self.directions
            ],
            "seeds": dict(self.seeds),
            "feature_config": dict(self.feature_config),
            "estimator_config": dict(self.estimator_config),
        }


@dataclass(frozen=True)
class FilterReport:
    input_id: str
    mode: str
    retained_rank: int
    eigenvalues_kept: list[float]
    eigenvalues_dropped: list[float]
    passthrough: bool
    energy_retained: float

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------


def to_sample(x, patch_side: int = DEFAULT_PATCH_SIDE) -> SampleMatrix:
    """Normalize an input: 3-D arrays are images, 2-D arrays embedding batches."""
    if isinstance(x, SampleMatrix):
        return x
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 3:
        return patch_matrix(arr, patch_side)
    return SampleMatrix(arr)


# ---------------------------------------------------------------------------
# Phase 1
# ---------------------------------------------------------------------------


def calibrate(
    validation_data: Sequence, gamma: float | None = None, config: CalibrationConfig | None = None
) -> CalibrationResult:
    """Run Phase 1 on a list of validation inputs.

    ``gamma`` overrides ``config.gamma`` when given. The result depends only on
    the inputs and the config (seeds included).
    """
    config = config or CalibrationConfig()
    gamma = config.gamma if gamma is None else float(gamma)
    if not 0 < gamma <= 1:
        raise DomainError(f"coverage gamma must lie in (0, 1], got {gamma}")
    samples = [to_sample(x, config.patch_side) for x in validation_data]
    minimum = max(config.folds, 20)
    if len(samples) < minimum:
        raise DegenerateInputError(f"calibration needs at least {minimum} inputs, got {len(samples)}")
    p = samples[0].p
    if any(s.p != p for s in samples):
        raise DimensionMismatchError("validation inputs have different feature dimensions")

    pooled = np.vstack([s.data for s in samples])
    global_decomp = symmetric_eig(covariance(pooled, center=True), source_dims=pooled.shape)
    eigs = global_decomp.eigenvalues
    c = p / pooled.shape[0]
    sigma2 = estimate_noise_variance(eigs, c)
    model = mp_bulk_edges(sigma2, c)
    outliers = detect_outliers(eigs, model, config.slack)
    logger.info("pooled spectrum: sigma2=%.6g lambda_plus=%.6g outliers=%d", sigma2, model.lambda_plus, outliers.size)
    if outliers.size == 0:
        raise CalibrationError(
            "no outliers above the Marchenko-Pastur bulk", spectrum=eigs, lambda_plus=model.lambda_plus
        )

    decomps = [decompose_sample(s, center=True) for s in samples]
    descriptors = np.array([rbns.input_descriptor(covariance(s, center=True)) for s in samples])
    features = rbns.whitened_pca_features(descriptors, config.feature_dim)
    vectors = [global_decomp.eigenvectors[:, j] for j in outliers]
    projections = rbns.project_directions(decomps, vectors)
    folds = rbns.make_folds(len(samples), config.folds, config.seed)
    records = rbns.score_directions(
        projections, features, folds, config.training_config(), config.lower_q, threads=config.threads
    )

    log_t_hat = rbns.log_quantile_threshold([r.rho for r in records], gamma)
    t_hat = rbns.nonconformity(log_t_hat)
    try:
        tau_star, _ = rbns.causal_eigenvalue_threshold(records, eigs[outliers], t_hat, log_t_hat)
    except CalibrationError as exc:
        raise CalibrationError(str(exc), spectrum=eigs, **exc.diagnostics) from exc

    directions = tuple(
        OutlierDirection(
            index=int(j),
            eigenvalue=float(eigs[j]),
            alpha=r.alpha,
            rho=r.rho,
            vector=vectors[i].copy(),
            performances=r.performances.copy(),
        )
        for i, (j, r) in enumerate(zip(outliers, records))
    )
    return CalibrationResult(
        gamma=gamma,
        t_hat=t_hat,
        log_t_hat=log_t_hat,
        tau_star=tau_star,
        directions=directions,
        mp_model=model,
        feature_config={
            "kind": "whitened_pca_covariance",
            "dim": config.feature_dim,
            "effective_dim": int(features.shape[1]),
            "patch_side": config.patch_side,
        },
        estimator_config={
            "hidden_width": config.hidden_width,
            "epochs": config.epochs,
            "step_size": config.step_size,
            "folds": config.folds,
            "lower_q": config.lower_q,
            "slack": config.slack,
        },
        seeds={"seed": config.seed, "fold_seed": config.seed, "estimator_seed_scheme": "seedsequence(seed, j, k)"},
    )


def rethreshold(calib: CalibrationResult, gamma: float) -> CalibrationResult:
    """Recompute ``t_hat`` and ``tau*`` for another coverage from the stored scores.

    Equivalent to rerunning ``calibrate`` with the same data and seeds, since
    only the final quantile step depends on ``gamma``.
    """
    gamma = float(gamma)
    if not 0 < gamma <= 1:
        raise DomainError(f"coverage gamma must lie in (0, 1], got {gamma}")
    rhos = [d.rho for d in calib.directions]
    log_t_hat = rbns.log_quantile_threshold(rhos, gamma)
    causal = [d.eigenvalue for d in calib.directions if d.rho <= log_t_hat]
    if not causal:
        raise CalibrationError(
            "empty causal set", spectrum=[d.eigenvalue for d in calib.directions], log_t_hat=log_t_hat
        )
    return replace(
        calib, gamma=gamma, t_hat=rbns.nonconformity(log_t_hat), log_t_hat=log_t_hat, tau_star=float(min(causal))
    )


# ---------------------------------------------------------------------------
# Phase 2
# ---------------------------------------------------------------------------


def filter_input(input_data, calib: CalibrationResult, mode: Mode = "per_input", input_id: str = "input"):
    """Project an input onto its causal subspace.

    Rows are centered before projection and the column mean is added back.
    Returns ``(filtered, report)`` where ``filtered`` has the same kind as the
    input (image array, ``SampleMatrix`` or 2-D array). An empty causal set
    passes the input through unchanged with ``report.passthrough`` set.
    """
    if mode not in ("per_input", "global"):
        raise DomainError(f"unknown filter mode {mode!r}")
    patch_side = int(calib.feature_config.get("patch_side", DEFAULT_PATCH_SIDE))
    sample = to_sample(input_data, patch_side)
    if sample.p != calib.p:
        raise DimensionMismatchError(f"input has {sample.p} features, calibration expects {calib.p}")

    mean = sample.data.mean(axis=0)
    centered = sample.data - mean
    if mode == "per_input":
        decomp = symmetric_eig(covariance(centered, center=False), source_dims=(sample.n, sample.p))
        keep = decomp.eigenvalues > calib.tau_star
        kept = decomp.eigenvalues[keep].tolist()
        dropped = decomp.eigenvalues[~keep].tolist()
        basis = decomp.eigenvectors[:, keep]
    else:
        causal = calib.causal_directions
        causal_ids = {d.index for d in causal}
        kept = [d.eigenvalue for d in causal]
        dropped = [d.eigenvalue for d in calib.directions if d.index not in causal_ids]
        basis = np.column_stack([d.vector for d in causal]) if causal else np.zeros((sample.p, 0))

    try:
        projector = projector_from_vectors(basis)
    except EmptySubspaceError:
        report = FilterReport(input_id, mode, 0, kept, dropped, True, 1.0)
        return input_data, report

    filtered_centered = clip_row_norms((centered @ projector.basis) @ projector.basis.T, centered)
    total = float(np.sum(centered**2))
    energy = float(np.sum(filtered_centered**2)) / total if total > 0 else 1.0
    report = FilterReport(input_id, mode, projector.k, kept, dropped, False, min(max(energy, 0.0), 1.0))
    out = SampleMatrix(
        filtered_centered + mean,
        provenance=sample.provenance,
        patch_geometry=sample.patch_geometry,
    )
    if isinstance(input_data, SampleMatrix):
        return out, report
    if sample.provenance == "image_patches":
        return reassemble(out), report
    return out.data, report


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_calibration(calib: CalibrationResult, path) -> None:
    atomic_write_text(path, dumps(calib.to_dict()))


def calibration_from_dict(doc: dict) -> CalibrationResult:
    if not isinstance(doc, dict):
        raise CorruptFileError("calibration document is not a JSON object")
    version = doc.get("version")
    if version != PIPELINE_VERSION:
        raise VersionMismatchError(f"calibration version {version!r}, expected {PIPELINE_VERSION}")
    try:
        directions = []
        for d in doc["directions"]:
            rho = float(d["rho"])
            alpha = d["alpha"]
            directions.append(
                OutlierDirection(
                    index=int(d["index"]),
                    eigenvalue=float(d["eigenvalue"]),
                    alpha=math.inf if alpha is None else float(alpha),
                    rho=rho,
                    vector=np.asarray(d["vector"], dtype=float),
                    performances=np.asarray(d.get("performances", []), dtype=float),
                )
            )
        t_hat = doc["t_hat"]
        model = MpModel(
            sigma2=float(doc["sigma2"]),
            c=float(doc["c"]),
            lambda_minus=float(doc["lambda_minus"]),
            lambda_plus=float(doc["lambda_plus"]),
        )
        result = CalibrationResult(
            gamma=float(doc["gamma"]),
            t_hat=math.inf if t_hat is None else float(t_hat),
            log_t_hat=float(doc["log_t_hat"]),
            tau_star=float(doc["tau_star"]),
            directions=tuple(directions),
            mp_model=model,
            feature_config=dict(doc["feature_config"]),
            estimator_config=dict(doc["estimator_config"]),
            seeds=dict(doc["seeds"]),
            pipeline_version=int(version),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFileError(f"calibration document is missing or malformed: {exc}") from exc
    if not directions:
        raise CorruptFileError("calibration has no outlier directions")
    dims = {d.vector.shape for d in directions}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DimensionMismatchError(f"direction vectors have inconsistent shapes {sorted(dims)}")
    return result


def load_calibration(path) -> CalibrationResult:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFileError(f"{path}: not a valid calibration file ({exc})") from exc
    return calibration_from_dict(doc)
