"""Random-matrix spectral filtering of inputs onto a calibrated causal subspace."""

from __future__ import annotations

from .defense import (
    CalibrationConfig,
    CalibrationResult,
    FilterReport,
    calibrate,
    filter_input,
    load_calibration,
    rethreshold,
    save_calibration,
)
from .errors import (
    CalibrationError,
    ContractError,
    CorruptFileError,
    DegenerateInputError,
    DimensionMismatchError,
    DomainError,
    EigenShieldError,
    EmptySubspaceError,
    NumericError,
    VersionMismatchError,
)
from .metrics import attack_success_rate, conditional_entropy, entropy, mutual_information
from .rmt import (
    MpModel,
    detect_outliers,
    estimate_noise_variance,
    fit_rmt_decomposition,
    mp_bulk_edges,
    spiked_outlier_location,
    wigner_pdf,
)
from .spectral import SampleMatrix, SpectralDecomposition, build_projector, patch_matrix, symmetric_eig

__version__ = "0.1.0"
