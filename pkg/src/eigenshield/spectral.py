"""Sample matrices, symmetric eigendecomposition and subspace projectors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal

import numpy as np

from .errors import DegenerateInputError, DimensionMismatchError, DomainError, EmptySubspaceError, NumericError

Provenance = Literal["embedding_batch", "image_patches"]

DEFAULT_PATCH_SIDE = 8


@dataclass(frozen=True)
class PatchGeometry:
    """What ``reassemble`` needs to undo ``patch_matrix``."""

    patch_side: int
    channels: int
    height: int  # after cropping
    width: int
    original_height: int
    original_width: int
    squeeze_channels: bool = False

    @property
    def cropped(self) -> bool:
        return (self.height, self.width) != (self.original_height, self.original_width)


@dataclass(frozen=True)
class SampleMatrix:
    """``n x p`` observations (rows) by features (columns)."""

    data: np.ndarray
    centered: bool = False
    provenance: Provenance = "embedding_batch"
    patch_geometry: PatchGeometry | None = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise DimensionMismatchError(f"sample data must be 2-D, got shape {data.shape}")
        if data.shape[0] < 2 or data.shape[1] < 2:
            raise DegenerateInputError(f"need at least 2 rows and 2 columns, got {data.shape}")
        if self.centered and np.max(np.abs(data.mean(axis=0))) > 1e-9:
            raise DomainError("sample flagged as centered has non-zero column means")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    def centered_copy(self) -> "SampleMatrix":
        return replace(self, data=self.data - self.data.mean(axis=0), centered=True)


def as_sample(x) -> SampleMatrix:
    """Wrap a raw 2-D array; pass a ``SampleMatrix`` through unchanged."""
    if isinstance(x, SampleMatrix):
        return x
    return SampleMatrix(np.asarray(x, dtype=float))


def covariance(sample, center: bool = True) -> np.ndarray:
    """``(1/n) X^T X`` after optional column centering."""
    x = as_sample(sample).data
    n = x.shape[0]
    if n < 2:
        raise DegenerateInputError("covariance needs at least two rows")
    if center:
        x = x - x.mean(axis=0)
    cov = x.T @ x / n
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Descending eigenvalues with column-paired orthonormal eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source_dims: tuple[int, int] | None = None

    @property
    def p(self) -> int:
        return self.eigenvalues.shape[0]


def canonicalize_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive.

    ``argmax`` returns the first maximal index, which gives the lowest-index
    tie break.
    """
    vectors = np.array(vectors, dtype=float, copy=True)
    if vectors.size == 0:
        return vectors
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def symmetric_eig(m, source_dims: tuple[int, int] | None = None) -> SpectralDecomposition:
    """Full eigendecomposition of a symmetric matrix, descending, canonical signs."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix has non-finite entries")
    sym = 0.5 * (m + m.T)
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    vals = vals[::-1].copy()
    vecs = canonicalize_signs(vecs[:, ::-1])
    return SpectralDecomposition(eigenvalues=vals, eigenvectors=vecs, source_dims=source_dims)


def decompose_sample(sample, center: bool = True) -> SpectralDecomposition:
    s = as_sample(sample)
    return symmetric_eig(covariance(s, center=center), source_dims=(s.n, s.p))


# ---------------------------------------------------------------------------
# Image patches
# ---------------------------------------------------------------------------


def patch_matrix(image, patch_side: int = DEFAULT_PATCH_SIDE) -> SampleMatrix:
    """Rows are non-overlapping ``k x k x C`` patches, flattened channel-last.

    Patches are ordered row-major over the patch grid. Dimensions that are not
    multiples of ``k`` are cropped at the bottom/right and the crop is recorded
    in the geometry (a warning is also issued).
    """
    img = np.asarray(image, dtype=float)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if img.ndim != 3:
        raise DimensionMismatchError(f"image must be H x W or H x W x C, got shape {img.shape}")
    h0, w0, ch = img.shape
    k = int(patch_side)
    if k < 1 or k > min(h0, w0):
        raise DomainError(f"patch side {k} does not fit a {h0}x{w0} image")
    h, w = (h0 // k) * k, (w0 // k) * k
    if (h, w) != (h0, w0):
        warnings.warn(f"cropping image from {h0}x{w0} to {h}x{w} for patch side {k}", RuntimeWarning)
    img = img[:h, :w]
    rows = img.reshape(h // k, k, w // k, k, ch).transpose(0, 2, 1, 3, 4).reshape(-1, k * k * ch)
    geometry = PatchGeometry(k, ch, h, w, h0, w0, squeeze_channels=squeeze)
    return SampleMatrix(rows, provenance="image_patches", patch_geometry=geometry)


def reassemble(sample: SampleMatrix) -> np.ndarray:
    """Inverse of ``patch_matrix`` (returns the cropped image)."""
    g = sample.patch_geometry
    if sample.provenance != "image_patches" or g is None:
        raise DomainError("reassemble needs an image-patch sample with geometry")
    k, ch = g.patch_side, g.channels
    gh, gw = g.height // k, g.width // k
    if sample.data.shape != (gh * gw, k * k * ch):
        raise DimensionMismatchError(f"patch data {sample.data.shape} does not match geometry {g}")
    img = sample.data.reshape(gh, gw, k, k, ch).transpose(0, 2, 1, 3, 4).reshape(g.height, g.width, ch)
    return img[:, :, 0] if g.squeeze_channels else img


# ---------------------------------------------------------------------------
# Projectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CausalProjector:
    """Orthonormal basis ``E`` of a retained subspace; ``P = E E^T``."""

    basis: np.ndarray
    indices: tuple[int, ...] = field(default=())

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    @property
    def p(self) -> int:
        return self.basis.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.T


def build_projector(decomp: SpectralDecomposition, indices: Iterable[int]) -> CausalProjector:
    idx = tuple(int(i) for i in indices)
    if not idx:
        raise EmptySubspaceError("no directions selected for the projector")
    p = decomp.eigenvectors.shape[1]
    bad = [i for i in idx if not 0 <= i < p]
    if bad:
        raise DomainError(f"indices {bad} out of range for p={p}")
    if len(set(idx)) != len(idx):
        raise DomainError(f"duplicate indices in {idx}")
    return CausalProjector(basis=decomp.eigenvectors[:, list(idx)].copy(), indices=idx)


def projector_from_vectors(vectors) -> CausalProjector:
    """Projector onto given orthonormal columns (no re-orthonormalization)."""
    basis = np.asarray(vectors, dtype=float)
    if basis.ndim == 1:
        basis = basis[:, None]
    if basis.shape[1] == 0:
        raise EmptySubspaceError("no directions selected for the projector")
    return CausalProjector(basis=basis.copy(), indices=tuple(range(basis.shape[1])))


_NORM_GUARD = 16 * np.finfo(float).eps


def clip_row_norms(projected: np.ndarray, original: np.ndarray) -> np.ndarray:
    """Scale down any row whose norm reaches the matching original row.

    An orthogonal projection never lengthens a vector, but rounding can add a
    few ulps, and different ways of computing a norm disagree by about as much.
    Rows within that band are pulled just inside it so the bound holds however
    the norm is measured; the change is below 1e-14 relative.
    """
    proj_norm = np.linalg.norm(projected, axis=-1, keepdims=True)
    orig_norm = np.linalg.norm(original, axis=-1, keepdims=True)
    limit = orig_norm * (1.0 - _NORM_GUARD)
    over = proj_norm > limit
    if not np.any(over):
        return projected
    scale = np.where(over, limit / np.where(over, proj_norm, 1.0), 1.0)
    return projected * scale


def project(vector, projector: CausalProjector) -> np.ndarray:
    e = np.asarray(vector, dtype=float)
    if e.shape != (projector.p,):
        raise DimensionMismatchError(f"vector of shape {e.shape} does not match projector dimension {projector.p}")
    return clip_row_norms(projector.basis @ (projector.basis.T @ e), e)


def project_rows(sample, projector: CausalProjector) -> SampleMatrix:
    """Replace every row by its projection; geometry and provenance are kept."""
    s = as_sample(sample)
    if s.p != projector.p:
        raise DimensionMismatchError(f"sample has {s.p} features, projector expects {projector.p}")
    e = projector.basis
    return replace(s, data=clip_row_norms((s.data @ e) @ e.T, s.data))
