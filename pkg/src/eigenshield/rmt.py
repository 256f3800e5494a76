"""Random-matrix laws, spiked-covariance predictions and synthetic generators.

Everything here is a pure function of its arguments. Samplers take an explicit
integer seed and build their own ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionMismatchError, DomainError

QUAD_TOL = 1e-10
BISECT_TOL = 1e-10


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = QUAD_TOL,
    min_depth: int = 5,
    max_depth: int = 48,
) -> float:
    """Integrate ``f`` over ``[a, b]`` with adaptive Simpson's rule.

    Uses an explicit stack instead of recursion and the usual Richardson
    correction ``(S2 - S1) / 15`` on accepted panels. Panels are never accepted
    above ``min_depth``; coarse samples of trigonometric integrands alias.
    """
    if a == b:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        delta = left + right - est
        if depth >= max_depth or (depth >= min_depth and abs(delta) <= 15.0 * eps):
            total += left + right + delta / 15.0
        else:
            stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
            stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
    return total


# ---------------------------------------------------------------------------
# Wigner semicircle
# ---------------------------------------------------------------------------


def wigner_pdf(lam, sigma: float):
    """Semicircle density with radius ``2*sigma``.

    Accepts a scalar or an array for ``lam``; returns the same kind.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    x = np.asarray(lam, dtype=float)
    radius2 = 4.0 * sigma * sigma
    inside = np.abs(x) <= 2.0 * sigma
    out = np.zeros_like(x)
    out[inside] = np.sqrt(np.maximum(radius2 - x[inside] ** 2, 0.0)) / (2.0 * math.pi * sigma * sigma)
    return float(out) if out.ndim == 0 else out


def semicircle_moment(k: int, sigma: float) -> float:
    """k-th moment of the semicircle law, by quadrature of the density.

    The integral is taken in the angle variable ``x = 2 sigma cos(t)`` which
    removes the square-root endpoint singularity. Odd orders vanish.
    """
    if k < 0:
        raise DomainError(f"moment order must be non-negative, got {k}")
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if k % 2 == 1:
        return 0.0
    r = 2.0 * sigma

    def integrand(t: float) -> float:
        x = r * math.cos(t)
        return x**k * wigner_pdf(x, sigma) * r * math.sin(t)

    return adaptive_simpson(integrand, 0.0, math.pi)


# ---------------------------------------------------------------------------
# Marchenko-Pastur
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MpModel:
    """Noise variance, aspect ratio ``p/n`` and the resulting bulk edges."""

    sigma2: float
    c: float
    lambda_minus: float
    lambda_plus: float


def mp_bulk_edges(sigma2: float, c: float) -> MpModel:
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    if not c > 0:
        raise DomainError(f"aspect ratio must be positive, got {c}")
    root = math.sqrt(c)
    return MpModel(
        sigma2=float(sigma2),
        c=float(c),
        lambda_minus=sigma2 * (1.0 - root) ** 2,
        lambda_plus=sigma2 * (1.0 + root) ** 2,
    )


def mp_pdf(lam, model: MpModel):
    """Absolutely continuous part of the Marchenko-Pastur density.

    Integrates to 1 when ``c <= 1`` and to ``1/c`` otherwise (the rest of the
    mass sits at zero).
    """
    x = np.asarray(lam, dtype=float)
    lo, hi = model.lambda_minus, model.lambda_plus
    inside = (x > lo) & (x < hi) & (x > 0)
    out = np.zeros_like(x)
    xi = x[inside]
    out[inside] = np.sqrt((hi - xi) * (xi - lo)) / (2.0 * math.pi * model.sigma2 * model.c * xi)
    return float(out) if out.ndim == 0 else out


def _mp_angle_integrand(model: MpModel) -> Callable[[float], float]:
    # density * dlambda in the variable lambda = lo + half * (1 - cos t)
    lo = model.lambda_minus
    half = 0.5 * (model.lambda_plus - model.lambda_minus)
    scale = half * half / (2.0 * math.pi * model.sigma2 * model.c)

    def integrand(t: float) -> float:
        one_minus = 2.0 * math.sin(0.5 * t) ** 2
        one_plus = 1.0 + math.cos(t)
        lam = lo + half * one_minus
        if lam == 0.0:
            # lambda_minus == 0 and t == 0: take the limit of sin^2/lambda
            return scale * one_plus / half
        return scale * one_minus * one_plus / lam

    return integrand


def _mp_continuous_cdf(x: float, model: MpModel) -> float:
    lo, hi = model.lambda_minus, model.lambda_plus
    if x <= lo:
        return 0.0
    half = 0.5 * (hi - lo)
    t = math.acos(max(-1.0, min(1.0, (lo + half - x) / half))) if x < hi else math.pi
    return adaptive_simpson(_mp_angle_integrand(model), 0.0, t)


@lru_cache(maxsize=256)
def mp_median(c: float) -> float:
    """Median of the unit-variance MP law with ratio ``c <= 1``.

    Found by bisection on the quadrature CDF.
    """
    if not 0 < c <= 1:
        raise DomainError(f"mp_median is defined here for 0 < c <= 1, got {c}")
    model = mp_bulk_edges(1.0, c)
    lo, hi = model.lambda_minus, model.lambda_plus
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if _mp_continuous_cdf(mid, model) < 0.5:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def estimate_noise_variance(eigenvalues: Sequence[float], c: float) -> float:
    """Median-ratio estimate of the noise variance from a sample spectrum.

    For ``c > 1`` only the ``p/c`` leading (nonzero) eigenvalues are used; they
    follow the MP law with ratio ``1/c`` scaled by ``c``.
    """
    e = np.asarray(eigenvalues, dtype=float)
    if e.size == 0:
        raise DegenerateInputError("no eigenvalues given")
    if not c > 0:
        raise DomainError(f"aspect ratio must be positive, got {c}")
    if not np.any(e != 0):
        raise DegenerateInputError("all eigenvalues are zero")
    if c <= 1:
        med = float(np.median(e))
        ref = mp_median(c)
    else:
        keep = max(1, int(round(e.size / c)))
        med = float(np.median(np.sort(e)[::-1][:keep]))
        ref = c * mp_median(1.0 / c)
    if not med > 0:
        raise DegenerateInputError(f"median eigenvalue is {med}; cannot scale the MP law")
    return med / ref


def detect_outliers(eigenvalues: Sequence[float], model: MpModel, slack: float = 0.01) -> np.ndarray:
    """Indices of eigenvalues above ``lambda_plus * (1 + slack)``.

    ``eigenvalues`` must be sorted descending, so the result is a prefix
    ``0..m-1``.
    """
    e = np.asarray(eigenvalues, dtype=float)
    if slack < 0:
        raise DomainError(f"slack must be non-negative, got {slack}")
    if e.size > 1 and np.any(np.diff(e) > 0):
        raise ContractError("eigenvalues must be sorted in descending order")
    cutoff = model.lambda_plus * (1.0 + slack)
    return np.flatnonzero(e > cutoff)


# ---------------------------------------------------------------------------
# Spiked covariance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpikePrediction:
    beta: float
    supercritical: bool
    outlier_location: float | None


def spiked_outlier_location(lambda_prime: float, sigma2: float, c: float) -> SpikePrediction:
    """Predicted sample-eigenvalue location of a population spike.

    ``beta = lambda_prime / sigma2``; the spike detaches when
    ``beta > (1 + sqrt(c))**2`` and then sits at
    ``sigma2 * (beta + c * beta / (beta - 1))``.
    """
    for name, value in (("lambda_prime", lambda_prime), ("sigma2", sigma2), ("c", c)):
        if not value > 0:
            raise DomainError(f"{name} must be positive, got {value}")
    beta = lambda_prime / sigma2
    supercritical = beta > (1.0 + math.sqrt(c)) ** 2
    location = sigma2 * (beta + c * beta / (beta - 1.0)) if supercritical else None
    return SpikePrediction(beta=beta, supercritical=supercritical, outlier_location=location)


# ---------------------------------------------------------------------------
# Low-rank plus isotropic decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RmtFit:
    """Signal basis ``U`` (p x r), signal eigenvalues, noise variance and loss."""

    basis: np.ndarray
    signal_eigs: np.ndarray
    sigma2: float
    loss: float
    negative_signal: bool = False


def rmt_loss(cov, fit: RmtFit) -> float:
    """Squared Frobenius residual of ``cov - (U diag(L) U^T + sigma2 I)``."""
    cov = np.asarray(cov, dtype=float)
    basis = np.asarray(fit.basis, dtype=float)
    if basis.ndim == 1:
        basis = basis[:, None]
    eigs = np.atleast_1d(np.asarray(fit.signal_eigs, dtype=float))
    p = cov.shape[0]
    if cov.shape != (p, p):
        raise DimensionMismatchError(f"covariance must be square, got {cov.shape}")
    if basis.shape[0] != p or basis.shape[1] != eigs.size:
        raise DimensionMismatchError(
            f"basis {basis.shape} and signal eigenvalues {eigs.shape} do not fit a {p}x{p} covariance"
        )
    model = (basis * eigs) @ basis.T + fit.sigma2 * np.eye(p)
    return float(np.sum((cov - model) ** 2))


def fit_rmt_decomposition(cov, r: int) -> RmtFit:
    """Closed-form minimizer of the low-rank-plus-isotropic Frobenius loss.

    The basis is the top-``r`` eigenvectors, the noise variance the mean of the
    trailing ``p - r`` eigenvalues, and the signal eigenvalues the excess over
    it. Negative signal eigenvalues are reported, not clamped.
    """
    cov = np.asarray(cov, dtype=float)
    p = cov.shape[0]
    if cov.ndim != 2 or cov.shape != (p, p):
        raise DimensionMismatchError(f"covariance must be square, got {cov.shape}")
    if not 1 <= r < p:
        raise DomainError(f"rank must satisfy 1 <= r < p={p}, got {r}")
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    sigma2 = float(np.mean(vals[r:]))
    signal = vals[:r] - sigma2
    negative = bool(np.any(signal < 0))
    if negative:
        warnings.warn("fitted signal eigenvalues are negative; the low-rank model misfits", RuntimeWarning)
    basis = vecs[:, :r].copy()
    fit = RmtFit(basis=basis, signal_eigs=signal, sigma2=sigma2, loss=0.0, negative_signal=negative)
    return RmtFit(basis=basis, signal_eigs=signal, sigma2=sigma2, loss=rmt_loss(cov, fit), negative_signal=negative)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def sample_wigner(p: int, sigma: float, seed: int) -> np.ndarray:
    """Symmetric ``p x p`` matrix with i.i.d. N(0, sigma^2) upper triangle."""
    if p < 2:
        raise DomainError(f"dimension must be at least 2, got {p}")
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, sigma, size=(p, p))
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


def random_orthonormal_frame(p: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed ``p x k`` matrix with orthonormal columns."""
    if k == 0:
        return np.zeros((p, 0))
    q, r = np.linalg.qr(rng.standard_normal((p, k)))
    return q * np.sign(np.diag(r))


def sample_spiked_dataset(
    n: int, p: int, spikes: Sequence[float], sigma2: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian ``n x p`` data whose population spectrum carries spikes.

    The population covariance is ``V diag(spikes) V^T + sigma2 (I - V V^T)``:
    each spike is the variance along its planted direction and every
    orthogonal direction has variance ``sigma2``. Returns ``(X, V)``.
    """
    spikes = np.asarray(list(spikes), dtype=float)
    if np.any(spikes <= 0):
        raise DomainError("spikes must be positive")
    if spikes.size >= p:
        raise DomainError(f"need fewer spikes than dimensions, got {spikes.size} >= {p}")
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    rng = np.random.default_rng(seed)
    frame = random_orthonormal_frame(p, spikes.size, rng)
    sigma = math.sqrt(sigma2)
    x = rng.normal(0.0, sigma, size=(n, p))
    if spikes.size:
        coords = x @ frame
        x = x + (coords * (np.sqrt(spikes) / sigma - 1.0)) @ frame.T
    return x, frame
