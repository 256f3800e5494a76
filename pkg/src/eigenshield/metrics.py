"""Attack success rate and the discrete information measures (all in bits).

KL scores elsewhere in the package are in nats; everything here uses log base 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, DomainError

SUM_TOL = 1e-12


@dataclass(frozen=True)
class IndicatorSet:
    """Binary harm outcomes, one per adversarial example."""

    outcomes: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.outcomes)
        if arr.ndim != 1 or arr.size == 0:
            raise DomainError("indicator set must be a non-empty 1-D sequence")
        if not np.all((arr == 0) | (arr == 1)):
            raise DomainError("indicators must be 0 or 1")
        object.__setattr__(self, "outcomes", arr.astype(np.int8))


@dataclass(frozen=True)
class JointTable:
    """``P(X = x, U = u)`` with X along rows and U along columns."""

    probabilities: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.probabilities, dtype=float)
        if t.ndim != 2 or t.size == 0:
            raise DomainError(f"joint table must be a non-empty 2-D array, got shape {t.shape}")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise DomainError("joint table entries must be finite and non-negative")
        if abs(t.sum() - 1.0) > SUM_TOL:
            raise DomainError(f"joint table sums to {t.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", t)

    @property
    def marginal_x(self) -> np.ndarray:
        return self.probabilities.sum(axis=1)

    @property
    def marginal_u(self) -> np.ndarray:
        return self.probabilities.sum(axis=0)


def attack_success_rate(indicators) -> float:
    """Fraction of adversarial examples judged harmful."""
    s = indicators if isinstance(indicators, IndicatorSet) else IndicatorSet(np.asarray(indicators))
    return float(np.mean(s.outcomes))


def _entropy_bits(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(max(-np.sum(nz * np.log2(nz)), 0.0))


def entropy(marginal) -> float:
    """Shannon entropy in bits, with ``0 log 0 = 0``."""
    p = np.asarray(marginal, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DomainError("probability vector must be non-empty and 1-D")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DomainError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > SUM_TOL:
        raise DomainError(f"probabilities sum to {p.sum()!r}, not 1")
    return _entropy_bits(p)


def _as_table(table) -> JointTable:
    return table if isinstance(table, JointTable) else JointTable(np.asarray(table, dtype=float))


def conditional_entropy(table) -> float:
    """``H(X | U) = sum_u P(u) H(X | U = u)``; columns with ``P(u) = 0`` add nothing.

    Conditioning never raises entropy, so the sum is capped at ``H(X)`` to keep
    rounding from producing a negative mutual information.
    """
    t = _as_table(table)
    total = 0.0
    for col, pu in zip(t.probabilities.T, t.marginal_u):
        if pu > 0:
            total += pu * _entropy_bits(col / pu)
    return float(min(total, _entropy_bits(t.marginal_x)))


def mutual_information(table) -> float:
    """``I(X; U) = H(X) - H(X | U)``, computed literally from the two terms."""
    t = _as_table(table)
    return _entropy_bits(t.marginal_x) - conditional_entropy(t)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def read_indicator_file(path) -> IndicatorSet:
    """One ``0`` or ``1`` per line; blank lines are ignored."""
    tokens = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not tokens:
        raise CorruptFileError(f"{path}: indicator file is empty")
    bad = [t for t in tokens if t not in ("0", "1")]
    if bad:
        raise CorruptFileError(f"{path}: indicators must be 0 or 1, found {bad[0]!r}")
    return IndicatorSet(np.array([int(t) for t in tokens]))


def read_joint_table(path) -> JointTable:
    """CSV grid of probabilities, X along rows and U along columns, no header."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise CorruptFileError(f"{path}: joint table file is empty")
    try:
        rows = [[float(tok) for tok in ln.split(",")] for ln in lines]
    except ValueError as exc:
        raise CorruptFileError(f"{path}: non-numeric entry ({exc})") from exc
    if len({len(r) for r in rows}) != 1:
        raise CorruptFileError(f"{path}: ragged joint table")
    try:
        return JointTable(np.array(rows))
    except DomainError as exc:
        raise CorruptFileError(f"{path}: {exc}") from exc
