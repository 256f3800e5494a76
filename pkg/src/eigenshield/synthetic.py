"""Planted-structure validation sets for calibration and filtering.

Every input is an ``rows x p`` Gaussian sample whose population covariance has
variance ``spikes[j]`` along a planted signal direction ``V[:, j]`` (shared by
all inputs) and unit variance elsewhere. A random subset of inputs (each with
probability ``prevalence``) additionally carries a spurious perturbation: the
variance along the spurious frame ``W`` is raised to ``spurious[j]``. The
spurious directions are orthogonal to ``V`` and appear together, so in the
pooled spectrum they sit just above the noise bulk while being absent from
most individual inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rmt import random_orthonormal_frame


@dataclass(frozen=True)
class PlantedInputs:
    inputs: list[np.ndarray]
    signal: np.ndarray  # p x len(spikes)
    spurious: np.ndarray  # p x len(spurious)
    perturbed: np.ndarray  # bool per input


def _scale_along(x: np.ndarray, frame: np.ndarray, variances: np.ndarray) -> np.ndarray:
    coords = x @ frame
    return x + (coords * (np.sqrt(variances) - 1.0)) @ frame.T


def planted_inputs(
    seed: int,
    n_inputs: int = 200,
    rows: int = 256,
    p: int = 64,
    spikes: Sequence[float] = (16.0,),
    spurious: Sequence[float] = (8.0, 4.0),
    prevalence: float = 0.15,
) -> PlantedInputs:
    rng = np.random.default_rng(seed)
    spikes = np.asarray(spikes, dtype=float)
    spur = np.asarray(spurious, dtype=float)
    frame = random_orthonormal_frame(p, spikes.size + spur.size, rng)
    signal, extra = frame[:, : spikes.size], frame[:, spikes.size :]
    inputs, flags = [], []
    for _ in range(n_inputs):
        x = rng.standard_normal((rows, p))
        if spikes.size:
            x = _scale_along(x, signal, spikes)
        hit = bool(spur.size) and rng.random() < prevalence
        if hit:
            x = _scale_along(x, extra, spur)
        inputs.append(x)
        flags.append(hit)
    return PlantedInputs(inputs=inputs, signal=signal, spurious=extra, perturbed=np.array(flags))


def clean_input(
    seed: int, signal: np.ndarray, spikes: Sequence[float], rows: int = 256, noise_scale: float = 1.0
) -> np.ndarray:
    """One input with the planted signal frame and isotropic noise only."""
    rng = np.random.default_rng(seed)
    p = signal.shape[0]
    x = rng.standard_normal((rows, p)) * noise_scale
    coords = rng.standard_normal((rows, signal.shape[1])) * np.sqrt(np.asarray(spikes, dtype=float))
    # replace the noise component inside the signal span by the planted one
    x = x - (x @ signal) @ signal.T + coords @ signal.T
    return x
