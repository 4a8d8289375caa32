"""Feature-spectrum analysis: singular values and their normalized entropy.

Given an (N, D) feature matrix with D <= N, the spectrum's flatness is
summarized by the entropy of the normalized singular values,

    H = -sum_i p_i ln p_i,   p_i = sigma_i / sum_j sigma_j,

which ranges from 0 (rank one) to ln D (flat spectrum) and is invariant to
positive rescaling of the features.  Natural logarithm throughout.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

__all__ = ["svd_spectrum", "nsv_entropy", "spectrum_report"]


def svd_spectrum(features: np.ndarray) -> np.ndarray:
    """Singular values of an (N, D) matrix, descending, all >= 0."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise InvalidInputError(f"feature matrix must be 2-D, got shape {f.shape}")
    n, d = f.shape
    if d > n:
        raise InvalidInputError(f"need D <= N, got N={n}, D={d}")
    if not np.isfinite(f).all():
        raise InvalidInputError("feature matrix contains non-finite values")
    return np.linalg.svd(f, compute_uv=False)


def nsv_entropy(sigma: np.ndarray) -> float:
    """Entropy of the normalized spectrum; zero-mass terms contribute 0."""
    s = np.asarray(sigma, dtype=np.float64)
    if (s < 0).any():
        raise InvalidParameterError("singular values must be non-negative")
    total = s.sum()
    if total <= 0:
        raise InvalidParameterError("all-zero spectrum: entropy undefined")
    p = s / total
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def spectrum_report(
    features: np.ndarray,
    top_k: int = 50,
    centered: bool = False,
) -> tuple[np.ndarray, float, str]:
    """Top-k singular values plus full-spectrum entropy, rendered as CSV.

    Returns ``(top_sigma, entropy, csv_text)``.  ``top_k`` is clipped to D;
    the entropy always uses the complete spectrum.  ``centered=True``
    subtracts the column means first.
    """
    if top_k < 1:
        raise InvalidParameterError(f"top_k must be >= 1, got {top_k}")
    f = np.asarray(features, dtype=np.float64)
    if centered and f.ndim == 2:
        f = f - f.mean(axis=0, keepdims=True)
    sigma = svd_spectrum(f)
    entropy = nsv_entropy(sigma)
    top = sigma[: min(top_k, len(sigma))]
    buf = io.StringIO()
    buf.write(f"# h_nsv={entropy!r}\n")
    buf.write("rank,sigma\n")
    for i, value in enumerate(top, start=1):
        buf.write(f"{i},{value!r}\n")
    return top, entropy, buf.getvalue()
