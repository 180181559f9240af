"""Fréchet distance between Gaussian fits, matching verdicts and curve summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ganticket.errors import ContractError, DimensionError

PSD_TOL = 1e-10
DEFAULT_TOL_FACTOR = 1.05


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def gaussian_fit(samples) -> GaussianStats:
    """Sample mean and unbiased covariance of an ``(n, dim)`` array."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"samples must be (n, dim), got shape {x.shape}")
    n, dim = x.shape
    # two points already define an unbiased covariance; fewer than dim + 1 only makes it singular
    if n < 2:
        raise ContractError(f"need at least 2 samples for a covariance fit, got {n}")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / (n - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T), n)


def _psd_sqrt(cov: np.ndarray, label: str) -> np.ndarray:
    sym = 0.5 * (cov + cov.T)
    w, q = np.linalg.eigh(sym)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() < -PSD_TOL * scale:
        raise ContractError(f"{label} covariance is not PSD (min eigenvalue {w.min():.3e})")
    return (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Squared Fréchet distance ``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The trace of the product root is taken from the eigenvalues of the
    symmetric matrix ``S_a^(1/2) S_b S_a^(1/2)``, which shares its spectrum
    with ``S_a S_b``; negative round-off eigenvalues are clamped to zero.
    """
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise DimensionError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    root_a = _psd_sqrt(a.cov, "first")
    _psd_sqrt(b.cov, "second")
    middle = root_a @ b.cov @ root_a
    eig = np.linalg.eigvalsh(0.5 * (middle + middle.T))
    tr_root = float(np.sum(np.sqrt(np.clip(eig, 0.0, None))))
    diff = a.mean - b.mean
    d2 = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * tr_root
    return max(d2, 0.0)


def score_samples(generated, real) -> float:
    return frechet_distance(gaussian_fit(generated), gaussian_fit(real))


def is_matching(score_sub: float, score_full: float, tol_factor: float = DEFAULT_TOL_FACTOR) -> bool:
    return bool(score_sub <= score_full * tol_factor)


@dataclass(frozen=True)
class CurvePoint:
    sparsity: float
    score: float


def as_curve(points: Sequence) -> list[CurvePoint]:
    curve = [p if isinstance(p, CurvePoint) else CurvePoint(float(p[0]), float(p[1])) for p in points]
    curve.sort(key=lambda p: p.sparsity)
    for prev, cur in zip(curve, curve[1:]):
        if not cur.sparsity > prev.sparsity:
            raise ContractError(f"curve sparsities must be strictly increasing, saw {prev.sparsity} twice")
    return curve


def best_and_extreme(
    curve: Sequence, score_full: float, tol_factor: float = DEFAULT_TOL_FACTOR
) -> tuple[CurvePoint, CurvePoint | None]:
    """Lowest-score point, and the sparsest point whose score still matches the full model."""
    pts = as_curve(curve)
    if not pts:
        raise ContractError("curve is empty")
    best = min(pts, key=lambda p: (p.score, p.sparsity))
    matching = [p for p in pts if is_matching(p.score, score_full, tol_factor)]
    extreme = max(matching, key=lambda p: p.sparsity) if matching else None
    return best, extreme
