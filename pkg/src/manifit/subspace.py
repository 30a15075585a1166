"""Affine PCA subspace and the residual-based noise-level estimate."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import AffineSubspace, PointCloud, _as_points, unit_ball_volume

__all__ = [
    "SubspaceFit",
    "SigmaEstimate",
    "ProjectedCloud",
    "fit_pca_subspace",
    "estimate_sigma",
    "project_cloud",
    "suggest_D",
    "sign_canonical",
    "COV_CHUNK",
]

# fixed chunk length so covariance sums reduce in the same order every run
COV_CHUNK = 8192


@dataclass(frozen=True)
class SubspaceFit:
    subspace: AffineSubspace
    residual_mean_square: float
    eigenvalues: np.ndarray
    warnings: tuple = ()

    @property
    def D(self) -> int:
        return self.subspace.dim

    def csv_fields(self, sigma_hat: float | None = None) -> dict:
        return {"D": self.D, "residual": self.residual_mean_square,
                "sigma_hat": float("nan") if sigma_hat is None else sigma_hat}


@dataclass(frozen=True)
class SigmaEstimate:
    sigma_hat: float
    D_used: int


@dataclass(frozen=True)
class ProjectedCloud(PointCloud):
    """Intrinsic coordinates in a subspace frame, plus the map back to R^n."""

    subspace: AffineSubspace | None = None

    def lift(self, coords=None) -> np.ndarray:
        return self.subspace.lift(self.points if coords is None else coords)


def sign_canonical(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so that its largest-magnitude entry (first on ties) is positive."""
    v = np.array(vectors, dtype=float)
    if v.size == 0:
        return v
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def _centered_covariance(pts: np.ndarray):
    n = pts.shape[1]
    total = np.zeros(n)
    for s in range(0, len(pts), COV_CHUNK):
        total += pts[s:s + COV_CHUNK].sum(axis=0)
    mean = total / len(pts)
    cov = np.zeros((n, n))
    for s in range(0, len(pts), COV_CHUNK):
        c = pts[s:s + COV_CHUNK] - mean
        cov += c.T @ c
    return mean, cov / len(pts)


def fit_pca_subspace(cloud, D: int) -> SubspaceFit:
    """The D-dimensional affine subspace minimizing the summed squared distances."""
    pts = _as_points(cloud)
    n = pts.shape[1]
    if not 0 <= D <= n:
        raise ValueError(f"subspace dimension D={D} must lie in [0, n={n}]")
    if len(pts) < D + 1:
        raise ValueError(f"need at least D+1={D + 1} points, got {len(pts)}")
    mean, cov = _centered_covariance(pts)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = sign_canonical(evecs[:, order])
    notes = []
    if 0 < D < n and abs(evals[D - 1] - evals[D]) <= 1e-12 * max(1.0, evals[0]):
        msg = (f"eigenvalue tie at position {D}: {evals[D - 1]:.3e} vs {evals[D]:.3e};"
               " subspace is not unique")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    frame = evecs[:, :D]
    sub = AffineSubspace(mean, frame)
    resid = (pts - mean) - ((pts - mean) @ frame) @ frame.T
    rms = float(np.mean(np.sum(resid * resid, axis=1)))
    return SubspaceFit(sub, rms, evals, tuple(notes))


def estimate_sigma(cloud, fit: SubspaceFit) -> SigmaEstimate:
    """sigma_hat = sqrt(mean squared residual / (n - D))."""
    n = fit.subspace.ambient_dim
    D = fit.D
    if D >= n:
        raise ValueError("no residual directions")
    pts = _as_points(cloud)
    if pts.shape[1] != n:
        raise ValueError("cloud and subspace dimensions differ")
    dist2 = np.sum((pts - fit.subspace.project(pts)) ** 2, axis=1)
    return SigmaEstimate(float(math.sqrt(np.mean(dist2) / (n - D))), D)


def project_cloud(cloud, subspace: AffineSubspace) -> ProjectedCloud:
    pts = _as_points(cloud)
    if pts.shape[1] != subspace.ambient_dim:
        raise ValueError("cloud and subspace dimensions differ")
    return ProjectedCloud(subspace.coords(pts), subspace=subspace)


def suggest_D(volume: float, tau: float, d: int, n: int, c: float = 0.25) -> int:
    """Default subspace dimension min(n, V / (c^d w_d beta^d)) with beta = tau sqrt(c^d w_d tau^d / V)."""
    w = unit_ball_volume(d)
    beta = tau * math.sqrt(c ** d * w * tau ** d / volume)
    D = volume / (c ** d * w * beta ** d)
    return int(min(n, max(d + 1, math.ceil(D))))
