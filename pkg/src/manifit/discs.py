"""Local d-discs: greedy near-orthonormal basis selection and convex fine-tuning."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import StageError
from .geometry import _as_points, _check_orthonormal, orthonormal_complement

__all__ = [
    "Disc",
    "DiscFitReport",
    "find_disc",
    "fine_tune_disc",
    "disc_hausdorff",
    "disc_points_hausdorff",
    "sphere_directions",
]


@dataclass(frozen=True)
class Disc:
    """Closed d-disc: center + radius * (unit ball of span(frame))."""

    center: np.ndarray
    frame: np.ndarray
    radius: float
    infeasible: bool = False  # set when fine-tuning fell back to the initial disc

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        f = np.array(self.frame, dtype=float).reshape(c.size, -1)
        _check_orthonormal(f)
        if not self.radius > 0:
            raise ValueError("disc radius must be positive")
        c.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "frame", f)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def d(self) -> int:
        return self.frame.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.center.size

    def coords(self, x) -> np.ndarray:
        """Tangential coordinates relative to the center (unscaled)."""
        return (_as_points(x) - self.center) @ self.frame

    def project(self, x) -> np.ndarray:
        """Nearest point of the (solid) disc."""
        t = self.coords(x)
        nrm = np.linalg.norm(t, axis=1, keepdims=True)
        t = np.where(nrm > self.radius, t * (self.radius / np.maximum(nrm, 1e-300)), t)
        return self.center + t @ self.frame.T

    def distance(self, x) -> np.ndarray:
        pts = _as_points(x)
        return np.linalg.norm(pts - self.project(pts), axis=1)

    def plane_distance(self, x) -> np.ndarray:
        """Distance to the affine span (ignores the radius)."""
        pts = _as_points(x) - self.center
        return np.linalg.norm(pts - (pts @ self.frame) @ self.frame.T, axis=1)


@dataclass(frozen=True)
class DiscFitReport:
    hausdorff_to_points: float
    basis_points: tuple


def sphere_directions(d: int, count: int = 2048, seed: int = 0) -> np.ndarray:
    """Near-uniform unit vectors in R^d; exact equispacing for d <= 2."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = np.linspace(0, 2 * math.pi, count, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    g = np.random.default_rng(seed).standard_normal((count, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def disc_hausdorff(a: Disc, b: Disc, samples: int = 4096) -> float:
    """Hausdorff distance between two discs.

    dist(., B) is convex, so the sup over A is attained on A's boundary
    sphere; that sphere is sampled densely (exactly for d = 1).
    """
    def one_side(p: Disc, q: Disc) -> float:
        u = sphere_directions(p.d, samples)
        boundary = p.center + p.radius * u @ p.frame.T
        return float(np.max(q.distance(boundary)))

    return max(one_side(a, b), one_side(b, a))


def _disc_samples(disc: Disc, per_dim: int) -> np.ndarray:
    g = np.linspace(-1, 1, per_dim)
    grid = np.stack(np.meshgrid(*([g] * disc.d), indexing="ij"), -1).reshape(-1, disc.d)
    grid = grid[np.linalg.norm(grid, axis=1) <= 1]
    grid = np.vstack([grid, sphere_directions(disc.d, 256)])
    return disc.center + disc.radius * grid @ disc.frame.T


def disc_points_hausdorff(disc: Disc, points, per_dim: int | None = None) -> float:
    """Hausdorff distance between a disc and a finite set (disc side by dense sampling)."""
    pts = _as_points(points)
    if per_dim is None:
        per_dim = {1: 401, 2: 81, 3: 25}.get(disc.d, 11)
    samp = _disc_samples(disc, per_dim)
    d_disc, _ = cKDTree(pts).query(samp)
    return max(float(np.max(disc.distance(pts))), float(np.max(d_disc)))


def find_disc(local, center, radius: float, d: int) -> tuple[Disc, DiscFitReport]:
    """Greedy disc through ``center`` spanned by d nearly orthonormal local points.

    Works in the unit ball around ``center``: the first point has norm
    closest to 1, each following point additionally minimizes its largest
    inner product with the unit directions already chosen. Ties go to the
    lowest index.
    """
    pts = _as_points(local)
    c = np.asarray(center, dtype=float).reshape(-1)
    if pts.shape[1] != c.size:
        raise ValueError("center and local points have different dimensions")
    if d < 1 or d > c.size:
        raise ValueError(f"intrinsic dimension {d} out of range")
    z = (pts - c) / radius
    nz = np.linalg.norm(z, axis=1)
    usable = nz > 1e-12
    if int(usable.sum()) < d:
        raise StageError("insufficient local points")
    score = np.where(usable, np.abs(1.0 - nz), np.inf)
    chosen: list[int] = []
    for _ in range(d):
        s = score.copy()
        s[chosen] = np.inf
        i = int(np.argmin(s))
        chosen.append(i)
        u = z[i] / nz[i]
        score = np.maximum(score, np.abs(z @ u))
    V = z[chosen].T
    sv = np.linalg.svd(V / np.linalg.norm(V, axis=0), compute_uv=False)
    if sv[-1] < 1e-10:
        raise StageError("degenerate basis")
    frame = np.linalg.qr(V)[0]
    disc = Disc(c, frame, radius)
    report = DiscFitReport(float(np.max(disc.distance(pts))), tuple(chosen))
    return disc, report


def fine_tune_disc(local, initial: Disc, delta2_budget: float,
                   norm_budget: float | None = None, max_iter: int = 500,
                   tol: float = 1e-8) -> Disc:
    """Re-tilt ``initial`` so every local point is within 2*delta2_budget of it.

    In unit-radius coordinates split along the initial span (z1) and its
    complement (z2), find a linear map A with ||A||_2 <= norm_budget and
    ||A z1 - z2|| <= 2 delta2 for every point, by alternating projections
    (spectral-norm clipping and exact per-point slab projections), started
    from the least-squares tilt. The new disc is the graph of A. When no
    feasible A is found within ``max_iter`` sweeps the initial disc comes
    back with ``infeasible=True``.

    ``norm_budget`` defaults to twice the disc-to-points Hausdorff distance,
    measured in unit-radius coordinates.
    """
    pts = _as_points(local)
    if pts.shape[1] != initial.ambient_dim:
        raise ValueError("dimension mismatch between local points and disc")
    if delta2_budget < 0:
        raise ValueError("delta2_budget must be nonnegative")
    r = initial.radius
    z = (pts - initial.center) / r
    z = z[np.linalg.norm(z, axis=1) <= 1.0 + 1e-12]
    E = initial.frame
    N = orthonormal_complement(E)
    if N.shape[1] == 0 or len(z) == 0:
        return initial
    if norm_budget is None:
        # a coarser disc grid than the default is plenty for a budget
        norm_budget = 2.0 * disc_points_hausdorff(
            Disc(np.zeros(initial.ambient_dim), E, 1.0), z,
            per_dim={1: 101, 2: 25, 3: 11}.get(initial.d, 7))
    slack = 2.0 * delta2_budget / r
    a = z @ E                      # (m, d)
    b = z @ N                      # (m, D-d)
    sq = np.sum(a * a, axis=1)

    def clip(A):
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        return (U * np.minimum(s, norm_budget)) @ Vt

    def feasible(A):
        res = np.linalg.norm(a @ A.T - b, axis=1)
        return (res.max() <= slack + tol
                and np.linalg.norm(A, 2) <= norm_budget + tol), res

    A = clip(np.linalg.lstsq(a, b, rcond=None)[0].T)
    ok, res = feasible(A)
    it = 0
    while not ok and it < max_iter:
        for i in np.flatnonzero(res > slack):
            if sq[i] < 1e-24:
                continue
            e = A @ a[i] - b[i]
            ne = np.linalg.norm(e)
            if ne > slack:
                A = A - np.outer((1.0 - slack / ne) * e, a[i] / sq[i])
        A = clip(A)
        ok, res = feasible(A)
        it += 1
    if not ok:
        return Disc(initial.center, initial.frame, initial.radius, infeasible=True)
    frame = np.linalg.qr(E + N @ A)[0]
    return Disc(initial.center, frame, r)
