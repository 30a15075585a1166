"""Refined net: lattice cell averages over local discs, boosting, greedy thinning,
and the second-stage disc family."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .discs import Disc, find_disc, fine_tune_disc
from .errors import StageError
from .geometry import AffineSubspace, PointCloud, _as_points, hausdorff

__all__ = [
    "VoronoiCellAverage",
    "RefinedNet",
    "DiscFamily",
    "build_lattice",
    "average_cells",
    "cells_to_net",
    "boost_net",
    "greedy_net",
    "build_atlas",
]

LATTICE_STEP = 10.0  # lattice spacing in units of sigma
MAX_LATTICE = 1e7


@dataclass(frozen=True)
class VoronoiCellAverage:
    lattice_point: np.ndarray
    count: int
    average: np.ndarray


@dataclass(frozen=True)
class RefinedNet:
    points: PointCloud
    per_point_counts: np.ndarray

    def __len__(self):
        return len(self.points)


@dataclass
class DiscFamily:
    """Second-stage discs plus what happened while fitting them."""

    discs: list
    dropped: list = field(default_factory=list)      # (net index, reason)
    min_separation: float = math.inf
    n_infeasible: int = 0

    def __iter__(self):
        return iter(self.discs)

    def __len__(self):
        return len(self.discs)

    def __getitem__(self, i):
        return self.discs[i]


def build_lattice(disc: Disc, sigma: float) -> np.ndarray:
    """Points of (10 sigma) Z^d inside the intrinsic ball of radius disc.radius / 2.

    Returned in lexicographic order as an (m, d) array of disc coordinates;
    the origin alone when the ball is smaller than one lattice step.
    """
    d = disc.d
    half = disc.radius / 2
    step = LATTICE_STEP * sigma
    if step <= 0 or half < step:
        return np.zeros((1, d))
    if (2 * half / step + 1) ** d > MAX_LATTICE:
        raise ValueError(f"lattice would exceed {MAX_LATTICE:.0e} points (sigma={sigma:.3g})")
    k = int(math.floor(half / step + 1e-9))
    ticks = np.arange(-k, k + 1) * step
    grid = np.stack(np.meshgrid(*([ticks] * d), indexing="ij"), -1).reshape(-1, d)
    keep = np.linalg.norm(grid, axis=1) <= half * (1 + 1e-12)
    return grid[keep]


def average_cells(disc: Disc, lattice, samples, subspace: Optional[AffineSubspace] = None,
                  min_count: int = 1, sample_coords: Optional[np.ndarray] = None,
                  candidates: Optional[np.ndarray] = None) -> list[VoronoiCellAverage]:
    """Mean of the ambient samples in each truncated Voronoi cell of the lattice.

    ``disc`` lives in the coordinates of ``subspace`` (or in the sample space
    when no subspace is given). A sample qualifies for the disc when its
    tangential and normal offsets from the center are both at most
    radius / 2, and then joins the cell of the nearest lattice point
    (lowest index on ties). Cells with fewer than ``min_count`` samples are
    dropped. ``sample_coords``/``candidates`` let callers reuse projected
    coordinates and a spatial prefilter.
    """
    amb = _as_points(samples)
    Y = np.asarray(lattice, dtype=float).reshape(-1, disc.d)
    if sample_coords is None:
        sample_coords = amb if subspace is None else subspace.coords(amb)
    idx = np.arange(len(amb)) if candidates is None else np.asarray(candidates, dtype=int)
    rel = sample_coords[idx] - disc.center
    t = rel @ disc.frame
    normal = rel - t @ disc.frame.T
    half = disc.radius / 2
    inside = (np.linalg.norm(t, axis=1) <= half) & (np.linalg.norm(normal, axis=1) <= half)
    idx, t = idx[inside], t[inside]
    if len(idx) == 0:
        return []
    d2 = np.sum((t[:, None, :] - Y[None, :, :]) ** 2, axis=2)
    owner = np.argmin(d2, axis=1)
    counts = np.bincount(owner, minlength=len(Y))
    sums = np.zeros((len(Y), amb.shape[1]))
    np.add.at(sums, owner, amb[idx])
    out = []
    for j in range(len(Y)):
        if counts[j] >= max(min_count, 1):
            out.append(VoronoiCellAverage(Y[j].copy(), int(counts[j]), sums[j] / counts[j]))
    return out


def cells_to_net(cells: Sequence[VoronoiCellAverage]) -> RefinedNet:
    if not cells:
        raise StageError("refined net is empty")
    pts = np.array([c.average for c in cells])
    return RefinedNet(PointCloud(pts), np.array([c.count for c in cells]))


def boost_net(candidates: Sequence[RefinedNet], eps: float) -> RefinedNet:
    """First candidate with at least 4/7 of all candidates within Hausdorff 2*eps of it."""
    k = len(candidates)
    if k < 3:
        raise ValueError("boosting needs at least 3 candidates")
    pts = [c.points.points for c in candidates]
    need = 4.0 * k / 7.0
    for j in range(k):
        close = sum(1 for i in range(k) if i == j or hausdorff(pts[i], pts[j]) <= 2 * eps)
        if close >= need:
            return candidates[j]
    raise StageError("boosting failed")


def greedy_net(net, separation: float) -> PointCloud:
    """Greedy thinning in input order: keep a point iff every kept point is >= separation/2 away."""
    if not separation > 0:
        raise ValueError("separation must be positive")
    pts = _as_points(net.points if isinstance(net, RefinedNet) else net)
    tree = cKDTree(pts)
    blocked = np.zeros(len(pts), dtype=bool)
    keep = []
    half = separation / 2
    for i in range(len(pts)):
        if blocked[i]:
            continue
        keep.append(i)
        near = np.asarray(tree.query_ball_point(pts[i], half), dtype=int)
        if len(near):
            strict = np.linalg.norm(pts[near] - pts[i], axis=1) < half
            blocked[near[strict]] = True
    return PointCloud(pts[keep])


def build_atlas(net, fit_points, r: float, d: int, tau_hat: float,
                delta2: Optional[float] = None, c: float = 0.25,
                fine_tune: bool = True) -> DiscFamily:
    """Radius-r discs centered at the net points, fitted to ``fit_points`` within r.

    Centers whose fit fails are dropped; a dropped center must lie within
    r/2 of a surviving one, otherwise the family has a coverage hole.
    ``delta2`` (the fine-tuning slab budget) defaults to r^2 / tau_hat.
    """
    centers = _as_points(net)
    pts = _as_points(fit_points)
    if delta2 is None:
        delta2 = r * r / tau_hat
    tree = cKDTree(pts)
    discs, kept, dropped = [], [], []
    n_bad = 0
    for i, p in enumerate(centers):
        local = pts[tree.query_ball_point(p, r)]
        try:
            disc, _ = find_disc(local, p, r, d)
        except StageError as exc:
            dropped.append((i, str(exc)))
            continue
        if fine_tune:
            disc = fine_tune_disc(local, disc, delta2)
            n_bad += disc.infeasible
        discs.append(disc)
        kept.append(i)
    if not discs:
        raise StageError("atlas coverage hole")
    if dropped:
        ktree = cKDTree(centers[kept])
        for i, _ in dropped:
            dist, _ = ktree.query(centers[i])
            if dist > r / 2:
                raise StageError("atlas coverage hole")
    sep = math.inf
    if len(kept) > 1:
        dd, _ = cKDTree(centers[kept]).query(centers[kept], k=2)
        sep = float(dd[:, 1].min())
    return DiscFamily(discs, dropped, sep, int(n_bad))
