"""Bump functions and partition-of-unity weights over a disc atlas."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .discs import Disc
from .errors import StageError
from .geometry import _as_points

__all__ = [
    "WeightedAtlas",
    "bump",
    "bump_integral",
    "bump_integral_bounds",
    "compute_weights",
    "evaluate_partition",
    "write_atlas",
    "read_atlas",
]


def bump(v, k: int, d: int):
    """theta(v) = (1 - |v|^2)^(d+k) inside the unit ball, 0 outside.

    ``v`` may be a single vector or an (m, d) array of them.
    """
    arr = np.asarray(v, dtype=float)
    sq = np.sum(arr * arr, axis=-1) if arr.ndim else arr * arr
    out = np.where(sq < 1.0, np.clip(1.0 - sq, 0.0, None) ** (d + k), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def _cell_grid(d: int, per_dim: int) -> tuple[np.ndarray, float]:
    """Cell-midpoint grid on [-1, 1]^d restricted to the closed unit ball, and the cell volume."""
    ticks = -1.0 + (2.0 * np.arange(per_dim) + 1.0) / per_dim
    grid = np.stack(np.meshgrid(*([ticks] * d), indexing="ij"), -1).reshape(-1, d)
    grid = grid[np.sum(grid * grid, axis=1) <= 1.0]
    return grid, (2.0 / per_dim) ** d


def bump_integral(d: int, k: int, per_dim: int) -> float:
    """Midpoint-rule quadrature of theta over the unit ball."""
    grid, cell = _cell_grid(d, per_dim)
    return float(np.sum(bump(grid, k, d)) * cell)


def bump_integral_bounds(d: int, k: int) -> tuple[float, float]:
    """Closed-form sandwich for the bump integral.

    Upper: (1 - s) <= exp(-s) gives int theta <= (pi/(d+k))^(d/2).
    Lower: on |v|^2 <= 1/(d+k), (1 - s)^(d+k) >= (1 - 1/(d+k))^(d+k) >= 1/4,
    so int theta >= w_d (d+k)^(-d/2) / 4.
    """
    m = d + k
    wd = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return wd * m ** (-d / 2) / 4.0, (math.pi / m) ** (d / 2)


@dataclass(frozen=True)
class WeightedAtlas:
    discs: tuple
    weights: np.ndarray
    bump_exponent: int
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "discs", tuple(self.discs))
        w = np.array(self.weights, dtype=float)
        if w.shape != (len(self.discs),):
            raise ValueError("need one weight per disc")
        if not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise ValueError("weights must be positive and finite")
        if self.bump_exponent < 3:
            raise ValueError("bump exponent k must be at least 3")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        centers = np.array([dsc.center for dsc in self.discs])
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "_tree", cKDTree(centers))

    @property
    def d(self) -> int:
        return self.discs[0].d

    @property
    def n(self) -> int:
        return self.discs[0].ambient_dim

    def __len__(self):
        return len(self.discs)

    def neighbours(self, x) -> np.ndarray:
        """Indices of discs whose open ball of radius r contains x, ascending."""
        x = np.asarray(x, dtype=float).reshape(-1)
        idx = np.asarray(sorted(self._tree.query_ball_point(x, self.radius)), dtype=int)
        if len(idx) == 0:
            return idx
        dist = np.linalg.norm(self.centers[idx] - x, axis=1)
        return idx[dist < self.radius]

    def alpha_tilde(self, x) -> float:
        return evaluate_partition(self, x)[0]


def compute_weights(discs: Sequence[Disc], grid_per_dim: int | None = None,
                    k: int = 3) -> WeightedAtlas:
    """Weights c_i = c_theta * vol(Vor_i cap D_i), volume in units where r = 1.

    Vor_i is the Voronoi cell of center i among all centers. Each grid point
    asks the KD-tree for its few nearest centers (only centers within 2r can
    compete) and the winner is decided on exactly recomputed distances, ties
    counting for i. Both the volume and c_theta = 1 / int theta use the same
    midpoint grid of grid_per_dim^d cells.
    """
    discs = list(discs)
    if not discs:
        raise ValueError("no discs")
    d = discs[0].d
    r = discs[0].radius
    if any(dsc.d != d or abs(dsc.radius - r) > 1e-12 * r for dsc in discs):
        raise ValueError("all discs must share dimension and radius")
    if grid_per_dim is None:
        grid_per_dim = 2 * d + 10
    grid, cell = _cell_grid(d, grid_per_dim)
    c_theta = 1.0 / (np.sum(bump(grid, k, d)) * cell)
    centers = np.array([dsc.center for dsc in discs])
    tree = cKDTree(centers)
    weights = np.empty(len(discs))
    kq = min(3, len(discs))
    for i, dsc in enumerate(discs):
        pts = dsc.center + r * grid @ dsc.frame.T
        own = np.sum((pts - dsc.center) ** 2, axis=1)
        _, near = tree.query(pts, k=kq)
        near = near.reshape(len(pts), kq)
        rival = np.sum((pts[:, None, :] - centers[near]) ** 2, axis=2)
        rival[near == i] = np.inf
        count = int(np.sum(own <= rival.min(axis=1)))
        if count == 0:
            raise StageError("empty Voronoi cell")
        weights[i] = c_theta * count * cell
    return WeightedAtlas(tuple(discs), weights, k, r)


def evaluate_partition(atlas: WeightedAtlas, x) -> tuple[float, list]:
    """(alpha_tilde(x), [(i, alpha_i(x)), ...]) over the discs whose ball contains x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    idx = atlas.neighbours(x)
    if len(idx) == 0:
        return 0.0, []
    v = (x - atlas.centers[idx]) / atlas.radius
    raw = atlas.weights[idx] * bump(v, atlas.bump_exponent, atlas.d)
    total = float(raw.sum())
    if total <= 0.0:
        return 0.0, []
    return total, [(int(i), float(a / total)) for i, a in zip(idx, raw)]


def write_atlas(path, atlas: WeightedAtlas) -> None:
    """Text format: a header ``d n r k N3`` then one line per disc holding
    the center, the d frame vectors (as rows) and the weight, in 17 significant digits."""
    fmt = "%.17g"
    lines = [f"d={atlas.d} n={atlas.n} r={fmt % atlas.radius} k={atlas.bump_exponent} "
             f"N3={len(atlas)}"]
    for dsc, w in zip(atlas.discs, atlas.weights):
        vals = np.concatenate([dsc.center, dsc.frame.T.reshape(-1), [w]])
        lines.append(" ".join(fmt % v for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_atlas(path) -> WeightedAtlas:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty atlas file")
    meta = dict(tok.split("=", 1) for tok in lines[0].split())
    try:
        d, n, k, N3 = (int(meta[key]) for key in ("d", "n", "k", "N3"))
        r = float(meta["r"])
    except KeyError as exc:
        raise ValueError(f"atlas header missing {exc}") from None
    if len(lines) - 1 != N3:
        raise ValueError(f"atlas header declares {N3} discs, file has {len(lines) - 1}")
    discs, weights = [], []
    for i, ln in enumerate(lines[1:]):
        vals = np.array(ln.split(), dtype=float)
        if vals.size != n + d * n + 1:
            raise ValueError(f"disc line {i} has {vals.size} values, expected {n + d * n + 1}")
        discs.append(Disc(vals[:n], vals[n:n + d * n].reshape(d, n).T, r))
        weights.append(vals[-1])
    return WeightedAtlas(tuple(discs), np.array(weights), k, r)
