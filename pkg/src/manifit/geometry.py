"""Point clouds, affine subspaces, synthetic manifolds and geometric estimators.

The synthetic manifolds all carry closed-form (or root-found to machine
precision) projections and tangent spaces, so every downstream stage can be
checked against an exact oracle.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gamma

__all__ = [
    "INFINITE_REACH",
    "PointCloud",
    "AffineSubspace",
    "NoiseModel",
    "SyntheticManifold",
    "Sphere",
    "Circle",
    "FlatTorus",
    "PerturbedSphere",
    "make_manifold",
    "random_embedding",
    "sample_noisy",
    "hausdorff",
    "directed_hausdorff",
    "estimate_reach",
    "one_sided_dist",
    "read_cloud",
    "write_cloud",
    "unit_ball_volume",
    "orthonormal_complement",
]


@functools.total_ordering
class _InfiniteReach:
    """Reach of a numerically flat set.

    Compares greater than every real number but deliberately supports no
    arithmetic, so it cannot leak into numeric code paths.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __eq__(self, other):
        return other is self

    def __lt__(self, other):
        return False

    def __hash__(self):
        return hash("manifit.INFINITE_REACH")

    def __float__(self):
        return math.inf

    def __repr__(self):
        return "INFINITE_REACH"


INFINITE_REACH = _InfiniteReach()


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


def _as_points(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


@dataclass(frozen=True)
class PointCloud:
    """N points in R^n, optionally with the clean samples and noise behind them."""

    points: np.ndarray
    clean: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise ValueError("points must be an (N, n) array with n >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        for name in ("clean", "noise"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                if arr.shape != pts.shape:
                    raise ValueError(f"{name} must match points shape {pts.shape}")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def orthonormal_complement(frame: np.ndarray) -> np.ndarray:
    """Columns spanning the orthogonal complement of the column span of ``frame``."""
    n, k = frame.shape
    q, _ = np.linalg.qr(frame, mode="complete")
    return q[:, k:]


def _check_orthonormal(frame: np.ndarray, tol: float = 1e-10) -> None:
    k = frame.shape[1]
    if np.linalg.norm(frame.T @ frame - np.eye(k)) >= tol:
        raise ValueError("frame is not orthonormal")


@dataclass(frozen=True)
class AffineSubspace:
    """basepoint + span(frame columns); ``frame`` is (n, k) with orthonormal columns."""

    basepoint: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        b = np.array(self.basepoint, dtype=float).reshape(-1)
        f = np.array(self.frame, dtype=float).reshape(b.size, -1)
        _check_orthonormal(f)
        b.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "basepoint", b)
        object.__setattr__(self, "frame", f)

    @property
    def ambient_dim(self) -> int:
        return self.basepoint.size

    @property
    def dim(self) -> int:
        return self.frame.shape[1]

    def projector(self) -> np.ndarray:
        return self.frame @ self.frame.T

    def coords(self, x) -> np.ndarray:
        return (_as_points(x) - self.basepoint) @ self.frame

    def lift(self, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=float)
        if self.dim == 0:  # a point: every coordinate row is empty
            c = c.reshape(len(c) if c.ndim == 2 else 1, 0)
        c = c.reshape(-1, self.dim) if self.dim else c
        return self.basepoint + c @ self.frame.T

    def project(self, x) -> np.ndarray:
        return self.lift(self.coords(x))

    def distance(self, x) -> np.ndarray:
        pts = _as_points(x)
        return np.linalg.norm(pts - self.project(pts), axis=1)


@dataclass(frozen=True)
class NoiseModel:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be a finite nonnegative number")


def random_embedding(n: int, m: int, seed: Optional[int]) -> np.ndarray:
    """An (n, m) orthonormal frame; the coordinate frame when ``seed`` is None."""
    if m > n:
        raise ValueError(f"cannot embed R^{m} in R^{n}")
    if seed is None:
        return np.eye(n, m)
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, m)))
    return q * np.sign(np.diag(r))


class SyntheticManifold:
    """A closed d-manifold living in a model space R^m, isometrically placed in R^n.

    Subclasses implement the model-space geometry (``_model_*``); this class
    handles the embedding.
    """

    kind = "abstract"
    reach_is_exact = True

    def __init__(self, intrinsic_dim: int, model_dim: int, ambient_dim: int,
                 embedding: Optional[np.ndarray] = None, offset=None):
        if ambient_dim < model_dim:
            raise ValueError(f"ambient_dim {ambient_dim} < model dimension {model_dim}")
        self.intrinsic_dim = int(intrinsic_dim)
        self.model_dim = int(model_dim)
        self.ambient_dim = int(ambient_dim)
        emb = np.eye(ambient_dim, model_dim) if embedding is None else np.asarray(embedding, float)
        if emb.shape != (ambient_dim, model_dim):
            raise ValueError("embedding has the wrong shape")
        _check_orthonormal(emb, 1e-12)
        self.embedding = emb
        self.offset = np.zeros(ambient_dim) if offset is None else np.asarray(offset, float)
        self.density_bounds = (1.0, 1.0)

    # model space hooks
    def _model_sample(self, rng, count):
        raise NotImplementedError

    def _model_project(self, z):
        raise NotImplementedError

    def _model_tangent(self, z):
        raise NotImplementedError

    @property
    def d(self):
        return self.intrinsic_dim

    @property
    def n(self):
        return self.ambient_dim

    def _to_model(self, x):
        return (_as_points(x) - self.offset) @ self.embedding

    def _from_model(self, z):
        return self.offset + z @ self.embedding.T

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """``count`` i.i.d. points, uniform w.r.t. d-dimensional Hausdorff measure."""
        return self._from_model(self._model_sample(rng, count))

    def project(self, x) -> np.ndarray:
        return self._from_model(self._model_project(self._to_model(x)))

    def distance(self, x) -> np.ndarray:
        pts = _as_points(x)
        return np.linalg.norm(pts - self.project(pts), axis=1)

    def tangent(self, p) -> np.ndarray:
        """Orthonormal tangent frames, shape (N, n, d), at points on the manifold."""
        frames = self._model_tangent(self._to_model(p))
        return np.einsum("nm,kmd->knd", self.embedding, frames)

    def __repr__(self):
        return (f"{type(self).__name__}(d={self.d}, n={self.n}, reach={self.reach:.6g}, "
                f"volume={self.volume:.6g})")


class Sphere(SyntheticManifold):
    """Round d-sphere of radius ``radius`` (reach = radius)."""

    kind = "sphere"

    def __init__(self, d: int, n: int, radius: float = 1.0, embedding=None, offset=None):
        super().__init__(d, d + 1, n, embedding, offset)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.reach = self.radius
        self.volume = (d + 1) * unit_ball_volume(d + 1) * self.radius ** d

    def _model_sample(self, rng, count):
        g = rng.standard_normal((count, self.model_dim))
        return self.radius * g / np.linalg.norm(g, axis=1, keepdims=True)

    def _model_project(self, z):
        z = np.array(z, dtype=float)
        nrm = np.linalg.norm(z, axis=1, keepdims=True)
        at_center = nrm[:, 0] == 0
        z[at_center] = 0.0
        z[at_center, 0] = 1.0
        nrm[at_center] = 1.0
        return self.radius * z / nrm

    def _model_tangent(self, z):
        u = z / np.linalg.norm(z, axis=1, keepdims=True)
        return np.stack([orthonormal_complement(ui[:, None]) for ui in u])


class Circle(Sphere):
    kind = "circle"

    def __init__(self, n: int, radius: float = 1.0, embedding=None, offset=None):
        super().__init__(1, n, radius, embedding, offset)

    def _model_tangent(self, z):
        u = z / np.linalg.norm(z, axis=1, keepdims=True)
        return np.stack([-u[:, 1], u[:, 0]], axis=1)[:, :, None]


class FlatTorus(SyntheticManifold):
    """Product of d circles of radius ``radius`` in R^{2d} (reach = radius)."""

    kind = "flat-torus"

    def __init__(self, d: int, n: int, radius: float = 1.0, embedding=None, offset=None):
        super().__init__(d, 2 * d, n, embedding, offset)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.reach = self.radius
        self.volume = (2 * math.pi * self.radius) ** d

    def _model_sample(self, rng, count):
        ang = rng.uniform(0.0, 2 * math.pi, (count, self.d))
        z = np.empty((count, 2 * self.d))
        z[:, 0::2] = self.radius * np.cos(ang)
        z[:, 1::2] = self.radius * np.sin(ang)
        return z

    def _model_project(self, z):
        z = np.array(z, dtype=float)
        pairs = z.reshape(len(z), self.d, 2)
        nrm = np.linalg.norm(pairs, axis=2, keepdims=True)
        degenerate = nrm[..., 0] == 0
        pairs[degenerate] = (1.0, 0.0)
        nrm[degenerate] = 1.0
        return (self.radius * pairs / nrm).reshape(len(z), 2 * self.d)

    def _model_tangent(self, z):
        pairs = z.reshape(len(z), self.d, 2)
        u = pairs / np.linalg.norm(pairs, axis=2, keepdims=True)
        frames = np.zeros((len(z), 2 * self.d, self.d))
        for j in range(self.d):
            frames[:, 2 * j, j] = -u[:, j, 1]
            frames[:, 2 * j + 1, j] = u[:, j, 0]
        return frames


class PerturbedSphere(SyntheticManifold):
    """Radial graph ``R(u) u`` over the round d-sphere, R(u) = radius (1 + eps Re((u0 + i u1)^m)).

    The projection is found by a Gauss-Newton solve seeded at the radial
    projection, which is exact for points already on the manifold. The reach
    has no closed form; ``reach`` holds a dense Federer estimate (an upper
    bound converging from above).
    """

    kind = "graph-perturbed-sphere"
    reach_is_exact = False

    def __init__(self, d: int, n: int, radius: float = 1.0, eps: float = 0.1, m: int = 3,
                 embedding=None, offset=None, reach_samples: int = 2000):
        super().__init__(d, d + 1, n, embedding, offset)
        if not 0 <= eps < 0.5:
            raise ValueError("eps must lie in [0, 0.5)")
        self.radius = float(radius)
        self.eps = float(eps)
        self.m = int(m)
        # |grad_S phi| <= m on the sphere
        self._jac_max = ((1 + eps) ** d) * math.sqrt(1 + (eps * m / (1 - eps)) ** 2)
        rng = np.random.default_rng(12345)
        u = rng.standard_normal((20000, d + 1))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        sphere_area = (d + 1) * unit_ball_volume(d + 1)
        self.volume = sphere_area * self.radius ** d * float(np.mean(self._area_element(u)))
        if d == 1:
            t = np.linspace(0, 2 * math.pi, reach_samples, endpoint=False)
            pts = self._from_model(self._embed_dirs(np.stack([np.cos(t), np.sin(t)], 1)))
        else:
            pts = self.sample(np.random.default_rng(54321), reach_samples)
        self.reach = float(estimate_reach(pts, self.tangent(pts)))

    def _phi(self, u):
        z = u[:, 0] + 1j * u[:, 1]
        return np.real(z ** self.m)

    def _grad_phi(self, u):
        z = u[:, 0] + 1j * u[:, 1]
        w = self.m * z ** (self.m - 1)
        g = np.zeros_like(u)
        g[:, 0] = np.real(w)
        g[:, 1] = -np.imag(w)
        return g

    def _R(self, u):
        return self.radius * (1 + self.eps * self._phi(u))

    def _tangential_grad_R(self, u):
        g = self.radius * self.eps * self._grad_phi(u)
        return g - np.sum(g * u, axis=1, keepdims=True) * u

    def _area_element(self, u):
        R = self._R(u) / self.radius
        gR = np.linalg.norm(self._tangential_grad_R(u), axis=1) / self.radius
        return R ** self.d * np.sqrt(1 + (gR / R) ** 2)

    def _embed_dirs(self, u):
        return self._R(u)[:, None] * u

    def _model_sample(self, rng, count):
        out = []
        have = 0
        while have < count:
            u = rng.standard_normal((2 * (count - have) + 16, self.model_dim))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            keep = rng.uniform(size=len(u)) * self._jac_max <= self._area_element(u)
            out.append(u[keep])
            have += int(keep.sum())
        return self._embed_dirs(np.concatenate(out)[:count])

    def _model_project(self, z):
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        for i, zi in enumerate(z):
            nrm = np.linalg.norm(zi)
            u = zi / nrm if nrm > 0 else np.eye(self.model_dim)[0]
            for _ in range(50):
                J = self._model_tangent_raw(u[None])[0]  # (m, d) unnormalized
                x = self._embed_dirs(u[None])[0]
                res = zi - x
                step = np.linalg.lstsq(J, res, rcond=None)[0]
                frame = orthonormal_complement(u[:, None])
                u_new = u + frame @ step
                u_new /= np.linalg.norm(u_new)
                if np.linalg.norm(u_new - u) < 1e-15:
                    u = u_new
                    break
                u = u_new
            out[i] = self._embed_dirs(u[None])[0]
        return out

    def _model_tangent_raw(self, u):
        # derivative of R(u) u along an orthonormal frame of T_u S^d
        gR = self._tangential_grad_R(u)
        R = self._R(u)
        res = []
        for k in range(len(u)):
            E = orthonormal_complement(u[k][:, None])
            res.append(R[k] * E + np.outer(u[k], gR[k] @ E))
        return np.stack(res)

    def _model_tangent(self, z):
        u = z / np.linalg.norm(z, axis=1, keepdims=True)
        raw = self._model_tangent_raw(u)
        return np.stack([np.linalg.qr(J)[0] for J in raw])


def make_manifold(kind: str, d: int, n: int, radius: float = 1.0,
                  embedding_seed: Optional[int] = None, **kw) -> SyntheticManifold:
    """Build a synthetic manifold by name, optionally rotated into R^n by a seeded frame."""
    model_dim = {"circle": 2, "sphere": d + 1, "flat-torus": 2 * d,
                 "graph-perturbed-sphere": d + 1}.get(kind)
    if model_dim is None:
        raise ValueError(f"unknown manifold kind {kind!r}")
    if kind == "circle" and d != 1:
        raise ValueError("a circle has intrinsic dimension 1")
    emb = random_embedding(n, model_dim, embedding_seed)
    if kind == "circle":
        return Circle(n, radius, emb)
    if kind == "sphere":
        return Sphere(d, n, radius, emb)
    if kind == "flat-torus":
        return FlatTorus(d, n, radius, emb)
    return PerturbedSphere(d, n, radius, embedding=emb, **kw)


def sample_noisy(manifold: SyntheticManifold, noise: NoiseModel, count: int) -> PointCloud:
    """``count`` points y = x + xi with x uniform on the manifold and xi ~ N(0, sigma^2 I_n)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(noise.seed)
    clean = manifold.sample(rng, count)
    xi = noise.sigma * rng.standard_normal((count, manifold.ambient_dim))
    return PointCloud(clean + xi, clean=clean, noise=xi)


def directed_hausdorff(a, b) -> float:
    """sup_{x in a} inf_{y in b} |x - y| for finite sets (exact)."""
    A, B = _as_points(a), _as_points(b)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("empty set has no Hausdorff distance")
    if A.shape[1] != B.shape[1]:
        raise ValueError("point sets live in different dimensions")
    k = min(4, len(B))
    _, idx = cKDTree(B).query(A, k=k)
    idx = np.asarray(idx).reshape(len(A), k)
    # re-evaluate the few nearest candidates with the plain formula so the
    # result is bit-identical to a brute-force scan
    diff = A[:, None, :] - B[idx]
    exact = np.sqrt(np.sum(diff * diff, axis=2))
    return float(np.max(np.min(exact, axis=1)))


def hausdorff(a, b) -> float:
    return max(directed_hausdorff(a, b), directed_hausdorff(b, a))


def estimate_reach(samples, tangents, chunk: int = 64):
    """Sampled Federer reach: 1 / max_{a != b} 2 dist(b, Tan(a)) / |b - a|^2.

    ``tangents`` holds one (n, d) orthonormal frame per sample. The result
    overestimates the reach and converges from above as sampling densifies;
    a numerically flat sample returns ``INFINITE_REACH``.
    """
    P = _as_points(samples)
    T = np.asarray(tangents, dtype=float)
    if T.ndim == 2:
        T = T[:, :, None]
    if len(P) < 2:
        raise ValueError("reach estimation needs at least two points")
    if T.shape[:2] != P.shape:
        raise ValueError("need one tangent frame per sample")
    best = 0.0
    any_pair = False
    for s in range(0, len(P), chunk):
        a = P[s:s + chunk]
        Ta = T[s:s + chunk]
        diff = P[None, :, :] - a[:, None, :]                     # (c, N, n)
        sq = np.sum(diff * diff, axis=2)
        tang = np.einsum("cnd,cNn->cNd", Ta, diff)
        normal = diff - np.einsum("cnd,cNd->cNn", Ta, tang)
        dist = np.linalg.norm(normal, axis=2)
        valid = sq >= 1e-24
        if not valid.any():
            continue
        any_pair = True
        # discount coordinate rounding so near pairs cannot push the estimate below the truth
        floor = 4 * np.finfo(float).eps * (np.linalg.norm(a, axis=1)[:, None]
                                           + np.linalg.norm(P, axis=1)[None, :])
        dist = np.maximum(dist - floor, 0.0)
        dist = np.where(dist <= 1e-12 * np.sqrt(sq), 0.0, dist)
        ratio = np.where(valid, 2.0 * dist / np.where(valid, sq, 1.0), 0.0)
        best = max(best, float(ratio.max()))
    if not any_pair:
        raise ValueError("all sample pairs are duplicates")
    if best == 0.0:
        return INFINITE_REACH
    return 1.0 / best


def one_sided_dist(cloud, manifold: SyntheticManifold) -> float:
    """sup over the cloud of the exact distance to the manifold."""
    pts = _as_points(cloud)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    return float(np.max(manifold.distance(pts)))


def write_cloud(path, points, extra: Optional[np.ndarray] = None) -> None:
    """Write the plain-text cloud format: header ``n=<dim> count=<N>`` then one row per point.

    ``extra`` appends per-point columns and is announced as ``extra=<k>``.
    """
    pts = _as_points(points)
    header = f"n={pts.shape[1]} count={len(pts)}"
    rows = pts
    if extra is not None:
        ex = np.asarray(extra, dtype=float).reshape(len(pts), -1)
        header += f" extra={ex.shape[1]}"
        rows = np.hstack([pts, ex])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_cloud(path) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverse of :func:`write_cloud`; returns (points, extra columns or None)."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError("empty point-cloud file")
    meta = {}
    for tok in lines[0].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValueError(f"bad header token {tok!r}")
        meta[key] = int(val)
    if "n" not in meta or "count" not in meta:
        raise ValueError("header must declare n=<dim> count=<N>")
    n, count, extra = meta["n"], meta["count"], meta.get("extra", 0)
    width = n + extra
    rows = [ln.split() for ln in lines[1:] if ln.strip()]
    if len(rows) != count:
        raise ValueError(f"header declares {count} points, file has {len(rows)}")
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"row {i} has {len(row)} columns, expected {width}")
    data = np.array(rows, dtype=float).reshape(count, width)
    if not np.all(np.isfinite(data)):
        raise ValueError("non-finite coordinate in point-cloud file")
    return data[:, :n], (data[:, n:] if extra else None)
