"""The output manifold: zero set of G(x) = Pi_hi(M(x)) F(x) over a weighted disc atlas."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .atlas import WeightedAtlas, evaluate_partition
from .errors import StageError
from .geometry import (INFINITE_REACH, SyntheticManifold, _as_points, estimate_reach,
                       orthonormal_complement)

__all__ = [
    "OutputManifold",
    "ProjectionResult",
    "DerivativeReport",
    "OutputGeometry",
    "spectral_high_projection",
    "weighted_projector_field",
    "residual",
    "project_to_manifold",
    "derivative_diagnostics",
    "estimate_output_geometry",
    "GAP_TOL",
]

GAP_TOL = 1e-6


def spectral_high_projection(A, split_rank: int) -> np.ndarray:
    """Projector onto the eigenvectors of symmetric A with eigenvalue above 1/2.

    Equivalent to the Cauchy integral of the resolvent over the circle of
    radius 1/2 about 1. Exactly ``split_rank`` eigenvalues must exceed 1/2,
    and none may lie within GAP_TOL of it.
    """
    A = np.asarray(A, dtype=float)
    w, V = np.linalg.eigh((A + A.T) / 2)
    n = len(w)
    if np.any(np.abs(w - 0.5) < GAP_TOL) or int(np.sum(w > 0.5)) != split_rank:
        raise StageError("spectral gap violated")
    top = V[:, n - split_rank:]
    return top @ top.T


@dataclass(frozen=True)
class ProjectionResult:
    point: np.ndarray
    iterations: int
    final_residual: float
    converged: bool
    steps: tuple = ()  # Newton step lengths, in units of r

    @property
    def point_on_manifold(self):
        return self.point

    def step_ratios(self) -> list[float]:
        """|step_{i+1}| / |step_i|^2, skipping steps below the rounding floor."""
        s = self.steps
        return [s[i + 1] / s[i] ** 2 for i in range(len(s) - 1)
                if s[i] > 1e-7 and s[i + 1] > 1e-12]


class OutputManifold:
    """Evaluator for alpha_i, M(x), Pi_x, F(x) and G(x) = Pi_x F(x).

    ``c`` sets the tube width c r / d around the discs that bounds the domain.
    """

    def __init__(self, atlas: WeightedAtlas, c: float = 0.25):
        self.atlas = atlas
        self.c = float(c)
        self.d = atlas.d
        self.n = atlas.n
        self.r = atlas.radius
        self.domain_margin = self.c * self.r / self.d
        self.frames = np.array([dsc.frame for dsc in atlas.discs])        # (N3, n, d)
        eye = np.eye(self.n)
        self.local_projectors = eye - np.einsum("ind,imd->inm", self.frames, self.frames)

    @property
    def centers(self):
        return self.atlas.centers

    def partition(self, x):
        return evaluate_partition(self.atlas, x)

    def _weights(self, x):
        at, parts = self.partition(x)
        if at <= 0.0:
            raise StageError("outside atlas domain")
        idx = np.array([i for i, _ in parts])
        a = np.array([w for _, w in parts])
        return idx, a

    def M(self, x) -> np.ndarray:
        idx, a = self._weights(x)
        return np.einsum("i,inm->nm", a, self.local_projectors[idx])

    def Pi(self, x) -> np.ndarray:
        return spectral_high_projection(self.M(x), self.n - self.d)

    def F(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        idx, a = self._weights(x)
        return np.einsum("i,inm,im->n", a, self.local_projectors[idx], x - self.centers[idx])

    def G(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        idx, a = self._weights(x)
        P = self.local_projectors[idx]
        M = np.einsum("i,inm->nm", a, P)
        F = np.einsum("i,inm,im->n", a, P, x - self.centers[idx])
        return spectral_high_projection(M, self.n - self.d) @ F

    def nearest_disc(self, x) -> int:
        x = np.asarray(x, dtype=float).reshape(-1)
        dist = np.linalg.norm(self.centers - x, axis=1)
        return int(np.argmin(dist))  # argmin returns the lowest index on ties

    def tube_distance(self, x) -> float:
        """Distance from x to the nearest disc (as a solid disc)."""
        i = self.nearest_disc(x)
        return float(self.atlas.discs[i].distance(x)[0])

    def in_domain(self, x) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        for i in self.atlas.neighbours(x):
            if self.atlas.discs[i].distance(x)[0] < self.domain_margin:
                return True
        return False

    def jacobian(self, x, h: Optional[float] = None) -> np.ndarray:
        """Central-difference Jacobian of G, shape (n, n)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        h = 1e-5 * self.r if h is None else h
        J = np.empty((self.n, self.n))
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = h
            J[:, j] = (self.G(x + e) - self.G(x - e)) / (2 * h)
        return J

    def tangent(self, x) -> np.ndarray:
        """Orthonormal d-frame spanning the numerical null space of dG at x."""
        _, _, Vt = np.linalg.svd(self.jacobian(x))
        return Vt[-self.d:].T


def weighted_projector_field(om: OutputManifold, x) -> np.ndarray:
    return om.M(x)


def residual(om: OutputManifold, x) -> np.ndarray:
    return om.G(x)


def project_to_manifold(om: OutputManifold, x, tol: Optional[float] = None,
                        max_iter: int = 30) -> ProjectionResult:
    """Newton iteration on the fiber through x of the nearest disc.

    With p, E the nearest disc's center and frame and Q a basis of E's
    complement, the base coordinate b = E^T (x - p) is held and the fiber
    coordinate y solves h(y) = Q^T G(p + E b + Q y) = 0. The Jacobian of h
    comes from forward differences with step 1e-6 r. Queries farther than
    the tube width from the disc start from y = 0.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if tol is None:
        tol = 1e-9 * om.r
    try:
        g0 = float(np.linalg.norm(om.G(x)))
    except StageError:
        g0 = np.inf  # x itself may lie outside every ball; its fiber base need not
    if g0 < tol:
        return ProjectionResult(x.copy(), 0, g0, True)
    i = om.nearest_disc(x)
    p = om.centers[i]
    E = om.frames[i]
    Q = orthonormal_complement(E)
    base = p + E @ (E.T @ (x - p))
    y = Q.T @ (x - p)
    if np.linalg.norm(y) >= om.domain_margin:
        y = np.zeros_like(y)
    fd = 1e-6 * om.r

    def h(yy):
        return Q.T @ om.G(base + Q @ yy)

    steps = []
    hy = h(y)
    res = float(np.linalg.norm(om.G(base + Q @ y)))
    it = 0
    while res >= tol and it < max_iter:
        J = np.empty((len(y), len(y)))
        for j in range(len(y)):
            e = np.zeros(len(y))
            e[j] = fd
            J[:, j] = (h(y + e) - hy) / fd
        if np.linalg.cond(J) > 1e8:
            raise StageError("degenerate fiber Jacobian")
        step = np.linalg.solve(J, -hy)
        y = y + step
        steps.append(float(np.linalg.norm(step)) / om.r)
        it += 1
        z = base + Q @ y
        g = om.G(z)
        hy = Q.T @ g
        res = float(np.linalg.norm(g))
    return ProjectionResult(base + Q @ y, it, res, res < tol, tuple(steps))


@dataclass(frozen=True)
class DerivativeReport:
    first_defect: float        # max |d_v G - Pi_x v|
    second: float              # max |d_v^2 G|
    third: float               # max |d_v^3 G|
    delta: float               # r^2 / tau_hat
    r: float
    probes: int

    @property
    def first_over_delta(self) -> float:
        return self.first_defect / self.delta

    @property
    def second_over_delta(self) -> float:
        return self.second / self.delta

    @property
    def third_over_delta(self) -> float:
        return self.third / self.delta

    def scaled(self) -> dict:
        """The three maxima in units where r = 1, over delta/r = r/tau_hat."""
        ds = self.delta / self.r
        return {"first": self.first_defect / ds,
                "second": self.second * self.r / ds,
                "third": self.third * self.r ** 2 / ds}


def derivative_diagnostics(om: OutputManifold, probes, h: Optional[float] = None,
                           tau_hat: float = 1.0, seed: int = 0) -> DerivativeReport:
    """Finite-difference first, second and third directional derivatives of G."""
    pts = _as_points(probes)
    h = 1e-2 * om.r if h is None else h
    rng = np.random.default_rng(seed)
    f1 = f2 = f3 = 0.0
    for x in pts:
        v = rng.standard_normal(om.n)
        v /= np.linalg.norm(v)
        g = {s: om.G(x + s * h * v) for s in (-2, -1, 0, 1, 2)}
        d1 = (g[1] - g[-1]) / (2 * h)
        d2 = (g[1] - 2 * g[0] + g[-1]) / h ** 2
        d3 = (g[2] - 2 * g[1] + 2 * g[-1] - g[-2]) / (2 * h ** 3)
        f1 = max(f1, float(np.linalg.norm(d1 - om.Pi(x) @ v)))
        f2 = max(f2, float(np.linalg.norm(d2)))
        f3 = max(f3, float(np.linalg.norm(d3)))
    return DerivativeReport(f1, f2, f3, om.r ** 2 / tau_hat, om.r, len(pts))


@dataclass(frozen=True)
class OutputGeometry:
    hausdorff_to_truth: float
    reach_lower: object         # float or INFINITE_REACH
    samples: np.ndarray         # points of M_o
    failures: int
    iterations: np.ndarray
    results: tuple = ()         # ProjectionResult per converged probe


def estimate_output_geometry(om: OutputManifold, manifold: SyntheticManifold,
                             probe_count: int, seed: int = 0,
                             tol: Optional[float] = None, reach_points: int = 600,
                             max_iter: int = 30) -> OutputGeometry:
    """Sample M_o by projecting truth samples onto it; Hausdorff to the truth and
    a Federer reach estimate with tangents from the null space of dG."""
    rng = np.random.default_rng(seed)
    truth = manifold.sample(rng, probe_count)
    out, fails, iters, gaps, results = [], 0, [], [], []
    for x in truth:
        try:
            res = project_to_manifold(om, x, tol, max_iter)
        except StageError:
            fails += 1
            gaps.append(np.inf)
            continue
        if not res.converged:
            fails += 1
            gaps.append(np.inf)
            continue
        out.append(res.point)
        results.append(res)
        iters.append(res.iterations)
        gaps.append(float(np.linalg.norm(res.point - x)))
    if fails > 0.01 * probe_count or not out:
        raise StageError("manifold evaluation unstable")
    mo = np.array(out)
    # M_o -> M side is exact; M -> M_o uses the projected partner or the nearest sample
    side1 = float(np.max(manifold.distance(mo)))
    nn, _ = cKDTree(mo).query(truth)
    side2 = float(np.max(np.minimum(np.array(gaps), nn)))
    sub = mo[:reach_points] if len(mo) > reach_points else mo
    tangents = np.array([om.tangent(p) for p in sub])
    reach = estimate_reach(sub, tangents)
    return OutputGeometry(max(side1, side2), reach, mo, fails, np.array(iters), tuple(results))
