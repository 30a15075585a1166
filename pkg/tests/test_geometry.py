import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manifit.geometry import (
    INFINITE_REACH, AffineSubspace, Circle, FlatTorus, NoiseModel, PerturbedSphere,
    PointCloud, Sphere, estimate_reach, hausdorff, make_manifold, one_sided_dist,
    read_cloud, sample_noisy, write_cloud,
)


def brute_directed(a, b):
    best = 0.0
    for x in a:
        m = math.inf
        for y in b:
            m = min(m, float(np.sqrt(np.sum((x - y) ** 2))))
        best = max(best, m)
    return best


# --- PointCloud / AffineSubspace ------------------------------------------

def test_point_cloud_rejects_non_finite():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan]]))


def test_point_cloud_rejects_mismatched_provenance():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 2)), clean=np.zeros((2, 2)))


def test_point_cloud_is_read_only():
    pc = PointCloud(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        pc.points[0, 0] = 1.0


def test_affine_subspace_rejects_non_orthonormal_frame():
    with pytest.raises(ValueError):
        AffineSubspace(np.zeros(3), np.array([[1.0, 1.0], [0, 1.0], [0, 0]]))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 8), data=st.data())
def test_affine_projector_is_symmetric_idempotent(n, data):
    k = data.draw(st.integers(0, n))
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    q = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :k]
    S = AffineSubspace(rng.standard_normal(n), q)
    P = S.projector()
    assert np.linalg.norm(P @ P - P) < 1e-10
    assert np.linalg.norm(P.T - P) < 1e-10


# --- synthetic manifolds ---------------------------------------------------

MANIFOLDS = [
    lambda: make_manifold("circle", 1, 5, 1.5, embedding_seed=1),
    lambda: make_manifold("sphere", 2, 6, 0.7, embedding_seed=2),
    lambda: make_manifold("flat-torus", 2, 7, 1.0, embedding_seed=3),
    lambda: make_manifold("graph-perturbed-sphere", 1, 4, 1.0, embedding_seed=4, eps=0.1),
]


@pytest.mark.parametrize("factory", MANIFOLDS)
def test_exact_project_fixes_samples(factory):
    M = factory()
    P = M.sample(np.random.default_rng(0), 200)
    assert np.max(np.abs(M.project(P) - P)) < 1e-12


@pytest.mark.parametrize("factory", MANIFOLDS)
def test_tangent_frames_orthonormal_and_tangent(factory):
    M = factory()
    P = M.sample(np.random.default_rng(1), 50)
    T = M.tangent(P)
    assert T.shape == (50, M.n, M.d)
    gram = np.einsum("knd,kne->kde", T, T)
    assert np.max(np.abs(gram - np.eye(M.d))) < 1e-12
    # moving a short step along the tangent stays on M to second order
    h = 1e-4
    step = P + h * T[:, :, 0]
    assert np.max(M.distance(step)) < 10 * h * h / M.reach


@pytest.mark.parametrize("factory", MANIFOLDS[:3])
def test_projection_is_nearest_point(factory):
    M = factory()
    rng = np.random.default_rng(2)
    Y = M.sample(rng, 30) + 0.05 * rng.standard_normal((30, M.n))
    Q = M.project(Y)
    dense = M.sample(np.random.default_rng(3), 50000)
    brute = np.min(np.linalg.norm(Y[:, None] - dense[None], axis=2), axis=1)
    assert np.all(np.linalg.norm(Y - Q, axis=1) <= brute + 1e-12)


def test_perturbed_sphere_projection_is_orthogonal():
    M = PerturbedSphere(1, 3, eps=0.1, m=3)
    rng = np.random.default_rng(4)
    Y = M.sample(rng, 40) + 0.01 * rng.standard_normal((40, 3))
    Q = M.project(Y)
    T = M.tangent(Q)
    assert np.max(np.abs(np.einsum("kn,knd->kd", Y - Q, T))) < 1e-12


def test_analytic_reach_matches_kind():
    assert Circle(3, 2.5).reach == 2.5
    assert Sphere(2, 4, 0.3).reach == 0.3
    assert FlatTorus(2, 4, 1.7).reach == 1.7
    assert not PerturbedSphere(1, 2).reach_is_exact


def test_volumes():
    assert Circle(2, 2.0).volume == pytest.approx(4 * math.pi)
    assert Sphere(2, 3, 1.0).volume == pytest.approx(4 * math.pi)
    assert FlatTorus(2, 4, 1.0).volume == pytest.approx(4 * math.pi ** 2)


def test_make_manifold_rejects_unknown_kind():
    with pytest.raises(ValueError):
        make_manifold("klein-bottle", 2, 4)


# --- sample_noisy ----------------------------------------------------------

def test_zero_noise_lies_on_manifold():
    M = make_manifold("sphere", 2, 5, 1.0, embedding_seed=0)
    cloud = sample_noisy(M, NoiseModel(0.0, 3), 500)
    assert one_sided_dist(cloud, M) < 1e-12


def test_sampling_is_deterministic():
    M = make_manifold("circle", 1, 4, 1.0, embedding_seed=0)
    a = sample_noisy(M, NoiseModel(0.1, 42), 100)
    b = sample_noisy(M, NoiseModel(0.1, 42), 100)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.points, a.clean + a.noise)


# Monte-Carlo oracle: mean of ||x + xi| - 1| for x on the unit circle in R^2 and
# xi ~ N(0, 0.01^2 I_2), 10^6 draws (seed 2024), computed independently.
MEAN_DIST_ORACLE = 0.00798710116


def test_mean_noise_distance_matches_oracle():
    sigma = 0.01
    M = Circle(2, 1.0)
    cloud = sample_noisy(M, NoiseModel(sigma, 11), 10000)
    mean = float(np.mean(M.distance(cloud.points)))
    assert MEAN_DIST_ORACLE == pytest.approx(sigma * math.sqrt(2 / math.pi), rel=0.01)
    assert mean == pytest.approx(MEAN_DIST_ORACLE, rel=0.2)


def test_noise_is_isotropic_gaussian():
    M = Circle(6, 1.0)
    cloud = sample_noisy(M, NoiseModel(0.3, 5), 20000)
    cov = np.cov(cloud.noise.T)
    assert np.allclose(np.diag(cov), 0.09, rtol=0.05)
    assert np.max(np.abs(cov - np.diag(np.diag(cov)))) < 0.01


# --- Hausdorff -------------------------------------------------------------

def test_hausdorff_identity_and_translation():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((40, 3))
    assert hausdorff(A, A) == 0.0
    t = np.array([0.3, -0.4, 0.0])
    assert hausdorff(A, A + t) == pytest.approx(0.5, abs=1e-15)


def test_hausdorff_equals_brute_force_exactly():
    rng = np.random.default_rng(123)
    for _ in range(5):
        A, B = rng.standard_normal((50, 3)), rng.standard_normal((50, 3))
        assert hausdorff(A, B) == max(brute_directed(A, B), brute_directed(B, A))


def test_hausdorff_empty_raises():
    with pytest.raises(ValueError, match="empty set has no Hausdorff distance"):
        hausdorff(np.zeros((0, 2)), np.zeros((3, 2)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sizes=st.tuples(*[st.integers(1, 30)] * 3))
def test_hausdorff_is_a_metric(seed, sizes):
    rng = np.random.default_rng(seed)
    A, B, C = (rng.standard_normal((s, 4)) for s in sizes)
    assert hausdorff(A, B) == hausdorff(B, A)
    assert hausdorff(A, C) <= hausdorff(A, B) + hausdorff(B, C) + 1e-12


# --- reach -----------------------------------------------------------------

def circle_points(count, radius=1.0):
    t = np.linspace(0, 2 * math.pi, count, endpoint=False)
    P = radius * np.stack([np.cos(t), np.sin(t)], 1)
    T = np.stack([-np.sin(t), np.cos(t)], 1)[:, :, None]
    return P, T


def test_reach_of_equispaced_circle():
    P, T = circle_points(64)
    est = estimate_reach(P, T)
    # every pair gives 1/R exactly; rounding leaves a relative error near 1e-10
    assert 1.0 - 1e-9 <= est <= 1.01


def test_reach_of_sphere_radius_two():
    S = Sphere(2, 3, 2.0)
    P = S.sample(np.random.default_rng(0), 500)
    est = estimate_reach(P, S.tangent(P))
    assert 2.0 - 1e-9 <= est <= 2.1


def test_reach_of_line_is_infinite():
    t = np.linspace(-1, 1, 30)[:, None]
    u = np.array([[0.6, 0.8, 0.0]])
    P = 0.5 + t * u
    T = np.repeat(u.T[None], 30, axis=0)
    assert estimate_reach(P, T) is INFINITE_REACH


def test_reach_duplicates():
    P = np.ones((4, 2))
    T = np.tile(np.array([[1.0], [0.0]]), (4, 1, 1))
    with pytest.raises(ValueError):
        estimate_reach(P, T)
    # a duplicated pair among distinct points is skipped, not fatal
    P2, T2 = circle_points(16)
    est = estimate_reach(np.vstack([P2, P2[:1]]), np.concatenate([T2, T2[:1]]))
    assert est == pytest.approx(1.0, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6), k=st.integers(1, 3))
def test_reach_of_affine_samples_is_infinite(seed, n, k):
    k = min(k, n)
    rng = np.random.default_rng(seed)
    frame = np.linalg.qr(rng.standard_normal((n, k)))[0]
    P = rng.standard_normal(n) + rng.uniform(-1, 1, (20, k)) @ frame.T
    T = np.repeat(frame[None], 20, axis=0)
    assert estimate_reach(P, T) is INFINITE_REACH


def test_reach_of_circle_decreases_towards_radius():
    rho = 1.7
    M = Circle(2, rho)
    P = M.sample(np.random.default_rng(9), 320)
    T = M.tangent(P)
    # nested samples: the sup runs over a growing set of pairs
    ests = [estimate_reach(P[:count], T[:count]) for count in (20, 80, 320)]
    assert all(e >= rho - 1e-9 for e in ests)
    assert ests[0] >= ests[1] - 1e-12 and ests[1] >= ests[2] - 1e-12
    coarse = estimate_reach(P[:4], T[:4])
    assert coarse > ests[2]


def test_infinite_reach_sentinel_ordering():
    assert INFINITE_REACH > 1e300
    assert not INFINITE_REACH < 5.0
    assert float(INFINITE_REACH) == math.inf
    with pytest.raises(TypeError):
        INFINITE_REACH + 1


# --- one_sided_dist ----------------------------------------------------------

def test_one_sided_dist_single_point():
    M = Circle(2, 1.0)
    assert one_sided_dist(np.array([[1.3, 0.0]]), M) == pytest.approx(0.3, abs=1e-15)


def test_one_sided_dist_matches_closed_form_sphere():
    S = Sphere(2, 3, 1.2)
    cloud = sample_noisy(S, NoiseModel(0.1, 8), 300)
    brute = max(abs(np.linalg.norm(y) - 1.2) for y in cloud.points)
    assert one_sided_dist(cloud, S) == pytest.approx(brute, abs=1e-15)


# --- file format -------------------------------------------------------------

def test_cloud_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    P = rng.standard_normal((7, 3))
    write_cloud(tmp_path / "c.txt", P)
    Q, extra = read_cloud(tmp_path / "c.txt")
    assert extra is None
    assert np.array_equal(P, Q)
    assert (tmp_path / "c.txt").read_text().splitlines()[0] == "n=3 count=7"


def test_cloud_file_extra_columns(tmp_path):
    P = np.arange(6.0).reshape(2, 3)
    write_cloud(tmp_path / "c.txt", P, extra=np.array([[1.0, 2], [3, 4]]))
    Q, extra = read_cloud(tmp_path / "c.txt")
    assert np.array_equal(Q, P) and extra.shape == (2, 2)


def test_cloud_reader_rejects_ragged_rows(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("n=2 count=2\n1 2\n3\n")
    with pytest.raises(ValueError, match="columns"):
        read_cloud(f)


def test_cloud_reader_rejects_wrong_count(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("n=2 count=3\n1 2\n3 4\n")
    with pytest.raises(ValueError):
        read_cloud(f)
