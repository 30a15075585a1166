import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from manifit.atlas import compute_weights
from manifit.discs import Disc
from manifit.errors import StageError
from manifit.geometry import Circle
from manifit.outman import (OutputManifold, derivative_diagnostics, estimate_output_geometry,
                            project_to_manifold, residual, spectral_high_projection,
                            weighted_projector_field)


def _random_projector(rng, n, rank):
    Q = np.linalg.qr(rng.standard_normal((n, rank)))[0]
    return Q @ Q.T


def _gapped(rng, n, high):
    """Random symmetric matrix with ``high`` eigenvalues in (0.6, 1.4) and the rest in (-0.4, 0.4)."""
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    w = np.concatenate([rng.uniform(0.6, 1.4, high), rng.uniform(-0.4, 0.4, n - high)])
    return (Q * w) @ Q.T, Q[:, :high]


def _flat(n=3, d=1, centers=((0.0, 0.0, 0.0),), r=1.0):
    frame = np.eye(n)[:, :d]
    return OutputManifold(compute_weights([Disc(np.array(c), frame, r) for c in centers]))


def _exact_circle(m, r):
    C = Circle(3)
    t = np.arange(m) * 2 * np.pi / m
    z = np.stack([np.cos(t), np.sin(t), np.zeros(m)], axis=1)
    discs = [Disc(p, T, r) for p, T in zip(z, C.tangent(z))]
    return C, OutputManifold(compute_weights(discs))


def test_projector_is_fixed_point():
    P = _random_projector(np.random.default_rng(0), 6, 4)
    assert np.allclose(spectral_high_projection(P, 4), P, atol=1e-12)


def test_gap_violation():
    A = np.diag([1.0, 0.5 + 1e-7, 0.0])
    with pytest.raises(StageError, match="spectral gap violated"):
        spectral_high_projection(A, 1)
    with pytest.raises(StageError, match="spectral gap violated"):
        spectral_high_projection(np.diag([1.0, 0.9, 0.0]), 1)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), n=st.integers(2, 8), data=st.data())
def test_projection_calculus(seed, n, data):
    high = data.draw(st.integers(1, n - 1))
    rng = np.random.default_rng(seed)
    A, top = _gapped(rng, n, high)
    P = spectral_high_projection(A, high)
    assert np.abs(P @ P - P).max() < 1e-10
    assert np.abs(P - P.T).max() < 1e-10
    assert np.abs(P @ A - A @ P).max() < 1e-10
    assert np.abs(P - top @ top.T).max() < 1e-10
    c = data.draw(st.floats(0.6, 1.4))
    w = c * np.linalg.eigvalsh(A)
    assume(np.sum(w > 0.5) == high and np.abs(w - 0.5).min() > 1e-6)
    # positive scaling keeps the eigenspaces
    assert np.abs(spectral_high_projection(c * A, high) - P).max() < 1e-10


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_midpoint_of_close_projectors_rounds_to_projector(seed):
    rng = np.random.default_rng(seed)
    n, rank = 6, 4
    P = _random_projector(rng, n, rank)
    S = rng.standard_normal((n, n))
    S = 0.05 * (S - S.T)
    Q = np.linalg.qr(np.eye(n) + S)[0]
    Q2 = Q @ P @ Q.T
    if np.linalg.norm(P - Q2) >= 0.5:
        return
    R = spectral_high_projection((P + Q2) / 2, rank)
    assert np.allclose(R @ R, R, atol=1e-10)
    assert np.trace(R) == pytest.approx(rank, abs=1e-10)


def test_local_projectors_and_field():
    C, om = _exact_circle(60, 0.3)
    P = om.local_projectors
    assert np.allclose(np.einsum("inm,imk->ink", P, P), P, atol=1e-10)
    assert np.allclose(np.trace(P, axis1=1, axis2=2), om.n - om.d, atol=1e-8)
    rng = np.random.default_rng(1)
    for x in C.sample(rng, 50):
        M = weighted_projector_field(om, x)
        w = np.linalg.eigvalsh(M)
        assert np.allclose(M, M.T) and w.min() >= -1e-12 and w.max() <= 1 + 1e-12


def test_flat_disc_residual():
    om = _flat()
    assert np.allclose(om.G([0.3, 0.0, 0.0]), 0.0, atol=1e-15)
    w = np.array([0.0, 0.1, -0.2])
    assert np.allclose(residual(om, np.array([0.4, 0, 0]) + w), w, atol=1e-14)
    with pytest.raises(StageError, match="outside atlas domain"):
        om.G([5.0, 0.0, 0.0])


def test_projection_fixed_point_and_one_step():
    om = _flat()
    res = project_to_manifold(om, [0.2, 0.0, 0.0])
    assert res.iterations == 0 and res.converged
    x = np.array([0.2, 0.1, 0.0])  # normal offset r / 10
    res = project_to_manifold(om, x)
    assert res.converged and res.iterations == 1
    assert np.allclose(res.point, [0.2, 0.0, 0.0], atol=1e-9)
    again = project_to_manifold(om, res.point)
    assert again.iterations == 0


def test_flat_derivatives():
    om = _flat()
    probes = np.array([[0.1, 0.02, 0.0], [-0.2, 0.0, 0.03]])
    rep = derivative_diagnostics(om, probes, tau_hat=1.0)
    assert rep.first_defect < 1e-9 and rep.second < 1e-6 and rep.third < 1e-3
    two = _flat(centers=((0.0, 0.0, 0.0), (0.6, 0.0, 0.0)))
    rep = derivative_diagnostics(two, probes + [0.3, 0, 0], tau_hat=1.0)
    assert rep.first_defect < 1e-9 and rep.second < 1e-6 and rep.third < 1e-3
    assert set(rep.scaled()) == {"first", "second", "third"}


def test_circle_residual_and_membership():
    C, om = _exact_circle(200, 0.1)
    rng = np.random.default_rng(2)
    for x in C.sample(rng, 100):
        assert np.linalg.norm(om.G(x)) <= 10 * om.r ** 2 / C.reach
    q = C.sample(rng, 20) + 0.03 * rng.standard_normal((20, 3)) / np.sqrt(3)
    for x in q:
        res = project_to_manifold(om, x)
        assert res.converged
        assert project_to_manifold(om, res.point, tol=1e-9 * om.r).iterations == 0
        true_t = C.tangent(C.project(res.point))[0, :, 0]
        assert abs(om.tangent(res.point)[:, 0] @ true_t) > 1 - 1e-3


def test_newton_quadratic_on_circle():
    C, om = _exact_circle(200, 0.1)
    rng = np.random.default_rng(3)
    q = C.sample(rng, 30)
    q = q + 0.02 * np.stack([q[:, 0], q[:, 1], np.ones(30)], axis=1)
    ratios = []
    for x in q:
        res = project_to_manifold(om, x)
        assert res.converged and res.iterations <= 12
        ratios += res.step_ratios()
    assert max(ratios) < 1e3


def test_exact_circle_output_geometry():
    # blending exact tangent discs displaces the zero set by about r^2 / 22; at
    # center spacing r / 2 the blend ripples enough to cost 30% of the reach,
    # at spacing r / 4 the ripple is below 5%
    C, om = _exact_circle(6400, 0.004)
    geo = estimate_output_geometry(om, C, 200, seed=4, reach_points=200)
    assert geo.failures == 0
    assert geo.hausdorff_to_truth <= 1e-6
    assert float(geo.reach_lower) >= 0.9 * C.reach


def test_unstable_evaluation_is_reported():
    # discs cover only part of the circle, so most probes fall outside the atlas
    C = Circle(3)
    t = np.linspace(0, 0.5, 20)
    z = np.stack([np.cos(t), np.sin(t), np.zeros(20)], axis=1)
    om = OutputManifold(compute_weights([Disc(p, T, 0.1) for p, T in zip(z, C.tangent(z))]))
    with pytest.raises(StageError, match="manifold evaluation unstable"):
        estimate_output_geometry(om, C, 50)
