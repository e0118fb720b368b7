import math

import numpy as np
import pytest

from fedpower import linalg
from fedpower.errors import ConvergenceFailure, DimensionMismatch, RankDeficient


def gram_schmidt(y):
    """Independent modified Gram-Schmidt oracle for column orthonormalization."""
    y = np.array(y, dtype=float)
    q = np.zeros_like(y)
    for j in range(y.shape[1]):
        v = y[:, j].copy()
        for i in range(j):
            v -= (q[:, i] @ v) * q[:, i]
        for i in range(j):  # second pass for numerical safety
            v -= (q[:, i] @ v) * q[:, i]
        q[:, j] = v / np.linalg.norm(v)
    return q


def random_basis(rng, d, r):
    return linalg.orth(rng.standard_normal((d, r)))


# ---------------------------------------------------------------- orth


def test_orth_identity_columns_unchanged():
    y = np.eye(3)[:, :2]
    np.testing.assert_allclose(linalg.orth(y), y, atol=1e-15)


def test_orth_removes_diagonal_scaling():
    y = np.array([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
    expected = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(linalg.orth(y), expected, atol=1e-15)


def test_orth_matches_gram_schmidt_oracle():
    rng = np.random.default_rng(42)
    for _ in range(20):
        y = rng.standard_normal((5, 2))
        q = linalg.orth(y)
        oracle = gram_schmidt(y)
        assert linalg.projection_distance(q, oracle) <= 1e-10
        assert linalg.is_orthonormal(q)


def test_orth_deterministic_with_nonnegative_pivots():
    rng = np.random.default_rng(7)
    y = rng.standard_normal((8, 4))
    q1 = linalg.orth(y)
    q2 = linalg.orth(y.copy())
    np.testing.assert_array_equal(q1, q2)
    r = q1.T @ y
    assert np.all(np.diagonal(r) >= 0.0)


def test_orth_rank_deficient_raises():
    y = np.ones((4, 2))  # second column repeats the first
    with pytest.raises(RankDeficient):
        linalg.orth(y)
    with pytest.raises(RankDeficient):
        linalg.orth(np.zeros((3, 2)))
    # lenient mode still returns an orthonormal basis
    q = linalg.orth(y, require_full_rank=False)
    assert linalg.is_orthonormal(q)


def test_orth_rejects_wide_input():
    with pytest.raises(DimensionMismatch):
        linalg.orth(np.ones((2, 3)))


# ---------------------------------------------------------------- gram


def test_gram_identity():
    np.testing.assert_allclose(linalg.gram(np.eye(2)), 0.5 * np.eye(2), atol=1e-15)


def test_gram_small_example():
    shard = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(linalg.gram(shard), [[5.0, 7.0], [7.0, 10.0]], atol=1e-12)


def test_gram_zero():
    np.testing.assert_array_equal(linalg.gram(np.zeros((3, 2))), np.zeros((2, 2)))


def test_gram_symmetric_psd():
    rng = np.random.default_rng(3)
    g = linalg.gram(rng.standard_normal((9, 4)))
    assert np.abs(g - g.T).max() <= 1e-12
    assert np.linalg.eigvalsh(g).min() >= -1e-12


# ---------------------------------------------------------------- svd


def test_svd_diagonal():
    res = linalg.svd(np.diag([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(res.singular_values, [3.0, 2.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(np.abs(res.u), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(np.abs(res.v), np.eye(3), atol=1e-12)


def test_svd_rank_one():
    rng = np.random.default_rng(11)
    u = rng.standard_normal(5)
    u /= np.linalg.norm(u)
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    res = linalg.svd(np.outer(u, v))
    assert abs(res.singular_values[0] - 1.0) <= 1e-12
    assert res.singular_values[1:].max() <= 1e-12


def test_svd_reconstruction_and_ordering():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((6, 4))
    res = linalg.svd(a)
    recon = res.u @ np.diag(res.singular_values) @ res.v.T
    scale = np.linalg.norm(a, 2)
    assert np.linalg.norm(a - recon, 2) <= 1e-9 * scale
    sv = res.singular_values
    assert np.all(sv >= 0.0)
    assert np.all(np.diff(sv) <= 0.0)


def test_svd_failure_is_signalled(monkeypatch):
    def boom(*args, **kwargs):
        raise np.linalg.LinAlgError("did not converge")

    monkeypatch.setattr(np.linalg, "svd", boom)
    with pytest.raises(ConvergenceFailure):
        linalg.svd(np.eye(2))


def test_svd_rejects_non_finite():
    with pytest.raises(ValueError):
        linalg.svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


# ---------------------------------------------------------------- subspace distances


def test_projection_distance_identical():
    rng = np.random.default_rng(5)
    u = random_basis(rng, 6, 2)
    assert linalg.projection_distance(u, u) <= 1e-14


def test_projection_distance_orthogonal_subspaces():
    u = np.array([[1.0], [0.0]])
    v = np.array([[0.0], [1.0]])
    assert abs(linalg.projection_distance(u, v) - 1.0) <= 1e-14


def test_projection_distance_plane_angle():
    theta = 0.3
    u = np.array([[1.0], [0.0]])
    v = np.array([[math.cos(theta)], [math.sin(theta)]])
    assert abs(linalg.projection_distance(u, v) - math.sin(theta)) <= 1e-12


def test_projection_distance_matches_projector_form():
    rng = np.random.default_rng(8)
    for _ in range(20):
        u = random_basis(rng, 7, 3)
        v = random_basis(rng, 7, 3)
        direct = np.linalg.norm(u @ u.T - v @ v.T, 2)
        got = linalg.projection_distance(u, v)
        assert abs(got - direct) <= 1e-10
        assert 0.0 <= got <= 1.0


def test_projection_distance_is_a_metric():
    rng = np.random.default_rng(9)
    for _ in range(30):
        u = random_basis(rng, 6, 2)
        v = random_basis(rng, 6, 2)
        w = random_basis(rng, 6, 2)
        assert linalg.projection_distance(u, v) == linalg.projection_distance(v, u)
        duv = linalg.projection_distance(u, v)
        duw = linalg.projection_distance(u, w)
        dwv = linalg.projection_distance(w, v)
        assert duv <= duw + dwv + 1e-10


def test_projection_distance_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        linalg.projection_distance(np.eye(3)[:, :1], np.eye(3)[:, :2])


def test_sin_theta_contained_and_orthogonal():
    rng = np.random.default_rng(10)
    v = random_basis(rng, 6, 2)
    z = linalg.orth(np.hstack([v, rng.standard_normal((6, 2))]))  # span(z) contains span(v)
    assert linalg.sin_theta_k(z, v) <= 1e-10
    u = np.eye(4)[:, :2]
    w = np.eye(4)[:, 2:]
    assert abs(linalg.sin_theta_k(u, w) - 1.0) <= 1e-14


def test_sin_theta_matches_projector_oracle():
    rng = np.random.default_rng(13)
    z = random_basis(rng, 6, 3)
    v = random_basis(rng, 6, 2)
    oracle = np.linalg.norm((np.eye(6) - z @ z.T) @ v, 2)
    assert abs(linalg.sin_theta_k(z, v, k=2) - oracle) <= 1e-12


def test_sin_theta_equals_projection_distance_for_equal_rank():
    rng = np.random.default_rng(14)
    z = random_basis(rng, 8, 3)
    v = random_basis(rng, 8, 3)
    assert abs(linalg.sin_theta_k(z, v) - linalg.projection_distance(z, v)) <= 1e-10


def test_sin_theta_rank_validation():
    with pytest.raises(DimensionMismatch):
        linalg.sin_theta_k(np.eye(4)[:, :1], np.eye(4)[:, :2])


# ---------------------------------------------------------------- alignment


def test_procrustes_identity_and_reflection():
    rng = np.random.default_rng(15)
    z = random_basis(rng, 5, 3)
    np.testing.assert_allclose(linalg.procrustes(z, z), np.eye(3), atol=1e-12)
    flip = np.diag([1.0, -1.0, 1.0])
    np.testing.assert_allclose(linalg.procrustes(z @ flip, z), flip, atol=1e-12)


def sweep_candidates(samples=3600):
    """All 2x2 rotations and reflections on a parameter grid."""
    angles = np.linspace(0.0, 2.0 * math.pi, samples // 2, endpoint=False)
    c, s = np.cos(angles), np.sin(angles)
    rotations = np.stack([np.stack([c, -s], axis=1), np.stack([s, c], axis=1)], axis=1)
    reflections = np.stack([np.stack([c, s], axis=1), np.stack([s, -c], axis=1)], axis=1)
    return np.concatenate([rotations, reflections], axis=0)


def test_procrustes_beats_orthogonal_sweep():
    rng = np.random.default_rng(16)
    candidates = sweep_candidates()
    for _ in range(10):
        z_i = random_basis(rng, 4, 2)
        z_b = random_basis(rng, 4, 2)
        d = linalg.procrustes(z_i, z_b)
        best = np.linalg.norm(z_i @ d - z_b, "fro")
        objective = np.linalg.norm(np.einsum("ij,cjk->cik", z_i, candidates) - z_b, axis=(1, 2))
        assert best <= objective.min() + 1e-12
        assert linalg.is_orthonormal(d)


def test_procrustes_rank_deficient_cross_gram():
    # orthogonal subspaces give a zero cross-Gram; result must still be orthogonal
    z_i = np.eye(6)[:, :2]
    z_b = np.eye(6)[:, 2:4]
    d = linalg.procrustes(z_i, z_b)
    assert linalg.is_orthonormal(d)


def test_sign_fix_examples():
    rng = np.random.default_rng(17)
    z = random_basis(rng, 5, 3)
    np.testing.assert_array_equal(linalg.sign_fix(z, z), np.eye(3))
    flip = np.diag([1.0, -1.0, 1.0])
    np.testing.assert_array_equal(linalg.sign_fix(z @ flip, z), flip)
    # zero inner product on a column breaks the tie toward +1
    z_i = np.eye(4)[:, :2]
    z_b = np.hstack([np.eye(4)[:, :1], np.eye(4)[:, 2:3]])
    d = linalg.sign_fix(z_i, z_b)
    assert d[1, 1] == 1.0


def test_procrustes_dominates_sign_fix_in_frobenius():
    rng = np.random.default_rng(18)
    for _ in range(50):
        z_i = random_basis(rng, 6, 3)
        z_b = random_basis(rng, 6, 3)
        d_opt = linalg.procrustes(z_i, z_b)
        d_sgn = linalg.sign_fix(z_i, z_b)
        f_opt = np.linalg.norm(z_i @ d_opt - z_b, "fro")
        f_sgn = np.linalg.norm(z_i @ d_sgn - z_b, "fro")
        assert f_opt <= f_sgn + 1e-12


def test_aligned_spectral_distance_sandwich():
    # dist(u, v) <= ||u - v @ procrustes(v, u)||_2 <= sqrt(2) dist(u, v)
    rng = np.random.default_rng(19)
    for _ in range(50):
        d_dim = int(rng.integers(3, 12))
        r = int(rng.integers(1, min(4, d_dim)))
        u = random_basis(rng, d_dim, r)
        v = random_basis(rng, d_dim, r)
        dist = linalg.projection_distance(u, v)
        aligned = np.linalg.norm(u - v @ linalg.procrustes(v, u), 2)
        assert dist <= aligned + 1e-9
        assert aligned <= math.sqrt(2.0) * dist + 1e-9


# ---------------------------------------------------------------- spectral norm


def test_spectral_norm_examples():
    assert abs(linalg.spectral_norm(np.eye(3)) - 1.0) <= 1e-12
    assert abs(linalg.spectral_norm(np.diag([5.0, 1.0])) - 5.0) <= 1e-12


def test_spectral_norm_consistent_with_svd():
    rng = np.random.default_rng(20)
    a = rng.standard_normal((8, 5))
    assert linalg.spectral_norm(a) == linalg.svd(a).singular_values[0]
