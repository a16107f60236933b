import numpy as np
import pytest

from omnistereo.pose import (Pose, compose, invert, relative_pose, rotation_distance,
                             rotation_from_axis_angle, rotate_point_jacobian)


def test_compose_with_inverse_is_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = Pose(rng.normal(size=3), rng.normal(size=3))
        ident = compose(p, invert(p))
        assert np.linalg.norm(ident.r) < 1e-12
        assert np.linalg.norm(ident.t) < 1e-12


def test_quarter_turn_about_z():
    p = Pose(np.array([0.0, 0.0, np.pi / 2]), np.zeros(3))
    out = p.apply(np.array([1.0, 0.0, 0.0]))
    assert np.allclose(out, [0.0, 1.0, 0.0], atol=1e-12)


def test_random_chains_match_matrix_oracle():
    # oracle: accumulate plain 4x4 homogeneous matrix products
    rng = np.random.default_rng(7)
    for _ in range(10):
        poses = [Pose(rng.normal(size=3), rng.normal(size=3)) for _ in range(8)]
        chained = poses[0]
        M = poses[0].matrix()
        for p in poses[1:]:
            chained = compose(chained, p)
            M = M @ p.matrix()
        assert np.allclose(chained.matrix(), M, atol=1e-10)


def test_rotation_vector_canonical_range():
    axis = np.array([1.0, 0.0, 0.0])
    p = Pose(axis * 5.0, np.zeros(3))  # 5 rad > pi wraps to 2pi - 5
    assert np.linalg.norm(p.r) <= np.pi + 1e-12
    assert np.allclose(p.R, rotation_from_axis_angle(axis * 5.0), atol=1e-12)


def test_relative_pose_trivial_cases():
    rng = np.random.default_rng(3)
    T = Pose(rng.normal(size=3), rng.normal(size=3))
    rel = relative_pose(T, Pose.identity())
    assert np.allclose(rel.matrix(), T.matrix(), atol=1e-14)
    rel = relative_pose(T, T)
    assert np.linalg.norm(rel.r) < 1e-12 and np.linalg.norm(rel.t) < 1e-12


def test_relative_pose_recovers_rig_edge():
    rng = np.random.default_rng(11)
    cam_i = Pose(rng.normal(size=3), rng.normal(size=3))
    cam_j = Pose(rng.normal(size=3), rng.normal(size=3))
    edge = relative_pose(cam_j, cam_i)  # ground-truth i -> j
    for _ in range(5):
        board = Pose(rng.normal(size=3), rng.normal(size=3))  # board -> world
        theta_ik = compose(cam_i, board)
        theta_jk = compose(cam_j, board)
        rel = relative_pose(theta_jk, theta_ik)
        assert np.allclose(rel.matrix(), edge.matrix(), atol=1e-10)


def test_rotate_point_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(5):
        r = rng.normal(size=3)
        X = rng.normal(size=(4, 3))
        J = rotate_point_jacobian(r, X)
        h = 1e-7
        for i in range(3):
            rp, rm = r.copy(), r.copy()
            rp[i] += h
            rm[i] -= h
            fd = (X @ rotation_from_axis_angle(rp).T - X @ rotation_from_axis_angle(rm).T) / (2 * h)
            assert np.abs(J[..., i] - fd).max() < 1e-6


def test_rotation_distance_handles_axis_sign_at_pi():
    a = Pose(np.array([0.0, np.pi, 0.0]), np.zeros(3))
    b = Pose(np.array([0.0, -np.pi, 0.0]), np.zeros(3))
    assert rotation_distance(a, b) < 1e-7


def test_non_finite_pose_rejected():
    with pytest.raises(ValueError):
        Pose(np.array([np.nan, 0.0, 0.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.zeros(3), np.array([np.inf, 0.0, 0.0]))
