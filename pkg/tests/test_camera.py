import numpy as np
import pytest

from msmcalib.camera import (
    CheckerboardSpec,
    ImagePoint,
    Intrinsics,
    backproject_to_plane,
    centroid_covariance,
    homography_dlt,
    project,
    solve_pnp,
)
from msmcalib.exceptions import BehindCamera, DegenerateConfig, EmptyBlob, RayParallelToPlane
from msmcalib.geometry import PlaneH, RigidTransform

from helpers import random_rotvec

BOARD = CheckerboardSpec(9, 12, 10.0)


def _pose(rng):
    return RigidTransform(random_rotvec(rng, 0.5), np.array([-55.0, -40.0, 600.0]) + rng.normal(scale=10, size=3))


def test_project_pinhole(K):
    uv = project(RigidTransform.identity(), K, np.array([10.0, -20.0, 500.0]))
    np.testing.assert_allclose(uv, [2000 + 5000 * 0.02, 1500 - 5000 * 0.04])
    with pytest.raises(BehindCamera):
        project(RigidTransform.identity(), K, np.array([0, 0, -1.0]))


def test_backproject_inverts_project(rng, K):
    T = _pose(rng)
    X = BOARD.points()
    uv = project(T, K, X)
    np.testing.assert_allclose(backproject_to_plane(uv, T, K, PlaneH([0, 0, 1.0], 0.0)), X, atol=1e-8)


def test_backproject_degenerate(K):
    T = RigidTransform.identity()
    with pytest.raises(RayParallelToPlane):
        backproject_to_plane(np.array([[2000.0, 1500.0]]), T, K, PlaneH([1.0, 0, 0], 0.0))
    with pytest.raises(BehindCamera):
        backproject_to_plane(np.array([[2000.0, 1500.0]]), T, K, PlaneH([0, 0, 1.0], 10.0))


def test_homography_dlt_exact(rng):
    H = np.array([[1.2, 0.1, 30.0], [-0.05, 0.9, 12.0], [1e-4, 2e-4, 1.0]])
    src = rng.uniform(0, 100, size=(20, 2))
    h = np.column_stack([src, np.ones(20)]) @ H.T
    Hest = homography_dlt(src, h[:, :2] / h[:, 2:])
    np.testing.assert_allclose(Hest / Hest[2, 2], H, rtol=1e-8, atol=1e-10)


def test_pnp_noise_free(rng, K):
    for _ in range(10):
        T = _pose(rng)
        est = solve_pnp(project(T, K, BOARD.points()), BOARD, K)
        np.testing.assert_allclose(est.as_vector(), T.as_vector(), atol=1e-7)


def test_pnp_covariance_matches_scatter(K):
    rng = np.random.default_rng(7)
    T = _pose(rng)
    uv = project(T, K, BOARD.points())
    est = []
    for _ in range(200):
        est.append(solve_pnp(uv + rng.normal(scale=0.5, size=uv.shape), BOARD, K).as_vector())
    _, cov = solve_pnp(uv, BOARD, K, return_covariance=True)
    ratio = np.trace(np.cov(np.array(est).T)) / np.trace(cov)
    assert 0.7 < ratio < 1.4


def test_pnp_accepts_image_points(rng, K):
    T = _pose(rng)
    pts = [ImagePoint(u, v, 0.25 * np.eye(2)) for u, v in project(T, K, BOARD.points())]
    np.testing.assert_allclose(solve_pnp(pts, BOARD, K).as_vector(), T.as_vector(), atol=1e-7)


def test_pnp_degenerate(K):
    obj = np.column_stack([np.arange(6.0) * 10, np.zeros(6), np.zeros(6)])
    uv = project(RigidTransform(np.zeros(3), np.array([0, 0, 500.0])), K, obj)
    with pytest.raises(DegenerateConfig):
        solve_pnp(uv, obj, K)
    with pytest.raises(DegenerateConfig):
        solve_pnp(uv[:3], obj[:3], K)


def test_centroid_covariance():
    np.testing.assert_allclose(centroid_covariance(25 * np.eye(2), 100), 0.25 * np.eye(2))
    with pytest.raises(EmptyBlob):
        centroid_covariance(np.eye(2), 0)
    with pytest.raises(ValueError):
        centroid_covariance(-np.eye(2), 4)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)
    K = Intrinsics(1.0, 1.0, 0.0, 0.0, 10, 10)
    assert list(K.contains(np.array([[5, 5], [11, 5]]))) == [True, False]
