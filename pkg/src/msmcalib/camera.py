"""Pinhole camera: projection, planar PnP and back-projection onto planes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import BehindCamera, DegenerateConfig, EmptyBlob, NoConvergence, RayParallelToPlane
from .geometry import RigidTransform, skew, so3_exp, so3_left_jacobian, so3_log
from .lm import covariance_from_normal, levenberg_marquardt

DEPTH_TOL = 1e-9
DEFAULT_CORNER_SIGMA = 0.5


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels (zero skew, distortion removed)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, uv, margin=0.0):
        uv = np.atleast_2d(uv)
        if self.width is None or self.height is None:
            return np.ones(len(uv), dtype=bool)
        return (
            (uv[:, 0] >= margin)
            & (uv[:, 0] <= self.width - margin)
            & (uv[:, 1] >= margin)
            & (uv[:, 1] <= self.height - margin)
        )

    def to_dict(self):
        d = {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}
        if self.width is not None:
            d.update(width=self.width, height=self.height)
        return d


@dataclass(frozen=True)
class ImagePoint:
    """Pixel measurement with 2x2 covariance (px^2)."""

    u: float
    v: float
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValueError("image point covariance must be symmetric positive definite")
        object.__setattr__(self, "cov", cov)

    @property
    def uv(self):
        return np.array([self.u, self.v])


@dataclass(frozen=True)
class CheckerboardSpec:
    """Inner-corner grid of a planar checkerboard in its own frame (z = 0)."""

    rows: int
    cols: int
    cell: float

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2 or not self.cell > 0:
            raise ValueError("checkerboard needs rows, cols >= 2 and a positive cell size")

    @property
    def n_corners(self):
        return self.rows * self.cols

    def points(self):
        """Corner coordinates (rows*cols, 3) in mm, row-major."""
        r, c = np.mgrid[0 : self.rows, 0 : self.cols]
        return np.column_stack([c.ravel() * self.cell, r.ravel() * self.cell, np.zeros(r.size)])

    def to_dict(self):
        return {"rows": self.rows, "cols": self.cols, "cell_mm": self.cell}


def _as_transform(T):
    if isinstance(T, RigidTransform):
        return T.R, T.t
    T = np.asarray(T, dtype=float)
    if T.shape == (6,):
        return so3_exp(T[:3]), T[3:]
    return T[:3, :3], T[:3, 3]


def project(T, K, X):
    """Project world points into the image of a camera with pose ``T``.

    ``T`` maps world to camera coordinates (``X_c = R X + t``).

    Parameters
    ----------
    T : RigidTransform, 6-vector or 4x4 matrix
    K : Intrinsics
    X : array_like, shape (3,) or (N, 3)

    Returns
    -------
    ndarray, shape (2,) or (N, 2)

    Raises
    ------
    BehindCamera
        If any point has depth ``<= 1e-9``.
    """
    R, t = _as_transform(T)
    X = np.asarray(X, dtype=float)
    Xc = X @ R.T + t
    z = Xc[..., 2]
    if np.any(z <= DEPTH_TOL):
        raise BehindCamera("point is behind the camera")
    u = K.fx * Xc[..., 0] / z + K.cx
    v = K.fy * Xc[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def projection_derivative(Xc, K):
    """d(u, v)/d(X_c) for camera-frame points, shape (..., 2, 3)."""
    x, y, z = Xc[..., 0], Xc[..., 1], Xc[..., 2]
    iz = 1.0 / z
    D = np.zeros(Xc.shape[:-1] + (2, 3))
    D[..., 0, 0] = K.fx * iz
    D[..., 0, 2] = -K.fx * x * iz * iz
    D[..., 1, 1] = K.fy * iz
    D[..., 1, 2] = -K.fy * y * iz * iz
    return D


def project_jacobian(T, K, X):
    """Projection together with its Jacobians.

    Returns
    -------
    uv : ndarray (..., 2)
    J_T : ndarray (..., 2, 6)
        Derivative with respect to the minimal pose ``[w, t]``.
    J_X : ndarray (..., 2, 3)
        Derivative with respect to the world point.
    """
    if isinstance(T, RigidTransform):
        w, t = T.w, T.t
    else:
        T = np.asarray(T, dtype=float)
        if T.shape == (6,):
            w, t = T[:3], T[3:]
        else:
            w, t = so3_log(T[:3, :3]), T[:3, 3]
    R = so3_exp(w)
    X = np.asarray(X, dtype=float)
    RX = X @ R.T
    Xc = RX + t
    if np.any(Xc[..., 2] <= DEPTH_TOL):
        raise BehindCamera("point is behind the camera")
    uv = np.stack([K.fx * Xc[..., 0] / Xc[..., 2] + K.cx, K.fy * Xc[..., 1] / Xc[..., 2] + K.cy], axis=-1)
    D = projection_derivative(Xc, K)
    dXc_dw = -skew(RX) @ so3_left_jacobian(w)
    J_T = np.concatenate([D @ dXc_dw, D], axis=-1)
    J_X = D @ R
    return uv, J_T, J_X


def centroid_covariance(pixel_cov, n_pixels):
    """Covariance of a blob centroid from ``n_pixels`` i.i.d. pixel positions."""
    if n_pixels < 1:
        raise EmptyBlob("blob has no pixels")
    pixel_cov = np.asarray(pixel_cov, dtype=float)
    if not np.allclose(pixel_cov, pixel_cov.T) or np.linalg.eigvalsh(pixel_cov)[0] <= 0:
        raise ValueError("pixel covariance must be symmetric positive definite")
    return pixel_cov / n_pixels


def backproject_to_plane(x, T, K, plane):
    """Intersect the viewing ray of pixel(s) ``x`` with ``plane`` (world frame).

    Raises
    ------
    RayParallelToPlane
        If a ray is (numerically) parallel to the plane.
    BehindCamera
        If the intersection lies behind the camera.
    """
    R, t = _as_transform(T)
    x = np.asarray(x, dtype=float)
    uv = x.uv if isinstance(x, ImagePoint) else x
    center = -R.T @ t
    rays = np.stack(
        [(uv[..., 0] - K.cx) / K.fx, (uv[..., 1] - K.cy) / K.fy, np.ones(uv.shape[:-1])], axis=-1
    ) @ R
    rays = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    denom = rays @ plane.n
    if np.any(np.abs(denom) < 1e-9):
        raise RayParallelToPlane("viewing ray is parallel to the plane")
    s = -(plane.n @ center + plane.d) / denom
    if np.any(s <= DEPTH_TOL):
        raise BehindCamera("plane is behind the camera along the viewing ray")
    return center + s[..., None] * rays


# --------------------------------------------------------------------------
# PnP
# --------------------------------------------------------------------------


def _normalizing_transform(p):
    c = p.mean(axis=0)
    s = np.sqrt(2.0) / max(np.mean(np.linalg.norm(p - c, axis=1)), 1e-300)
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def homography_dlt(src, dst):
    """Normalised DLT homography with ``dst ~ H src`` for 2-D point sets."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    Ts, Td = _normalizing_transform(src), _normalizing_transform(dst)
    s = np.column_stack([src, np.ones(len(src))]) @ Ts.T
    d = np.column_stack([dst, np.ones(len(dst))]) @ Td.T
    n = len(src)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = s
    A[0::2, 6:9] = -d[:, [0]] * s
    A[1::2, 3:6] = s
    A[1::2, 6:9] = -d[:, [1]] * s
    _, _, Vt = np.linalg.svd(A, full_matrices=False)
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.solve(Td, Hn @ Ts)
    return H / H[2, 2] if abs(H[2, 2]) > 1e-300 else H


def _pose_from_homography(H, K):
    M = np.linalg.solve(K.K, H)
    lam = 2.0 / (np.linalg.norm(M[:, 0]) + np.linalg.norm(M[:, 1]))
    M = M * lam
    if M[2, 2] < 0:
        M = -M
    r1, r2, t = M[:, 0], M[:, 1], M[:, 2]
    U, _, Vt = np.linalg.svd(np.column_stack([r1, r2, np.cross(r1, r2)]))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R, t


def _check_planar_spread(obj, img):
    for pts, what in ((obj[:, :2], "object"), (img, "image")):
        c = pts - pts.mean(axis=0)
        s = np.linalg.svd(c, compute_uv=False)
        if s[0] == 0 or s[1] < 1e-6 * s[0]:
            raise DegenerateConfig(f"{what} points are collinear")


def solve_pnp(image_points, object_points, K, cov=None, return_covariance=False):
    """Pose of a planar target from 2-D/3-D correspondences.

    Parameters
    ----------
    image_points : array_like (N, 2) or list of ImagePoint
    object_points : array_like (N, 3) or CheckerboardSpec
        Target coordinates with ``z = 0`` in the target frame.
    K : Intrinsics
    cov : array_like, optional
        Per-point (N, 2, 2) or shared (2, 2) pixel covariance; isotropic
        0.5 px by default.  Taken from the ImagePoints when given.
    return_covariance : bool
        Also return the 6x6 covariance of ``[w, t]``.

    Returns
    -------
    RigidTransform
        Target-to-camera transform, optionally with its covariance.
    """
    if len(image_points) and isinstance(image_points[0], ImagePoint):
        if cov is None:
            cov = np.stack([p.cov for p in image_points])
        image_points = np.stack([p.uv for p in image_points])
    img = np.asarray(image_points, dtype=float).reshape(-1, 2)
    obj = object_points.points() if isinstance(object_points, CheckerboardSpec) else np.asarray(object_points, float)
    if len(img) != len(obj):
        raise ValueError("image and object point counts differ")
    if len(img) < 4:
        raise DegenerateConfig("PnP needs at least 4 correspondences")
    if np.max(np.abs(obj[:, 2])) > 1e-9:
        raise ValueError("object points must lie in the target plane z = 0")
    _check_planar_spread(obj, img)

    if cov is None:
        cov = np.broadcast_to(DEFAULT_CORNER_SIGMA**2 * np.eye(2), (len(img), 2, 2))
    cov = np.broadcast_to(np.asarray(cov, dtype=float), (len(img), 2, 2))
    Linv = np.linalg.inv(np.linalg.cholesky(cov))

    R0, t0 = _pose_from_homography(homography_dlt(obj[:, :2], img), K)
    x0 = np.concatenate([so3_log(R0), t0])

    def residual(x):
        try:
            uv = project(x, K, obj)
        except BehindCamera:
            return np.full(2 * len(obj), np.nan)
        return np.einsum("nij,nj->ni", Linv, img - uv).ravel()

    def jacobian(x):
        _, J_T, _ = project_jacobian(x, K, obj)
        return -np.einsum("nij,njk->nik", Linv, J_T).reshape(-1, 6)

    res = levenberg_marquardt(residual, jacobian, x0)
    if not res.converged:
        raise NoConvergence("PnP refinement did not converge", gradient_norm=res.grad_norm)
    T = RigidTransform(res.x[:3], res.x[3:])
    if return_covariance:
        return T, covariance_from_normal(res.JtJ)[0]
    return T
