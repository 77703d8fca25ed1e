"""Homogeneous planes, Plücker lines, reflections and minimal parameterizations.

Conventions used throughout the package:

* A plane ``[n, d]`` with unit ``n`` is the set ``n . X + d = 0``.  The
  homogeneous reflection about it is ``H = [[I - 2 n n^T, -2 d n], [0, 1]]``.
* A line ``[v, m]`` has unit direction ``v`` and moment ``m = X x v`` for any
  point ``X`` on it, so that points satisfy ``v x X + m = 0``.
* Rotations are axis-angle vectors on the principal branch ``|w| < pi``.

The vectorised kernels (``so3_exp``, ``plane_from_min`` ...) accept leading
batch dimensions and are what the optimizer uses; the dataclasses are the
public value types.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateLine, NearBranchCut, ParallelLinePlane, PointOnLine

BRANCH_TOL = 1e-6
PARALLEL_TOL = 1e-9
UNIT_TOL = 1e-12


def skew(v):
    """Cross-product matrix ``[v]x`` for arrays of shape (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _rodrigues_coeffs(theta):
    """sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3 with series near zero."""
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def so3_exp(w):
    """Rodrigues' formula for axis-angle vectors of shape (..., 3)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    a, b, _ = _rodrigues_coeffs(theta)
    K = skew(w)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def so3_left_jacobian(w):
    """Left Jacobian of SO(3): ``d(R(w) x)/dw = -[R(w) x]x @ J_l(w)``."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    _, b, c = _rodrigues_coeffs(theta)
    K = skew(w)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + b[..., None, None] * K + c[..., None, None] * (K @ K)


def so3_log(R, branch_tol=BRANCH_TOL):
    """Axis-angle vector of a rotation matrix.

    Raises
    ------
    NearBranchCut
        If the rotation angle is within ``branch_tol`` of pi, where the
        axis-angle sign is ambiguous.
    """
    R = np.asarray(R, dtype=float)
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.linalg.norm(vee)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta > np.pi - branch_tol:
        raise NearBranchCut(f"rotation angle {theta:.9f} rad is within {branch_tol} of pi")
    if theta < 1e-4:
        t2 = theta * theta
        return vee * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    if theta < np.pi - 0.1:
        return vee * (theta / s)
    # Near pi the antisymmetric part vanishes; read the axis off the symmetric part.
    S = 0.5 * (R + R.T) - c * np.eye(3)
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / np.sqrt(S[k, k])
    if axis @ vee < 0:
        axis = -axis
    return theta * axis / np.linalg.norm(axis)


def unit(v, eps=1e-300):
    v = np.asarray(v, dtype=float)
    return v / max(np.linalg.norm(v), eps)


def canonical_sign(v, tol=1e-12):
    """Flip ``v`` so that its first non-negligible component is positive."""
    v = np.asarray(v, dtype=float)
    for x in v:
        if abs(x) > tol:
            return v if x > 0 else -v
    return v


# --------------------------------------------------------------------------
# Value types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PlaneH:
    """Plane ``n . X + d = 0`` with unit normal ``n`` (mm for ``d``)."""

    n: np.ndarray
    d: float

    def __post_init__(self):
        n = np.asarray(self.n, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0.0 or not np.isfinite(self.d):
            raise ValueError("plane needs a finite non-zero normal and finite offset")
        object.__setattr__(self, "n", n / norm)
        object.__setattr__(self, "d", float(self.d) / norm)

    @classmethod
    def from_vector(cls, pi):
        pi = np.asarray(pi, dtype=float)
        return cls(pi[:3], pi[3])

    @classmethod
    def through_point(cls, n, X):
        n = unit(n)
        return cls(n, -float(n @ np.asarray(X, dtype=float)))

    def as_vector(self):
        return np.append(self.n, self.d)

    def flipped(self):
        return PlaneH(-self.n, -self.d)

    def canonical(self):
        """Same plane, sign chosen so that the first non-zero normal entry is positive."""
        n = canonical_sign(self.n)
        return self if n[0] == self.n[0] and n[1] == self.n[1] and n[2] == self.n[2] else self.flipped()

    def oriented(self, direction):
        """Same plane with the normal pointing along ``direction``."""
        return self if self.n @ np.asarray(direction) >= 0 else self.flipped()

    def residual(self, X):
        return np.asarray(X, dtype=float) @ self.n + self.d


@dataclass(frozen=True)
class PluckerLine:
    """Line with unit direction ``v`` and moment ``m = X x v``."""

    v: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(3)
        m = np.asarray(self.m, dtype=float).reshape(3)
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0.0 or not np.all(np.isfinite(m)):
            raise ValueError("line needs a finite non-zero direction")
        v = v / norm
        m = m / norm
        # enforce the Plücker constraint v . m = 0
        m = m - (v @ m) * v
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_point_direction(cls, X, v):
        v = unit(v)
        return cls(v, np.cross(np.asarray(X, dtype=float), v))

    @classmethod
    def from_points(cls, X0, X1):
        """Line through ``X0`` and ``X1``, oriented from ``X0`` to ``X1``."""
        X0 = np.asarray(X0, dtype=float)
        return cls.from_point_direction(X0, np.asarray(X1, dtype=float) - X0)

    @property
    def point(self):
        """Point of the line closest to the origin."""
        return np.cross(self.v, self.m)

    def residual(self, X):
        """``v x X + m``; zero for points on the line."""
        return np.cross(self.v, np.asarray(X, dtype=float)) + self.m

    def distance(self, X):
        return np.linalg.norm(self.residual(X), axis=-1)

    def matrix(self):
        """3x4 matrix ``[[v]x  m]`` acting on homogeneous points."""
        return np.hstack([skew(self.v), self.m[:, None]])


@dataclass(frozen=True)
class RigidTransform:
    """Rigid transform ``X -> R(w) X + t`` stored in minimal form."""

    w: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_Rt(cls, R, t):
        return cls(so3_log(R), t)

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls.from_Rt(T[:3, :3], T[:3, 3])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:6])

    @property
    def R(self):
        return so3_exp(self.w)

    def as_vector(self):
        return np.concatenate([self.w, self.t])

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def apply(self, X):
        return np.asarray(X, dtype=float) @ self.R.T + self.t

    def inverse(self):
        R = self.R
        return RigidTransform.from_Rt(R.T, -R.T @ self.t)

    def compose(self, other):
        """``self @ other`` -- apply ``other`` first."""
        return RigidTransform.from_matrix(self.matrix() @ other.matrix())

    def transform_plane(self, plane):
        """Express ``plane`` (given in the source frame) in the target frame."""
        R = self.R
        n = R @ plane.n
        return PlaneH(n, plane.d - n @ self.t)

    def transform_line(self, line):
        R = self.R
        return PluckerLine.from_point_direction(R @ line.point + self.t, R @ line.v)

    def __matmul__(self, other):
        return self.compose(other)


# --------------------------------------------------------------------------
# Reflection and incidence
# --------------------------------------------------------------------------


def reflect_point(plane, X):
    """Mirror image of ``X`` (shape (3,) or (N, 3)) across ``plane``."""
    X = np.asarray(X, dtype=float)
    r = X @ plane.n + plane.d
    return X - 2.0 * np.multiply.outer(r, plane.n)


def reflection_matrix(plane):
    """4x4 homogeneous reflection ``H``; an involution with det(H[:3,:3]) = -1."""
    n = plane.n
    H = np.eye(4)
    H[:3, :3] -= 2.0 * np.outer(n, n)
    H[:3, 3] = -2.0 * plane.d * n
    return H


def line_plane_intersect(line, plane, tol=PARALLEL_TOL):
    """Point where ``line`` pierces ``plane``.

    Raises
    ------
    ParallelLinePlane
        If ``|v . n| < tol``.
    """
    denom = line.v @ plane.n
    if abs(denom) < tol:
        raise ParallelLinePlane(f"line is parallel to plane (v.n = {denom:.3e})")
    p = line.point
    s = (plane.n @ p + plane.d) / denom
    return p - s * line.v


def reflect_line(line, H):
    """Image of ``line`` under the homogeneous reflection ``H``.

    Points ``P`` on the result satisfy ``line.residual(H P) = 0``.  The
    direction is the reflected propagation direction, so an incident beam maps
    to the outgoing ray.
    """
    H = np.asarray(H, dtype=float)
    Q = H[:3, :3]
    p = Q @ line.point + H[:3, 3]
    return PluckerLine.from_point_direction(p, Q @ line.v)


def lightpath_normal(line, X, tol=1e-9):
    """Unit normal of the plane spanned by ``line`` and a point ``X`` off it.

    Raises
    ------
    PointOnLine
        If ``X`` lies on ``line`` (within ``tol`` mm).
    """
    n = line.residual(X)
    norm = np.linalg.norm(n)
    if not norm > tol:
        raise PointOnLine(f"point is on the line (distance {norm:.3e} mm)")
    return canonical_sign(n / norm)


def closest_points(p1, v1, p2, v2):
    """Closest points between lines ``p1 + s v1`` and ``p2 + u v2``.

    Returns ``(X1, X2)``; raises :class:`ParallelLinePlane` for parallel lines.
    """
    w0 = p1 - p2
    a, b, c = v1 @ v1, v1 @ v2, v2 @ v2
    d, e = v1 @ w0, v2 @ w0
    den = a * c - b * b
    if den < 1e-15 * a * c:
        raise ParallelLinePlane("lines are parallel")
    s = (b * e - c * d) / den
    u = (a * e - b * d) / den
    return p1 + s * v1, p2 + u * v2


# --------------------------------------------------------------------------
# Minimal parameterizations
# --------------------------------------------------------------------------


def transform_to_min(T):
    """6-vector ``[w, t]`` of a :class:`RigidTransform` or a 4x4 matrix."""
    if isinstance(T, RigidTransform):
        return T.as_vector()
    T = np.asarray(T, dtype=float)
    return np.concatenate([so3_log(T[:3, :3]), T[:3, 3]])


def transform_from_min(x):
    return RigidTransform.from_vector(x)


def plane_to_min(plane):
    """Quaternion-log of the normalized homogeneous plane.

    The sign of ``[n, d]`` is chosen with ``d >= 0`` so that ``|p| <= pi``;
    both signs describe the same plane.
    """
    n, d = plane.n, plane.d
    if d < 0:
        n, d = -n, -d
    theta = 2.0 * np.arctan2(1.0, d)
    return theta * n


def plane_from_min(p):
    """Inverse of :func:`plane_to_min` for arrays of shape (..., 3).

    Returns ``(n, d)`` as arrays; use :func:`plane_from_min_jac` for the
    derivatives.
    """
    n, d, _, _ = plane_from_min_jac(p)
    return n, d


def plane_from_min_jac(p):
    p = np.asarray(p, dtype=float)
    theta = np.linalg.norm(p, axis=-1)
    if np.any(theta < 1e-12):
        raise DegenerateLine("plane parameter of zero norm encodes a plane at infinity")
    u = p / theta[..., None]
    half = 0.5 * theta
    sin_h = np.sin(half)
    d = np.cos(half) / sin_h
    dn = (np.eye(3) - u[..., :, None] * u[..., None, :]) / theta[..., None, None]
    dd = -(0.5 / sin_h**2)[..., None] * u
    return u, d, dn, dd


def plane_from_min_h(p):
    n, d = plane_from_min(p)
    return PlaneH(n, d)


def line_to_min(line):
    """4-vector ``[w_L, |m|]`` with ``R_L = [v, m/|m|, v x m/|m|]``.

    Raises
    ------
    DegenerateLine
        For a line through the origin (``m = 0``), where ``R_L`` is undefined.
    NearBranchCut
        If ``R_L`` is a rotation by (almost) pi.
    """
    m = np.linalg.norm(line.m)
    if m < 1e-9:
        raise DegenerateLine("line passes through the origin; moment direction undefined")
    mh = line.m / m
    RL = np.column_stack([line.v, mh, np.cross(line.v, mh)])
    return np.append(so3_log(RL), m)


def line_from_min_jac(x):
    """Direction, moment and their Jacobians for line parameters (..., 4).

    Returns ``v, m, dv_dw (..,3,3), dm_dw (..,3,3), dm_dmag (..,3)``.
    """
    x = np.asarray(x, dtype=float)
    w, mag = x[..., :3], x[..., 3]
    R = so3_exp(w)
    Jl = so3_left_jacobian(w)
    v = R[..., :, 0]
    mh = R[..., :, 1]
    m = mag[..., None] * mh
    dv = -skew(v) @ Jl
    dm = -skew(m) @ Jl
    return v, m, dv, dm, mh


def line_from_min(x):
    v, m, _, _, _ = line_from_min_jac(x)
    return PluckerLine(v, m)
