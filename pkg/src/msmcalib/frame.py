"""Home frame {0} of the scanning mirror and plane decomposition in it.

{0} has its origin at the rotation centre, X along the fast axis and Z
along the home (zero-drive) mirror normal.  A plane in {0} is written as two
rotations and one translation::

    n0 = Rx(alpha) @ Ry(beta) @ e_z
    plane: n0 . Y = d          (Y in {0}, d in mm along the normal)

so the home plane is ``(0, 0, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InsufficientData, PencilDegenerate, RankDeficient
from .geometry import PlaneH, canonical_sign, unit

PENCIL_RATIO = 1e-6
RANK_TOL = 1e-9


def _as_planes(planes):
    """(P, 4) array ``[n, d]`` with unit normals from PlaneH objects or arrays."""
    if len(planes) and isinstance(planes[0], PlaneH):
        return np.array([p.as_vector() for p in planes])
    A = np.asarray(planes, dtype=float).reshape(-1, 4)
    return A / np.linalg.norm(A[:, :3], axis=1, keepdims=True)


def estimate_fast_axis(normals, return_residual=False):
    """Axis perpendicular to all normals of a one-axis (fast) scan.

    Parameters
    ----------
    normals : array_like (K, 3)

    Returns
    -------
    e_F : ndarray (3,)
        Smallest right singular vector, canonical sign.
    residual : float
        ``max |n . e_F|`` (only with ``return_residual``).

    Raises
    ------
    RankDeficient
        If the normals do not span a plane (all equal up to noise).
    """
    N = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(N) < 2:
        raise RankDeficient("need at least two normals")
    N = N / np.linalg.norm(N, axis=1, keepdims=True)
    _, s, Vt = np.linalg.svd(N, full_matrices=True)
    if s[1] < RANK_TOL * s[0]:
        raise RankDeficient("fast-scan normals are all parallel")
    e = canonical_sign(Vt[-1])
    if return_residual:
        return e, float(np.max(np.abs(N @ e)))
    return e


@dataclass
class OriginEstimate:
    point: np.ndarray
    singular_values: np.ndarray
    ambiguous_along_axis: bool
    residuals: np.ndarray

    @property
    def translation_range(self):
        """Spread of the plane offsets at the estimated point (mm)."""
        return float(np.ptp(self.residuals)) if len(self.residuals) else 0.0


def estimate_origin(planes, on_pencil="flag"):
    """Point shared (in least squares) by all planes.

    Solves ``[n d] [X; 1] = 0`` with the homogeneous coordinate fixed to one,
    i.e. ``N X = -d`` through the SVD of the stacked normals.  Fixing the
    scale this way keeps the solution finite when the plane offsets carry
    mirror translation.

    Parameters
    ----------
    planes : list of PlaneH or array_like (P, 4)
    on_pencil : {"flag", "raise"}
        Behaviour when the planes share a line (a pencil, smallest singular
        value below 1e-6 of the largest): return the point of that line
        closest to the origin and flag it, or raise.

    Returns
    -------
    OriginEstimate

    Raises
    ------
    PencilDegenerate
        Pencil with ``on_pencil="raise"``.
    RankDeficient
        Fewer than three planes or all planes parallel.
    """
    A = _as_planes(planes)
    if len(A) < 3:
        raise RankDeficient("need at least three planes")
    N, d = A[:, :3], A[:, 3]
    U, s, Vt = np.linalg.svd(N, full_matrices=False)
    if s[1] < RANK_TOL * s[0]:
        raise RankDeficient("all planes are parallel")
    pencil = bool(s[2] < PENCIL_RATIO * s[0])
    if pencil and on_pencil == "raise":
        raise PencilDegenerate("planes form a pencil; the rotation centre is undetermined along its axis")
    keep = s >= PENCIL_RATIO * s[0]
    # truncated pseudo-inverse: minimum-norm point on the axis for a pencil
    X = -Vt[keep].T @ ((U[:, keep].T @ d) / s[keep])
    return OriginEstimate(X, s, pencil, N @ X + d)


def home_rotation(e_F, n0):
    """``R0 = [e_F, n0 x e_F, n0]`` with ``e_F`` orthogonalised against ``n0``."""
    n0 = unit(n0)
    e = np.asarray(e_F, dtype=float) - (np.dot(e_F, n0)) * n0
    if np.linalg.norm(e) < 1e-9:
        raise RankDeficient("fast axis is parallel to the home normal")
    e = unit(e)
    return np.column_stack([e, np.cross(n0, e), n0])


def normal_from_angles(alpha, beta):
    """``Rx(alpha) Ry(beta) e_z`` for angles in radians (broadcasts)."""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    return np.stack([np.sin(beta), -np.sin(alpha) * np.cos(beta), np.cos(alpha) * np.cos(beta)], axis=-1)


def angles_from_normal(n):
    """Inverse of :func:`normal_from_angles` for unit normals (..., 3)."""
    n = np.asarray(n, dtype=float)
    alpha = np.arctan2(-n[..., 1], n[..., 2])
    beta = np.arctan2(n[..., 0], np.hypot(n[..., 1], n[..., 2]))
    return alpha, beta


def to_home_frame(planes, R0, origin):
    """Decompose world planes into ``(alpha_deg, beta_deg, d_mm)`` in {0}.

    Normals are taken facing the home normal (``R0[:, 2]``).
    """
    A = _as_planes(planes)
    n, d = A[:, :3], A[:, 3]
    flip = n @ R0[:, 2] < 0
    n = np.where(flip[:, None], -n, n)
    d = np.where(flip, -d, d)
    n0 = n @ R0
    alpha, beta = angles_from_normal(n0)
    t = -(n @ origin + d)
    return np.column_stack([np.degrees(alpha), np.degrees(beta), t])


def from_home_frame(poses, R0, origin):
    """World planes ``(P, 4)`` from ``(alpha_deg, beta_deg, d_mm)`` triples."""
    Y = np.atleast_2d(np.asarray(poses, dtype=float))
    n = normal_from_angles(np.radians(Y[:, 0]), np.radians(Y[:, 1])) @ R0.T
    d = -(n @ origin) - Y[:, 2]
    return np.column_stack([n, d])


class HomeFrameEstimator(BaseEstimator, TransformerMixin):
    """Estimate {0} from mirror planes and express planes in it.

    Parameters
    ----------
    on_pencil : {"flag", "raise"}
        Passed to :func:`estimate_origin`.
    origin_from_fast : bool
        Also use the fast-scan planes for the rotation centre.  They carry
        most of the information along ``n0 x e_F`` because the two-axis scan
        tilts about the fast axis by only a few degrees.

    Attributes
    ----------
    e_F_ : ndarray (3,)
        Fast axis in {W}.
    n0_ : ndarray (3,)
        Home normal in {W}.
    R0_ : ndarray (3, 3)
        Rotation {0} -> {W}.
    origin_ : ndarray (3,)
        Rotation centre in {W} (mm).
    origin_report_ : OriginEstimate
    fast_axis_residual_ : float
    """

    def __init__(self, on_pencil="flag", origin_from_fast=True):
        self.on_pencil = on_pencil
        self.origin_from_fast = origin_from_fast

    def fit(self, X, y=None, fast=None, home=None):
        """Fit from world planes.

        Parameters
        ----------
        X : array_like (P, 4) or list of PlaneH
            Planes of the two-axis scan; used for the origin.
        fast : array_like (K, 4) or list of PlaneH, optional
            Planes of a one-axis (fast) scan for the fast axis.  Defaults to
            ``X``.
        home : PlaneH or array_like (4,), optional
            Plane at zero drive.  Defaults to the mean normal of ``X``.
        """
        A = _as_planes(X)
        if len(A) < 3:
            raise InsufficientData("need at least three planes")
        F = A if fast is None else _as_planes(fast)
        mean_n = unit(A[:, :3].mean(axis=0))
        if home is None:
            n0 = mean_n
        else:
            h = home.as_vector() if isinstance(home, PlaneH) else np.asarray(home, dtype=float)
            n0 = unit(h[:3])
            if n0 @ mean_n < 0:
                n0 = -n0
        self.e_F_, self.fast_axis_residual_ = estimate_fast_axis(F[:, :3], return_residual=True)
        self.n0_ = n0
        self.R0_ = home_rotation(self.e_F_, n0)
        B = np.vstack([A, F]) if fast is not None and self.origin_from_fast else A
        self.origin_report_ = estimate_origin(B, on_pencil=self.on_pencil)
        self.origin_ = self.origin_report_.point
        return self

    def transform(self, X):
        """``(alpha_deg, beta_deg, d_mm)`` per plane."""
        check_is_fitted(self, "R0_")
        return to_home_frame(X, self.R0_, self.origin_)

    def inverse_transform(self, X):
        check_is_fitted(self, "R0_")
        return from_home_frame(X, self.R0_, self.origin_)
