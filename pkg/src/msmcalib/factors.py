"""Measurement functions and the factor graph for joint mirror-pose estimation.

Three factor types tie pixel observations to the state:

* ``f_P`` -- checkerboard corner projected through a camera pose.
* ``f_L`` -- a laser beam pierced with a sliding board, seen by camera C1.
* ``f_R`` -- a beam reflected by a mirror plane, pierced with the world
  board ``z = 0`` and seen by camera C2.

All kernels are vectorised over observations and return analytic Jacobians
with respect to the minimal parameters of every block they touch.  Invalid
configurations (ray parallel to a plane, point behind a camera) are flagged
per observation instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .camera import projection_derivative
from .geometry import line_from_min_jac, plane_from_min_jac, skew, so3_exp, so3_left_jacobian

PARALLEL_TOL = 1e-9
DEPTH_TOL = 1e-9
E3 = np.array([0.0, 0.0, 1.0])


def _project_cam(Xc, K):
    z = Xc[..., 2]
    valid = z > DEPTH_TOL
    zs = np.where(valid, z, 1.0)
    uv = np.stack([K.fx * Xc[..., 0] / zs + K.cx, K.fy * Xc[..., 1] / zs + K.cy], axis=-1)
    Xs = Xc.copy()
    Xs[..., 2] = zs
    return uv, projection_derivative(Xs, K), valid


def f_P(T, X, K):
    """Corner projection ``K (R X + t)``.

    Parameters
    ----------
    T : ndarray (N, 6) or (6,)
        Minimal target-to-camera poses.
    X : ndarray (N, 3)
        Corner coordinates in the target frame.

    Returns
    -------
    uv (N, 2), J_T (N, 2, 6), valid (N,)
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.broadcast_to(np.asarray(T, dtype=float), X.shape[:-1] + (6,))
    w, t = T[..., :3], T[..., 3:]
    R = so3_exp(w)
    RX = np.einsum("nij,nj->ni", R, X)
    uv, D, valid = _project_cam(RX + t, K)
    dw = -skew(RX) @ so3_left_jacobian(w)
    J_T = np.concatenate([D @ dw, D], axis=-1)
    return uv, J_T, valid


def _intersect(p, v, n, d):
    """``X = p - s v`` with ``s = (n.p + d) / (n.v)``; batched with partials."""
    nv = np.einsum("ni,ni->n", n, v)
    valid = np.abs(nv) >= PARALLEL_TOL
    nv = np.where(valid, nv, 1.0)
    s = (np.einsum("ni,ni->n", n, p) + d) / nv
    X = p - s[:, None] * v
    A = np.eye(3) - v[:, :, None] * n[:, None, :] / nv[:, None, None]
    dX_dv = -s[:, None, None] * A
    dX_dn = -v[:, :, None] * X[:, None, :] / nv[:, None, None]
    dX_dd = -v / nv[:, None]
    return X, A, dX_dv, dX_dn, dX_dd, valid


def f_L(line, T_c1w, T_c1s, K):
    """Beam ``line`` (world frame) pierced with sliding board ``T_c1s``, seen by C1.

    Parameters
    ----------
    line : ndarray (N, 4)
        Minimal line parameters ``[w_L, |m|]``.
    T_c1w, T_c1s : ndarray (N, 6)
        World-to-C1 and sliding-board-to-C1 poses.

    Returns
    -------
    uv (N, 2), J_line (N, 2, 4), J_Tw (N, 2, 6), J_Ts (N, 2, 6), valid (N,)
    """
    line = np.atleast_2d(np.asarray(line, dtype=float))
    N = len(line)
    T_c1w = np.broadcast_to(np.asarray(T_c1w, dtype=float), (N, 6))
    T_c1s = np.broadcast_to(np.asarray(T_c1s, dtype=float), (N, 6))
    v, m, dv_dwl, dm_dwl, dm_dmag = line_from_min_jac(line)
    p0 = np.cross(v, m)
    dp0_dv = -skew(m)
    dp0_dm = skew(v)

    ww, tw = T_c1w[:, :3], T_c1w[:, 3:]
    Rw = so3_exp(ww)
    Jw = so3_left_jacobian(ww)
    vc = np.einsum("nij,nj->ni", Rw, v)
    Rp = np.einsum("nij,nj->ni", Rw, p0)
    pc = Rp + tw

    ws, ts = T_c1s[:, :3], T_c1s[:, 3:]
    Rs = so3_exp(ws)
    nc = Rs[:, :, 2]
    dc = -np.einsum("ni,ni->n", nc, ts)

    X, A, dX_dvc, dX_dn, dX_dd, valid = _intersect(pc, vc, nc, dc)
    uv, D, vis = _project_cam(X, K)
    valid &= vis

    # sliding plane: d = -n.t_s couples the normal and the translation
    dX_dnc = dX_dn - dX_dd[:, :, None] * ts[:, None, :]
    dX_dts = -dX_dd[:, :, None] * nc[:, None, :]
    dnc_dws = -skew(nc) @ so3_left_jacobian(ws)

    dX_dww = dX_dvc @ (-skew(vc) @ Jw) + A @ (-skew(Rp) @ Jw)
    dX_dtw = A
    dX_dv = dX_dvc @ Rw + A @ Rw @ dp0_dv
    dX_dm = A @ Rw @ dp0_dm
    dX_dwl = dX_dv @ dv_dwl + dX_dm @ dm_dwl
    dX_dmag = np.einsum("nij,nj->ni", dX_dm, dm_dmag)

    J_line = D @ np.concatenate([dX_dwl, dX_dmag[:, :, None]], axis=-1)
    J_Tw = D @ np.concatenate([dX_dww, dX_dtw], axis=-1)
    J_Ts = D @ np.concatenate([dX_dnc @ dnc_dws, dX_dts], axis=-1)
    return uv, J_line, J_Tw, J_Ts, valid


def reflect_pierce_point(p, v, n, d):
    """Reflect the ray ``p + s v`` in plane ``(n, d)`` and pierce ``z = 0``.

    Batched over the leading axis.  Returns ``X`` and its partials with
    respect to ``p``, ``v``, ``n`` and ``d``, plus a validity mask.
    """
    nv = np.einsum("ni,ni->n", n, v)
    r0 = np.einsum("ni,ni->n", n, p) + d
    Q = np.eye(3) - 2.0 * n[:, :, None] * n[:, None, :]
    vr = v - 2.0 * nv[:, None] * n
    pr = p - 2.0 * r0[:, None] * n

    eye = np.eye(3)
    dvr_dn = -2.0 * (nv[:, None, None] * eye + n[:, :, None] * v[:, None, :])
    dpr_dn = -2.0 * (r0[:, None, None] * eye + n[:, :, None] * p[:, None, :])

    # world board z = 0
    ez = np.broadcast_to(E3, vr.shape)
    X, A, dX_dvr, _, _, valid = _intersect(pr, vr, ez, np.zeros(len(vr)))
    dX_dp = A @ Q
    dX_dv = dX_dvr @ Q
    dX_dn = dX_dvr @ dvr_dn + A @ dpr_dn
    dX_dd = -2.0 * np.einsum("nij,nj->ni", A, n)
    return X, dX_dp, dX_dv, dX_dn, dX_dd, valid


def reflect_and_pierce(plane, line):
    """World point where beam ``line`` lands on ``z = 0`` after reflection in ``plane``.

    Both arguments are minimal parameters, batched (N, 3) and (N, 4).
    Returns ``X, J_plane (N,3,3), J_line (N,3,4), valid``.
    """
    plane = np.atleast_2d(np.asarray(plane, dtype=float))
    line = np.atleast_2d(np.asarray(line, dtype=float))
    n, d, dn_dp, dd_dp = plane_from_min_jac(plane)
    v, m, dv_dwl, dm_dwl, dm_dmag = line_from_min_jac(line)
    p0 = np.cross(v, m)
    X, dX_dp0, dX_dv, dX_dn, dX_dd, valid = reflect_pierce_point(p0, v, n, d)
    J_plane = dX_dn @ dn_dp + dX_dd[:, :, None] * dd_dp[:, None, :]
    dX_dv = dX_dv + dX_dp0 @ (-skew(m))
    dX_dm = dX_dp0 @ skew(v)
    J_line = np.concatenate(
        [dX_dv @ dv_dwl + dX_dm @ dm_dwl, np.einsum("nij,nj->ni", dX_dm, dm_dmag)[:, :, None]], axis=-1
    )
    return X, J_plane, J_line, valid


def f_R(plane, line, T_c2w, K):
    """Reflected dot on the world board projected into C2.

    Returns
    -------
    uv (N, 2), J_plane (N, 2, 3), J_line (N, 2, 4), J_T (N, 2, 6), valid (N,)
    """
    X, JXp, JXl, valid = reflect_and_pierce(plane, line)
    uv, J_T, vis = f_P(T_c2w, X, K)
    T = np.broadcast_to(np.asarray(T_c2w, dtype=float), (len(X), 6))
    # d(uv)/d(t) equals d(uv)/d(X_c)
    DR = J_T[:, :, 3:] @ so3_exp(T[:, :3])
    return uv, DR @ JXp, DR @ JXl, J_T, valid & vis


# --------------------------------------------------------------------------
# State layout and the assembled graph
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StateLayout:
    """Offsets of the blocks in ``[planes | lines | T_c1w | T_c2w | T_c1s_l]``."""

    n_planes: int
    n_lines: int
    n_slides: int

    @property
    def line0(self):
        return 3 * self.n_planes

    @property
    def tf0(self):
        return self.line0 + 4 * self.n_lines

    @property
    def size(self):
        return self.tf0 + 6 * (2 + self.n_slides)

    def plane_cols(self, j):
        return 3 * np.asarray(j)

    def line_cols(self, i):
        return self.line0 + 4 * np.asarray(i)

    def tf_cols(self, k):
        """Transform index: 0 = world->C1, 1 = world->C2, 2 + l = slide l->C1."""
        return self.tf0 + 6 * np.asarray(k)

    def planes(self, x):
        return x[: self.line0].reshape(self.n_planes, 3)

    def lines(self, x):
        return x[self.line0 : self.tf0].reshape(self.n_lines, 4)

    def transforms(self, x):
        return x[self.tf0 :].reshape(2 + self.n_slides, 6)

    def pack(self, planes, lines, transforms):
        x = np.concatenate(
            [np.ravel(planes), np.ravel(lines), np.ravel(transforms)]
        ).astype(float)
        if x.size != self.size:
            raise ValueError(f"state has {x.size} entries, layout expects {self.size}")
        return x


@dataclass
class Observations:
    """Flattened pixel observations.

    ``corner_tf`` indexes the transform block (see :meth:`StateLayout.tf_cols`);
    ``corner_X`` are target-frame corner coordinates.
    """

    corner_tf: np.ndarray
    corner_X: np.ndarray
    corner_uv: np.ndarray
    corner_cov: np.ndarray
    slide_beam: np.ndarray
    slide_idx: np.ndarray
    slide_uv: np.ndarray
    slide_cov: np.ndarray
    refl_beam: np.ndarray
    refl_pulse: np.ndarray
    refl_uv: np.ndarray
    refl_cov: np.ndarray

    def __post_init__(self):
        self.corner_L = _whitener(self.corner_cov)
        self.slide_L = _whitener(self.slide_cov)
        self.refl_L = _whitener(self.refl_cov)


def _whitener(cov):
    cov = np.asarray(cov, dtype=float).reshape(-1, 2, 2)
    if len(cov) == 0:
        return np.zeros((0, 2, 2))
    return np.linalg.inv(np.linalg.cholesky(cov))


def _coo_block(row0, cols, J):
    """COO triplets for per-observation dense blocks ``J (N, 2, b)``."""
    N, r, b = J.shape
    rows = row0 + np.arange(N * r).reshape(N, r, 1)
    rows = np.broadcast_to(rows, (N, r, b))
    cc = np.broadcast_to(np.asarray(cols).reshape(-1, 1, 1) + np.arange(b), (N, r, b))
    return rows.ravel(), cc.ravel(), J.ravel()


class FactorGraph:
    """Whitened residuals ``L^-1 (x - f)`` and their sparse Jacobian."""

    def __init__(self, layout, obs, K1, K2):
        self.layout = layout
        self.obs = obs
        self.K1 = K1
        self.K2 = K2
        self.n_cp = len(obs.corner_uv)
        self.n_cl = len(obs.slide_uv)
        self.n_cr = len(obs.refl_uv)

    @property
    def n_residuals(self):
        return 2 * (self.n_cp + self.n_cl + self.n_cr)

    def _corner_K(self):
        # world->C2 corners are seen by C2, everything else by C1
        return self.obs.corner_tf == 1

    def _eval_cp(self, x, jac):
        o, lay = self.obs, self.layout
        T = lay.transforms(x)[o.corner_tf]
        uv = np.empty((self.n_cp, 2))
        J = np.empty((self.n_cp, 2, 6))
        valid = np.empty(self.n_cp, dtype=bool)
        c2 = self._corner_K()
        for mask, K in ((~c2, self.K1), (c2, self.K2)):
            if mask.any():
                uv[mask], J[mask], valid[mask] = f_P(T[mask], o.corner_X[mask], K)
        r = np.einsum("nij,nj->ni", o.corner_L, o.corner_uv - uv)
        r[~valid] = np.nan
        if not jac:
            return r, None
        blocks = [(lay.tf_cols(o.corner_tf), -o.corner_L @ J)]
        return r, blocks

    def _eval_cl(self, x, jac):
        o, lay = self.obs, self.layout
        tfs = lay.transforms(x)
        uv, Jl, Jw, Js, valid = f_L(lay.lines(x)[o.slide_beam], tfs[0], tfs[2 + o.slide_idx], self.K1)
        r = np.einsum("nij,nj->ni", o.slide_L, o.slide_uv - uv)
        r[~valid] = np.nan
        if not jac:
            return r, None
        L = -o.slide_L
        blocks = [
            (lay.line_cols(o.slide_beam), L @ Jl),
            (np.full(self.n_cl, lay.tf_cols(0)), L @ Jw),
            (lay.tf_cols(2 + o.slide_idx), L @ Js),
        ]
        return r, blocks

    def _eval_cr(self, x, jac):
        o, lay = self.obs, self.layout
        uv, Jp, Jl, Jt, valid = f_R(
            lay.planes(x)[o.refl_pulse], lay.lines(x)[o.refl_beam], lay.transforms(x)[1], self.K2
        )
        r = np.einsum("nij,nj->ni", o.refl_L, o.refl_uv - uv)
        r[~valid] = np.nan
        if not jac:
            return r, None
        L = -o.refl_L
        blocks = [
            (lay.plane_cols(o.refl_pulse), L @ Jp),
            (lay.line_cols(o.refl_beam), L @ Jl),
            (np.full(self.n_cr, lay.tf_cols(1)), L @ Jt),
        ]
        return r, blocks

    def cost_cp(self, x):
        return self._eval_cp(x, False)[0].ravel()

    def cost_cl(self, x):
        return self._eval_cl(x, False)[0].ravel()

    def cost_cr(self, x):
        return self._eval_cr(x, False)[0].ravel()

    def residuals(self, x):
        return np.concatenate([self.cost_cp(x), self.cost_cl(x), self.cost_cr(x)])

    def jacobian(self, x):
        rows, cols, vals = [], [], []
        row0 = 0
        for fn, n in ((self._eval_cp, self.n_cp), (self._eval_cl, self.n_cl), (self._eval_cr, self.n_cr)):
            if n:
                _, blocks = fn(x, True)
                for c, J in blocks:
                    r_, c_, v_ = _coo_block(row0, c, J)
                    rows.append(r_)
                    cols.append(c_)
                    vals.append(v_)
            row0 += 2 * n
        J = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_residuals, self.layout.size),
        )
        return J.tocsr()
