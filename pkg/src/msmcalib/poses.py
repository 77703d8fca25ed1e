"""Mirror plane estimation from two (or more) reflected laser beams.

Per pulse, a closed-form plane comes from the light-path normals of the
beams and the real/virtual midpoint of one reflected dot.  All planes,
beams and camera extrinsics are then refined jointly by maximum likelihood
over every pixel observation (:class:`MirrorPoseEstimator`), which also
provides the covariance of the estimate and the held-out-beam validation.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import factors
from .beams import BOARD_PLANE, fit_line_pca, reconstruct_beams
from .camera import backproject_to_plane, solve_pnp
from .exceptions import (
    DegenerateSpanningAngle,
    InsufficientData,
    NoConvergence,
    ParallelLinePlane,
    PointOnLine,
    Retroreflection,
    SkewLines,
    ValidationError,
)
from .geometry import (
    PlaneH,
    PluckerLine,
    RigidTransform,
    closest_points,
    lightpath_normal,
    line_plane_intersect,
    line_to_min,
    plane_from_min_jac,
    plane_to_min,
    skew,
    so3_exp,
    so3_left_jacobian,
    unit,
)
from .lm import covariance_from_normal, levenberg_marquardt

logger = logging.getLogger(__name__)

WORLD_PLANE = BOARD_PLANE
MIN_SPAN_DEG = 1.0


def spanning_angle(n1, n2, min_angle_deg=MIN_SPAN_DEG):
    """Acute angle (deg) between two light-path normals.

    Raises
    ------
    DegenerateSpanningAngle
        Below ``min_angle_deg``; the mirror normal is then ill-determined.
    """
    c = abs(float(np.clip(np.dot(unit(n1), unit(n2)), -1.0, 1.0)))
    theta = np.degrees(np.arccos(c))
    if not theta >= min_angle_deg:
        raise DegenerateSpanningAngle(f"spanning angle {theta:.4f} deg is below {min_angle_deg} deg")
    return theta


def init_mirror_plane(beams, dots, skew_tol=1.0, min_angle_deg=MIN_SPAN_DEG):
    """Closed-form mirror plane from incident beams and their reflected dots.

    The mirror normal is perpendicular to every light-path normal.  Each dot
    and its virtual image (on the extension of the incident beam along the
    mirror normal) are symmetric about the mirror, so their midpoint lies on
    it.

    Parameters
    ----------
    beams : sequence of PluckerLine
        Incident beams (propagation direction), at least two.
    dots : array_like (n_beams, 3)
        Reflected dots on the world plane.
    skew_tol : float
        Largest allowed gap (mm) between the incident beam and the normal
        line through its dot.

    Returns
    -------
    PlaneH
        Normal oriented towards the beam sources.
    """
    dots = np.asarray(dots, dtype=float).reshape(-1, 3)
    if len(beams) < 2 or len(beams) != len(dots):
        raise InsufficientData("need one dot for each of at least two beams")
    normals = []
    for L, X in zip(beams, dots):
        try:
            normals.append(lightpath_normal(L, X))
        except PointOnLine:
            raise Retroreflection("reflected dot is collinear with its incident beam") from None
    N = np.array(normals)
    if len(N) == 2:
        c = np.cross(N[0], N[1])
        if np.linalg.norm(c) < np.sin(np.radians(min_angle_deg)):
            raise DegenerateSpanningAngle("light-path planes are (nearly) parallel")
        n = c / np.linalg.norm(c)
    else:
        span = max(np.linalg.norm(np.cross(a, b)) for k, a in enumerate(N) for b in N[k + 1 :])
        if span < np.sin(np.radians(min_angle_deg)):
            raise DegenerateSpanningAngle("light-path planes are (nearly) parallel")
        n = np.linalg.svd(N)[2][-1]
    if sum(n @ L.v for L in beams) > 0:
        n = -n

    mids = []
    for L, X in zip(beams, dots):
        try:
            on_beam, on_normal = closest_points(L.point, L.v, X, n)
        except ParallelLinePlane:
            raise Retroreflection("beam is parallel to the mirror normal") from None
        gap = np.linalg.norm(on_beam - on_normal)
        if gap > skew_tol:
            raise SkewLines(f"virtual-point lines miss by {gap:.3f} mm (> {skew_tol} mm)")
        virtual = 0.5 * (on_beam + on_normal)
        mids.append(0.5 * (X + virtual))
    d = -float(np.mean(np.asarray(mids) @ n))
    return PlaneH(n, d)


def baseline_pure_rotation(line, dots, center):
    """Planes under the pure-rotation assumption (one beam, fixed pivot).

    The mirror is assumed to rotate about ``center`` with the incident beam
    hitting exactly there; the normal bisects the reversed incident and the
    reflected direction.

    Parameters
    ----------
    line : PluckerLine
        Incident beam.
    dots : array_like (P, 3)
        Reflected dots of that beam on the world plane.
    center : array_like (3,)
        Assumed rotation centre.

    Returns
    -------
    list of PlaneH
    """
    center = np.asarray(center, dtype=float)
    out = []
    for X in np.asarray(dots, dtype=float).reshape(-1, 3):
        r = X - center
        if np.linalg.norm(r) < 1e-9:
            raise Retroreflection("dot coincides with the assumed rotation centre")
        h = unit(r) - line.v
        if np.linalg.norm(h) < 1e-9:
            raise Retroreflection("reflected ray continues along the incident beam")
        out.append(PlaneH.through_point(unit(h), center))
    return out


def beams_center(lines):
    """Least-squares meeting point of the incident beams."""
    lines = list(lines)
    if len(lines) == 2:
        a, b = closest_points(lines[0].point, lines[0].v, lines[1].point, lines[1].v)
        return 0.5 * (a + b)
    A = sum(np.eye(3) - np.outer(L.v, L.v) for L in lines)
    b = sum((np.eye(3) - np.outer(L.v, L.v)) @ L.point for L in lines)
    return np.linalg.solve(A, b)


def _backproject_jac(uv, T_c1s, T_c1w, K):
    """Sliding-board dots lifted to {W} with partials.

    Returns ``X (L,3), dX_duv (L,3,2), dX_dTs (L,3,6), dX_dTw (L,3,6)``.
    """
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    nL = len(uv)
    ray = np.column_stack([(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy, np.ones(nL)])
    ws, ts = T_c1s[:, :3], T_c1s[:, 3:]
    nc = so3_exp(ws)[:, :, 2]
    dc = -np.einsum("ni,ni->n", nc, ts)
    Xc, _, dXc_dray, dXc_dn, dXc_dd, _ = factors._intersect(np.zeros((nL, 3)), ray, nc, dc)
    dray_duv = np.zeros((nL, 3, 2))
    dray_duv[:, 0, 0] = 1.0 / K.fx
    dray_duv[:, 1, 1] = 1.0 / K.fy
    dXc_dws = (dXc_dn - dXc_dd[:, :, None] * ts[:, None, :]) @ (-skew(nc) @ so3_left_jacobian(ws))
    dXc_dts = -dXc_dd[:, :, None] * nc[:, None, :]

    ww, tw = T_c1w[:3], T_c1w[3:]
    RwT = so3_exp(ww).T
    X = (Xc - tw) @ RwT.T
    dX_dww = skew(X) @ so3_left_jacobian(-ww)
    dX_duv = RwT @ dXc_dray @ dray_duv
    dX_dTs = RwT @ np.concatenate([dXc_dws, dXc_dts], axis=-1)
    dX_dTw = np.concatenate([dX_dww, np.broadcast_to(-RwT, (nL, 3, 3))], axis=-1)
    return X, dX_duv, dX_dTs, dX_dTw


def _pca_jac(X, direction):
    """PCA line (mean, direction) of points with partials w.r.t. each point."""
    mean = X.mean(axis=0)
    Y = X - mean
    S = Y.T @ Y
    lam, V = np.linalg.eigh(S)
    v = V[:, -1]
    if v @ direction < 0:
        v = -v
    P = np.linalg.pinv(lam[-1] * np.eye(3) - S, rcond=1e-10)
    dv_dX = np.einsum("ij,ljk->lik", P, (Y @ v)[:, None, None] * np.eye(3) + Y[:, :, None] * v[None, None, :])
    return mean, v, dv_dX


def predict_dots(plane_min, T_c1w, T_c1s, T_c2w, slide_uv, K1, K2, direction):
    """Predict held-out reflected dots and their Jacobians.

    The held-out beam is re-fitted from its sliding-board dots through the
    estimated extrinsics, reflected in each plane, pierced with the world
    board and projected into C2.

    Parameters
    ----------
    plane_min : ndarray (P, 3)
    T_c1w, T_c2w : ndarray (6,)
    T_c1s : ndarray (L, 6)
        Sliding-board poses of the captures that observe the beam.
    slide_uv : ndarray (L, 2)
        Held-out beam pixels in those captures.

    Returns
    -------
    dict with ``uv (P,2)``, ``X`` world dots, ``line`` and Jacobians
    ``plane (P,2,3)``, ``T_c1w (P,2,6)``, ``T_c1s (P,2,L,6)``,
    ``T_c2w (P,2,6)``, ``uv_slide (P,2,2L)``.
    """
    plane_min = np.atleast_2d(plane_min)
    P = len(plane_min)
    Xs, dX_duv, dX_dTs, dX_dTw = _backproject_jac(slide_uv, T_c1s, T_c1w, K1)
    nL = len(Xs)
    mean, v, dv_dX = _pca_jac(Xs, direction)

    n, d, dn_dp, dd_dp = plane_from_min_jac(plane_min)
    X, dX_dmean, dX_dv, dX_dn, dX_dd, valid = factors.reflect_pierce_point(
        np.broadcast_to(mean, (P, 3)), np.broadcast_to(v, (P, 3)), n, d
    )
    uv, J_T2, vis = factors.f_P(T_c2w, X, K2)
    DR = J_T2[:, :, 3:] @ so3_exp(T_c2w[:3])
    G_mean = DR @ dX_dmean
    G_v = DR @ dX_dv
    # d(uv)/d(X_l) for every sliding point, (P, L, 2, 3)
    G_pts = G_mean[:, None] / nL + np.einsum("pij,ljk->plik", G_v, dv_dX)
    J = {
        "plane": DR @ (dX_dn @ dn_dp + dX_dd[:, :, None] * dd_dp[:, None, :]),
        "T_c2w": J_T2,
        "T_c1w": np.einsum("plij,ljk->pik", G_pts, dX_dTw),
        "T_c1s": np.einsum("plij,ljk->pilk", G_pts, dX_dTs),
        "uv_slide": np.einsum("plij,ljk->pilk", G_pts, dX_duv).reshape(P, 2, 2 * nL),
    }
    return {"uv": uv, "X": X, "line": PluckerLine.from_point_direction(mean, v), "valid": valid & vis, "J": J}


class MirrorPoseEstimator(BaseEstimator):
    """Joint maximum-likelihood estimate of per-pulse mirror planes.

    Parameters
    ----------
    holdout_beam : int, optional
        Beam id excluded from estimation and used by :meth:`predict_heldout`.
    estimation_beams : list of int, optional
        Beams used for estimation; defaults to every scene beam except the
        held-out one.
    max_iter : int
        Levenberg-Marquardt iteration limit.
    lambda0 : float
        Initial damping.
    gtol, xtol : float
        Gradient and step stopping tolerances.
    cond_max : float
        Condition number above which the covariance uses a truncated
        pseudo-inverse.
    skew_tol : float
        Gap tolerance (mm) of the closed-form initialization.

    Attributes
    ----------
    planes_ : list of PlaneH
        Mirror planes in {W}, normals facing the beam sources.
    plane_cov_ : ndarray (P, 3, 3)
        Covariance of the minimal plane parameters.
    pulse_ids_ : ndarray (P,)
    lines_ : dict
        Estimated beams keyed by beam id.
    T_c1w_, T_c2w_ : RigidTransform
    T_c1s_ : list of RigidTransform
    covariance_ : ndarray
        Full state covariance.
    result_ : LMResult
    """

    def __init__(
        self,
        holdout_beam=None,
        estimation_beams=None,
        max_iter=200,
        lambda0=1e-3,
        gtol=1e-8,
        xtol=1e-10,
        cond_max=1e12,
        skew_tol=1.0,
    ):
        self.holdout_beam = holdout_beam
        self.estimation_beams = estimation_beams
        self.max_iter = max_iter
        self.lambda0 = lambda0
        self.gtol = gtol
        self.xtol = xtol
        self.cond_max = cond_max
        self.skew_tol = skew_tol

    # ------------------------------------------------------------------
    def _beam_ids(self, scene):
        ids = list(scene.beam_ids)
        if self.holdout_beam is not None and self.holdout_beam not in ids:
            raise ValidationError(f"holdout beam {self.holdout_beam} is not a beam of the scene {ids}")
        if self.estimation_beams is not None:
            est = list(self.estimation_beams)
            unknown = [b for b in est if b not in ids]
            if unknown:
                raise ValidationError(f"estimation beams {unknown} are not beams of the scene {ids}")
            if self.holdout_beam in est:
                raise ValidationError("the held-out beam cannot be an estimation beam")
        else:
            est = [b for b in ids if b != self.holdout_beam]
        if len(est) < 2:
            raise InsufficientData("mirror pose estimation needs two estimation beams")
        return est

    def _initial_state(self, dataset, recon, est):
        scene, scan = dataset.scene, dataset.scan
        wb = scene.world_board.points()
        uv = np.concatenate([f.corner_uv for f in scan.frames])
        cov = np.concatenate([f.corner_cov for f in scan.frames])
        obj = np.concatenate([wb[f.corner_ids] for f in scan.frames])
        T_c2w = solve_pnp(uv, obj, scene.K2, cov=cov)

        beam, pulse, duv, dcov = scan.dots()
        use = np.isin(beam, est)
        beam, pulse, duv, dcov = beam[use], pulse[use], duv[use], dcov[use]
        world = backproject_to_plane(duv, T_c2w, scene.K2, WORLD_PLANE) if len(duv) else np.zeros((0, 3))

        pulse_ids, planes = [], []
        by_pulse = {}
        for k, p in enumerate(pulse):
            by_pulse.setdefault(int(p), []).append(k)
        order = [p.id for p in scan.pulses]
        for pid in order:
            ks = by_pulse.get(pid, [])
            if len(ks) < 2:
                if ks:
                    logger.info("pulse %d has a single estimation-beam dot; skipped", pid)
                continue
            lines = [recon.lines[int(beam[k])] for k in ks]
            planes.append(init_mirror_plane(lines, world[ks], skew_tol=self.skew_tol))
            pulse_ids.append(pid)
        if not planes:
            raise InsufficientData("no pulse is observed by two estimation beams")
        keep = np.isin(pulse, pulse_ids)
        return T_c2w, np.array(pulse_ids), planes, (beam[keep], pulse[keep], duv[keep], dcov[keep])

    def fit(self, dataset, beams=None):
        """Estimate all planes of ``dataset``.

        Parameters
        ----------
        dataset : Dataset
        beams : BeamReconstruction, optional
            Initial beams and C1 extrinsics; reconstructed from the sliding
            captures when omitted.
        """
        scene = dataset.scene
        est = self._beam_ids(scene)
        if beams is None:
            beams = reconstruct_beams(dataset.captures, scene)
        missing = [b for b in est if b not in beams.lines]
        if missing:
            raise InsufficientData(f"beams {missing} were not reconstructed")
        T_c2w, pulse_ids, planes, refl = self._initial_state(dataset, beams, est)
        n_slides = len(dataset.captures)
        layout = factors.StateLayout(len(planes), len(est), n_slides)
        beam_index = {b: i for i, b in enumerate(est)}
        pulse_index = {p: j for j, p in enumerate(pulse_ids)}

        wb, sb = scene.world_board.points(), scene.slide_board.points()
        tf, X, cuv, ccov = [], [], [], []
        s_beam, s_idx, s_uv, s_cov = [], [], [], []
        for l, c in enumerate(dataset.captures):
            tf += [np.zeros(len(c.world_ids), int), np.full(len(c.slide_ids), 2 + l)]
            X += [wb[c.world_ids], sb[c.slide_ids]]
            cuv += [c.world_uv, c.slide_uv]
            ccov += [c.world_cov, c.slide_cov]
            for b, (uv, cov) in sorted(c.dots.items()):
                if b in beam_index:
                    s_beam.append(beam_index[b])
                    s_idx.append(l)
                    s_uv.append(uv)
                    s_cov.append(cov)
        for f in dataset.scan.frames:
            tf.append(np.ones(len(f.corner_ids), int))
            X.append(wb[f.corner_ids])
            cuv.append(f.corner_uv)
            ccov.append(f.corner_cov)
        rb, rp, ruv, rcov = refl
        obs = factors.Observations(
            corner_tf=np.concatenate(tf),
            corner_X=np.concatenate(X),
            corner_uv=np.concatenate(cuv),
            corner_cov=np.concatenate(ccov),
            slide_beam=np.array(s_beam, int),
            slide_idx=np.array(s_idx, int),
            slide_uv=np.array(s_uv, float).reshape(-1, 2),
            slide_cov=np.array(s_cov, float).reshape(-1, 2, 2),
            refl_beam=np.array([beam_index[int(b)] for b in rb], int),
            refl_pulse=np.array([pulse_index[int(p)] for p in rp], int),
            refl_uv=ruv,
            refl_cov=rcov,
        )
        graph = factors.FactorGraph(layout, obs, scene.K1, scene.K2)
        tfs = [beams.T_c1w.as_vector(), T_c2w.as_vector()] + [T.as_vector() for T in beams.T_c1s]
        x0 = layout.pack(
            [plane_to_min(p) for p in planes], [line_to_min(beams.lines[b]) for b in est], tfs
        )
        res = levenberg_marquardt(
            graph.residuals,
            graph.jacobian,
            x0,
            lambda0=self.lambda0,
            gtol=self.gtol,
            xtol=self.xtol,
            max_iter=self.max_iter,
        )
        if not res.converged:
            raise NoConvergence(
                f"mirror pose estimation did not converge in {res.iterations} iterations "
                f"(|g| = {res.grad_norm:.3e})",
                gradient_norm=res.grad_norm,
            )
        cov, truncated = covariance_from_normal(res.JtJ, self.cond_max)

        self.layout_ = layout
        self.graph_ = graph
        self.state_ = res.x
        self.result_ = res
        self.covariance_ = cov
        self.covariance_truncated_ = truncated
        self.estimation_beams_ = est
        self.pulse_ids_ = pulse_ids
        lines = layout.lines(res.x)
        self.lines_ = {}
        for b, q in zip(est, lines):
            v, m, *_ = factors.line_from_min_jac(q[None])
            self.lines_[b] = PluckerLine(v[0], m[0])
        toward = -np.mean([L.v for L in self.lines_.values()], axis=0)
        n, d, _, _ = plane_from_min_jac(layout.planes(res.x))
        self.planes_ = [PlaneH(nn, dd).oriented(toward) for nn, dd in zip(n, d)]
        P = layout.n_planes
        self.plane_cov_ = np.array([cov[3 * j : 3 * j + 3, 3 * j : 3 * j + 3] for j in range(P)])
        tfs = layout.transforms(res.x)
        self.T_c1w_ = RigidTransform.from_vector(tfs[0])
        self.T_c2w_ = RigidTransform.from_vector(tfs[1])
        self.T_c1s_ = [RigidTransform.from_vector(t) for t in tfs[2:]]
        self.slide_normal_ = beams.slide_normal
        self.initial_planes_ = planes
        logger.info(
            "MLE: %d planes, %d residuals, cost %.4g after %d iterations (%s)",
            P, res.n_residuals, res.cost, res.iterations, res.status,
        )
        return self

    # ------------------------------------------------------------------
    def plane_for(self, pulse_id):
        check_is_fitted(self, "planes_")
        idx = np.flatnonzero(self.pulse_ids_ == pulse_id)
        if not len(idx):
            raise KeyError(pulse_id)
        return self.planes_[idx[0]]

    def predicted_dots(self, beam_id=None):
        """World-plane dots of the estimation beams predicted by the fitted state."""
        check_is_fitted(self, "planes_")
        out = {}
        for b in self.estimation_beams_ if beam_id is None else [beam_id]:
            i = self.estimation_beams_.index(b)
            q = np.broadcast_to(self.layout_.lines(self.state_)[i], (self.layout_.n_planes, 4))
            out[b] = factors.reflect_and_pierce(self.layout_.planes(self.state_), q)[0]
        return out

    def spanning_angles(self):
        """Per-pulse spanning angle (deg) of the first two estimation beams."""
        check_is_fitted(self, "planes_")
        b1, b2 = self.estimation_beams_[:2]
        dots = self.predicted_dots()
        return np.array(
            [
                spanning_angle(
                    lightpath_normal(self.lines_[b1], dots[b1][j]),
                    lightpath_normal(self.lines_[b2], dots[b2][j]),
                    min_angle_deg=0.0,
                )
                for j in range(len(self.planes_))
            ]
        )

    def spanning_angle_stats(self):
        """Mean spanning angle (deg) over all pulses."""
        return float(np.mean(self.spanning_angles()))

    def baseline_planes(self, dataset, beam=None, center=None):
        """Pure-rotation baseline planes for the fitted pulses.

        Uses the dots of one estimation beam (the first by default) lifted
        to {W} with the fitted C2 pose and a pivot at the meeting point of the
        estimation beams.
        """
        check_is_fitted(self, "planes_")
        beam = self.estimation_beams_[0] if beam is None else beam
        if center is None:
            center = beams_center([self.lines_[b] for b in self.estimation_beams_])
        b, p, uv, _ = dataset.scan.dots()
        sel = b == beam
        lookup = dict(zip(p[sel].tolist(), range(int(sel.sum()))))
        uvb = uv[sel]
        idx = [lookup[int(pid)] for pid in self.pulse_ids_]
        X = backproject_to_plane(uvb[idx], self.T_c2w_, dataset.scene.K2, WORLD_PLANE)
        return baseline_pure_rotation(self.lines_[beam], X, center)

    def predict_heldout(self, dataset, beam=None, planes=None):
        """Prediction error of the held-out beam for every fitted pulse.

        Parameters
        ----------
        dataset : Dataset
        beam : int, optional
            Held-out beam id (defaults to ``holdout_beam``).
        planes : list of PlaneH, optional
            Alternative planes (e.g. a baseline); no covariance is propagated
            for them and ``sigma`` is NaN.

        Returns
        -------
        dict of arrays
            ``pulse_id``, ``delta_px``, ``sigma_px``, ``delta_mm``,
            ``delta_deg``, ``sigma_deg``, ``uv_obs``, ``uv_pred``.
        """
        check_is_fitted(self, "planes_")
        beam = self.holdout_beam if beam is None else beam
        if beam is None:
            raise ValidationError("no held-out beam given")
        if beam in self.estimation_beams_:
            raise ValidationError(f"beam {beam} was used for estimation")
        if beam not in dataset.scene.beam_ids:
            raise ValidationError(f"beam {beam} is not a beam of the scene")
        scene = dataset.scene
        lay = self.layout_
        caps = [l for l, c in enumerate(dataset.captures) if beam in c.dots]
        if len(caps) < 2:
            raise InsufficientData(f"held-out beam {beam} is seen in fewer than 2 sliding captures")
        slide_uv = np.array([dataset.captures[l].dots[beam][0] for l in caps])
        slide_cov = [dataset.captures[l].dots[beam][1] for l in caps]

        b, p, uv, cov = dataset.scan.dots()
        sel = b == beam
        obs = {int(pid): (u, c) for pid, u, c in zip(p[sel], uv[sel], cov[sel])}
        rows = [j for j, pid in enumerate(self.pulse_ids_) if int(pid) in obs]
        if not rows:
            raise InsufficientData(f"held-out beam {beam} has no dots on fitted pulses")

        tfs = lay.transforms(self.state_)
        if planes is None:
            pm = lay.planes(self.state_)[rows]
        else:
            pm = np.array([plane_to_min(planes[j]) for j in rows])
        direction = self.slide_normal_ if self.slide_normal_ is not None else np.array([0.0, 0.0, 1.0])
        pred = predict_dots(pm, tfs[0], tfs[2 + np.array(caps)], tfs[1], slide_uv, scene.K1, scene.K2, direction)

        uv_obs = np.array([obs[int(self.pulse_ids_[j])][0] for j in rows])
        cov_obs = np.array([obs[int(self.pulse_ids_[j])][1] for j in rows])
        e = uv_obs - pred["uv"]
        delta = np.linalg.norm(e, axis=1)
        u = np.where(delta[:, None] > 0, e / np.maximum(delta, 1e-300)[:, None], np.array([1.0, 0.0]))

        sigma = np.full(len(rows), np.nan)
        if planes is None:
            J = pred["J"]
            Sx = np.zeros((2 * len(caps), 2 * len(caps)))
            for k, c in enumerate(slide_cov):
                Sx[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = c
            for r, j in enumerate(rows):
                g = np.zeros(lay.size)
                g[3 * j : 3 * j + 3] = u[r] @ J["plane"][r]
                g[lay.tf_cols(0) : lay.tf_cols(0) + 6] = u[r] @ J["T_c1w"][r]
                g[lay.tf_cols(1) : lay.tf_cols(1) + 6] = u[r] @ J["T_c2w"][r]
                for k, l in enumerate(caps):
                    c0 = lay.tf_cols(2 + l)
                    g[c0 : c0 + 6] += u[r] @ J["T_c1s"][r][:, k]
                gx = u[r] @ J["uv_slide"][r]
                var = u[r] @ cov_obs[r] @ u[r] + g @ self.covariance_ @ g + gx @ Sx @ gx
                sigma[r] = np.sqrt(max(var, 0.0))

        # pixel -> angle: back-project both dots onto the world board
        Xo = backproject_to_plane(uv_obs, self.T_c2w_, scene.K2, WORLD_PLANE)
        Xp = backproject_to_plane(pred["uv"], self.T_c2w_, scene.K2, WORLD_PLANE)
        Xs = backproject_to_plane(pred["uv"] + u, self.T_c2w_, scene.K2, WORLD_PLANE)
        mm_per_px = np.linalg.norm(Xs - Xp, axis=1)
        delta_mm = np.linalg.norm(Xo - Xp, axis=1)
        hit = np.array(
            [
                line_plane_intersect(pred["line"], PlaneH(*_plane_nd(q)))
                for q in pm
            ]
        )
        dist = np.linalg.norm(Xp - hit, axis=1)
        return {
            "pulse_id": self.pulse_ids_[rows],
            "delta_px": delta,
            "sigma_px": sigma,
            "delta_mm": delta_mm,
            "distance_mm": dist,
            "delta_deg": pixel_error_to_deg(delta_mm, dist),
            "sigma_deg": pixel_error_to_deg(sigma * mm_per_px, dist),
            "uv_obs": uv_obs,
            "uv_pred": pred["uv"],
        }


def _plane_nd(q):
    n, d, _, _ = plane_from_min_jac(np.asarray(q)[None])
    return n[0], d[0]


def pixel_error_to_deg(delta_mm, distance_mm):
    """Mirror-angle equivalent of a dot displacement on the world plane.

    A mirror tilt of ``a`` turns the reflected ray by ``2 a``; a displacement
    ``delta_mm`` at ``distance_mm`` from the reflection point is therefore
    ``atan(delta / distance) / 2``.
    """
    return 0.5 * np.degrees(np.arctan2(delta_mm, distance_mm))


def fit_heldout_line(dataset, estimator, beam):
    """PCA line of a held-out beam through the fitted C1 extrinsics."""
    caps = [l for l, c in enumerate(dataset.captures) if beam in c.dots]
    tfs = estimator.layout_.transforms(estimator.state_)
    uv = np.array([dataset.captures[l].dots[beam][0] for l in caps])
    X, *_ = _backproject_jac(uv, tfs[2 + np.array(caps)], tfs[0], dataset.scene.K1)
    return fit_line_pca(X, direction=estimator.slide_normal_)
