"""Synthetic calibration rig with ground truth.

Geometry (all lengths in mm, world frame {W} = world checkerboard frame):

* the world board lies in ``z = 0``; cameras and mirror are on the ``z < 0``
  side,
* the mirror rotates about ``mirror_center``; at zero drive its normal is
  ``home_normal`` and an incident beam along ``v0`` is reflected straight
  onto the board (``+z``),
* every beam is ``v0`` rotated about the home normal by its azimuth, so the
  spanning angle at the home pose equals the azimuth difference,
* sliding boards sit upstream of the mirror across the beams; camera C1 sees
  them and the world board, camera C2 sees the world board.

The mirror pose follows the {0}-frame decomposition of :mod:`msmcalib.frame`
with sinusoidal fast/slow rotations and an out-of-plane translation that is
even in the slow tilt (``-A cos(2 phi_slow)``).  Laser pulses are fired when
both drive signals rise and their difference hits one of a set of levels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np
import scipy.optimize

from .camera import CheckerboardSpec, Intrinsics, centroid_covariance, project
from .dataset import Dataset, Pulse, ScanData, ScanFrame, Scene, SlidingCapture
from .exceptions import DotOffBoard, NoPulses
from .frame import from_home_frame, home_rotation
from .geometry import (
    PlaneH,
    PluckerLine,
    RigidTransform,
    canonical_sign,
    line_plane_intersect,
    reflect_line,
    reflection_matrix,
    so3_exp,
    unit,
)
from .hall import HallSeries

logger = logging.getLogger(__name__)


@dataclass
class SceneConfig:
    """Rig geometry.  Distances are artifact choices (mm)."""

    f1: float = 5000.0
    f2: float = 9300.0
    cx: float = 2000.0
    cy: float = 1500.0
    width: int = 4000
    height: int = 3000
    cell_mm: float = 10.0
    world_rows: int = 31
    world_cols: int = 41
    world_margin_mm: float = 20.0
    slide_rows: int = 11
    slide_cols: int = 15
    slide_half_size_mm: tuple = (130.0, 120.0)
    mirror_center: tuple = (200.0, 150.0, -150.0)
    home_normal: tuple = (1.0, 0.0, 1.0)
    fast_axis_azimuth_deg: float = 10.0
    beam_azimuths_deg: tuple = (-30.0, -5.0, 30.0)
    beam_offsets_mm: tuple | None = None
    source_distance_mm: float = 350.0
    slide_distances_mm: tuple = (40.0, 90.0, 140.0, 190.0, 240.0)
    slide_tilt_deg: float = 6.0
    c1_position: tuple = (640.0, 150.0, -480.0)
    c1_target: tuple = (300.0, 150.0, -130.0)
    c1_up: tuple = (0.05, -1.0, 0.02)
    c2_position: tuple = (190.0, 150.0, -500.0)
    c2_target: tuple | None = (200.0, 150.0, 0.0)
    c2_up: tuple = (1.0, 0.05, 0.02)


@dataclass
class ScanConfig:
    """Drive, pulse, noise and Hall settings."""

    fast_amp_deg: float = 4.37 / 2
    slow_amp_deg: float = 17.17 / 2
    trans_amp_mm: float = 1.04 / 2
    fast_hz: float = 30.0
    slow_hz: float = 5.0
    n_pulses: int = 72
    n_fast_pulses: int = 216
    fast_frames: int = 9
    scan_frames: int = 1
    level_span: float = 0.95
    duration_s: float = 60.0
    static_pose: bool = True
    dot_pixel_sigma: float = 5.0
    dot_pixels: int = 100
    corner_sigma_px: float = 0.5
    hall_rate_hz: float = 1000.0
    hall_mode: str = "matched"
    hall_amplitudes: tuple = (1.0, 1.0, 0.6)
    hall_offsets: tuple = (0.2, -0.1, 2.0)
    hall_snr_db: float = 30.0
    hall_dt_s: float = 0.0037
    background_amplitudes: tuple = (0.3, 0.2, 0.25)
    hall_margin_s: float = 0.5


# --------------------------------------------------------------------------
# Basic geometry of the rig
# --------------------------------------------------------------------------


def look_at(position, target, up=(0.05, -1.0, 0.02)):
    """World-to-camera transform of a camera at ``position`` looking at ``target``.

    The default ``up`` carries a small roll so that no pose sits on the
    rotation-vector branch cut (angle pi).
    """
    position = np.asarray(position, dtype=float)
    z = unit(np.asarray(target, dtype=float) - position)
    x = unit(np.cross(np.asarray(up, dtype=float), z))
    if np.linalg.norm(np.cross(up, z)) < 1e-9:
        x = unit(np.cross([1.0, 0.0, 0.0], z))
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return RigidTransform.from_Rt(R, -R @ position)


def rotation_about(axis, angle):
    return so3_exp(unit(axis) * angle)


def home_frame(scene):
    """Ground-truth ``(R0, origin)`` of the mirror home frame."""
    n0 = unit(scene.home_normal)
    ref = np.array([0.0, 1.0, 0.0])
    ref = unit(ref - (ref @ n0) * n0)
    e_F = canonical_sign(rotation_about(n0, np.radians(scene.fast_axis_azimuth_deg)) @ ref)
    return home_rotation(e_F, n0), np.asarray(scene.mirror_center, dtype=float)


def incident_beams(scene):
    """Incident beams in {W} keyed by beam id (propagation direction)."""
    n0 = unit(scene.home_normal)
    ez = np.array([0.0, 0.0, 1.0])
    v0 = ez - 2.0 * (n0 @ ez) * n0
    center = np.asarray(scene.mirror_center, dtype=float)
    offsets = scene.beam_offsets_mm or [(0.0, 0.0, 0.0)] * len(scene.beam_azimuths_deg)
    beams = {}
    for i, (az, off) in enumerate(zip(scene.beam_azimuths_deg, offsets)):
        v = rotation_about(n0, np.radians(az)) @ v0
        beams[i] = PluckerLine.from_point_direction(center + np.asarray(off, float), v)
    return beams


def c2_pose(scene):
    """World-to-C2 transform; without ``c2_target`` C2 aims at the home-pose dots."""
    target = scene.c2_target
    if target is None:
        R0, origin = home_frame(scene)
        home = PlaneH.through_point(R0[:, 2], origin)
        target = np.mean([trace_dot(L, home)[0] for L in incident_beams(scene).values()], axis=0)
    return look_at(scene.c2_position, target, scene.c2_up)


def table1_scene(**kw):
    """Three-beam fan whose beam pairs span about 18, 28 and 46 degrees.

    The estimation pairs ``(0, 1)``, ``(1, 2)`` and ``(0, 2)`` are validated
    on beams 2, 0 and 1 respectively.
    """
    kw.setdefault("beam_azimuths_deg", (-10.0, 8.3, 36.3))
    kw.setdefault("c2_target", None)
    return SceneConfig(**kw)


TABLE1_PAIRS = (((0, 1), 2), ((1, 2), 0), ((0, 2), 1))


def build_scene(scene):
    """Dataset-side description: intrinsics, boards, beam ids."""
    K1 = Intrinsics(scene.f1, scene.f1, scene.cx, scene.cy, scene.width, scene.height)
    K2 = Intrinsics(scene.f2, scene.f2, scene.cx, scene.cy, scene.width, scene.height)
    return Scene(
        K1,
        K2,
        CheckerboardSpec(scene.world_rows, scene.world_cols, scene.cell_mm),
        CheckerboardSpec(scene.slide_rows, scene.slide_cols, scene.cell_mm),
        list(range(len(scene.beam_azimuths_deg))),
    )


def world_board_bounds(scene):
    m = scene.world_margin_mm
    return (-m, (scene.world_cols - 1) * scene.cell_mm + m), (-m, (scene.world_rows - 1) * scene.cell_mm + m)


# --------------------------------------------------------------------------
# Mirror motion and pulse schedule
# --------------------------------------------------------------------------


def pattern_period(fast_hz, slow_hz):
    """Common period (s) of two rational drive frequencies."""
    a = Fraction(fast_hz).limit_denominator(1000)
    b = Fraction(slow_hz).limit_denominator(1000)
    g = Fraction(math.gcd(a.numerator * b.denominator, b.numerator * a.denominator), a.denominator * b.denominator)
    return float(1 / g)


def drive_poses(cfg, t, segment="scan"):
    """``(alpha_deg, beta_deg, d_mm)`` of the mirror at times ``t``."""
    t = np.asarray(t, dtype=float)
    ph_f = 2 * np.pi * cfg.fast_hz * t
    ph_s = 2 * np.pi * cfg.slow_hz * t
    if segment == "static":
        return np.zeros(t.shape + (3,))
    alpha = cfg.fast_amp_deg * np.sin(ph_f)
    if segment == "fast":
        return np.stack([alpha, np.zeros_like(t), np.zeros_like(t)], axis=-1)
    beta = cfg.slow_amp_deg * np.sin(ph_s)
    d = -cfg.trans_amp_mm * np.cos(2 * ph_s)
    return np.stack([alpha, beta, d], axis=-1)


def mirror_trajectory(scene, cfg, t, segment="scan"):
    """Mirror plane(s) in {W} at time(s) ``t``; a single PlaneH for scalar ``t``."""
    R0, origin = home_frame(scene)
    A = from_home_frame(drive_poses(cfg, np.atleast_1d(t), segment), R0, origin)
    planes = [PlaneH(a[:3], a[3]) for a in A]
    return planes[0] if np.ndim(t) == 0 else planes


def schedule_pulses(fast_hz, slow_hz, levels, slow_active=True, tol=1e-9, polish=True):
    """Pulse times in one drive pattern period centred on ``t = 0``.

    A pulse fires where both drives ``sin(2 pi f t)`` rise and their
    difference equals one of ``levels`` (only the fast drive counts when
    ``slow_active`` is False).  Roots are bracketed on a dense grid and
    polished with Brent's method (``polish=False`` keeps the linear
    interpolation inside the bracket, which is enough to count pulses).

    Returns
    -------
    ndarray
        Sorted times in ``[-T/2, T/2)``.

    Raises
    ------
    NoPulses
        If no level is reachable.
    """
    T = pattern_period(fast_hz, slow_hz) if slow_active else 1.0 / fast_hz
    n = int(np.ceil(T * fast_hz)) * 400
    grid = -T / 2 + T * np.arange(n + 1) / n
    wf, ws = 2 * np.pi * fast_hz, 2 * np.pi * slow_hz

    def diff(t):
        return np.sin(wf * t) - (np.sin(ws * t) if slow_active else 0.0)

    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    H = diff(grid)[None, :] - levels[:, None]
    li, k = np.nonzero((np.sign(H[:, :-1]) * np.sign(H[:, 1:]) < 0) | (H[:, :-1] == 0))
    h0, h1 = H[li, k], H[li, k + 1]
    r = np.where(h0 == 0, grid[k], grid[k] + (grid[k + 1] - grid[k]) * h0 / np.where(h0 == h1, 1.0, h0 - h1))
    if polish:
        for q in np.flatnonzero(h0 != 0):
            c = levels[li[q]]
            r[q] = scipy.optimize.brentq(lambda s: diff(s) - c, grid[k[q]], grid[k[q] + 1], xtol=tol * 1e-3)
    rising = (np.cos(wf * r) > 0) & ((np.cos(ws * r) > 0) if slow_active else True)
    times = r[rising & (r >= -T / 2) & (r < T / 2)]
    if not len(times):
        raise NoPulses("no pulse level is reachable by the drive signals")
    return np.sort(times)


def levels_for_count(fast_hz, slow_hz, count, span=0.95, slow_active=True):
    """Symmetric, evenly spaced levels giving ``count`` pulses (or the closest count).

    The number of levels is searched first; the span is then shrunk in
    small steps until the count matches.
    """
    best = None
    for sp in span * (1.0 - 0.01 * np.arange(20)):
        # each level fires two or three times per pattern period
        for n in range(max(1, count // 3 - 1), 4 * count + 2):
            lv = np.linspace(-sp, sp, n) if n > 1 else np.zeros(1)
            try:
                k = len(schedule_pulses(fast_hz, slow_hz, lv, slow_active, polish=False))
            except NoPulses:
                continue
            if best is None or abs(k - count) < abs(best[1] - count):
                best = (lv, k)
            if k >= count:
                break
        if best[1] == count:
            break
    return best[0]


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


@dataclass
class RenderedDot:
    beam: int
    X: np.ndarray
    uv: np.ndarray
    collinear: bool = False


def trace_dot(beam, plane):
    """Reflected dot of ``beam`` on the world plane; ``collinear`` flags retroreflection."""
    H = reflection_matrix(plane)
    hit = line_plane_intersect(beam, plane)
    out = reflect_line(beam, H)
    collinear = bool(np.linalg.norm(np.cross(out.v, beam.v)) < 1e-9)
    if abs(out.v[2]) < 1e-12:
        raise DotOffBoard("reflected beam is parallel to the world board")
    s = -hit[2] / out.v[2]
    if s <= 0:
        raise DotOffBoard("reflected beam points away from the world board")
    X = line_plane_intersect(out, PlaneH(np.array([0.0, 0.0, 1.0]), 0.0))
    return X, collinear


def render_frame(scene, planes, pulse_ids, K, T_c2w, beams, rng=None, dot_cov=None, corner_sigma=0.0, index=0):
    """One C2 image of the world board and the reflected dots of ``planes``.

    Returns ``(ScanFrame, truth)`` where ``truth`` lists the noise-free dots
    and the dots that missed the board.
    """
    (x0, x1), (y0, y1) = world_board_bounds(scene)
    board = CheckerboardSpec(scene.world_rows, scene.world_cols, scene.cell_mm).points()
    uv = project(T_c2w, K, board)
    vis = K.contains(uv)
    ids = np.flatnonzero(vis)
    cuv = uv[vis] + (rng.normal(0.0, corner_sigma, uv[vis].shape) if rng is not None and corner_sigma > 0 else 0.0)
    ccov = np.broadcast_to(max(corner_sigma, 1e-3) ** 2 * np.eye(2), (len(ids), 2, 2)).copy()

    dcov = np.eye(2) * 0.25 if dot_cov is None else np.asarray(dot_cov)
    db, dp, duv, dc, truth, off = [], [], [], [], [], []
    Ldot = np.linalg.cholesky(dcov)
    for pid, plane in zip(pulse_ids, planes):
        for b, L in beams.items():
            try:
                X, collinear = trace_dot(L, plane)
            except DotOffBoard as exc:
                off.append({"pulse": int(pid), "beam": int(b), "reason": str(exc)})
                continue
            if not (x0 <= X[0] <= x1 and y0 <= X[1] <= y1):
                off.append({"pulse": int(pid), "beam": int(b), "reason": "outside world board"})
                continue
            p = project(T_c2w, K, X)
            if not K.contains(p)[0]:
                off.append({"pulse": int(pid), "beam": int(b), "reason": "outside C2 image"})
                continue
            noisy = p + (Ldot @ rng.standard_normal(2) if rng is not None else 0.0)
            db.append(b)
            dp.append(pid)
            duv.append(noisy)
            dc.append(dcov)
            truth.append({"pulse": int(pid), "beam": int(b), "X": X, "uv": p, "collinear": collinear})
    frame = ScanFrame(
        index,
        ids,
        cuv,
        ccov,
        np.array(db, int),
        np.array(dp, int),
        np.array(duv, float).reshape(-1, 2),
        np.array(dc, float).reshape(-1, 2, 2),
    )
    return frame, {"dots": truth, "off_board": off}


def sliding_poses(scene, rng=None):
    """Sliding-board-to-world transforms, one per configured distance."""
    beams = incident_beams(scene)
    vbar = unit(np.mean([L.v for L in beams.values()], axis=0))
    center = np.asarray(scene.mirror_center, dtype=float)
    grid_c = np.array([(scene.slide_cols - 1) * scene.cell_mm / 2, (scene.slide_rows - 1) * scene.cell_mm / 2, 0.0])
    up = np.array([0.0, 0.0, 1.0]) if abs(vbar[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    out = []
    for k, s in enumerate(scene.slide_distances_mm):
        z = vbar
        x = unit(np.cross(up, z))
        y = np.cross(z, x)
        R = np.column_stack([x, y, z])
        if scene.slide_tilt_deg:
            # deterministic small tilts so that no two boards are parallel
            ang = np.radians(scene.slide_tilt_deg)
            tilt = np.array([np.sin(1.7 * k + 0.3), np.cos(2.3 * k + 0.1), 0.0]) * ang
            R = R @ so3_exp(tilt)
        c = center - s * vbar
        out.append(RigidTransform.from_Rt(R, c - R @ grid_c))
    return out


def render_sliding_captures(scene, K, T_c1w, beams, rng=None, dot_cov=None, corner_sigma=0.0, T_ws=None):
    """C1 images of the world board and each sliding board with the beam dots.

    Returns ``(captures, T_ws list, truth)``.
    """
    T_ws = sliding_poses(scene) if T_ws is None else T_ws
    wpts = CheckerboardSpec(scene.world_rows, scene.world_cols, scene.cell_mm).points()
    spec = CheckerboardSpec(scene.slide_rows, scene.slide_cols, scene.cell_mm)
    spts = spec.points()
    grid_c = spts.mean(axis=0)
    hx, hy = scene.slide_half_size_mm
    dcov = np.eye(2) * 0.25 if dot_cov is None else np.asarray(dot_cov)
    Ldot = np.linalg.cholesky(dcov)
    ccov_1 = max(corner_sigma, 1e-3) ** 2 * np.eye(2)

    def corners(X):
        uv = project(T_c1w, K, X)
        vis = K.contains(uv)
        noise = rng.normal(0.0, corner_sigma, uv[vis].shape) if rng is not None and corner_sigma > 0 else 0.0
        return np.flatnonzero(vis), uv[vis] + noise, np.broadcast_to(ccov_1, (int(vis.sum()), 2, 2)).copy()

    captures, truth = [], []
    for l, T in enumerate(T_ws):
        wi, wuv, wcov = corners(wpts)
        si, suv, scov = corners(T.apply(spts))
        plane = PlaneH.through_point(T.R[:, 2], T.t)
        dots, tl = {}, []
        for b, L in beams.items():
            X = line_plane_intersect(L, plane)
            local = T.R.T @ (X - T.t) - grid_c
            if abs(local[0]) > hx or abs(local[1]) > hy:
                tl.append({"beam": int(b), "off_board": True})
                continue
            p = project(T_c1w, K, X)
            if not K.contains(p)[0]:
                tl.append({"beam": int(b), "off_board": True})
                continue
            noisy = p + (Ldot @ rng.standard_normal(2) if rng is not None else 0.0)
            dots[b] = (noisy, dcov.copy())
            tl.append({"beam": int(b), "X": X.tolist(), "uv": p.tolist()})
        captures.append(SlidingCapture(l, wi, wuv, wcov, si, suv, scov, dots))
        truth.append(tl)
    return captures, T_ws, truth


# --------------------------------------------------------------------------
# Hall sensor
# --------------------------------------------------------------------------


def _dipole_field(poses):
    """Field of a magnet behind the mirror at a fixed sensor, in {0} axes.

    The magnet (moment along the mirror normal) sits 1.5 mm behind the pivot
    and moves with the mirror; the sensor is 3 mm further behind.
    """
    from .frame import normal_from_angles

    n = normal_from_angles(np.radians(poses[:, 0]), np.radians(poses[:, 1]))
    pos = -1.5 * n + poses[:, 2:3] * n
    sensor = np.array([0.0, 0.0, -4.5])
    r = sensor - pos
    rn = np.linalg.norm(r, axis=1, keepdims=True)
    rh = r / rn
    mr = np.sum(n * rh, axis=1, keepdims=True)
    B = (3 * mr * rh - n) / rn**3
    # permute to (tilt-alpha, tilt-beta, translation) dominated axes
    return np.column_stack([B[:, 1], B[:, 0], B[:, 2]]) * 27.0


def hall_foreground(cfg, t, poses_fn):
    """Noise-free foreground field at times ``t`` (true clock)."""
    t = np.asarray(t, dtype=float)
    if cfg.hall_mode == "dipole":
        return _dipole_field(poses_fn(t))
    a = np.asarray(cfg.hall_amplitudes, float)
    P = poses_fn(t)
    scale = np.array([cfg.fast_amp_deg, cfg.slow_amp_deg, cfg.trans_amp_mm])
    scale = np.where(scale > 0, scale, 1.0)
    return a * P / scale + np.asarray(cfg.hall_offsets, float)


def synth_hall(cfg, t0, t1, rng, poses_fn=None):
    """Actual and background Hall series on ``[t0, t1]``.

    Actual readings at clock time ``tau`` measure the field at true time
    ``tau - hall_dt_s``.  The coil background is a sum of sinusoids at the
    drive frequencies, present identically in both recordings.
    """
    if poses_fn is None:
        poses_fn = lambda s: drive_poses(cfg, s)  # noqa: E731
    n = int(np.floor((t1 - t0) * cfg.hall_rate_hz)) + 1
    tau = t0 + np.arange(n) / cfg.hall_rate_hz
    fg = hall_foreground(cfg, tau - cfg.hall_dt_s, poses_fn)
    rms = np.sqrt(np.mean((fg - fg.mean(axis=0)) ** 2, axis=0))
    sigma = rms * 10 ** (-cfg.hall_snr_db / 20)
    ba = np.asarray(cfg.background_amplitudes, float)
    bg = np.column_stack(
        [
            ba[0] * np.sin(2 * np.pi * cfg.fast_hz * tau + 0.4),
            ba[1] * np.sin(2 * np.pi * cfg.slow_hz * tau + 1.1),
            ba[2] * np.sin(2 * np.pi * cfg.fast_hz * tau + 2.0) + 0.5 * ba[2] * np.sin(2 * np.pi * cfg.slow_hz * tau),
        ]
    )
    actual = fg + bg + rng.normal(0.0, 1.0, fg.shape) * sigma
    background = bg + rng.normal(0.0, 1.0, bg.shape) * sigma
    return HallSeries(tau, actual), HallSeries(tau, background), sigma


# --------------------------------------------------------------------------
# Full dataset
# --------------------------------------------------------------------------


@dataclass
class RigSimulator:
    """Seeded generator of complete calibration datasets."""

    scene: SceneConfig = field(default_factory=SceneConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    seed: int | None = 0
    noise: bool = True

    def pulse_schedule(self):
        """Scan-segment pulse times (s), spread over ``duration_s``."""
        cfg = self.scan
        levels = levels_for_count(cfg.fast_hz, cfg.slow_hz, cfg.n_pulses, cfg.level_span)
        tau = schedule_pulses(cfg.fast_hz, cfg.slow_hz, levels)
        T = pattern_period(cfg.fast_hz, cfg.slow_hz)
        n_cycles = max(int(cfg.duration_s / T), len(tau))
        stride = max(n_cycles // len(tau), 1)
        return tau + (1 + stride * np.arange(len(tau))) * T

    def fast_schedule(self):
        cfg = self.scan
        lv = np.linspace(-cfg.level_span, cfg.level_span, cfg.n_fast_pulses)
        return schedule_pulses(cfg.fast_hz, cfg.slow_hz, lv, slow_active=False)

    def simulate(self):
        """Generate a :class:`~msmcalib.dataset.Dataset` with ground truth."""
        rng = np.random.default_rng(self.seed) if self.noise else None
        sc, cfg = self.scene, self.scan
        scene = build_scene(sc)
        T_c1w = look_at(sc.c1_position, sc.c1_target, sc.c1_up)
        T_c2w = c2_pose(sc)
        beams = incident_beams(sc)
        R0, origin = home_frame(sc)

        sig_dot = cfg.dot_pixel_sigma if self.noise else 1e-3
        dot_cov = centroid_covariance(sig_dot**2 * np.eye(2), cfg.dot_pixels)
        csig = cfg.corner_sigma_px if self.noise else 0.0

        captures, T_ws, slide_truth = render_sliding_captures(sc, scene.K1, T_c1w, beams, rng, dot_cov, csig)

        pulses, frames, truth_planes, off_board = [], [], [], []
        segments = [("scan", self.pulse_schedule())]
        if cfg.n_fast_pulses:
            segments.append(("fast", self.fast_schedule()))
        if cfg.static_pose:
            segments.append(("static", np.zeros(1)))
        pid = 0
        home_pulse = None
        for seg, times in segments:
            poses = drive_poses(cfg, times, seg)
            A = from_home_frame(poses, R0, origin)
            planes = [PlaneH(a[:3], a[3]) for a in A]
            ids = list(range(pid, pid + len(times)))
            pid += len(times)
            # neighbouring fast-scan dots are interleaved over several frames
            n_frames = {"fast": cfg.fast_frames, "scan": cfg.scan_frames}.get(seg, 1)
            n_frames = max(int(n_frames), 1)
            for r in range(n_frames):
                sel = slice(r, None, n_frames)
                frame, tr = render_frame(sc, planes[sel], ids[sel], scene.K2, T_c2w, beams, rng, dot_cov, csig, index=len(frames))
                frames.append(frame)
                off_board += tr["off_board"]
            for i, t, pl, ps in zip(ids, times, planes, poses):
                pulses.append(Pulse(i, float(t) if seg == "scan" else None, seg))
                truth_planes.append(
                    {
                        "pulse": i,
                        "segment": seg,
                        "t_s": float(t) if seg == "scan" else None,
                        "n": pl.n.tolist(),
                        "d_mm": pl.d,
                        "alpha_deg": float(ps[0]),
                        "beta_deg": float(ps[1]),
                        "d0_mm": float(ps[2]),
                    }
                )
            if seg == "static":
                home_pulse = ids[0]

        scan_times = np.array([p.t_s for p in pulses if p.segment == "scan"])
        ha = hb = None
        hall_sigma = None
        if len(scan_times):
            hrng = rng if rng is not None else np.random.default_rng(0)
            t0 = max(0.0, scan_times.min() - cfg.hall_margin_s)
            t1 = scan_times.max() + cfg.hall_margin_s
            ha, hb, hall_sigma = synth_hall(cfg if self.noise else replace(cfg, hall_snr_db=300.0), t0, t1, hrng)

        truth = {
            "seed": self.seed,
            "scene_config": _jsonable(asdict(sc)),
            "scan_config": _jsonable(asdict(cfg)),
            "beams": [{"id": b, "v": L.v.tolist(), "m": L.m.tolist()} for b, L in beams.items()],
            "T_c1w": T_c1w.as_vector().tolist(),
            "T_c2w": T_c2w.as_vector().tolist(),
            "T_c1s": [(T_c1w @ T).as_vector().tolist() for T in T_ws],
            "home_frame": {"R0": R0.tolist(), "origin_mm": origin.tolist(), "e_F": R0[:, 0].tolist(), "n0": R0[:, 2].tolist()},
            "planes": truth_planes,
            "off_board": off_board,
            "slide_dots": slide_truth,
            "hall": {
                "mode": cfg.hall_mode,
                "dt_s": cfg.hall_dt_s,
                "f_hz": [cfg.fast_hz, cfg.slow_hz, 2 * cfg.slow_hz],
                "sigma": None if hall_sigma is None else np.asarray(hall_sigma).tolist(),
            },
        }
        ds = Dataset(scene, captures, ScanData(frames, pulses, home_pulse), ha, hb, truth)
        return ds


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[k] = v
    return out


def simulate(seed=0, noise=True, scene=None, scan=None):
    """Shorthand for ``RigSimulator(scene, scan, seed, noise).simulate()``."""
    return RigSimulator(scene or SceneConfig(), scan or ScanConfig(), seed, noise).simulate()


def hall_pose_samples(cfg, n_poses=195, seed=0, pose_sigma=(0.02, 0.02, 0.005)):
    """Pose measurements straight from the trajectory for Hall-model studies.

    Pulse times follow the scan schedule with ``n_poses`` pulses; Gaussian
    noise of ``pose_sigma`` (deg, deg, mm) is added to the true poses.

    Returns ``(t, poses, actual, background)``.
    """
    rng = np.random.default_rng(seed)
    cfg = replace(cfg, n_pulses=n_poses)
    sim = RigSimulator(SceneConfig(), cfg, seed)
    t = sim.pulse_schedule()
    poses = drive_poses(cfg, t) + rng.normal(0.0, 1.0, (len(t), 3)) * np.asarray(pose_sigma)
    ha, hb, _ = synth_hall(cfg, max(0.0, t.min() - cfg.hall_margin_s), t.max() + cfg.hall_margin_s, rng)
    return t, poses, ha, hb
