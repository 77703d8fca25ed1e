"""Incident laser beam reconstruction from sliding-board captures."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import backproject_to_plane, solve_pnp
from .exceptions import DegenerateLine, InsufficientCaptures, TooFewPoints
from .geometry import PlaneH, PluckerLine, RigidTransform, lightpath_normal

logger = logging.getLogger(__name__)

LINE_RATIO_MAX = 0.5
BOARD_PLANE = PlaneH(np.array([0.0, 0.0, 1.0]), 0.0)

__all__ = ["fit_line_pca", "reconstruct_beams", "lightpath_normal", "BeamReconstruction"]


def fit_line_pca(points, direction=None, return_rms=False):
    """Least-squares 3-D line through ``points`` by principal component analysis.

    Parameters
    ----------
    points : array_like, shape (N, 3)
    direction : array_like, optional
        Orientation hint; the fitted direction is flipped to have a positive
        dot product with it.  Defaults to the first-to-last point direction.
    return_rms : bool
        Also return the RMS orthogonal distance of the points to the line.

    Returns
    -------
    PluckerLine, or (PluckerLine, float)

    Raises
    ------
    TooFewPoints
        Fewer than two distinct points.
    DegenerateLine
        The point cloud is not line-like (second/first singular value > 0.5).
    """
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(X) < 2:
        raise TooFewPoints(f"need at least 2 points, got {len(X)}")
    mean = X.mean(axis=0)
    Y = X - mean
    _, s, Vt = np.linalg.svd(Y, full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        raise TooFewPoints("points are coincident")
    if len(s) > 1 and s[1] / s[0] > LINE_RATIO_MAX:
        raise DegenerateLine(f"points are not line-like (singular value ratio {s[1] / s[0]:.3f})")
    v = Vt[0]
    hint = X[-1] - X[0] if direction is None else np.asarray(direction, dtype=float)
    if v @ hint < 0:
        v = -v
    line = PluckerLine.from_point_direction(mean, v)
    if return_rms:
        return line, float(np.sqrt(np.mean(line.distance(X) ** 2)))
    return line


@dataclass
class BeamReconstruction:
    """Beams in the world frame plus the camera-C1 extrinsics they rest on.

    ``T_c1s`` maps sliding-board frame ``l`` to C1; ``T_c1w`` maps the world
    board frame to C1.  ``points`` holds the dot positions in {W} per beam.
    """

    lines: dict
    T_c1w: RigidTransform
    T_c1s: list
    points: dict = field(default_factory=dict)
    rms: dict = field(default_factory=dict)
    slide_normal: np.ndarray | None = None

    def to_dict(self):
        return {
            "beams": [
                {"id": int(b), "v": L.v.tolist(), "m": L.m.tolist(), "rms_mm": float(self.rms.get(b, 0.0))}
                for b, L in sorted(self.lines.items())
            ],
            "T_c1w": self.T_c1w.as_vector().tolist(),
            "T_c1s": [T.as_vector().tolist() for T in self.T_c1s],
            "slide_normal": None if self.slide_normal is None else np.asarray(self.slide_normal).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        lines = {int(b["id"]): PluckerLine(np.asarray(b["v"], float), np.asarray(b["m"], float)) for b in d["beams"]}
        rms = {int(b["id"]): float(b.get("rms_mm", 0.0)) for b in d["beams"]}
        sn = d.get("slide_normal")
        return cls(
            lines,
            RigidTransform.from_vector(d["T_c1w"]),
            [RigidTransform.from_vector(t) for t in d["T_c1s"]],
            {},
            rms,
            None if sn is None else np.asarray(sn, float),
        )


def dots_in_world(capture, T_c1s, T_c1w, K):
    """World coordinates of the sliding-board dots of one capture, keyed by beam id."""
    out = {}
    T_wc1 = T_c1w.inverse()
    for beam, (uv, _cov) in capture.dots.items():
        Xs = backproject_to_plane(uv, T_c1s, K, BOARD_PLANE)
        out[beam] = T_wc1.apply(T_c1s.apply(Xs))
    return out


def reconstruct_beams(captures, scene, beam_ids=None):
    """Reconstruct the incident beams from sliding-board captures.

    The world board is seen in every capture; its corners from all captures
    are pooled into one PnP problem for the fixed camera C1.  Each sliding
    board pose is solved separately, the dots are lifted onto the board and
    mapped into {W}, and a PCA line is fitted per beam.

    Beam direction follows propagation: the beam enters the sliding board
    from the camera side, i.e. along the board's +z axis.

    Parameters
    ----------
    captures : list of SlidingCapture
    scene : Scene
    beam_ids : iterable of int, optional
        Beams to reconstruct (default: every beam seen in the captures).

    Returns
    -------
    BeamReconstruction
    """
    if len(captures) < 2:
        raise InsufficientCaptures(f"need at least 2 sliding captures, got {len(captures)}")
    K = scene.K1
    wb, sb = scene.world_board.points(), scene.slide_board.points()

    uv = np.concatenate([c.world_uv for c in captures])
    cov = np.concatenate([c.world_cov for c in captures])
    obj = np.concatenate([wb[c.world_ids] for c in captures])
    T_c1w = solve_pnp(uv, obj, K, cov=cov)
    T_wc1 = T_c1w.inverse()

    T_c1s = [solve_pnp(c.slide_uv, sb[c.slide_ids], K, cov=c.slide_cov) for c in captures]
    normals = np.array([T_wc1.R @ T.R[:, 2] for T in T_c1s])
    slide_normal = normals.mean(axis=0)

    if beam_ids is None:
        beam_ids = sorted({b for c in captures for b in c.dots})
    points = {b: [] for b in beam_ids}
    for c, T in zip(captures, T_c1s):
        for b, X in dots_in_world(c, T, T_c1w, K).items():
            if b in points:
                points[b].append(X)

    lines, rms = {}, {}
    for b in beam_ids:
        if len(points[b]) < 2:
            raise InsufficientCaptures(f"beam {b} is seen in {len(points[b])} capture(s), need 2")
        P = np.array(points[b])
        lines[b], rms[b] = fit_line_pca(P, direction=slide_normal, return_rms=True)
        points[b] = P
        logger.debug("beam %s: %d points, rms %.4f mm", b, len(P), rms[b])
    return BeamReconstruction(lines, T_c1w, T_c1s, points, rms, slide_normal)
