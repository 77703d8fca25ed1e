"""Beam reconstruction and joint mirror-pose estimation."""

from dataclasses import replace

import numpy as np
import pytest
from sklearn.base import clone

from msmcalib import sim
from msmcalib.beams import BeamReconstruction, fit_line_pca, reconstruct_beams
from msmcalib.exceptions import (
    DegenerateLine,
    DegenerateSpanningAngle,
    InsufficientCaptures,
    InsufficientData,
    Retroreflection,
    SkewLines,
    TooFewPoints,
    ValidationError,
)
from msmcalib.geometry import PlaneH, PluckerLine, line_plane_intersect, reflect_point
from msmcalib.poses import (
    MirrorPoseEstimator,
    baseline_pure_rotation,
    init_mirror_plane,
    pixel_error_to_deg,
    spanning_angle,
)

SCAN = replace(sim.ScanConfig(), n_pulses=12, n_fast_pulses=0, static_pose=False)


def _angle_deg(a, b):
    return np.degrees(np.arccos(np.clip(abs(a @ b), -1, 1)))


@pytest.fixture(scope="module")
def clean():
    return sim.RigSimulator(sim.SceneConfig(), SCAN, seed=2, noise=False).simulate()


@pytest.fixture(scope="module")
def noisy():
    return sim.RigSimulator(sim.SceneConfig(), SCAN, seed=2).simulate()


@pytest.fixture(scope="module")
def noisy_fit(noisy):
    return MirrorPoseEstimator(holdout_beam=1).fit(noisy)


# ---------------------------------------------------------------- beams


def test_fit_line_pca_exact(rng):
    v = np.array([0.2, -0.3, 1.0])
    X = np.array([1.0, 2.0, 3.0]) + np.outer(np.linspace(0, 100, 7), v)
    L, rms = fit_line_pca(X, return_rms=True)
    assert rms < 1e-12
    assert _angle_deg(L.v, v / np.linalg.norm(v)) < 1e-9
    assert L.v @ v > 0
    assert fit_line_pca(X, direction=-v).v @ v < 0


def test_fit_line_pca_rejects():
    with pytest.raises(TooFewPoints):
        fit_line_pca(np.zeros((1, 3)))
    with pytest.raises(TooFewPoints):
        fit_line_pca(np.ones((4, 3)))
    with pytest.raises(DegenerateLine):
        fit_line_pca(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]]))


def test_reconstruct_beams_noise_free(clean):
    rec = reconstruct_beams(clean.captures, clean.scene)
    for b in clean.ground_truth["beams"]:
        L = rec.lines[b["id"]]
        assert _angle_deg(L.v, np.array(b["v"])) < 1e-7
        assert L.v @ np.array(b["v"]) > 0
        assert L.distance(np.cross(b["v"], b["m"])) < 1e-5


def test_reconstruct_beams_noisy(noisy):
    rec = reconstruct_beams(noisy.captures, noisy.scene)
    for b in noisy.ground_truth["beams"]:
        assert _angle_deg(rec.lines[b["id"]].v, np.array(b["v"])) < 0.1
        assert rec.rms[b["id"]] < 0.5


def test_beam_reconstruction_round_trip(noisy):
    rec = reconstruct_beams(noisy.captures, noisy.scene)
    back = BeamReconstruction.from_dict(rec.to_dict())
    for b, L in rec.lines.items():
        np.testing.assert_allclose(back.lines[b].v, L.v)
        np.testing.assert_allclose(back.lines[b].m, L.m)
    np.testing.assert_allclose(back.T_c1w.as_vector(), rec.T_c1w.as_vector())


def test_reconstruct_beams_needs_two_captures(noisy):
    with pytest.raises(InsufficientCaptures):
        reconstruct_beams(noisy.captures[:1], noisy.scene)


# ---------------------------------------------------------------- closed form


def _beam_case(n_beams=2):
    plane = PlaneH([1.0, 0.1, 1.0], 5.0)
    beams = [
        PluckerLine.from_point_direction([300.0, 40.0, -150.0], [-1.0, 0.3, 0.0]),
        PluckerLine.from_point_direction([300.0, -40.0, -150.0], [-1.0, -0.2, 0.05]),
        PluckerLine.from_point_direction([300.0, 0.0, -140.0], [-1.0, 0.0, -0.05]),
    ][:n_beams]
    dots = []
    for L in beams:
        hit = line_plane_intersect(L, plane)
        r = L.v - 2 * (L.v @ plane.n) * plane.n
        dots.append(hit + (-hit[2] / r[2]) * r)
    return plane, beams, np.array(dots)


def test_init_mirror_plane_exact():
    plane, beams, dots = _beam_case()
    est = init_mirror_plane(beams, dots)
    s = np.sign(est.n @ plane.n)
    np.testing.assert_allclose(s * est.n, plane.n, atol=1e-12)
    assert s * est.d == pytest.approx(plane.d, abs=1e-9)
    # virtual dots lie on the incident beams
    for L, X in zip(beams, dots):
        assert L.distance(reflect_point(est, X)) < 1e-9


def test_init_mirror_plane_errors():
    plane, beams, dots = _beam_case()
    with pytest.raises(InsufficientData):
        init_mirror_plane(beams[:1], dots[:1])
    with pytest.raises(Retroreflection):
        init_mirror_plane(beams, np.array([beams[0].point + 50 * beams[0].v, dots[1]]))
    _, beams3, dots3 = _beam_case(3)
    np.testing.assert_allclose(init_mirror_plane(beams3, dots3).n, plane.n, atol=1e-12)
    with pytest.raises(SkewLines):
        init_mirror_plane(beams3, dots3 + np.array([[0, 0, 0], [0, 30.0, 0], [0, 0, 0]]), skew_tol=0.1)
    with pytest.raises(DegenerateSpanningAngle):
        init_mirror_plane([beams[0], beams[0]], np.array([dots[0], dots[0] + beams[0].v * 10]))


def test_spanning_angle():
    assert spanning_angle([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0)
    assert spanning_angle([1, 0, 0], [-1, 1, 0]) == pytest.approx(45.0)
    with pytest.raises(DegenerateSpanningAngle):
        spanning_angle([1, 0, 0], [1, 0.001, 0])


def test_baseline_exact_without_translation():
    plane = PlaneH.through_point([1.0, 0.05, 1.0], [0.0, 0.0, -100.0])
    L = PluckerLine.from_point_direction([100.0, 0.0, -100.0], [-1.0, 0.0, 0.0])
    r = L.v - 2 * (L.v @ plane.n) * plane.n
    X = np.array([0.0, 0.0, -100.0]) + (100.0 / r[2]) * r
    (est,) = baseline_pure_rotation(L, X, [0.0, 0.0, -100.0])
    assert _angle_deg(est.n, plane.n) < 1e-10


def test_pixel_error_to_deg():
    assert pixel_error_to_deg(np.tan(np.radians(2.0)) * 100, 100) == pytest.approx(1.0)


# ---------------------------------------------------------------- estimator


def test_estimator_params():
    est = MirrorPoseEstimator(holdout_beam=2, max_iter=50)
    assert est.get_params()["holdout_beam"] == 2
    assert clone(est).get_params() == est.get_params()


def test_estimator_validation(clean):
    with pytest.raises(ValidationError):
        MirrorPoseEstimator(holdout_beam=7).fit(clean)
    with pytest.raises(ValidationError):
        MirrorPoseEstimator(holdout_beam=0, estimation_beams=[0, 1]).fit(clean)
    with pytest.raises(InsufficientData):
        MirrorPoseEstimator(estimation_beams=[0]).fit(clean)


def test_estimator_noise_free_exact(clean):
    est = MirrorPoseEstimator(estimation_beams=[0, 2]).fit(clean)
    gt = {p["pulse"]: p for p in clean.ground_truth["planes"]}
    for pid, pl in zip(est.pulse_ids_, est.planes_):
        g = gt[int(pid)]
        s = np.sign(pl.n @ np.array(g["n"]))
        assert _angle_deg(pl.n, np.array(g["n"])) < 1e-6
        assert abs(s * pl.d - g["d_mm"]) < 1e-6
    assert est.result_.converged


def test_estimator_noisy(noisy, noisy_fit):
    gt = {p["pulse"]: p for p in noisy.ground_truth["planes"]}
    err = [_angle_deg(pl.n, np.array(gt[int(pid)]["n"])) for pid, pl in zip(noisy_fit.pulse_ids_, noisy_fit.planes_)]
    assert np.max(err) < 0.2
    assert noisy_fit.plane_cov_.shape == (len(noisy_fit.planes_), 3, 3)
    assert np.all(np.linalg.eigvalsh(noisy_fit.plane_cov_) > 0)
    # normals face the beam sources
    for pl in noisy_fit.planes_:
        assert all(pl.n @ L.v < 0 for L in noisy_fit.lines_.values())


def test_heldout_prediction(noisy, noisy_fit):
    h = noisy_fit.predict_heldout(noisy)
    assert len(h["pulse_id"]) == len(noisy_fit.pulse_ids_)
    assert np.all(np.isfinite(h["sigma_px"])) and np.all(h["sigma_px"] > 0)
    assert np.mean(h["delta_px"] < 3 * h["sigma_px"]) >= 0.75
    assert np.all(h["delta_deg"] < 0.3)
    base = noisy_fit.predict_heldout(noisy, planes=noisy_fit.baseline_planes(noisy))
    assert np.all(np.isnan(base["sigma_px"]))
    with pytest.raises(ValidationError):
        noisy_fit.predict_heldout(noisy, beam=0)


def test_spanning_angles(noisy_fit):
    span = noisy_fit.spanning_angles()
    assert span.shape == (len(noisy_fit.planes_),)
    assert 20 < noisy_fit.spanning_angle_stats() < 90


def test_plane_for(noisy_fit):
    assert noisy_fit.plane_for(int(noisy_fit.pulse_ids_[0])) is noisy_fit.planes_[0]
    with pytest.raises(KeyError):
        noisy_fit.plane_for(-5)
