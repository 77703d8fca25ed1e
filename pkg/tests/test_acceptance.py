"""Acceptance criteria, one test each.

Every test prints a ``criterion N: PASS|FAIL`` line (also collected in the
terminal summary) before asserting, so a failing criterion is visible with
its measured value.

 1. noise-free exactness of the joint estimate (1e-6 deg / 1e-6 mm, < 60 s)
 2. analytic Jacobians of f_P, f_L, f_R against central differences
 3. reflection involution and line/plane intersection against an oracle
 4. covariance consistency over a 200-trial Monte Carlo
 5. beam-geometry trend and the pure-rotation baseline
 6. sine versus linear Hall model, with and without a baseline shift
 7. Hall time-offset recovery
 8. home-frame recovery (fast axis and rotation centre)
 9. degeneracy fuzz suite
10. byte-identical artifacts across repeated CLI runs
"""

import filecmp
import json
import time
from dataclasses import replace

import numpy as np
import pytest

from msmcalib import sim
from msmcalib.beams import reconstruct_beams
from msmcalib.camera import Intrinsics
from msmcalib.cli import main
from msmcalib.exceptions import (
    DegenerateSpanningAngle,
    ParallelLinePlane,
    PencilDegenerate,
    Retroreflection,
)
from msmcalib.factors import f_L, f_P, f_R
from msmcalib.frame import HomeFrameEstimator, estimate_origin
from msmcalib.geometry import PlaneH, PluckerLine, line_plane_intersect, reflection_matrix, unit
from msmcalib.hall import HallPoseRegressor, evaluate, foreground
from msmcalib.poses import MirrorPoseEstimator, init_mirror_plane, spanning_angle

from helpers import central_diff, config_fL, config_fP, config_fR, record, rel_err

pytestmark = pytest.mark.acceptance

SCAN_ONLY = replace(sim.ScanConfig(), n_fast_pulses=0, static_pose=False)


def _angle_deg(a, b):
    return np.degrees(np.arccos(np.clip(abs(np.dot(a, b)), -1.0, 1.0)))


# ---------------------------------------------------------------------------


def test_criterion_01_inverse_crime():
    ds = sim.RigSimulator(sim.SceneConfig(), SCAN_ONLY, seed=0, noise=False).simulate()
    t0 = time.perf_counter()
    est = MirrorPoseEstimator(estimation_beams=[0, 2]).fit(ds)
    runtime = time.perf_counter() - t0
    gt = {p["pulse"]: p for p in ds.ground_truth["planes"]}
    ang, off = [], []
    for pid, pl in zip(est.pulse_ids_, est.planes_):
        g = gt[int(pid)]
        s = np.sign(pl.n @ np.array(g["n"]))
        ang.append(_angle_deg(pl.n, g["n"]))
        off.append(abs(s * pl.d - g["d_mm"]))
    ok = len(est.planes_) == 72 and max(ang) < 1e-6 and max(off) < 1e-6 and runtime < 60
    record(
        1, ok,
        f"{len(est.planes_)} pulses, max normal error {max(ang):.2e} deg, "
        f"max offset error {max(off):.2e} mm, runtime {runtime:.1f} s",
    )
    assert ok


def test_criterion_02_jacobians():
    rng = np.random.default_rng(2)
    K1 = Intrinsics(5000.0, 5000.0, 2000.0, 1500.0)
    K2 = Intrinsics(9300.0, 9300.0, 2000.0, 1500.0)
    worst = {"f_P": 0.0, "f_L": 0.0, "f_R": 0.0}
    n = 100
    for _ in range(n):
        T, X = config_fP(rng)
        worst["f_P"] = max(worst["f_P"], rel_err(f_P(T, X, K1)[1][0], central_diff(lambda q: f_P(q, X, K1)[0][0], T)))

        line, Tw, Ts = config_fL(rng)
        _, Jl, Jw, Js, _ = f_L(line, Tw, Ts, K1)
        worst["f_L"] = max(
            worst["f_L"],
            rel_err(Jl[0], central_diff(lambda q: f_L(q, Tw, Ts, K1)[0][0], line)),
            rel_err(Jw[0], central_diff(lambda q: f_L(line, q, Ts, K1)[0][0], Tw)),
            rel_err(Js[0], central_diff(lambda q: f_L(line, Tw, q, K1)[0][0], Ts)),
        )

        plane, line, T2 = config_fR(rng)
        _, Jp, Jl, JT, _ = f_R(plane, line, T2, K2)
        worst["f_R"] = max(
            worst["f_R"],
            rel_err(Jp[0], central_diff(lambda q: f_R(q, line, T2, K2)[0][0], plane)),
            rel_err(Jl[0], central_diff(lambda q: f_R(plane, q, T2, K2)[0][0], line)),
            rel_err(JT[0], central_diff(lambda q: f_R(plane, line, q, K2)[0][0], T2)),
        )
    ok = max(worst.values()) < 1e-5
    record(2, ok, f"{n} configurations each, max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def test_criterion_03_reflection_and_intersection():
    rng = np.random.default_rng(3)
    h_err = 0.0
    for _ in range(1000):
        H = reflection_matrix(PlaneH(rng.normal(size=3), rng.normal(scale=10)))
        h_err = max(h_err, np.abs(H @ H - np.eye(4)).max())
    x_err, n_cases = 0.0, 0
    while n_cases < 1000:
        p = PlaneH(rng.normal(size=3), rng.normal())
        X0, v = rng.normal(size=3), unit(rng.normal(size=3))
        if abs(p.n @ v) < 0.05:
            continue
        # parametric oracle anchored at X0 (not at the line's closest point)
        oracle = X0 - (p.n @ X0 + p.d) / (p.n @ v) * v
        x_err = max(x_err, np.abs(line_plane_intersect(PluckerLine.from_point_direction(X0, v), p) - oracle).max())
        n_cases += 1
    ok = h_err < 1e-10 and x_err < 1e-10
    record(3, ok, f"max |H^2 - I| {h_err:.1e} over 1000 planes, max intersection error {x_err:.1e} over 1000 cases")
    assert ok


def test_criterion_04_covariance_consistency():
    P, C, cover, n_held = [], [], [], 0
    for seed in range(200):
        ds = sim.RigSimulator(sim.SceneConfig(), SCAN_ONLY, seed=1000 + seed).simulate()
        est = MirrorPoseEstimator(holdout_beam=1).fit(ds, reconstruct_beams(ds.captures, ds.scene))
        P.append(est.layout_.planes(est.state_))
        C.append(est.plane_cov_)
        h = est.predict_heldout(ds)
        cover.append(np.sum(h["delta_px"] < 3 * h["sigma_px"]))
        n_held += len(h["delta_px"])
    P, C = np.array(P), np.array(C)
    emp = sum(np.trace(np.cov(P[:, j, :].T)) for j in range(P.shape[1]))
    pred = np.trace(C.mean(axis=0).sum(axis=0))
    ratio = emp / pred
    coverage = sum(cover) / n_held
    ok = 0.67 <= ratio <= 1.5 and coverage >= 0.95
    record(4, ok, f"200 trials at 0.5 px, trace ratio empirical/predicted {ratio:.3f}, delta < 3 sigma in {100 * coverage:.1f}% of pulses")
    assert ok


def test_criterion_05_table1_trend():
    scene = sim.table1_scene()
    rows = {pair: [] for pair in sim.TABLE1_PAIRS}
    for seed in range(16):
        ds = sim.RigSimulator(scene, SCAN_ONLY, seed=2000 + seed).simulate()
        rec = reconstruct_beams(ds.captures, ds.scene)
        for pair in sim.TABLE1_PAIRS:
            est_beams, held = pair
            est = MirrorPoseEstimator(holdout_beam=held, estimation_beams=list(est_beams)).fit(ds, rec)
            h = est.predict_heldout(ds)
            b = est.predict_heldout(ds, planes=est.baseline_planes(ds))
            rows[pair].append([est.spanning_angle_stats(), np.mean(h["delta_deg"]), np.mean(b["delta_deg"])])
    table = sorted((np.mean(r, axis=0) for r in rows.values()), key=lambda r: r[0])
    span, prop, base = np.array(table).T
    trend = bool(prop[0] > prop[1] > prop[2])
    beats = bool(np.all(base > prop))
    ok = trend and beats
    detail = "; ".join(f"theta {s:.1f} deg: proposed {p:.4f}, baseline {b:.4f}" for s, p, b in zip(span, prop, base))
    record(5, ok, f"16 seeds, 1.04 mm translation p-p; {detail}")
    assert ok


def test_criterion_06_table2_trend():
    cfg = sim.ScanConfig()
    t, Y, ha, hb = sim.hall_pose_samples(cfg, 195, seed=0)
    kw = dict(repeats=50, split=0.8, random_state=6)
    lin = evaluate(t, Y, ha, hb, "linear", **kw)
    sine = evaluate(t, Y, ha, hb, "sine", **kw)
    wins = int(np.sum(np.all(sine["test_rmse"] <= lin["test_rmse"], axis=1)))
    # constant offset of 10% of the foreground RMS on every axis
    shift = 0.1 * foreground(ha, hb).samples()[1].std(axis=0)
    lin_s = evaluate(t, Y, ha, hb, "linear", baseline_shift=shift, **kw)
    sine_s = evaluate(t, Y, ha, hb, "sine", baseline_shift=shift, **kw)
    d_lin = lin_s["test_mean"] - lin["test_mean"]
    d_sine = sine_s["test_mean"] - sine["test_mean"]
    ok = wins >= 45 and bool(np.all(d_sine < d_lin))
    record(
        6, ok,
        f"sine <= linear on all components in {wins}/50 repeats; test RMSE linear {np.round(lin['test_mean'], 4).tolist()}, "
        f"sine {np.round(sine['test_mean'], 4).tolist()}; shift degradation linear {np.round(d_lin, 4).tolist()}, "
        f"sine {np.round(d_sine, 4).tolist()}",
    )
    assert ok


def test_criterion_07_time_offset():
    errs = []
    for dt in (-0.0073, 0.0, 0.0037):
        cfg = replace(sim.ScanConfig(), hall_dt_s=dt, hall_snr_db=20.0)
        t, Y, ha, hb = sim.hall_pose_samples(cfg, 195, seed=7)
        reg = HallPoseRegressor(model="sine").fit(t, Y, foreground=foreground(ha, hb))
        errs.append(abs(reg.model_.dt_s - dt))
    ok = max(errs) < 5e-4
    record(7, ok, "SNR 20 dB, |dt error| for -7.3/0/+3.7 ms: " + ", ".join(f"{1e3 * e:.3f} ms" for e in errs))
    assert ok


def test_criterion_08_frame_recovery():
    e_err, o_err = [], []
    for seed in range(8):
        ds = sim.RigSimulator(seed=3000 + seed).simulate()
        est = MirrorPoseEstimator(holdout_beam=1).fit(ds)
        seg = {p.id: p.segment for p in ds.scan.pulses}
        by = {s: [pl for pid, pl in zip(est.pulse_ids_, est.planes_) if seg[int(pid)] == s] for s in ("scan", "fast", "static")}
        hf = HomeFrameEstimator().fit(by["scan"], fast=by["fast"], home=by["static"][0])
        truth = ds.ground_truth["home_frame"]
        e_err.append(_angle_deg(hf.e_F_, truth["e_F"]))
        o_err.append(float(np.linalg.norm(hf.origin_ - np.array(truth["origin_mm"]))))
    ok = max(e_err) < 0.05 and max(o_err) < 0.2
    record(
        8, ok,
        f"8 seeds, fast axis error mean {np.mean(e_err):.4f} max {max(e_err):.4f} deg, "
        f"rotation centre error mean {np.mean(o_err):.3f} max {max(o_err):.3f} mm",
    )
    assert ok


def _fuzz_retroreflection(rng):
    v = unit(rng.normal(size=3))
    p = rng.normal(scale=50, size=3)
    L1 = PluckerLine.from_point_direction(p, v)
    L2 = PluckerLine.from_point_direction(p + rng.normal(scale=20, size=3), unit(rng.normal(size=3)))
    dots = np.array([p + rng.uniform(-200, 200) * v, rng.normal(scale=50, size=3)])
    init_mirror_plane([L1, L2], dots)


def _fuzz_parallel(rng):
    n = unit(rng.normal(size=3))
    v = unit(np.cross(n, rng.normal(size=3))) + rng.uniform(-1e-11, 1e-11) * n
    line_plane_intersect(PluckerLine.from_point_direction(rng.normal(scale=50, size=3), v), PlaneH(n, rng.normal(scale=50)))


def _fuzz_pencil(rng):
    axis = unit(rng.normal(size=3))
    X = rng.normal(scale=100, size=3)
    u = unit(np.cross(axis, rng.normal(size=3)))
    w = np.cross(axis, u)
    th = rng.uniform(0, np.pi, rng.integers(3, 12))
    n = np.outer(np.cos(th), u) + np.outer(np.sin(th), w)
    planes = np.column_stack([n, -n @ X])
    rep = estimate_origin(planes)
    if not (rep.ambiguous_along_axis and np.all(np.isfinite(rep.point))):
        raise AssertionError("pencil not flagged or non-finite point")
    estimate_origin(planes, on_pencil="raise")


def _fuzz_spanning(rng):
    # two light paths in one plane, the second tilted out of it by < 1 deg
    nP = unit(rng.normal(size=3))
    e1 = unit(np.cross(nP, rng.normal(size=3)))
    e2 = np.cross(nP, e1)
    tilt = np.radians(rng.uniform(0.0, 0.9))
    R = np.cos(tilt) * np.eye(3) + np.sin(tilt) * np.array([[0, -e1[2], e1[1]], [e1[2], 0, -e1[0]], [-e1[1], e1[0], 0]]) + (1 - np.cos(tilt)) * np.outer(e1, e1)
    beams, dots = [], []
    for k in range(2):
        p = rng.uniform(-50, 50) * e1 + rng.uniform(-50, 50) * e2
        v = unit(rng.normal() * e1 + rng.normal() * e2)
        off = unit(np.cross(nP, v)) * rng.uniform(5, 50) + v * rng.uniform(-50, 50)
        if k:
            p, v, off = R @ p, R @ v, R @ off
        beams.append(PluckerLine.from_point_direction(p, v))
        dots.append(p + off)
    if rng.random() < 0.5:
        init_mirror_plane(beams, np.array(dots))
    else:
        spanning_angle(nP, R @ nP)


def test_criterion_09_degeneracy_fuzz():
    rng = np.random.default_rng(9)
    suites = {
        "retroreflection": (_fuzz_retroreflection, Retroreflection),
        "parallel line/plane": (_fuzz_parallel, ParallelLinePlane),
        "pencil": (_fuzz_pencil, PencilDegenerate),
        "spanning angle < 1 deg": (_fuzz_spanning, DegenerateSpanningAngle),
    }
    per_suite = 2500
    bad = {}
    with np.errstate(all="raise"):  # a NaN-producing operation fails the case
        for name, (fn, err) in suites.items():
            wrong = 0
            for _ in range(per_suite):
                try:
                    fn(rng)
                except err:
                    continue
                except Exception:  # noqa: BLE001 - anything else is a failure
                    wrong += 1
                else:
                    wrong += 1
            bad[name] = wrong
    total = per_suite * len(suites)
    ok = sum(bad.values()) == 0
    record(9, ok, f"{total} cases, wrong or missing error: " + ", ".join(f"{k} {v}" for k, v in bad.items()))
    assert ok


def test_criterion_10_determinism(tmp_path):
    def pipeline(root):
        data, run = root / "data", root / "run"
        codes = [
            main(["simulate", "--out", str(data), "--seed", "10"]),
            main(["estimate-beams", str(data), "--run", str(run)]),
            main(["estimate-poses", str(data), "--run", str(run), "--holdout-beam", "1"]),
            main(["estimate-frame", str(run / "poses.json")]),
            main(["calibrate-hall", str(data), "--run", str(run), "--seed", "10"]),
            main(["report", str(run), "--data", str(data)]),
        ]
        assert codes == [0] * 6
        return root

    a, b = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    names = []
    for sub in ("data", "run"):
        files = sorted(p.name for p in (a / sub).iterdir())
        assert files == sorted(p.name for p in (b / sub).iterdir())
        names += [f"{sub}/{f}" for f in files]
    differ = [n for n in names if not filecmp.cmp(a / n, b / n, shallow=False)]
    ok = not differ
    record(10, ok, f"{len(names)} artifacts compared byte for byte, differing: {differ or 'none'}")
    assert ok
    json.loads((a / "run" / "poses.json").read_text())
