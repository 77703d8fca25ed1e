"""Markdown report and SVG figures for a calibration run.

Figures are written with a fixed SVG hash salt and without a date so that
identical inputs give byte-identical files.
"""

from __future__ import annotations

import math
import os
from fractions import Fraction
from functools import reduce

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dataset import read_json  # noqa: E402
from .hall import HallModel  # noqa: E402

SVG_META = {"Date": None, "Creator": None}


def _save(fig, path):
    with plt.rc_context({"svg.hashsalt": "msmcalib", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)


def _fmt(x, nd=4):
    return "n/a" if x is None or (isinstance(x, float) and not np.isfinite(x)) else f"{x:.{nd}f}"


def plot_scan_pattern(scan_doc, path):
    """Observed dots of every frame in C2 pixels, coloured by beam."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    dots = [d for f in scan_doc["frames"] for d in f["dots"]]
    beams = sorted({d["beam"] for d in dots})
    seg = {p["id"]: p["segment"] for p in scan_doc["pulses"]}
    for b in beams:
        for s, marker in (("scan", "."), ("fast", "x"), ("static", "*")):
            uv = np.array([[d["u"], d["v"]] for d in dots if d["beam"] == b and seg.get(d["pulse"]) == s])
            if len(uv):
                ax.plot(uv[:, 0], uv[:, 1], marker, ms=3, label=f"beam {b} ({s})")
    ax.invert_yaxis()
    ax.set_aspect("equal")
    ax.set_xlabel("u (px)")
    ax.set_ylabel("v (px)")
    ax.set_title("Reflected laser dots on the world board (C2)")
    ax.legend(fontsize=6, loc="best")
    _save(fig, path)


def common_period(freqs, max_den=100):
    """Shortest period (s) shared by all frequencies, or None."""
    fr = [Fraction(float(f)).limit_denominator(max_den) for f in freqs if f > 0]
    if not fr:
        return None
    num = reduce(math.gcd, [f.numerator * (math.lcm(*[g.denominator for g in fr]) // f.denominator) for f in fr])
    den = math.lcm(*[g.denominator for g in fr])
    return float(den / num) if num else None


def plot_pose_traces(frame_doc, path, hall=None, period=None):
    """alpha, beta and d of the scan pulses over time, with the Hall prediction if given.

    With ``period`` the times are folded onto one drive period.
    """
    poses = [p for p in frame_doc["poses"] if p.get("t_s") is not None]
    fig, axes = plt.subplots(3, 1, figsize=(7, 6), sharex=True)
    if poses:
        t = np.array([p["t_s"] for p in poses])
        Y = np.array([[p["alpha_deg"], p["beta_deg"], p["d_mm"]] for p in poses])
        labels = ("alpha (deg)", "beta (deg)", "d (mm)")
        tt = np.mod(t, period) if period else t
        for k, ax in enumerate(axes):
            ax.plot(tt, Y[:, k], "o", ms=3, label="camera")
            ax.set_ylabel(labels[k])
        if hall is not None:
            model, grid = hall
            Yp = model.predict(grid)
            g = np.mod(grid, period) if period else grid
            order = np.argsort(g)
            for k, ax in enumerate(axes):
                ax.plot(g[order], Yp[order, k], "-", lw=0.8, label=f"Hall ({model.kind})")
        axes[0].legend(fontsize=7)
    axes[-1].set_xlabel("time in drive period (s)" if period else "time (s)")
    _save(fig, path)


def _truth_section(gt, poses_doc, frame_doc, hall_doc):
    lines = ["## Ground-truth deltas", ""]
    planes = {p["pulse"]: p for p in gt["planes"]}
    ang, off = [], []
    for p in poses_doc["pulses"]:
        g = planes.get(p["id"])
        if g is None:
            continue
        n, gn = np.asarray(p["n"]), np.asarray(g["n"])
        s = 1.0 if n @ gn >= 0 else -1.0
        ang.append(np.degrees(np.arccos(np.clip(s * n @ gn, -1, 1))))
        off.append(abs(s * p["d_mm"] - g["d_mm"]))
    if ang:
        lines += [
            "| quantity | mean | max |",
            "|---|---|---|",
            f"| mirror normal error (deg) | {_fmt(np.mean(ang), 5)} | {_fmt(np.max(ang), 5)} |",
            f"| plane offset error (mm) | {_fmt(np.mean(off), 5)} | {_fmt(np.max(off), 5)} |",
        ]
    if frame_doc is not None:
        hf = gt["home_frame"]
        eF = np.asarray(frame_doc["e_F"])
        e_err = np.degrees(np.arccos(np.clip(abs(eF @ np.asarray(hf["e_F"])), -1, 1)))
        o_err = np.linalg.norm(np.asarray(frame_doc["origin_mm"]) - np.asarray(hf["origin_mm"]))
        lines += [f"| fast axis error (deg) | {_fmt(e_err, 5)} | |", f"| rotation centre error (mm) | {_fmt(o_err, 4)} | |"]
    if hall_doc is not None and "dt_s" in gt.get("hall", {}):
        dt = hall_doc["model"]["dt_s"]
        lines.append(f"| Hall time offset error (ms) | {_fmt(1e3 * abs(dt - gt['hall']['dt_s']), 3)} | |")
    return lines + [""]


def write_report(run_dir, data_dir=None):
    """Write ``report.md`` and SVG figures into ``run_dir``.

    Uses whatever of ``poses.json``, ``frame.json`` and ``hallmodel.json``
    exists in ``run_dir``; ``data_dir`` (default ``run_dir``) provides the
    scan and, if present, the ground truth.
    """
    data_dir = run_dir if data_dir is None else data_dir

    def opt(d, name):
        p = os.path.join(d, name)
        return read_json(p) if os.path.exists(p) else None

    poses_doc = read_json(os.path.join(run_dir, "poses.json"))
    frame_doc = opt(run_dir, "frame.json")
    hall_doc = opt(run_dir, "hallmodel.json")
    scan_doc = read_json(os.path.join(data_dir, "scan.json"))
    gt = opt(data_dir, "ground_truth.json")

    out = ["# Mirror calibration report", ""]
    out += ["## Mirror pose estimation", ""]
    s = poses_doc["summary"]
    out += [
        f"Estimation beams: {poses_doc['estimation_beams']}; held-out beam: {poses_doc['holdout_beam']}; "
        f"{len(poses_doc['pulses'])} mirror poses; LM {poses_doc['solver']['status']} after "
        f"{poses_doc['solver']['iterations']} iterations.",
        "",
        "| Avg. spanning angle (deg) | Baseline error (deg) | Proposed error (deg) | within 3 sigma |",
        "|---|---|---|---|",
        f"| {_fmt(s['spanning_angle_mean_deg'], 2)} | {_fmt(s.get('baseline_mean_deg'))} +- {_fmt(s.get('baseline_sd_deg'))} "
        f"| {_fmt(s.get('heldout_mean_deg'))} +- {_fmt(s.get('heldout_sd_deg'))} | {_fmt(s.get('within_3sigma'), 3)} |",
        "",
    ]
    plot_scan_pattern(scan_doc, os.path.join(run_dir, "scan_pattern.svg"))
    out += ["![scan pattern](scan_pattern.svg)", ""]

    if frame_doc is not None:
        out += ["## Home frame", ""]
        out += [
            f"- fast axis e_F: {np.round(frame_doc['e_F'], 6).tolist()}",
            f"- home normal n0: {np.round(frame_doc['n0'], 6).tolist()}",
            f"- rotation centre (mm): {np.round(frame_doc['origin_mm'], 4).tolist()}",
            f"- plane-offset spread at the centre (mm): {_fmt(frame_doc['translation_range_mm'])}",
            f"- centre ambiguous along an axis: {frame_doc['ambiguous_along_axis']}",
            "",
        ]
        hall = period = None
        t = [p["t_s"] for p in frame_doc["poses"] if p.get("t_s") is not None]
        if hall_doc is not None and t and hall_doc["model"]["kind"] == "sine":
            # fold onto one drive period so the periodic motion is visible
            model = HallModel.from_dict(hall_doc["model"])
            period = common_period(model.f_hz)
            if period:
                hall = (model, np.linspace(min(t), min(t) + period, 400))
        plot_pose_traces(frame_doc, os.path.join(run_dir, "pose_traces.svg"), hall, period)
        out += ["![pose traces](pose_traces.svg)", ""]

    if hall_doc is not None:
        out += ["## Hall sensor calibration", ""]
        ev = hall_doc["evaluation"]
        out += [
            f"{hall_doc['n_poses']} poses, split {hall_doc['split']}, {hall_doc['repeats']} repeats, seed {hall_doc['seed']}.",
            "",
            "| Model | alpha RMSE (deg) | beta RMSE (deg) | d RMSE (mm) |",
            "|---|---|---|---|",
        ]
        for name in ("linear", "sine"):
            if name in ev:
                m, sd = ev[name]["test_mean"], ev[name]["test_sd"]
                out.append(f"| {name} | " + " | ".join(f"{_fmt(a)} +- {_fmt(b)}" for a, b in zip(m, sd)) + " |")
        out += ["", f"Selected model: {hall_doc['model']['kind']}, time offset {_fmt(1e3 * hall_doc['model']['dt_s'], 3)} ms.", ""]

    if gt is not None:
        out += _truth_section(gt, poses_doc, frame_doc, hall_doc)

    path = os.path.join(run_dir, "report.md")
    with open(path, "w") as fh:
        fh.write("\n".join(out).rstrip() + "\n")
    return path

