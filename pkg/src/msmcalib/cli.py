"""Command-line front end.

::

    msmcalib simulate --out DATA [--config cfg.json] [--seed N]
    msmcalib estimate-beams DATA [--run RUN]
    msmcalib estimate-poses DATA [--run RUN] [--holdout-beam M] [--estimation-beams A B]
    msmcalib estimate-frame RUN/poses.json
    msmcalib calibrate-hall DATA [--run RUN] [--model sine] [--repeats 50] [--split 0.8] [--seed N]
    msmcalib report RUN [--data DATA]

Outputs go to the run directory (default: the dataset directory).  Exit
codes: 0 success, 2 invalid or missing input, 3 numerical or geometric
failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import sim
from .beams import BeamReconstruction, reconstruct_beams
from .dataset import (
    FRAME_SCHEMA,
    LINES_SCHEMA,
    POSES_SCHEMA,
    Dataset,
    HallSeries,
    read_json,
    write_json,
)
from .exceptions import CalibrationError, DataError, GeometryError, NumericalError, ValidationError
from .frame import HomeFrameEstimator
from .geometry import PlaneH
from .hall import HallPoseRegressor, evaluate, foreground
from .poses import MirrorPoseEstimator
from .report import write_report

logger = logging.getLogger("msmcalib")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3


def _seed(value):
    if value is not None:
        return int(value)
    env = os.environ.get("MSMCALIB_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"MSMCALIB_SEED must be an integer, got {env!r}") from None


def _stats(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if not len(x):
        return None, None
    return float(x.mean()), float(x.std(ddof=1)) if len(x) > 1 else 0.0


def _overrides(cls, doc, where):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ValidationError(f"{where}: unknown keys {unknown}")
    return {k: tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v for k, v in doc.items()}


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_simulate(args):
    cfg = read_json(args.config) if args.config else {}
    unknown = sorted(set(cfg) - {"scene", "scan", "noise"})
    if unknown:
        raise ValidationError(f"{args.config}: $: unknown keys {unknown}")
    scene = sim.SceneConfig(**_overrides(sim.SceneConfig, cfg.get("scene", {}), "$.scene"))
    scan = sim.ScanConfig(**_overrides(sim.ScanConfig, cfg.get("scan", {}), "$.scan"))
    ds = sim.RigSimulator(scene, scan, _seed(args.seed), bool(cfg.get("noise", True))).simulate()
    ds.save(args.out)
    print(f"wrote dataset to {args.out}: {len(ds.captures)} sliding captures, {len(ds.scan.pulses)} pulses")
    return EXIT_OK


def cmd_estimate_beams(args):
    ds = Dataset.load(args.data, hall=False)
    rec = reconstruct_beams(ds.captures, ds.scene)
    run = args.run or args.data
    os.makedirs(run, exist_ok=True)
    write_json(os.path.join(run, "beam_lines.json"), rec.to_dict())
    for b in sorted(rec.lines):
        print(f"beam {b}: v = {np.round(rec.lines[b].v, 6).tolist()}, rms {rec.rms[b]:.4f} mm")
    return EXIT_OK


def _load_beams(run, data):
    for d in (run, data):
        path = os.path.join(d, "beam_lines.json")
        if os.path.exists(path):
            return BeamReconstruction.from_dict(read_json(path, LINES_SCHEMA))
    return None


def cmd_estimate_poses(args):
    ds = Dataset.load(args.data, hall=False)
    run = args.run or args.data
    os.makedirs(run, exist_ok=True)
    if args.holdout_beam is not None and args.holdout_beam not in ds.scene.beam_ids:
        raise ValidationError(f"--holdout-beam: beam {args.holdout_beam} is not in scene.json beams {ds.scene.beam_ids}")
    beams = BeamReconstruction.from_dict(read_json(args.beams, LINES_SCHEMA)) if args.beams else _load_beams(run, args.data)
    if beams is None:
        beams = reconstruct_beams(ds.captures, ds.scene)
    est = MirrorPoseEstimator(holdout_beam=args.holdout_beam, estimation_beams=args.estimation_beams)
    est.fit(ds, beams)

    seg = {p.id: (p.t_s, p.segment) for p in ds.scan.pulses}
    span = est.spanning_angles()
    held = base = None
    if args.holdout_beam is not None:
        held = est.predict_heldout(ds)
        base = est.predict_heldout(ds, planes=est.baseline_planes(ds))
    hmap = {} if held is None else {int(p): k for k, p in enumerate(held["pulse_id"])}

    pulses = []
    for j, pid in enumerate(est.pulse_ids_):
        pl = est.planes_[j]
        t, s = seg[int(pid)]
        entry = {
            "id": int(pid),
            "t_s": t,
            "segment": s,
            "n": pl.n.tolist(),
            "d_mm": float(pl.d),
            "cov": est.plane_cov_[j].tolist(),
            "spanning_angle_deg": float(span[j]),
        }
        k = hmap.get(int(pid))
        if k is not None:
            entry["heldout"] = {
                "delta_px": float(held["delta_px"][k]),
                "sigma_px": float(held["sigma_px"][k]),
                "delta_deg": float(held["delta_deg"][k]),
                "sigma_deg": float(held["sigma_deg"][k]),
                "baseline_delta_deg": float(base["delta_deg"][k]),
            }
        pulses.append(entry)

    summary = {"spanning_angle_mean_deg": float(np.mean(span))}
    if held is not None:
        summary["heldout_mean_deg"], summary["heldout_sd_deg"] = _stats(held["delta_deg"])
        summary["heldout_rms_deg"] = float(np.sqrt(np.mean(held["delta_deg"] ** 2)))
        summary["baseline_mean_deg"], summary["baseline_sd_deg"] = _stats(base["delta_deg"])
        summary["within_3sigma"] = float(np.mean(held["delta_px"] < 3 * held["sigma_px"]))
    r = est.result_
    doc = {
        "estimation_beams": [int(b) for b in est.estimation_beams_],
        "holdout_beam": args.holdout_beam,
        "solver": {
            "status": r.status,
            "converged": bool(r.converged),
            "iterations": int(r.iterations),
            "cost": float(r.cost),
            "grad_norm": float(r.grad_norm),
            "covariance_truncated": bool(est.covariance_truncated_),
        },
        "beams": [{"id": int(b), "v": L.v.tolist(), "m": L.m.tolist()} for b, L in sorted(est.lines_.items())],
        "T_c1w": est.T_c1w_.as_vector().tolist(),
        "T_c2w": est.T_c2w_.as_vector().tolist(),
        "T_c1s": [T.as_vector().tolist() for T in est.T_c1s_],
        "summary": summary,
        "pulses": pulses,
    }
    write_json(os.path.join(run, "poses.json"), doc)
    msg = f"{len(pulses)} mirror poses, mean spanning angle {summary['spanning_angle_mean_deg']:.2f} deg"
    if held is not None:
        msg += f", held-out error {summary['heldout_mean_deg']:.4f} deg (baseline {summary['baseline_mean_deg']:.4f} deg)"
    print(msg)
    return EXIT_OK


def cmd_estimate_frame(args):
    doc = read_json(args.poses, POSES_SCHEMA)
    by = {"scan": [], "fast": [], "static": []}
    for p in doc["pulses"]:
        by.setdefault(p.get("segment", "scan"), []).append(p)
    if not by["scan"]:
        raise ValidationError(f"{args.poses}: $.pulses: no two-axis scan poses (segment 'scan')")

    def planes(ps):
        return [PlaneH(np.asarray(p["n"], float), float(p["d_mm"])) for p in ps]

    hf = HomeFrameEstimator(on_pencil=args.on_pencil).fit(
        planes(by["scan"]),
        fast=planes(by["fast"]) if by["fast"] else None,
        home=planes(by["static"])[0] if by["static"] else None,
    )
    allp = [p for p in doc["pulses"]]
    Y = hf.transform(planes(allp))
    rep = hf.origin_report_
    out = {
        "R0": hf.R0_.tolist(),
        "e_F": hf.e_F_.tolist(),
        "n0": hf.n0_.tolist(),
        "origin_mm": hf.origin_.tolist(),
        "fast_axis_residual": float(hf.fast_axis_residual_),
        "singular_values": rep.singular_values.tolist(),
        "ambiguous_along_axis": bool(rep.ambiguous_along_axis),
        "translation_range_mm": rep.translation_range,
        "poses": [
            {
                "id": int(p["id"]),
                "t_s": p.get("t_s"),
                "segment": p.get("segment", "scan"),
                "alpha_deg": float(y[0]),
                "beta_deg": float(y[1]),
                "d_mm": float(y[2]),
            }
            for p, y in zip(allp, Y)
        ],
    }
    path = args.out or os.path.join(os.path.dirname(os.path.abspath(args.poses)), "frame.json")
    write_json(path, out)
    print(f"rotation centre {np.round(hf.origin_, 4).tolist()} mm, fast axis {np.round(hf.e_F_, 6).tolist()}")
    return EXIT_OK


def cmd_calibrate_hall(args):
    run = args.run or args.data
    fdoc = read_json(args.frame or os.path.join(run, "frame.json"), FRAME_SCHEMA)
    poses = [p for p in fdoc["poses"] if p.get("t_s") is not None and p.get("segment", "scan") == "scan"]
    if not poses:
        raise ValidationError("frame.json: $.poses: no timestamped scan poses")
    t = np.array([p["t_s"] for p in poses])
    Y = np.array([[p["alpha_deg"], p["beta_deg"], p["d_mm"]] for p in poses])
    ha = HallSeries.from_csv(os.path.join(args.data, "hall_actual.csv"))
    hb = HallSeries.from_csv(os.path.join(args.data, "hall_background.csv"))
    seed = _seed(args.seed)

    ev = {}
    for name in ("linear", "sine"):
        r = evaluate(t, Y, ha, hb, name, repeats=args.repeats, split=args.split, random_state=seed)
        ev[name] = {
            "test_mean": r["test_mean"].tolist(),
            "test_sd": r["test_sd"].tolist(),
            "train_mean": r["train_mean"].tolist(),
            "dt_mean_s": float(np.mean(r["dt_s"])),
        }
        ev[name]["_rmse"] = r["test_rmse"]
    wins = int(np.sum(np.all(ev["sine"]["_rmse"] <= ev["linear"]["_rmse"], axis=1)))
    for name in ev:
        del ev[name]["_rmse"]

    reg = HallPoseRegressor(model=args.model).fit(t, Y, foreground=foreground(ha, hb))
    doc = {
        "model": reg.model_.to_dict(),
        "n_poses": len(t),
        "split": args.split,
        "repeats": args.repeats,
        "seed": seed,
        "evaluation": ev,
        "sine_wins": wins,
    }
    write_json(os.path.join(run, "hallmodel.json"), doc)
    print("model    alpha_deg          beta_deg           d_mm")
    for name in ("linear", "sine"):
        m, s = ev[name]["test_mean"], ev[name]["test_sd"]
        print(f"{name:7s}  " + "  ".join(f"{a:.4f}+-{b:.4f}" for a, b in zip(m, s)))
    print(f"{args.model} model fitted on all {len(t)} poses, time offset {1e3 * reg.model_.dt_s:.3f} ms")
    return EXIT_OK


def cmd_report(args):
    path = write_report(args.run, args.data)
    print(f"wrote {path}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="msmcalib", description="Calibrate a 3-DoF micro scanning mirror.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON with optional 'scene', 'scan' and 'noise' entries")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate-beams", help="reconstruct the incident beams")
    s.add_argument("data")
    s.add_argument("--run")
    s.set_defaults(func=cmd_estimate_beams)

    s = sub.add_parser("estimate-poses", help="estimate the mirror plane of every pulse")
    s.add_argument("data")
    s.add_argument("--run")
    s.add_argument("--beams", help="beam_lines.json (default: from the run or data directory)")
    s.add_argument("--holdout-beam", type=int)
    s.add_argument("--estimation-beams", type=int, nargs="+")
    s.set_defaults(func=cmd_estimate_poses)

    s = sub.add_parser("estimate-frame", help="estimate the home frame and express poses in it")
    s.add_argument("poses")
    s.add_argument("--out")
    s.add_argument("--on-pencil", choices=("flag", "raise"), default="flag")
    s.set_defaults(func=cmd_estimate_frame)

    s = sub.add_parser("calibrate-hall", help="fit and evaluate the Hall-sensor pose model")
    s.add_argument("data")
    s.add_argument("--run")
    s.add_argument("--frame", help="frame.json (default: in the run directory)")
    s.add_argument("--model", choices=("linear", "sine"), default="sine")
    s.add_argument("--repeats", type=int, default=50)
    s.add_argument("--split", type=float, default=0.8)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_calibrate_hall)

    s = sub.add_parser("report", help="write report.md and SVG figures")
    s.add_argument("run")
    s.add_argument("--data")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GeometryError, NumericalError, CalibrationError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
