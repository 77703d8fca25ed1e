"""Dataset containers and their JSON/CSV serialization.

A dataset directory holds::

    scene.json            intrinsics of C1/C2, board specs, beam ids
    beams.json            sliding-board captures (camera C1)
    scan.json             scan frames and pulse schedule (camera C2)
    hall_actual.csv       t,bx,by,bz
    hall_background.csv   t,bx,by,bz
    ground_truth.json     optional, written by the simulator

Every file is validated against a JSON schema on load; violations raise
:class:`~msmcalib.exceptions.ValidationError` naming the offending path.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .camera import CheckerboardSpec, Intrinsics
from .exceptions import ValidationError
from .hall import HallSeries

SCHEMA_DRAFT = "https://json-schema.org/draft/2020-12/schema"

_num = {"type": "number"}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_mat2 = {"type": "array", "items": _vec2, "minItems": 2, "maxItems": 2}
_camera = {
    "type": "object",
    "required": ["fx", "fy", "cx", "cy"],
    "properties": {
        "fx": {"type": "number", "exclusiveMinimum": 0},
        "fy": {"type": "number", "exclusiveMinimum": 0},
        "cx": _num,
        "cy": _num,
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
    },
}
_board = {
    "type": "object",
    "required": ["rows", "cols", "cell_mm"],
    "properties": {
        "rows": {"type": "integer", "minimum": 2},
        "cols": {"type": "integer", "minimum": 2},
        "cell_mm": {"type": "number", "exclusiveMinimum": 0},
    },
}
_corners = {
    "type": "object",
    "required": ["ids", "uv"],
    "properties": {
        "ids": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "uv": {"type": "array", "items": _vec2},
        "sigma_px": {"type": "number", "exclusiveMinimum": 0},
        "cov": {"type": "array", "items": _mat2},
    },
}
_dot = {
    "type": "object",
    "required": ["beam", "u", "v", "cov"],
    "properties": {"beam": {"type": "integer"}, "u": _num, "v": _num, "cov": _mat2, "pulse": {"type": "integer"}},
}

SCENE_SCHEMA = {
    "$schema": SCHEMA_DRAFT,
    "type": "object",
    "required": ["cameras", "world_board", "slide_board", "beams"],
    "properties": {
        "cameras": {
            "type": "object",
            "required": ["C1", "C2"],
            "properties": {"C1": _camera, "C2": _camera},
        },
        "world_board": _board,
        "slide_board": _board,
        "beams": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "uniqueItems": True},
    },
}

BEAMS_SCHEMA = {
    "$schema": SCHEMA_DRAFT,
    "type": "object",
    "required": ["captures"],
    "properties": {
        "captures": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "world_corners", "slide_corners", "dots"],
                "properties": {
                    "index": {"type": "integer"},
                    "world_corners": _corners,
                    "slide_corners": _corners,
                    "dots": {"type": "array", "items": _dot},
                },
            },
        }
    },
}

SCAN_SCHEMA = {
    "$schema": SCHEMA_DRAFT,
    "type": "object",
    "required": ["pulses", "frames"],
    "properties": {
        "pulses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "t_s", "segment"],
                "properties": {
                    "id": {"type": "integer"},
                    "t_s": {"type": ["number", "null"]},
                    "segment": {"type": "string"},
                },
            },
        },
        "home_pulse": {"type": ["integer", "null"]},
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "corners", "dots"],
                "properties": {
                    "index": {"type": "integer"},
                    "corners": _corners,
                    "dots": {"type": "array", "items": {**_dot, "required": ["beam", "pulse", "u", "v", "cov"]}},
                },
            },
        },
    },
}

_pose_entry = {
    "type": "object",
    "required": ["id", "n", "d_mm"],
    "properties": {"id": {"type": "integer"}, "t_s": {"type": ["number", "null"]}, "n": _vec3, "d_mm": _num},
}

POSES_SCHEMA = {
    "$schema": SCHEMA_DRAFT,
    "type": "object",
    "required": ["pulses"],
    "properties": {"pulses": {"type": "array", "items": _pose_entry, "minItems": 1}},
}

LINES_SCHEMA = {
    "$schema": SCHEMA_DRAFT,
    "type": "object",
    "required": ["beams", "T_c1w", "T_c1s"],
    "properties": {
        "beams": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "object", "required": ["id", "v", "m"], "properties": {"id": {"type": "integer"}, "v": _vec3, "m": _vec3}},
        },
        "T_c1w": {"type": "array", "items": _num, "minItems": 6, "maxItems": 6},
        "T_c1s": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 6, "maxItems": 6}},
    },
}

FRAME_SCHEMA = {
    "$schema": SCHEMA_DRAFT,
    "type": "object",
    "required": ["R0", "origin_mm", "poses"],
    "properties": {
        "R0": {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3},
        "origin_mm": _vec3,
        "poses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "alpha_deg", "beta_deg", "d_mm"],
                "properties": {"id": {"type": "integer"}, "t_s": {"type": ["number", "null"]}, "segment": {"type": "string"}},
            },
        },
    },
}


def _format_path(path):
    out = "$"
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate(doc, schema, name):
    """Validate ``doc`` and raise ValidationError with a JSON path on failure."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ValidationError(f"{name}: {_format_path(e.absolute_path)}: {e.message}")


def read_json(path, schema=None):
    name = os.path.basename(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{name}: file not found ({path})") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{name}: invalid JSON at line {exc.lineno}: {exc.msg} ({path})") from None
    if schema is not None:
        validate(doc, schema, name)
    return doc


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=False, allow_nan=False)
        fh.write("\n")


def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


# --------------------------------------------------------------------------
# Containers
# --------------------------------------------------------------------------


@dataclass
class Scene:
    K1: Intrinsics
    K2: Intrinsics
    world_board: CheckerboardSpec
    slide_board: CheckerboardSpec
    beam_ids: list

    def to_dict(self):
        return {
            "cameras": {"C1": self.K1.to_dict(), "C2": self.K2.to_dict()},
            "world_board": self.world_board.to_dict(),
            "slide_board": self.slide_board.to_dict(),
            "beams": list(self.beam_ids),
        }

    @classmethod
    def from_dict(cls, d):
        cam = d["cameras"]
        board = lambda b: CheckerboardSpec(b["rows"], b["cols"], b["cell_mm"])  # noqa: E731
        return cls(
            Intrinsics(**cam["C1"]),
            Intrinsics(**cam["C2"]),
            board(d["world_board"]),
            board(d["slide_board"]),
            list(d["beams"]),
        )


def _corners_to_dict(ids, uv, cov):
    cov = np.asarray(cov, dtype=float)
    d = {"ids": [int(i) for i in ids], "uv": _tolist(uv)}
    iso = cov[:, 0, 0]
    if len(cov) and np.allclose(cov, iso[0] * np.eye(2), rtol=0, atol=0):
        d["sigma_px"] = float(np.sqrt(iso[0]))
    else:
        d["cov"] = _tolist(cov)
    return d


def _corners_from_dict(d, where, default_sigma=0.5):
    ids = np.asarray(d["ids"], dtype=int)
    uv = np.asarray(d["uv"], dtype=float).reshape(-1, 2)
    if len(ids) != len(uv):
        raise ValidationError(f"{where}.uv: {len(uv)} points for {len(ids)} ids")
    if "cov" in d:
        cov = np.asarray(d["cov"], dtype=float).reshape(-1, 2, 2)
        if len(cov) != len(uv):
            raise ValidationError(f"{where}.cov: {len(cov)} matrices for {len(uv)} points")
    else:
        s = d.get("sigma_px", default_sigma)
        cov = np.broadcast_to(s * s * np.eye(2), (len(uv), 2, 2)).copy()
    return ids, uv, cov


@dataclass
class SlidingCapture:
    """One C1 image of the world board, the sliding board ``l`` and its laser dots.

    ``dots`` maps beam id to ``(uv, cov)``.
    """

    index: int
    world_ids: np.ndarray
    world_uv: np.ndarray
    world_cov: np.ndarray
    slide_ids: np.ndarray
    slide_uv: np.ndarray
    slide_cov: np.ndarray
    dots: dict

    def to_dict(self):
        return {
            "index": int(self.index),
            "world_corners": _corners_to_dict(self.world_ids, self.world_uv, self.world_cov),
            "slide_corners": _corners_to_dict(self.slide_ids, self.slide_uv, self.slide_cov),
            "dots": [
                {"beam": int(b), "u": float(uv[0]), "v": float(uv[1]), "cov": _tolist(cov)}
                for b, (uv, cov) in sorted(self.dots.items())
            ],
        }

    @classmethod
    def from_dict(cls, d, where="capture"):
        w = _corners_from_dict(d["world_corners"], f"{where}.world_corners")
        s = _corners_from_dict(d["slide_corners"], f"{where}.slide_corners")
        dots = {}
        for k, dot in enumerate(d["dots"]):
            if dot["beam"] in dots:
                raise ValidationError(f"{where}.dots[{k}].beam: beam {dot['beam']} appears twice")
            dots[dot["beam"]] = (np.array([dot["u"], dot["v"]], float), np.asarray(dot["cov"], float))
        return cls(d["index"], *w, *s, dots)


@dataclass
class ScanFrame:
    """One C2 image: world-board corners and reflected dots tagged (beam, pulse)."""

    index: int
    corner_ids: np.ndarray
    corner_uv: np.ndarray
    corner_cov: np.ndarray
    dot_beam: np.ndarray
    dot_pulse: np.ndarray
    dot_uv: np.ndarray
    dot_cov: np.ndarray

    def to_dict(self):
        return {
            "index": int(self.index),
            "corners": _corners_to_dict(self.corner_ids, self.corner_uv, self.corner_cov),
            "dots": [
                {"beam": int(b), "pulse": int(p), "u": float(uv[0]), "v": float(uv[1]), "cov": _tolist(c)}
                for b, p, uv, c in zip(self.dot_beam, self.dot_pulse, self.dot_uv, self.dot_cov)
            ],
        }

    @classmethod
    def from_dict(cls, d, where="frame"):
        ids, uv, cov = _corners_from_dict(d["corners"], f"{where}.corners")
        dots = d["dots"]
        return cls(
            d["index"],
            ids,
            uv,
            cov,
            np.array([x["beam"] for x in dots], dtype=int),
            np.array([x["pulse"] for x in dots], dtype=int),
            np.array([[x["u"], x["v"]] for x in dots], dtype=float).reshape(-1, 2),
            np.array([x["cov"] for x in dots], dtype=float).reshape(-1, 2, 2),
        )


@dataclass
class Pulse:
    id: int
    t_s: float | None
    segment: str = "scan"


@dataclass
class ScanData:
    frames: list
    pulses: list
    home_pulse: int | None = None

    def pulse_map(self):
        return {p.id: p for p in self.pulses}

    def dots(self):
        """All reflected dots stacked: beam, pulse, uv, cov."""
        if not self.frames:
            return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2)), np.zeros((0, 2, 2))
        return (
            np.concatenate([f.dot_beam for f in self.frames]),
            np.concatenate([f.dot_pulse for f in self.frames]),
            np.concatenate([f.dot_uv for f in self.frames]),
            np.concatenate([f.dot_cov for f in self.frames]),
        )

    def to_dict(self):
        return {
            "pulses": [{"id": int(p.id), "t_s": p.t_s, "segment": p.segment} for p in self.pulses],
            "home_pulse": self.home_pulse,
            "frames": [f.to_dict() for f in self.frames],
        }

    @classmethod
    def from_dict(cls, d):
        pulses = [Pulse(p["id"], p["t_s"], p["segment"]) for p in d["pulses"]]
        frames = [ScanFrame.from_dict(f, f"$.frames[{k}]") for k, f in enumerate(d["frames"])]
        return cls(frames, pulses, d.get("home_pulse"))


@dataclass
class Dataset:
    scene: Scene
    captures: list
    scan: ScanData
    hall_actual: HallSeries | None = None
    hall_background: HallSeries | None = None
    ground_truth: dict | None = field(default=None, repr=False)

    def check_references(self):
        """Cross-file consistency: beam and pulse ids must resolve."""
        beams = set(self.scene.beam_ids)
        for k, c in enumerate(self.captures):
            for b in c.dots:
                if b not in beams:
                    raise ValidationError(f"beams.json: $.captures[{k}].dots: unknown beam id {b}")
            for name, ids, board in (
                ("world_corners", c.world_ids, self.scene.world_board),
                ("slide_corners", c.slide_ids, self.scene.slide_board),
            ):
                if len(ids) and ids.max() >= board.n_corners:
                    raise ValidationError(f"beams.json: $.captures[{k}].{name}.ids: id {ids.max()} out of range")
        pulse_ids = [p.id for p in self.scan.pulses]
        if len(set(pulse_ids)) != len(pulse_ids):
            raise ValidationError("scan.json: $.pulses: duplicate pulse ids")
        pids = set(pulse_ids)
        if self.scan.home_pulse is not None and self.scan.home_pulse not in pids:
            raise ValidationError(f"scan.json: $.home_pulse: unknown pulse id {self.scan.home_pulse}")
        seen = set()
        for k, f in enumerate(self.scan.frames):
            if len(f.corner_ids) and f.corner_ids.max() >= self.scene.world_board.n_corners:
                raise ValidationError(f"scan.json: $.frames[{k}].corners.ids: id out of range")
            for q, (b, p) in enumerate(zip(f.dot_beam, f.dot_pulse)):
                if b not in beams:
                    raise ValidationError(f"scan.json: $.frames[{k}].dots[{q}].beam: unknown beam id {b}")
                if p not in pids:
                    raise ValidationError(f"scan.json: $.frames[{k}].dots[{q}].pulse: unknown pulse id {p}")
                if (b, p) in seen:
                    raise ValidationError(f"scan.json: $.frames[{k}].dots[{q}]: duplicate (beam, pulse) = ({b}, {p})")
                seen.add((b, p))

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        write_json(os.path.join(directory, "scene.json"), self.scene.to_dict())
        write_json(os.path.join(directory, "beams.json"), {"captures": [c.to_dict() for c in self.captures]})
        write_json(os.path.join(directory, "scan.json"), self.scan.to_dict())
        if self.hall_actual is not None:
            self.hall_actual.to_csv(os.path.join(directory, "hall_actual.csv"))
        if self.hall_background is not None:
            self.hall_background.to_csv(os.path.join(directory, "hall_background.csv"))
        if self.ground_truth is not None:
            write_json(os.path.join(directory, "ground_truth.json"), self.ground_truth)

    @classmethod
    def load(cls, directory, hall=True):
        j = lambda name: os.path.join(directory, name)  # noqa: E731
        scene = Scene.from_dict(read_json(j("scene.json"), SCENE_SCHEMA))
        beams_doc = read_json(j("beams.json"), BEAMS_SCHEMA)
        captures = [
            SlidingCapture.from_dict(c, f"beams.json: $.captures[{k}]") for k, c in enumerate(beams_doc["captures"])
        ]
        scan = ScanData.from_dict(read_json(j("scan.json"), SCAN_SCHEMA))
        ha = hb = None
        if hall and os.path.exists(j("hall_actual.csv")):
            ha = HallSeries.from_csv(j("hall_actual.csv"))
            hb = HallSeries.from_csv(j("hall_background.csv"))
        gt = read_json(j("ground_truth.json")) if os.path.exists(j("ground_truth.json")) else None
        ds = cls(scene, captures, scan, ha, hb, gt)
        ds.check_references()
        return ds
