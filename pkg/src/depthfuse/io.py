"""File formats.

Everything structured is JSON. Lengths are meters except depth images,
which are stored as millimeters at the file boundary.

calibration.json::

    {"convention": "camera_to_world",
     "views": [{"view_id": "cam0", "width": 640, "height": 480,
                "fx": ..., "fy": ..., "cx": ..., "cy": ...,
                "R": [9 numbers, row-major], "t": [3 numbers]}]}

With ``"convention": "world_to_camera"`` (or ``invert=True`` when loading)
``R``/``t`` are taken as the world->camera transform and inverted.

Keypoints, one file per frame and view::

    {"frame": 0, "view_id": "cam0",
     "persons": [{"keypoints": {"nose": [u, v, confidence], ...}}]}

Ground truth::

    {"skeleton": "coco13", "joints": [...names...],
     "frames": [{"frame": 0, "persons": [{"person_id": 0,
                                           "joints": {"nose": [x, y, z], ...}}]}]}

Predictions, one file per frame plus ``index.json``::

    {"frame": 0, "persons": [{"person_id": 3, "joints": [
        {"name": "nose", "x": ..., "y": ..., "z": ..., "support": 2}, ...]}]}

Depth images are 16-bit PNGs (millimeters, 0 = invalid) or ``.depth`` raw
files: little-endian header ``b"DPTH", uint32 width, uint32 height,
float32 meters_per_unit`` followed by ``width*height`` float32 values.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .fusion import FusedPose3D
from .geometry import CameraCalibration, CalibrationError
from .sampling import DepthImage
from .skeleton import Keypoint2D, Pose2D, SkeletonDefinition, load_skeleton

log = logging.getLogger(__name__)

KEYPOINT_MARGIN = 50.0


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))


# --- calibration -----------------------------------------------------------

def calibration_to_dict(calib: CameraCalibration) -> dict:
    return {
        "view_id": calib.view_id,
        "width": calib.width, "height": calib.height,
        "fx": calib.fx, "fy": calib.fy, "cx": calib.cx, "cy": calib.cy,
        "R": calib.rotation.reshape(-1).tolist(),
        "t": calib.translation.tolist(),
    }


def calibration_from_dict(entry: dict, invert: bool = False) -> CameraCalibration:
    view = entry.get("view_id", "?")
    try:
        R = np.asarray(entry["R"], dtype=float).reshape(3, 3)
        t = np.asarray(entry["t"], dtype=float).reshape(3)
        if invert:
            R, t = R.T, -R.T @ t
        if entry.get("distortion"):
            log.warning("view %s: distortion coefficients ignored", view)
        return CameraCalibration(
            str(view), float(entry["fx"]), float(entry["fy"]), float(entry["cx"]), float(entry["cy"]),
            int(entry["width"]), int(entry["height"]), R, t,
        )
    except KeyError as exc:
        raise CalibrationError(f"view {view!r}: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CalibrationError):
            raise
        raise CalibrationError(f"view {view!r}: {exc}") from None


def load_calibrations(path, invert: bool = False) -> dict[str, CameraCalibration]:
    doc = read_json(path)
    invert = invert or doc.get("convention", "camera_to_world") == "world_to_camera"
    calibs = {}
    for entry in doc["views"]:
        c = calibration_from_dict(entry, invert)
        if c.view_id in calibs:
            raise CalibrationError(f"view {c.view_id!r}: duplicate entry")
        calibs[c.view_id] = c
    return calibs


def save_calibrations(path, calibs) -> None:
    write_json(path, {"convention": "camera_to_world",
                      "views": [calibration_to_dict(c) for c in calibs]})


# --- skeleton --------------------------------------------------------------

def load_skeleton_file(path) -> SkeletonDefinition:
    return load_skeleton(read_json(path))


def save_skeleton(path, skel: SkeletonDefinition) -> None:
    write_json(path, skel.to_document())


# --- depth -----------------------------------------------------------------

_RAW_HEADER = struct.Struct("<4sIIf")


def save_depth(path, img: DepthImage) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".png":
        mm = np.round(img.values * 1000.0)
        if mm.max(initial=0) > 65535:
            raise ValueError(f"{path}: depth beyond 65.535 m cannot be stored as 16-bit millimeters")
        Image.fromarray(mm.astype(np.uint16)).save(path)
    else:
        with open(path, "wb") as fh:
            fh.write(_RAW_HEADER.pack(b"DPTH", img.width, img.height, 1.0))
            fh.write(img.values.astype("<f4").tobytes())


def load_depth(path, view_id: str) -> DepthImage:
    path = Path(path)
    if path.suffix == ".png":
        arr = np.asarray(Image.open(path))
        if arr.ndim != 2:
            raise ValueError(f"{path}: expected a single-channel depth image")
        return DepthImage(view_id, arr.astype(float) / 1000.0)
    data = path.read_bytes()
    magic, w, h, scale = _RAW_HEADER.unpack_from(data)
    if magic != b"DPTH":
        raise ValueError(f"{path}: bad depth header")
    vals = np.frombuffer(data, dtype="<f4", offset=_RAW_HEADER.size)
    if vals.size != w * h:
        raise ValueError(f"{path}: expected {w * h} values, got {vals.size}")
    return DepthImage(view_id, vals.reshape(h, w).astype(float) * scale)


# --- keypoints -------------------------------------------------------------

def keypoints_to_dict(frame: int, view_id: str, poses: list[Pose2D], skel: SkeletonDefinition) -> dict:
    return {
        "frame": frame,
        "view_id": view_id,
        "persons": [
            {"keypoints": {skel.joints[j]: [kp.pixel[0], kp.pixel[1], kp.confidence]
                           for j, kp in sorted(p.keypoints.items())}}
            for p in poses
        ],
    }


def keypoints_from_dict(doc: dict, skel: SkeletonDefinition, calib: CameraCalibration | None = None,
                        min_confidence: float = 0.0) -> list[Pose2D]:
    view = str(doc["view_id"])
    poses = []
    for person in doc.get("persons", []):
        pose = Pose2D(view)
        for name, vals in person["keypoints"].items():
            u, v, c = (float(x) for x in vals)
            if c < min_confidence:
                continue
            if calib is not None and not (-KEYPOINT_MARGIN <= u < calib.width + KEYPOINT_MARGIN
                                          and -KEYPOINT_MARGIN <= v < calib.height + KEYPOINT_MARGIN):
                log.warning("view %s frame %s: keypoint %s at (%.1f, %.1f) outside image, dropped",
                            view, doc.get("frame"), name, u, v)
                continue
            pose.add(Keypoint2D(skel.index(name), (u, v), c))
        poses.append(pose)
    return poses


# --- poses -----------------------------------------------------------------

def fused_to_dict(frame: int, poses: list[FusedPose3D], skel: SkeletonDefinition) -> dict:
    return {
        "frame": frame,
        "persons": [
            {"person_id": p.person_id,
             "joints": [{"name": skel.joints[j], "x": float(p.positions[j, 0]), "y": float(p.positions[j, 1]),
                         "z": float(p.positions[j, 2]), "support": int(p.support[j])}
                        for j in np.flatnonzero(p.present)]}
            for p in poses
        ],
    }


def fused_from_dict(doc: dict, skel: SkeletonDefinition) -> list[FusedPose3D]:
    out = []
    for person in doc["persons"]:
        pos = np.full((skel.num_joints, 3), np.nan)
        sup = np.zeros(skel.num_joints, dtype=int)
        for jd in person["joints"]:
            j = skel.index(jd["name"])
            pos[j] = (jd["x"], jd["y"], jd["z"])
            sup[j] = int(jd.get("support", 1))
        out.append(FusedPose3D(int(person["person_id"]), pos, sup))
    return out


def ground_truth_to_dict(frames, skel: SkeletonDefinition) -> dict:
    """``frames`` is an iterable of ``(frame_index, [(person_id, (J, 3) array)])``."""
    return {
        "skeleton": skel.name,
        "joints": list(skel.joints),
        "frames": [
            {"frame": int(f),
             "persons": [{"person_id": int(pid),
                          "joints": {skel.joints[j]: [float(x) for x in pos[j]]
                                     for j in range(skel.num_joints) if not np.isnan(pos[j, 0])}}
                         for pid, pos in persons]}
            for f, persons in frames
        ],
    }


def ground_truth_from_dict(doc: dict, skel: SkeletonDefinition) -> dict[int, list[np.ndarray]]:
    joints = doc.get("joints")
    if joints is not None and tuple(joints) != skel.joints:
        raise ValueError(f"ground truth joints {joints} do not match skeleton {skel.name!r}")
    out = {}
    for fr in doc["frames"]:
        persons = []
        for person in fr["persons"]:
            pos = np.full((skel.num_joints, 3), np.nan)
            for name, xyz in person["joints"].items():
                pos[skel.index(name)] = xyz
            persons.append(pos)
        out[int(fr["frame"])] = persons
    return out


def frame_dir(root, frame: int) -> Path:
    return Path(root) / "frames" / f"{frame:06d}"
