"""Pinhole camera model and rigid camera/world transforms.

Extrinsics are stored camera->world: ``rotation`` maps camera-frame vectors
into the world frame and ``translation`` is the camera centre in world
coordinates. Camera frame is x right, y down, z forward. All lengths are
meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHONORMAL_TOL = 1e-9


class BehindCamera(ValueError):
    """Raised when a point has non-positive camera-frame depth."""


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CameraCalibration:
    view_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(repr=False)
    translation: np.ndarray = field(repr=False)

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "view_id", str(self.view_id))
        self.validate()

    def validate(self) -> None:
        where = f"view {self.view_id!r}"
        if not (np.all(np.isfinite(self.rotation)) and np.all(np.isfinite(self.translation))):
            raise CalibrationError(f"{where}: non-finite extrinsics")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise CalibrationError(f"{where}: rotation not orthonormal (max |R^T R - I| = {err:.3g})")
        if not (self.fx > 0 and self.fy > 0):
            raise CalibrationError(f"{where}: focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise CalibrationError(f"{where}: image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise CalibrationError(f"{where}: principal point outside the image")

    def __eq__(self, other):
        if not isinstance(other, CameraCalibration):
            return NotImplemented
        return (
            self.view_id == other.view_id
            and (self.fx, self.fy, self.cx, self.cy) == (other.fx, other.fy, other.cx, other.cy)
            and (self.width, self.height) == (other.width, other.height)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map (..., 3) world points into the camera frame."""
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraCalibration":
        """Return this camera after applying the world-frame rigid motion ``x -> Q x + s``."""
        Q = np.asarray(rotation, dtype=float)
        s = np.asarray(translation, dtype=float)
        return CameraCalibration(
            self.view_id, self.fx, self.fy, self.cx, self.cy, self.width, self.height,
            rotation=Q @ self.rotation, translation=Q @ self.translation + s,
        )


def identity_calibration(view_id="cam0", fx=500.0, fy=500.0, cx=320.0, cy=240.0,
                         width=640, height=480) -> CameraCalibration:
    return CameraCalibration(view_id, fx, fy, cx, cy, width, height, np.eye(3), np.zeros(3))


def look_at(view_id, center, target, up=(0.0, 0.0, 1.0), fx=525.0, fy=525.0,
            width=640, height=480, cx=None, cy=None) -> CameraCalibration:
    """Camera at ``center`` whose optical axis points at ``target`` (z-up world)."""
    center = np.asarray(center, dtype=float)
    forward = np.asarray(target, dtype=float) - center
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise CalibrationError("look_at: viewing direction parallel to up vector")
    right /= norm
    down = np.cross(forward, right)
    R = np.column_stack([right, down, forward])
    # re-orthonormalise to kill rounding drift before validation
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return CameraCalibration(
        view_id, fx, fy,
        (width - 1) / 2.0 if cx is None else cx,
        (height - 1) / 2.0 if cy is None else cy,
        width, height, R, center,
    )


def project(calib: CameraCalibration, p_world) -> tuple[np.ndarray, float]:
    """Project one world point; returns ``(pixel, depth)``.

    Raises :class:`BehindCamera` when the camera-frame z is not positive. The
    pixel is not clipped to the image.
    """
    p = np.asarray(p_world, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ValueError("p_world must be a finite 3-vector")
    x, y, z = calib.world_to_camera(p)
    if z <= 0:
        raise BehindCamera(f"point at camera-frame z={z:.4g} is behind view {calib.view_id!r}")
    return np.array([calib.fx * x / z + calib.cx, calib.fy * y / z + calib.cy]), float(z)


def unproject(calib: CameraCalibration, px, depth: float) -> np.ndarray:
    """Lift a pixel with camera-frame depth ``depth`` to a world point."""
    u, v = (float(c) for c in px)
    depth = float(depth)
    if not (np.isfinite(u) and np.isfinite(v) and np.isfinite(depth)):
        raise ValueError("unproject: non-finite input")
    if depth <= 0:
        raise ValueError(f"unproject: depth must be positive, got {depth}")
    p_cam = np.array([(u - calib.cx) * depth / calib.fx, (v - calib.cy) * depth / calib.fy, depth])
    return calib.rotation @ p_cam + calib.translation


def project_points(calib: CameraCalibration, points: np.ndarray):
    """Vectorised projection of (N, 3) world points.

    Returns ``(pixels (N, 2), depths (N,), in_front (N,) bool)``. Pixels of
    points behind the camera are NaN.
    """
    pc = calib.world_to_camera(np.asarray(points, dtype=float).reshape(-1, 3))
    z = pc[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(in_front, calib.fx * pc[:, 0] / z + calib.cx, np.nan)
        v = np.where(in_front, calib.fy * pc[:, 1] / z + calib.cy, np.nan)
    return np.column_stack([u, v]), z, in_front


def unproject_points(calib: CameraCalibration, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """Vectorised unprojection; caller guarantees positive depths."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    d = np.asarray(depths, dtype=float).reshape(-1)
    p_cam = np.column_stack([
        (pixels[:, 0] - calib.cx) * d / calib.fx,
        (pixels[:, 1] - calib.cy) * d / calib.fy,
        d,
    ])
    return calib.camera_to_world(p_cam)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
