"""Depth extraction at 2D keypoints and lifting to world-frame proposals."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import CameraCalibration, unproject_points
from .skeleton import Pose2D, SkeletonDefinition


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Depth in meters, row-major ``(height, width)``; 0 marks an invalid pixel."""

    view_id: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"depth image for view {self.view_id!r} must be 2-D, got shape {v.shape}")
        v = np.where(np.isfinite(v), v, 0.0)
        if (v < 0).any():
            raise ValueError(f"depth image for view {self.view_id!r} has negative values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "view_id", str(self.view_id))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def empty(cls, view_id, width, height) -> "DepthImage":
        return cls(view_id, np.zeros((height, width)))

    def check_matches(self, calib: CameraCalibration) -> None:
        if (self.width, self.height) != (calib.width, calib.height):
            raise ValueError(
                f"depth image {self.width}x{self.height} does not match calibration "
                f"{calib.width}x{calib.height} for view {calib.view_id!r}"
            )


@dataclass(frozen=True)
class CrossParams:
    """Cross-shaped sampling window: two odd-sized rectangles sharing a centre."""

    arm_length: int = 11
    thickness: int = 3
    min_valid: int = 5

    def __post_init__(self):
        if self.thickness < 1 or self.arm_length < self.thickness:
            raise ValueError("need arm_length >= thickness >= 1")
        if self.arm_length % 2 == 0 or self.thickness % 2 == 0:
            raise ValueError("arm_length and thickness must be odd")
        if self.min_valid < 1:
            raise ValueError("min_valid must be >= 1")

    @property
    def offsets(self) -> np.ndarray:
        return _cross_offsets(self.arm_length, self.thickness)


@lru_cache(maxsize=None)
def _cross_offsets(arm_length: int, thickness: int) -> np.ndarray:
    a, h = arm_length // 2, thickness // 2
    cells = {(dy, dx) for dy in range(-h, h + 1) for dx in range(-a, a + 1)}
    cells |= {(dy, dx) for dy in range(-a, a + 1) for dx in range(-h, h + 1)}
    out = np.array(sorted(cells), dtype=np.intp)
    out.setflags(write=False)
    return out


def round_pixel(px) -> np.ndarray:
    """Nearest integer pixel, halves rounded up."""
    return np.floor(np.asarray(px, dtype=float) + 0.5)


def sample_depths(img: DepthImage, pixels: np.ndarray, params: CrossParams = CrossParams()) -> np.ndarray:
    """Cross-median depth at each of (K, 2) pixel positions; NaN where no depth."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    out = np.full(len(pixels), np.nan)
    ok = np.all(np.isfinite(pixels), axis=1)
    if not ok.any():
        return out
    centers = round_pixel(pixels[ok]).astype(np.intp)
    offs = params.offsets
    cols = centers[:, None, 0] + offs[None, :, 1]
    rows = centers[:, None, 1] + offs[None, :, 0]
    h, w = img.values.shape
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    vals = img.values[np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1)]
    valid = inside & (vals > 0)
    vals = np.sort(np.where(valid, vals, np.inf), axis=1)
    n = valid.sum(axis=1)
    good = n >= params.min_valid
    r = np.arange(len(n))
    lo = np.maximum(n - 1, 0) // 2
    hi = n // 2
    with np.errstate(invalid="ignore"):
        med = (vals[r, lo] + vals[r, np.minimum(hi, vals.shape[1] - 1)]) / 2.0
    out[np.flatnonzero(ok)] = np.where(good, med, np.nan)
    return out


def sample_depth(img: DepthImage, px, params: CrossParams = CrossParams()) -> float | None:
    """Median of the valid pixels in the cross around ``px``; ``None`` if too few."""
    d = sample_depths(img, np.asarray(px, dtype=float).reshape(1, 2), params)[0]
    return None if np.isnan(d) else float(d)


@dataclass(eq=False)
class PoseProposal3D:
    """One person lifted from one view. Absent joints are NaN rows."""

    source_view: str
    positions: np.ndarray
    confidence: np.ndarray
    person_index: int = 0

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.positions[:, 0])

    @property
    def num_present(self) -> int:
        return int(self.present.sum())

    def joint(self, j: int):
        p = self.positions[j]
        return None if np.isnan(p[0]) else p

    @classmethod
    def empty(cls, source_view, num_joints, person_index=0) -> "PoseProposal3D":
        return cls(str(source_view), np.full((num_joints, 3), np.nan), np.full(num_joints, np.nan), person_index)


def lift_poses(poses: list[Pose2D], img: DepthImage, calib: CameraCalibration,
               skel: SkeletonDefinition, params: CrossParams = CrossParams(),
               apply_offsets: bool = True) -> list[PoseProposal3D]:
    """Lift every detected person of one view in a single batched depth lookup."""
    if img.view_id != calib.view_id:
        raise ValueError(f"depth image view {img.view_id!r} != calibration view {calib.view_id!r}")
    J = skel.num_joints
    owners, joints, pixels, confs = [], [], [], []
    for k, pose in enumerate(poses):
        if pose.view_id != calib.view_id:
            raise ValueError(f"pose view {pose.view_id!r} != calibration view {calib.view_id!r}")
        idx, px, cf = pose.arrays()
        if len(idx) and (idx.min() < 0 or idx.max() >= J):
            raise ValueError(f"pose in view {pose.view_id!r} references joints outside skeleton {skel.name!r}")
        owners.append(np.full(len(idx), k))
        joints.append(idx)
        pixels.append(px)
        confs.append(cf)
    proposals = [PoseProposal3D.empty(calib.view_id, J, k) for k in range(len(poses))]
    if not poses:
        return proposals
    owners = np.concatenate(owners)
    joints = np.concatenate(joints)
    pixels = np.concatenate(pixels)
    confs = np.concatenate(confs)
    if not len(joints):
        return proposals
    depth = sample_depths(img, pixels, params)
    hit = ~np.isnan(depth)
    if apply_offsets:
        depth = depth + skel.offsets_array[joints]
    world = unproject_points(calib, pixels[hit], depth[hit])
    for k, j, p, c in zip(owners[hit], joints[hit], world, confs[hit]):
        proposals[k].positions[j] = p
        proposals[k].confidence[j] = c
    return proposals


def lift_pose(pose: Pose2D, img: DepthImage, calib: CameraCalibration, skel: SkeletonDefinition,
              params: CrossParams = CrossParams(), apply_offsets: bool = True) -> PoseProposal3D:
    return lift_poses([pose], img, calib, skel, params, apply_offsets)[0]
