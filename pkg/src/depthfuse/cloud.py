"""Point-cloud and voxel-map depth paths (pc2dimg / pc2vmap).

All views' depth is merged into one world-frame cloud; per-view depth images
are then regenerated either by z-buffered point splatting or from a voxel
occupancy map, and the ordinary lifting pipeline runs on those images.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraCalibration, project_points, unproject_points
from .sampling import DepthImage


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite points")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class VoxelMap:
    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray = field(repr=False)
    """(N, 3) unique integer indices, lexicographically sorted."""

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("voxel resolution must be > 0")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "occupancy", np.asarray(self.occupancy, dtype=np.int64).reshape(-1, 3))

    def __len__(self):
        return len(self.occupancy)

    def centers(self) -> np.ndarray:
        return self.origin + (self.occupancy + 0.5) * self.resolution


def depth_to_cloud(img: DepthImage, calib: CameraCalibration, stride: int = 2) -> PointCloud:
    """Unproject every ``stride``-th valid pixel (both axes) into the world frame."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    img.check_matches(calib)
    sub = img.values[::stride, ::stride]
    rows, cols = np.nonzero(sub > 0)
    d = sub[rows, cols]
    pixels = np.column_stack([cols * stride, rows * stride]).astype(float)
    return PointCloud(unproject_points(calib, pixels, d))


def merge_clouds(clouds) -> PointCloud:
    clouds = list(clouds)
    if not clouds:
        return PointCloud(np.zeros((0, 3)))
    return PointCloud(np.concatenate([c.points for c in clouds], axis=0))


def _splat(shape, cols, rows, depth, radii) -> np.ndarray:
    """Z-buffer square splats of Chebyshev radius ``radii`` (per point)."""
    h, w = shape
    buf = np.full(h * w, np.inf)
    for r in np.unique(radii):
        sel = radii == r
        c0, r0, d0 = cols[sel], rows[sel], depth[sel]
        for dy in range(-r, r + 1):
            rr = r0 + dy
            for dx in range(-r, r + 1):
                cc = c0 + dx
                ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
                np.minimum.at(buf, rr[ok] * w + cc[ok], d0[ok])
    buf[np.isinf(buf)] = 0.0
    return buf.reshape(h, w)


def cloud_to_depth(cloud: PointCloud, calib: CameraCalibration, splat_radius: int = 1) -> DepthImage:
    """Render a cloud into one view with square z-buffered splats."""
    if splat_radius < 0:
        raise ValueError("splat_radius must be >= 0")
    shape = (calib.height, calib.width)
    if len(cloud) == 0:
        return DepthImage(calib.view_id, np.zeros(shape))
    px, z, front = project_points(calib, cloud.points)
    cols = np.floor(px[front, 0] + 0.5).astype(np.int64)
    rows = np.floor(px[front, 1] + 0.5).astype(np.int64)
    radii = np.full(len(cols), int(splat_radius))
    return DepthImage(calib.view_id, _splat(shape, cols, rows, z[front], radii))


def cloud_to_voxelmap(cloud: PointCloud, resolution: float = 0.05) -> VoxelMap:
    if not resolution > 0:
        raise ValueError("voxel resolution must be > 0")
    if len(cloud) == 0:
        return VoxelMap(np.zeros(3), resolution, np.zeros((0, 3), dtype=np.int64))
    origin = np.floor(cloud.points.min(axis=0) / resolution) * resolution
    idx = np.floor((cloud.points - origin) / resolution).astype(np.int64)
    return VoxelMap(origin, resolution, np.unique(idx, axis=0))


def voxelmap_to_depth(vmap: VoxelMap, calib: CameraCalibration) -> DepthImage:
    """Splat voxel centres with footprints of their projected size (at least one pixel)."""
    shape = (calib.height, calib.width)
    if len(vmap) == 0:
        return DepthImage(calib.view_id, np.zeros(shape))
    px, z, front = project_points(calib, vmap.centers())
    px, z = px[front], z[front]
    size = np.maximum(vmap.resolution * calib.fx / z, 1.0)
    radii = np.floor(size / 2.0).astype(np.int64)
    cols = np.floor(px[:, 0] + 0.5).astype(np.int64)
    rows = np.floor(px[:, 1] + 0.5).astype(np.int64)
    # keep splats whose footprint can touch the image
    ok = (cols + radii >= 0) & (cols - radii < calib.width) & (rows + radii >= 0) & (rows - radii < calib.height)
    return DepthImage(calib.view_id, _splat(shape, cols[ok], rows[ok], z[ok], radii[ok]))


_CLOUD_MAGIC = b"XYZ1"


def write_cloud(path, cloud: PointCloud) -> None:
    """Little-endian ``magic, uint64 count, count * 3 float64`` (meters, world frame)."""
    with open(path, "wb") as fh:
        fh.write(_CLOUD_MAGIC)
        fh.write(struct.pack("<Q", len(cloud)))
        fh.write(cloud.points.astype("<f8").tobytes())


def read_cloud(path) -> PointCloud:
    data = Path(path).read_bytes()
    if data[:4] != _CLOUD_MAGIC:
        raise ValueError(f"{path}: not a point cloud dump")
    (n,) = struct.unpack("<Q", data[4:12])
    body = data[12:]
    if len(body) != n * 24:
        raise ValueError(f"{path}: expected {n} points, file holds {len(body) // 24}")
    return PointCloud(np.frombuffer(body, dtype="<f8").reshape(n, 3).copy())
