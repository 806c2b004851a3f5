"""Per-frame pipeline: depth source -> lifting -> tracking/fusion, plus dataset I/O."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .cloud import cloud_to_depth, cloud_to_voxelmap, depth_to_cloud, merge_clouds, voxelmap_to_depth
from .fusion import FusedPose3D, FusionConfig, Tracker, TrackerState
from .geometry import CameraCalibration
from .metrics import EvalFrame, MetricReport, compute
from .sampling import CrossParams, DepthImage, PoseProposal3D, lift_poses
from .skeleton import Pose2D, SkeletonDefinition, builtin_coco13

log = logging.getLogger(__name__)

DEPTH_SOURCES = ("direct", "pc2dimg", "pc2vmap")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    skeleton: str | None = None
    cross: CrossParams = field(default_factory=CrossParams)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    apply_offsets: bool = True
    depth_source: str = "direct"
    voxel_resolution: float = 0.05
    cloud_stride: int = 2
    splat_radius: int = 1
    cameras: list[str] | None = None
    min_confidence: float = 0.0
    pairing_window: float = 0.05
    workers: int = 1
    input_dir: str | None = None
    output_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.cross, dict):
            self.cross = CrossParams(**self.cross)
        if isinstance(self.fusion, dict):
            self.fusion = FusionConfig(**self.fusion)
        self.validate()

    def validate(self):
        if self.depth_source not in DEPTH_SOURCES:
            raise ConfigError(f"depth_source must be one of {DEPTH_SOURCES}, got {self.depth_source!r}")
        if self.depth_source == "pc2vmap" and not self.voxel_resolution > 0:
            raise ConfigError("pc2vmap needs voxel_resolution > 0")
        if self.depth_source in ("pc2dimg", "pc2vmap") and self.cloud_stride < 1:
            raise ConfigError("cloud_stride must be >= 1")
        if self.splat_radius < 0:
            raise ConfigError("splat_radius must be >= 0")
        if self.cameras is not None:
            self.cameras = [str(c) for c in self.cameras]
            if not self.cameras:
                raise ConfigError("camera subset must not be empty")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def skeleton_definition(self) -> SkeletonDefinition:
        return io.load_skeleton_file(self.skeleton) if self.skeleton else builtin_coco13()


def load_config(path) -> PipelineConfig:
    return PipelineConfig.from_dict(io.read_json(path))


def save_config(path, cfg: PipelineConfig) -> None:
    io.write_json(path, cfg.to_dict())


@dataclass
class FrameBundle:
    frame_index: int
    views: dict[str, tuple[DepthImage, list[Pose2D]]]
    timestamps: dict[str, float] | None = None


def pair_by_timestamp(reference: list[float], candidates: list[float], window: float = 0.05) -> list[int | None]:
    """Index of the nearest candidate within ``window`` seconds for each reference time."""
    cand = np.asarray(candidates, dtype=float)
    out = []
    for t in reference:
        if not len(cand):
            out.append(None)
            continue
        k = int(np.argmin(np.abs(cand - t)))
        out.append(k if abs(cand[k] - t) <= window else None)
    return out


class Pipeline:
    """Owns the tracker and runs one frame at a time."""

    def __init__(self, cfg: PipelineConfig, calibrations: dict[str, CameraCalibration],
                 skel: SkeletonDefinition | None = None, state: TrackerState | None = None):
        self.cfg = cfg
        self.skel = skel or cfg.skeleton_definition()
        views = cfg.cameras if cfg.cameras is not None else sorted(calibrations)
        missing = [v for v in views if v not in calibrations]
        if missing:
            raise ConfigError(f"no calibration for views {missing}")
        self.views = list(views)
        self.calibrations = {v: calibrations[v] for v in self.views}
        self.tracker = Tracker(self.skel, cfg.fusion, state)
        self._pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def depth_images(self, bundle: FrameBundle) -> dict[str, DepthImage]:
        """Depth per used view, regenerated through the cloud when configured."""
        direct = {v: bundle.views[v][0] for v in self.views if v in bundle.views}
        mode = self.cfg.depth_source
        if mode == "direct":
            return direct
        clouds = self._map(lambda v: depth_to_cloud(direct[v], self.calibrations[v], self.cfg.cloud_stride),
                           list(direct))
        merged = merge_clouds(clouds)
        if mode == "pc2dimg":
            render = lambda v: cloud_to_depth(merged, self.calibrations[v], self.cfg.splat_radius)
        else:
            vmap = cloud_to_voxelmap(merged, self.cfg.voxel_resolution)
            render = lambda v: voxelmap_to_depth(vmap, self.calibrations[v])
        return dict(zip(direct, self._map(render, list(direct))))

    def lift(self, bundle: FrameBundle, depth: dict[str, DepthImage]) -> list[PoseProposal3D]:
        def one(v):
            poses = bundle.views[v][1]
            if self.cfg.min_confidence > 0:
                poses = [p.filtered(self.cfg.min_confidence) for p in poses]
            return lift_poses(poses, depth[v], self.calibrations[v], self.skel, self.cfg.cross,
                              self.cfg.apply_offsets)
        return [p for props in self._map(one, list(depth)) for p in props]

    def process(self, bundle: FrameBundle, debug: list | None = None):
        """Returns ``(fused poses, stage timings in seconds)``."""
        t0 = time.perf_counter()
        depth = self.depth_images(bundle)
        t1 = time.perf_counter()
        proposals = self.lift(bundle, depth)
        t2 = time.perf_counter()
        fused = self.tracker.step(proposals, debug)
        t3 = time.perf_counter()
        timing = {"depth_source": t1 - t0, "depth_extraction": t2 - t1, "fusion": t3 - t2, "total": t3 - t0}
        return fused, timing


def bundle_from_synthetic(frame) -> FrameBundle:
    return FrameBundle(frame.frame_index,
                       {c.view_id: (frame.depth[c.view_id], frame.detections[c.view_id]) for c in frame.calibrations})


# --- datasets on disk ------------------------------------------------------

def dataset_frames(root) -> list[int]:
    d = Path(root) / "frames"
    if not d.is_dir():
        return []
    return sorted(int(p.name) for p in d.iterdir() if p.is_dir() and p.name.isdigit())


def dataset_views(root, frame: int) -> list[str]:
    return sorted(p.name[: -len("_keypoints.json")] for p in io.frame_dir(root, frame).glob("*_keypoints.json"))


def _depth_path(fdir: Path, view: str) -> Path:
    for suffix in (".png", ".depth"):
        p = fdir / f"{view}_depth{suffix}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no depth image for view {view!r} in {fdir}")


def load_bundle(root, frame: int, skel: SkeletonDefinition, calibs: dict[str, CameraCalibration],
                views=None, min_confidence: float = 0.0) -> FrameBundle:
    fdir = io.frame_dir(root, frame)
    out = {}
    for v in views if views is not None else dataset_views(root, frame):
        doc = io.read_json(fdir / f"{v}_keypoints.json")
        if int(doc.get("frame", frame)) != frame or str(doc["view_id"]) != v:
            raise ValueError(f"{fdir}: keypoint file for {v} has mismatched frame/view ids")
        img = io.load_depth(_depth_path(fdir, v), v)
        img.check_matches(calibs[v])
        out[v] = (img, io.keypoints_from_dict(doc, skel, calibs[v], min_confidence))
    return FrameBundle(frame, out)


def write_synthetic_dataset(root, frames, skel: SkeletonDefinition, depth_format: str = "png") -> None:
    """Write synthetic frames in the pipeline's input formats plus ``ground_truth.json``."""
    root = Path(root)
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to write")
    io.save_calibrations(root / "calibration.json", frames[0].calibrations)
    io.save_skeleton(root / "skeleton.json", skel)
    gt = []
    for fr in frames:
        fdir = io.frame_dir(root, fr.frame_index)
        for c in fr.calibrations:
            io.save_depth(fdir / f"{c.view_id}_depth.{depth_format}", fr.depth[c.view_id])
            io.write_json(fdir / f"{c.view_id}_keypoints.json",
                          io.keypoints_to_dict(fr.frame_index, c.view_id, fr.detections[c.view_id], skel))
        gt.append((fr.frame_index, [(p.person_id, p.joint_positions) for p in fr.persons]))
    io.write_json(root / "ground_truth.json", io.ground_truth_to_dict(gt, skel))


def run(cfg: PipelineConfig, calibration_path=None, evaluate: bool = False):
    """Process a dataset directory; returns ``(per-frame outputs, timing log, report or None)``."""
    if not cfg.input_dir:
        raise ConfigError("input_dir is required")
    root = Path(cfg.input_dir)
    skel = cfg.skeleton_definition()
    calibs = io.load_calibrations(calibration_path or root / "calibration.json")
    frames = dataset_frames(root)
    if cfg.cameras is not None:
        referenced = set(cfg.cameras)
    else:
        referenced = set().union(*(dataset_views(root, f) for f in frames))
    missing = sorted(referenced - set(calibs))
    if missing:
        raise ConfigError(f"no calibration for referenced views {missing}")
    pipe = Pipeline(cfg, calibs, skel)
    views = pipe.views if cfg.cameras is not None else None
    results: dict[int, list[FusedPose3D]] = {}
    timings = []
    out = Path(cfg.output_dir) if cfg.output_dir else None
    try:
        for f in frames:
            try:
                bundle = load_bundle(root, f, skel, calibs, views, cfg.min_confidence)
            except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
                log.warning("frame %d skipped: %s", f, exc)
                continue
            fused, timing = pipe.process(bundle)
            results[f] = fused
            timings.append({"frame": f, **timing})
            if out is not None:
                io.write_json(out / "frames" / f"{f:06d}.json", io.fused_to_dict(f, fused, skel))
    finally:
        pipe.close()
    report = None
    if evaluate:
        gt = io.ground_truth_from_dict(io.read_json(root / "ground_truth.json"), skel)
        report = evaluate_results(results, gt, skel, timings)
    if out is not None:
        io.write_json(out / "index.json", {"frames": sorted(results), "skeleton": skel.name,
                                           "files": [f"frames/{f:06d}.json" for f in sorted(results)]})
        io.write_json(out / "timing.json", timings)
        if report is not None:
            write_report(out, report)
    return results, timings, report


def evaluate_results(results: dict[int, list[FusedPose3D]], gt: dict[int, list[np.ndarray]],
                     skel: SkeletonDefinition, timings=None) -> MetricReport:
    frames = [EvalFrame([p.positions for p in results.get(f, [])], gt[f]) for f in sorted(gt)]
    fps = None
    if timings:
        total = sum(t["total"] for t in timings)
        fps = len(timings) / total if total > 0 else None
    return compute(frames, skel, fps=fps)


def load_predictions(pred_dir, skel: SkeletonDefinition) -> dict[int, list[FusedPose3D]]:
    pred_dir = Path(pred_dir)
    index = pred_dir / "index.json"
    if index.exists():
        doc = io.read_json(index)
        if doc.get("skeleton", skel.name) != skel.name:
            raise ValueError(f"predictions use skeleton {doc['skeleton']!r}, evaluation uses {skel.name!r}")
        files = [pred_dir / f for f in doc["files"]]
    else:
        files = sorted((pred_dir / "frames").glob("*.json")) if (pred_dir / "frames").is_dir() else []
    out = {}
    for path in files:
        d = io.read_json(path)
        out[int(d["frame"])] = io.fused_from_dict(d, skel)
    return out


def evaluate_dir(pred_dir, gt_file, skel: SkeletonDefinition, out_dir=None) -> MetricReport:
    gt_doc = io.read_json(gt_file)
    gt = io.ground_truth_from_dict(gt_doc, skel)
    preds = load_predictions(pred_dir, skel)
    timings = None
    tpath = Path(pred_dir) / "timing.json"
    if tpath.exists():
        timings = io.read_json(tpath)
    report = evaluate_results(preds, gt, skel, timings)
    if out_dir is not None:
        write_report(out_dir, report)
    return report


def write_report(out_dir, report: MetricReport) -> None:
    out = Path(out_dir)
    io.write_json(out / "report.json", report.as_dict())
    (out / "report.csv").write_text(",".join(MetricReport.CSV_FIELDS) + "\n" + report.csv_row() + "\n")


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    return replace(cfg, **kw)
