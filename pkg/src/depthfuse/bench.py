"""Per-stage latency benchmark on synthetic workloads.

Numbers are wall-clock on the current machine, file I/O excluded. They are
only meaningful relative to each other.
"""

from __future__ import annotations

import hashlib
import statistics
import time
from dataclasses import replace

import numpy as np

from .pipeline import Pipeline, PipelineConfig, bundle_from_synthetic
from .sampling import lift_poses
from .fusion import Tracker
from .skeleton import builtin_coco13
from .synth import SceneConfig, matched_offsets, synthesize_frame

STAGES = ("depth_source", "depth_extraction", "fusion", "total")


def summarize(samples) -> dict:
    xs = sorted(samples)
    if not xs:
        return {"mean_ms": None, "median_ms": None, "p95_ms": None, "n": 0}
    p95 = xs[min(len(xs) - 1, int(np.ceil(0.95 * len(xs))) - 1)]
    return {
        "mean_ms": 1e3 * statistics.fmean(xs),
        "median_ms": 1e3 * statistics.median(xs),
        "p95_ms": 1e3 * p95,
        "n": len(xs),
    }


def _digest(outputs) -> str:
    h = hashlib.sha256()
    for fused in outputs:
        for f in fused:
            h.update(str(f.person_id).encode())
            h.update(np.nan_to_num(f.positions, nan=-1e9).tobytes())
            h.update(f.support.tobytes())
    return h.hexdigest()


def make_workload(scene: SceneConfig, frames: int):
    skel = matched_offsets(builtin_coco13(), scene.limb_radius, scene.torso_radius)
    data = [synthesize_frame(scene, i, skel) for i in range(frames)]
    return skel, data


def bench(cfg: PipelineConfig | None = None, repetitions: int = 5, scene: SceneConfig | None = None,
          frames: int = 5, workload=None) -> dict:
    """Run the per-frame pipeline ``repetitions`` times over the same synthetic frames."""
    cfg = cfg or PipelineConfig()
    scene = scene or SceneConfig(camera_count=5, person_count=3)
    skel, data = workload or make_workload(scene, frames)
    calibs = {c.view_id: c for c in data[0].calibrations}
    bundles = [bundle_from_synthetic(f) for f in data]
    samples = {s: [] for s in STAGES}
    digests = []
    for _ in range(repetitions):
        pipe = Pipeline(cfg, calibs, skel)
        outs = []
        try:
            for b in bundles:
                fused, timing = pipe.process(b)
                outs.append(fused)
                for s in STAGES:
                    samples[s].append(timing[s])
        finally:
            pipe.close()
        digests.append(_digest(outs))
    return {
        "mode": cfg.depth_source,
        "views": len(calibs),
        "persons": scene.person_count,
        "image": [scene.image_width, scene.image_height],
        "frames": len(bundles),
        "repetitions": repetitions,
        "stages": {s: summarize(v) for s, v in samples.items()},
        "deterministic": len(set(digests)) == 1,
    }


def fusion_scaling(views=(2, 4, 8), persons=(1, 2, 4), repetitions: int = 20, seed: int = 0) -> list[dict]:
    """Best-of-``repetitions`` fusion time over a views x persons grid."""
    rows = []
    for v in views:
        for p in persons:
            scene = SceneConfig(camera_count=v, person_count=p, seed=seed, area_radius=1.6,
                                image_width=320, image_height=240, focal=262.5)
            skel, data = make_workload(scene, 1)
            fr = data[0]
            calibs = {c.view_id: c for c in fr.calibrations}
            props = [q for c in fr.calibrations
                     for q in lift_poses(fr.detections[c.view_id], fr.depth[c.view_id], c, skel)]
            best = np.inf
            for _ in range(repetitions):
                tracker = Tracker(skel)
                t0 = time.perf_counter()
                tracker.step(props)
                best = min(best, time.perf_counter() - t0)
            rows.append({"views": v, "persons": p, "proposals": len(props), "fusion_ms": 1e3 * best})
    return rows


def bench_modes(modes=("direct", "pc2dimg", "pc2vmap"), repetitions: int = 3, frames: int = 3,
                scene: SceneConfig | None = None, cfg: PipelineConfig | None = None) -> list[dict]:
    scene = scene or SceneConfig(camera_count=5, person_count=3)
    workload = make_workload(scene, frames)
    cfg = cfg or PipelineConfig()
    return [bench(replace(cfg, depth_source=m), repetitions, scene, frames, workload) for m in modes]
