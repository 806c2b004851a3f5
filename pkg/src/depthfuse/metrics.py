"""Multi-person 3D pose metrics: PCP, PCK, MPJPE, Recall, Invalid and F1.

Poses are (J, 3) arrays in meters with NaN for absent joints; reported
distances are millimeters. Persons are matched greedily by mean joint
distance under a gate, then:

* MPJPE averages joint errors over matched pairs,
* PCK@t counts matched ground-truth joints closer than ``t``,
* Recall@t does the same over *all* ground-truth joints,
* PCP counts limbs whose two endpoints are each within half the true limb length,
* Invalid is the share of unmatched predictions,
* F1 combines person-level precision and recall.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .skeleton import SkeletonDefinition


@dataclass
class EvalFrame:
    predictions: list[np.ndarray] = field(default_factory=list)
    ground_truth: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.predictions = [np.asarray(p, dtype=float) for p in self.predictions]
        self.ground_truth = [np.asarray(g, dtype=float) for g in self.ground_truth]

    def transformed(self, rotation, translation) -> "EvalFrame":
        R = np.asarray(rotation)
        return EvalFrame([p @ R.T + translation for p in self.predictions],
                         [g @ R.T + translation for g in self.ground_truth])


@dataclass
class MetricReport:
    pcp: float
    pck100: float
    pck500: float
    mpjpe_mm: float | None
    recall100: float
    recall500: float
    invalid_pct: float
    f1: float
    fps: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    CSV_FIELDS = ("pcp", "pck100", "pck500", "mpjpe_mm", "recall100", "recall500", "invalid_pct", "f1", "fps")

    def csv_row(self) -> str:
        vals = []
        for name in self.CSV_FIELDS:
            v = getattr(self, name)
            vals.append("" if v is None else f"{v:.4f}")
        return ",".join(vals)


@dataclass
class Matching:
    pairs: list[tuple[int, int]]
    """(ground_truth_index, prediction_index)"""
    unmatched_gt: list[int]
    unmatched_pred: list[int]


def _joint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-joint error in mm; NaN where the GT joint is invalid, inf where the prediction lacks it."""
    err = np.linalg.norm(pred - gt, axis=1) * 1000.0
    gt_ok = ~np.isnan(gt[:, 0])
    pred_ok = ~np.isnan(pred[:, 0])
    return np.where(gt_ok, np.where(pred_ok, err, np.inf), np.nan)


def person_distance_mm(pred: np.ndarray, gt: np.ndarray) -> float:
    err = _joint_errors(pred, gt)
    shared = np.isfinite(err)
    return float(err[shared].mean()) if shared.any() else np.inf


def match_persons(frame: EvalFrame, gate_mm: float = 500.0) -> Matching:
    """Greedy ascending-distance matching; ties go to the lower GT, then prediction, index."""
    cands = []
    for g, gt in enumerate(frame.ground_truth):
        for p, pred in enumerate(frame.predictions):
            d = person_distance_mm(pred, gt)
            if d <= gate_mm:
                cands.append((d, g, p))
    cands.sort()
    used_g, used_p, pairs = set(), set(), []
    for _, g, p in cands:
        if g in used_g or p in used_p:
            continue
        used_g.add(g)
        used_p.add(p)
        pairs.append((g, p))
    return Matching(
        pairs,
        [g for g in range(len(frame.ground_truth)) if g not in used_g],
        [p for p in range(len(frame.predictions)) if p not in used_p],
    )


def _pct(num, den, vacuous):
    return 100.0 * num / den if den else vacuous


def compute(frames: list[EvalFrame], skel: SkeletonDefinition, gate_mm: float = 500.0,
            fps: float | None = None) -> MetricReport:
    n_pred = n_gt = n_matched = 0
    matched_err: list[np.ndarray] = []
    all_gt_err: list[np.ndarray] = []
    limbs_ok = limbs_total = 0
    limbs = np.array(skel.limbs, dtype=int).reshape(-1, 2)

    for frame in frames:
        for gt in frame.ground_truth:
            if gt.shape != (skel.num_joints, 3):
                raise ValueError(f"ground truth pose has shape {gt.shape}, skeleton {skel.name!r} needs ({skel.num_joints}, 3)")
        for pred in frame.predictions:
            if pred.shape != (skel.num_joints, 3):
                raise ValueError(f"prediction has shape {pred.shape}, skeleton {skel.name!r} needs ({skel.num_joints}, 3)")
        m = match_persons(frame, gate_mm)
        n_pred += len(frame.predictions)
        n_gt += len(frame.ground_truth)
        n_matched += len(m.pairs)
        for g in m.unmatched_gt:
            gt = frame.ground_truth[g]
            all_gt_err.append(np.where(np.isnan(gt[:, 0]), np.nan, np.inf))
        for g, p in m.pairs:
            gt, pred = frame.ground_truth[g], frame.predictions[p]
            err = _joint_errors(pred, gt)
            matched_err.append(err)
            all_gt_err.append(err)
            if len(limbs):
                a, b = limbs[:, 0], limbs[:, 1]
                valid = ~np.isnan(gt[a, 0]) & ~np.isnan(gt[b, 0])
                half = 0.5 * np.linalg.norm(gt[a] - gt[b], axis=1) * 1000.0
                ok = valid & (err[a] <= half) & (err[b] <= half)
                limbs_ok += int(ok.sum())
                limbs_total += int(valid.sum())

    matched = np.concatenate(matched_err) if matched_err else np.zeros(0)
    matched = matched[~np.isnan(matched)]
    every = np.concatenate(all_gt_err) if all_gt_err else np.zeros(0)
    every = every[~np.isnan(every)]
    finite = matched[np.isfinite(matched)]
    no_gt = n_gt == 0

    precision = n_matched / n_pred if n_pred else (1.0 if no_gt else 0.0)
    recall = n_matched / n_gt if n_gt else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    vac = 100.0 if no_gt else 0.0
    return MetricReport(
        pcp=_pct(limbs_ok, limbs_total, vac),
        pck100=_pct(int((matched < 100).sum()), len(matched), vac),
        pck500=_pct(int((matched < 500).sum()), len(matched), vac),
        mpjpe_mm=float(finite.mean()) if len(finite) else None,
        recall100=_pct(int((every < 100).sum()), len(every), vac),
        recall500=_pct(int((every < 500).sum()), len(every), vac),
        invalid_pct=_pct(n_pred - n_matched, n_pred, 0.0),
        f1=100.0 * f1,
        fps=fps,
    )
