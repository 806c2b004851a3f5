"""Multi-view association, outlier filtering and top-k fusion of 3D proposals.

Per frame:

1. proposals are matched greedily to the persons of the previous frame,
   leftovers are clustered into new persons;
2. each joint proposal farther than ``limb_threshold`` from the averaged
   centre of its skeletal neighbours is discarded;
3. the ``topk`` proposals closest to the per-joint mean are averaged.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .sampling import PoseProposal3D
from .skeleton import SkeletonDefinition


@dataclass(frozen=True)
class FusionConfig:
    match_threshold: float = 0.8
    new_person_cluster_threshold: float = 0.8
    drop_after: int = 10
    limb_threshold: float = 0.5
    topk: int = 3
    min_shared_joints: int = 3
    min_support: int = 1

    def __post_init__(self):
        for name in ("match_threshold", "new_person_cluster_threshold", "limb_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.topk < 1 or self.drop_after < 1 or self.min_shared_joints < 1 or self.min_support < 1:
            raise ValueError("topk, drop_after, min_shared_joints and min_support must be >= 1")


@dataclass(eq=False)
class FusedPose3D:
    person_id: int
    positions: np.ndarray
    support: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return self.support > 0

    @property
    def num_present(self) -> int:
        return int(self.present.sum())

    def transformed(self, rotation, translation) -> "FusedPose3D":
        return FusedPose3D(self.person_id, self.positions @ np.asarray(rotation).T + translation, self.support.copy())


@dataclass
class PersonTrack:
    person_id: int
    last_pose: FusedPose3D
    missed_frames: int = 0


@dataclass
class TrackerState:
    tracks: list[PersonTrack] = field(default_factory=list)
    next_id: int = 0

    def transformed(self, rotation, translation) -> "TrackerState":
        return TrackerState(
            [PersonTrack(t.person_id, t.last_pose.transformed(rotation, translation), t.missed_frames)
             for t in self.tracks],
            self.next_id,
        )


def pose_distance(a: np.ndarray, b: np.ndarray, min_shared: int = 3) -> float | None:
    """Mean joint distance over joints present in both; ``None`` if too few are shared."""
    d = pairwise_pose_distances(np.asarray(a)[None], np.asarray(b)[None], min_shared)[0, 0]
    return None if np.isinf(d) else float(d)


def pairwise_pose_distances(A: np.ndarray, B: np.ndarray, min_shared) -> np.ndarray:
    """(P, T) mean shared-joint distances between (P, J, 3) and (T, J, 3); inf if incomparable.

    ``min_shared`` is a scalar or an array broadcastable to (P, T).
    """
    if len(A) == 0 or len(B) == 0:
        return np.full((len(A), len(B)), np.inf)
    diff = A[:, None] - B[None]
    dist = np.sqrt(np.einsum("ptjk,ptjk->ptj", diff, diff))
    shared = ~np.isnan(dist)
    n = shared.sum(axis=2)
    total = np.where(shared, dist, 0.0).sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n >= min_shared, total / n, np.inf)


@dataclass
class Association:
    """``matched`` maps proposal index -> person_id; ``new_groups`` lists proposal indices."""

    matched: dict[int, int]
    new_groups: list[list[int]]


def _rank(proposals):
    return sorted(range(len(proposals)), key=lambda i: (proposals[i].source_view, proposals[i].person_index))


def _min_shared(P, cfg):
    """Sparse proposals only need to share the joints they have."""
    return np.minimum(cfg.min_shared_joints, np.maximum((~np.isnan(P[..., 0])).sum(axis=1), 1))


def associate(proposals: list[PoseProposal3D], tracks: list[PersonTrack], cfg: FusionConfig) -> Association:
    order = _rank(proposals)
    rank = {i: r for r, i in enumerate(order)}
    P = np.array([p.positions for p in proposals]).reshape(len(proposals), -1, 3) if proposals else np.zeros((0, 0, 3))
    T = np.array([t.last_pose.positions for t in tracks]) if tracks else np.zeros((0, P.shape[1], 3))

    matched: dict[int, int] = {}
    D = pairwise_pose_distances(P, T, _min_shared(P, cfg)[:, None])
    pi, ti = np.nonzero(D < cfg.match_threshold)
    cands = sorted(zip(pi.tolist(), ti.tolist()),
                   key=lambda c: (D[c[0], c[1]], rank[c[0]], tracks[c[1]].person_id))
    used_views: dict[int, set] = {}
    for p, t in cands:
        if p in matched:
            continue
        views = used_views.setdefault(t, set())
        view = proposals[p].source_view
        if view in views:
            continue
        views.add(view)
        matched[p] = tracks[t].person_id

    rest = [i for i in order if i not in matched]
    return Association(matched, _cluster(proposals, rest, P, cfg))


def _cluster(proposals, rest, P, cfg) -> list[list[int]]:
    """Agglomerative clustering with at most one proposal per view per cluster.

    The closest pair of clusters, measured between their mean poses, is
    merged until none is below the threshold. A merge also needs every
    comparable member pair below the threshold (complete linkage). Comparing
    means lets a proposal with only a few joints join a cluster whose
    members each share too few joints with it.
    """
    if not rest:
        return []
    thr = cfg.new_person_cluster_threshold
    R = P[rest]
    n = len(rest)
    need = _min_shared(R, cfg)
    D = pairwise_pose_distances(R, R, np.minimum(need[:, None], need[None, :]))
    view_of = [proposals[i].source_view for i in rest]
    same_view = np.array([[va == vb for vb in view_of] for va in view_of])
    # incomparable pairs (inf) carry no evidence either way
    blocked = same_view | (np.isfinite(D) & (D >= thr))
    present = ~np.isnan(R[..., 0])
    sums = np.where(present[..., None], R, 0.0)
    counts = present.astype(float)
    members = [[k] for k in range(n)]
    alive = np.ones(n, dtype=bool)
    M = D.copy()
    np.fill_diagonal(M, np.inf)
    while True:
        cand = np.where(blocked | ~alive[None, :] | ~alive[:, None], np.inf, np.triu(M, k=1))
        cand[np.tril_indices(n)] = np.inf
        flat = int(np.argmin(cand))
        a, b = divmod(flat, n)
        if not cand[a, b] < thr:
            break
        members[a] += members[b]
        alive[b] = False
        sums[a] += sums[b]
        counts[a] += counts[b]
        blocked[a] |= blocked[b]
        blocked[:, a] = blocked[a]
        with np.errstate(invalid="ignore", divide="ignore"):
            means = sums / counts[..., None]
        means[counts == 0] = np.nan
        nm = _min_shared(means, cfg)
        row = pairwise_pose_distances(means[a:a + 1], means, np.minimum(nm[a], nm))[0]
        row[a] = np.inf
        M[a] = row
        M[:, a] = row
    return sorted(sorted(rest[m] for m in members[k]) for k in np.flatnonzero(alive))


def filter_outliers(group: np.ndarray, skel: SkeletonDefinition, limb_threshold: float = 0.5) -> np.ndarray:
    """Drop joint proposals far from the mean centre of their neighbour joints.

    ``group`` is (V, J, 3) with NaN for absent joints. Neighbour centres are
    computed once from the unfiltered group. Returns a filtered copy.
    """
    group = np.asarray(group, dtype=float)
    present = ~np.isnan(group[..., 0])
    counts = present.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        joint_mean = np.where(present[..., None], group, 0.0).sum(axis=0) / counts[:, None]
    has = counts > 0
    W = skel.neighbor_matrix * has[None, :]
    n_nbr = W.sum(axis=1)
    center = W @ np.where(has[:, None], joint_mean, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        center = center / n_nbr[:, None]
    dist = np.linalg.norm(group - center[None], axis=2)
    discard = present & (n_nbr > 0)[None, :] & (dist > limb_threshold)
    out = group.copy()
    out[discard] = np.nan
    return out


def fuse_group(group: np.ndarray, topk: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Average the ``topk`` proposals closest to the per-joint mean.

    Returns ``(positions (J, 3), support (J,))``; joints with no proposals are
    NaN with support 0.
    """
    group = np.asarray(group, dtype=float)
    present = ~np.isnan(group[..., 0])
    counts = present.sum(axis=0)
    filled = np.where(present[..., None], group, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = filled.sum(axis=0) / counts[:, None]
    select = present
    if (counts > topk).any():
        d = np.where(present, np.linalg.norm(group - mean[None], axis=2), np.inf)
        ranks = np.empty_like(d, dtype=np.intp)
        np.put_along_axis(ranks, np.argsort(d, axis=0, kind="stable"),
                          np.arange(len(d))[:, None].repeat(d.shape[1], axis=1), axis=0)
        select = present & (ranks < topk)
    support = select.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        fused = np.where(select[..., None], group, 0.0).sum(axis=0) / support[:, None]
    fused[support == 0] = np.nan
    return fused, support


@dataclass
class PersonDebug:
    person_id: int
    proposals: list[PoseProposal3D]
    raw: np.ndarray
    filtered: np.ndarray


def step(proposals: list[PoseProposal3D], state: TrackerState, cfg: FusionConfig,
         skel: SkeletonDefinition, debug: list | None = None) -> tuple[list[FusedPose3D], TrackerState]:
    """Advance the tracker by one frame. ``state`` is not modified."""
    proposals = [p for p in proposals if p.num_present > 0]
    proposals = [proposals[i] for i in _rank(proposals)]
    assoc = associate(proposals, state.tracks, cfg)

    by_track: dict[int, list[int]] = {}
    for p, pid in assoc.matched.items():
        by_track.setdefault(pid, []).append(p)

    def fuse(pid, idx):
        idx = sorted(idx)
        raw = np.array([proposals[i].positions for i in idx])
        filtered = filter_outliers(raw, skel, cfg.limb_threshold)
        pos, sup = fuse_group(filtered, cfg.topk)
        weak = sup < cfg.min_support
        pos[weak] = np.nan
        sup[weak] = 0
        if debug is not None:
            debug.append(PersonDebug(pid, [proposals[i] for i in idx], raw, filtered))
        return FusedPose3D(pid, pos, sup)

    outputs: list[FusedPose3D] = []
    tracks: list[PersonTrack] = []
    for track in state.tracks:
        fused = fuse(track.person_id, by_track[track.person_id]) if track.person_id in by_track else None
        if fused is not None and fused.num_present > 0:
            outputs.append(fused)
            tracks.append(PersonTrack(track.person_id, fused, 0))
        else:
            missed = track.missed_frames + 1
            if missed < cfg.drop_after:
                tracks.append(dataclasses.replace(track, missed_frames=missed))

    next_id = state.next_id
    for grp in assoc.new_groups:
        fused = fuse(next_id, grp)
        if fused.num_present == 0:
            continue
        outputs.append(fused)
        tracks.append(PersonTrack(next_id, fused, 0))
        next_id += 1

    outputs.sort(key=lambda f: f.person_id)
    tracks.sort(key=lambda t: t.person_id)
    return outputs, TrackerState(tracks, next_id)


class Tracker:
    """Stateful wrapper around :func:`step` for streaming use."""

    def __init__(self, skel: SkeletonDefinition, cfg: FusionConfig = FusionConfig(),
                 state: TrackerState | None = None):
        self.skel = skel
        self.cfg = cfg
        self.state = state or TrackerState()

    def step(self, proposals: list[PoseProposal3D], debug: list | None = None) -> list[FusedPose3D]:
        outputs, self.state = step(proposals, self.state, self.cfg, self.skel, debug)
        return outputs

    @property
    def tracks(self) -> list[PersonTrack]:
        return self.state.tracks
