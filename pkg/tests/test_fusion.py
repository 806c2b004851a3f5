import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthfuse.fusion import (FusedPose3D, FusionConfig, PersonTrack, Tracker, TrackerState, associate,
                              filter_outliers, fuse_group, pairwise_pose_distances, pose_distance, step)
from depthfuse.sampling import PoseProposal3D
from depthfuse.skeleton import builtin_coco13
from depthfuse.synth import make_person


def base_pose(skel, x=0.0, y=0.0):
    return make_person(skel, (x, y)).joint_positions


def proposal(view, positions, index=0):
    positions = np.asarray(positions, dtype=float)
    return PoseProposal3D(view, positions.copy(), np.ones(len(positions)), index)


def track(pid, positions, missed=0):
    return PersonTrack(pid, FusedPose3D(pid, np.asarray(positions, float), np.ones(len(positions), int)), missed)


# --- pose distance ----------------------------------------------------------

def test_pose_distance_examples(coco):
    a = base_pose(coco)
    assert pose_distance(a, a) == 0.0
    assert pose_distance(a, a + [0.3, 0, 0]) == pytest.approx(0.3, abs=1e-12)
    b = np.full_like(a, np.nan)
    b[:2] = a[:2]
    assert pose_distance(a, b, min_shared=3) is None
    assert pose_distance(a, b, min_shared=2) == 0.0


# --- association ------------------------------------------------------------

def test_unambiguous_match(coco):
    a = base_pose(coco)
    props = [proposal(f"c{k}", a + [0.05 * k, 0.0, 0.02]) for k in range(3)]
    res = associate(props, [track(7, a)], FusionConfig())
    assert res.matched == {0: 7, 1: 7, 2: 7}
    assert res.new_groups == []


def test_same_view_proposals_split(coco):
    a = base_pose(coco)
    props = [proposal("c0", a + [0.3, 0, 0], 0), proposal("c0", a + [0.1, 0, 0], 1)]
    res = associate(props, [track(0, a)], FusionConfig())
    assert res.matched == {1: 0}
    assert res.new_groups == [[0]]


def test_far_proposal_starts_new_person(coco):
    a = base_pose(coco)
    res = associate([proposal("c0", a + [5.0, 0, 0])], [track(0, a)], FusionConfig())
    assert res.matched == {}
    assert res.new_groups == [[0]]


def reference_greedy(D, views, person_ids, threshold):
    """Repeatedly take the globally closest admissible (proposal, track) pair."""
    matched, used = {}, set()
    while True:
        best = None
        for p in range(D.shape[0]):
            if p in matched:
                continue
            for t in range(D.shape[1]):
                if not D[p, t] < threshold or (t, views[p]) in used:
                    continue
                key = (D[p, t], p, person_ids[t])
                if best is None or key < best[0]:
                    best = (key, p, t)
        if best is None:
            return matched
        _, p, t = best
        matched[p] = person_ids[t]
        used.add((t, views[p]))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_association_matches_reference_greedy(seed):
    rng = np.random.default_rng(seed)
    J = 5
    tracks = [track(int(i), rng.uniform(-1, 1, (J, 3))) for i in rng.choice(50, rng.integers(1, 4), replace=False)]
    props = []
    for view in range(rng.integers(1, 4)):
        for k in range(rng.integers(0, 4)):
            base = tracks[rng.integers(len(tracks))].last_pose.positions
            props.append(proposal(f"v{view}", base + rng.normal(0, 0.3, (J, 3)), k))
    # proposals come pre-ranked by (view, index) as inside step()
    cfg = FusionConfig(min_shared_joints=3)
    res = associate(props, tracks, cfg)
    D = pairwise_pose_distances(np.array([p.positions for p in props]).reshape(-1, J, 3),
                                np.array([t.last_pose.positions for t in tracks]), 3)
    ref = reference_greedy(D, [p.source_view for p in props], [t.person_id for t in tracks], cfg.match_threshold)
    assert res.matched == ref


def test_clusters_respect_one_proposal_per_view(coco):
    a = base_pose(coco)
    props = [proposal("c0", a, 0), proposal("c0", a + [0.01, 0, 0], 1), proposal("c1", a + [0.02, 0, 0])]
    res = associate(props, [], FusionConfig())
    # c1 is closer to the second c0 proposal, which takes the view slot first
    assert sorted(map(sorted, res.new_groups)) == [[0], [1, 2]]


# --- outlier filter -----------------------------------------------------------

def test_filter_discards_far_knee(coco):
    a = base_pose(coco)
    group = np.stack([a, a.copy(), a.copy()])
    knee = coco.index("left_knee")
    hip, ankle = coco.index("left_hip"), coco.index("left_ankle")
    center = (a[hip] + a[ankle]) / 2
    group[1, knee] = center + [2.0, 0.0, 0.0]
    out = filter_outliers(group, coco, 0.5)
    assert np.isnan(out[1, knee]).all()
    assert not np.isnan(out[[0, 2], knee]).any()


def test_filter_keeps_consistent_group(coco, rng):
    a = base_pose(coco)
    group = np.stack([a + rng.uniform(-0.03, 0.03, a.shape) for _ in range(4)])
    assert np.array_equal(filter_outliers(group, coco, 0.5), group)


def test_filter_keeps_joint_without_neighbors(coco):
    a = base_pose(coco)
    group = np.full((2, 13, 3), np.nan)
    w = coco.index("left_wrist")
    group[0, w] = a[w] + [3.0, 0.0, 0.0]
    group[1, coco.index("nose")] = a[0]
    out = filter_outliers(group, coco, 0.5)
    assert np.array_equal(out[0, w], group[0, w])


# --- fusion -----------------------------------------------------------------

def test_fuse_group_topk_example():
    group = np.array([[[0, 0, 2.00]], [[0, 0, 2.02]], [[0, 0, 1.98]], [[0, 0, 5.0]]])
    pos, sup = fuse_group(group, 3)
    assert np.allclose(pos[0], (0, 0, 2.0), rtol=0, atol=1e-12)
    assert sup[0] == 3


def test_fuse_group_trivial_cases():
    p = np.array([[[0.1, 0.2, 3.0]]])
    pos, sup = fuse_group(p, 3)
    assert np.array_equal(pos, p[0]) and sup[0] == 1
    pos, sup = fuse_group(np.concatenate([p, p]), 3)
    assert np.array_equal(pos, p[0]) and sup[0] == 2
    pos, sup = fuse_group(np.full((2, 1, 3), np.nan), 3)
    assert np.isnan(pos).all() and sup[0] == 0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), topk=st.integers(1, 6))
def test_fuse_group_plain_mean_when_topk_covers_group(seed, topk):
    rng = np.random.default_rng(seed)
    V = int(rng.integers(1, topk + 1))
    group = rng.normal(size=(V, 4, 3))
    group[rng.uniform(size=(V, 4)) < 0.3] = np.nan
    pos, sup = fuse_group(group, topk)
    for j in range(4):
        rows = [group[v, j] for v in range(V) if not np.isnan(group[v, j, 0])]
        if not rows:
            assert sup[j] == 0
            continue
        acc = np.zeros(3)
        for r in rows:
            acc = acc + r
        assert np.array_equal(pos[j], acc / len(rows))
        assert sup[j] == len(rows)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_single_corruption_is_rejected(seed):
    skel = builtin_coco13()
    rng = np.random.default_rng(seed)
    a = base_pose(skel)
    topk = 3
    n = int(rng.integers(topk + 1, 7))
    r = 0.02
    noise = rng.normal(size=(n, 13, 3))
    noise *= (rng.uniform(0, r, (n, 13)) / np.linalg.norm(noise, axis=2))[..., None]
    agree = a[None] + noise
    j = int(rng.integers(13))
    bad = agree[0].copy()
    d = rng.normal(size=3)
    bad[j] = a[j] + d / np.linalg.norm(d) * rng.uniform(1.0, 3.0)
    group = np.concatenate([agree, bad[None]])
    nb = list(skel.neighbors[j])
    center = group[:, nb].mean(axis=0).mean(axis=0)
    if np.linalg.norm(bad[j] - center) <= 0.5:
        return
    pos, _ = fuse_group(filter_outliers(group, skel, 0.5), topk)
    cluster_mean = agree[:, j].mean(axis=0)
    assert np.linalg.norm(pos[j] - cluster_mean) <= r


# --- tracking step ----------------------------------------------------------

def test_aging(coco):
    cfg = FusionConfig(drop_after=3)
    state = TrackerState([track(0, base_pose(coco))], 1)
    for k in range(2):
        out, state = step([], state, cfg, coco)
        assert out == [] and len(state.tracks) == 1 and state.tracks[0].missed_frames == k + 1
    out, state = step([], state, cfg, coco)
    assert state.tracks == []


def test_identity_kept_over_small_motion(coco):
    tracker = Tracker(coco)
    ids = []
    for f in range(10):
        a = base_pose(coco, 0.05 * f, 0.0)
        out = tracker.step([proposal("c0", a), proposal("c1", a + 0.01)])
        ids.append([p.person_id for p in out])
    assert ids == [[0]] * 10


def test_single_view_person_is_output(coco):
    a = base_pose(coco)
    out, _ = step([proposal("c3", a)], TrackerState(), FusionConfig(), coco)
    assert len(out) == 1 and np.all(out[0].support == 1)
    out, _ = step([proposal("c3", a)], TrackerState(), FusionConfig(min_support=2), coco)
    assert out == []


def test_step_is_order_independent(coco, rng):
    a, b = base_pose(coco), base_pose(coco, 2.0, 0.0)
    props = [proposal(f"c{k}", (a if k % 2 else b) + rng.normal(0, 0.01, a.shape), k // 3) for k in range(6)]
    out1, s1 = step(props, TrackerState(), FusionConfig(), coco)
    out2, s2 = step(props[::-1], TrackerState(), FusionConfig(), coco)
    assert [p.person_id for p in out1] == [p.person_id for p in out2]
    for p, q in zip(out1, out2):
        assert np.array_equal(p.positions, q.positions)


def test_new_ids_are_monotonic(coco):
    cfg = FusionConfig(drop_after=1)
    state = TrackerState()
    seen = []
    for f in range(4):
        out, state = step([proposal("c0", base_pose(coco, 3.0 * f, 0.0))], state, cfg, coco)
        seen += [p.person_id for p in out]
    assert seen == [0, 1, 2, 3]


def test_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(topk=0)
    with pytest.raises(ValueError):
        FusionConfig(match_threshold=0)
