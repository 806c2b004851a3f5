"""Skeleton definitions and 2D keypoint containers.

A skeleton is plain data: joint names, the per-joint neighbour sets used by
the outlier filter, the surface-to-centre depth offsets and a limb list. Any
keypoint set can be loaded from a document without code changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

MAX_DEPTH_OFFSET = 0.15


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonDefinition:
    name: str
    joints: tuple[str, ...]
    neighbors: tuple[tuple[int, ...], ...]
    depth_offsets: tuple[float, ...]
    limbs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(str(j) for j in self.joints))
        object.__setattr__(self, "neighbors", tuple(tuple(int(i) for i in n) for n in self.neighbors))
        object.__setattr__(self, "depth_offsets", tuple(float(o) for o in self.depth_offsets))
        object.__setattr__(self, "limbs", tuple((int(a), int(b)) for a, b in self.limbs))
        self._validate()

    def _validate(self):
        n = len(self.joints)
        if n == 0:
            raise SkeletonError(f"skeleton {self.name!r}: no joints")
        if len(set(self.joints)) != n:
            raise SkeletonError(f"skeleton {self.name!r}: duplicate joint names")
        if len(self.neighbors) != n:
            raise SkeletonError(f"skeleton {self.name!r}: neighbors has {len(self.neighbors)} entries for {n} joints")
        if len(self.depth_offsets) != n:
            raise SkeletonError(f"skeleton {self.name!r}: depth_offsets has {len(self.depth_offsets)} entries for {n} joints")
        for j, (joint, nbrs) in enumerate(zip(self.joints, self.neighbors)):
            if not nbrs:
                raise SkeletonError(f"joint {joint!r}: field 'neighbors' is empty")
            for i in nbrs:
                if not 0 <= i < n:
                    raise SkeletonError(f"joint {joint!r}: field 'neighbors' index {i} out of range [0, {n})")
                if i == j:
                    raise SkeletonError(f"joint {joint!r}: field 'neighbors' contains the joint itself")
            off = self.depth_offsets[j]
            if not (np.isfinite(off) and 0.0 <= off <= MAX_DEPTH_OFFSET):
                raise SkeletonError(f"joint {joint!r}: field 'depth_offsets' value {off} outside [0, {MAX_DEPTH_OFFSET}] m")
        for a, b in self.limbs:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise SkeletonError(f"skeleton {self.name!r}: invalid limb ({a}, {b})")

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    def index(self, joint: str) -> int:
        try:
            return self.joints.index(joint)
        except ValueError:
            raise SkeletonError(f"skeleton {self.name!r} has no joint {joint!r}") from None

    @cached_property
    def neighbor_matrix(self) -> np.ndarray:
        """(J, J) 0/1 matrix; row j marks the neighbours of joint j."""
        m = np.zeros((self.num_joints, self.num_joints))
        for j, nbrs in enumerate(self.neighbors):
            m[j, list(nbrs)] = 1.0
        m.setflags(write=False)
        return m

    @cached_property
    def offsets_array(self) -> np.ndarray:
        a = np.asarray(self.depth_offsets, dtype=float)
        a.setflags(write=False)
        return a

    def with_offsets(self, offsets) -> "SkeletonDefinition":
        if isinstance(offsets, Mapping):
            vals = list(self.depth_offsets)
            for name, v in offsets.items():
                vals[self.index(name)] = v
            offsets = vals
        return SkeletonDefinition(self.name, self.joints, self.neighbors, tuple(offsets), self.limbs)

    def to_document(self) -> dict:
        return {
            "name": self.name,
            "joints": [
                {
                    "name": joint,
                    "neighbors": [self.joints[i] for i in self.neighbors[j]],
                    "depth_offset": self.depth_offsets[j],
                }
                for j, joint in enumerate(self.joints)
            ],
            "limbs": [[self.joints[a], self.joints[b]] for a, b in self.limbs],
        }


def load_skeleton(document: Mapping) -> SkeletonDefinition:
    """Build a validated skeleton from a parsed document.

    Neighbours and limb endpoints may be given as joint names or indices.
    """
    try:
        name = str(document["name"])
        entries = list(document["joints"])
    except (KeyError, TypeError) as exc:
        raise SkeletonError(f"skeleton document missing field {exc}") from None
    names = []
    for k, entry in enumerate(entries):
        if not isinstance(entry, Mapping) or "name" not in entry:
            raise SkeletonError(f"joint #{k}: field 'name' missing")
        names.append(str(entry["name"]))
    lookup = {n: i for i, n in enumerate(names)}

    def resolve(ref, joint, fieldname):
        if isinstance(ref, str):
            if ref not in lookup:
                raise SkeletonError(f"joint {joint!r}: field {fieldname!r} references unknown joint {ref!r}")
            return lookup[ref]
        if isinstance(ref, bool) or not isinstance(ref, (int, np.integer)):
            raise SkeletonError(f"joint {joint!r}: field {fieldname!r} has invalid reference {ref!r}")
        if not 0 <= ref < len(names):
            raise SkeletonError(f"joint {joint!r}: field {fieldname!r} index {ref} out of range [0, {len(names)})")
        return int(ref)

    neighbors, offsets = [], []
    for entry, joint in zip(entries, names):
        nbrs = entry.get("neighbors")
        if not nbrs:
            raise SkeletonError(f"joint {joint!r}: field 'neighbors' missing or empty")
        neighbors.append(tuple(resolve(r, joint, "neighbors") for r in nbrs))
        off = entry.get("depth_offset", 0.0)
        try:
            offsets.append(float(off))
        except (TypeError, ValueError):
            raise SkeletonError(f"joint {joint!r}: field 'depth_offset' is not a number") from None
    limbs = []
    for pair in document.get("limbs", []):
        if len(pair) != 2:
            raise SkeletonError(f"limb {pair!r}: expected two endpoints")
        limbs.append((resolve(pair[0], pair[0], "limbs"), resolve(pair[1], pair[1], "limbs")))
    return SkeletonDefinition(name, tuple(names), tuple(neighbors), tuple(offsets), tuple(limbs))


COCO13_JOINTS = (
    "nose",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
    "left_knee", "right_knee",
    "left_ankle", "right_ankle",
)

# wrist, shoulder and knee values are measured; the rest are estimated from body proportions
COCO13_OFFSETS = {
    "nose": 0.01,
    "left_shoulder": 0.03, "right_shoulder": 0.03,
    "left_elbow": 0.02, "right_elbow": 0.02,
    "left_wrist": 0.01, "right_wrist": 0.01,
    "left_hip": 0.06, "right_hip": 0.06,
    "left_knee": 0.03, "right_knee": 0.03,
    "left_ankle": 0.03, "right_ankle": 0.03,
}


def builtin_coco13() -> SkeletonDefinition:
    """The 13-keypoint body skeleton used for evaluation."""
    neighbors = {"nose": ["left_shoulder", "right_shoulder"]}
    limbs = [("nose", "left_shoulder"), ("nose", "right_shoulder"),
             ("left_shoulder", "right_shoulder"), ("left_hip", "right_hip")]
    for side, other in (("left", "right"), ("right", "left")):
        sh, el, wr = f"{side}_shoulder", f"{side}_elbow", f"{side}_wrist"
        hip, kn, an = f"{side}_hip", f"{side}_knee", f"{side}_ankle"
        neighbors[sh] = [el, f"{other}_shoulder", hip]
        neighbors[el] = [sh, wr]
        neighbors[wr] = [el]
        neighbors[hip] = [kn, f"{other}_hip", sh]
        neighbors[kn] = [hip, an]
        neighbors[an] = [kn]
        limbs += [(sh, el), (el, wr), (hip, kn), (kn, an), (sh, hip)]
    return load_skeleton({
        "name": "coco13",
        "joints": [
            {"name": j, "neighbors": neighbors[j], "depth_offset": COCO13_OFFSETS[j]}
            for j in COCO13_JOINTS
        ],
        "limbs": [list(l) for l in limbs],
    })


@dataclass(frozen=True)
class Keypoint2D:
    joint: int
    pixel: tuple[float, float]
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"keypoint confidence {self.confidence} outside [0, 1]")
        if not all(np.isfinite(self.pixel)):
            raise ValueError("keypoint pixel must be finite")


@dataclass
class Pose2D:
    """One detected person in one view; missing joints are simply absent."""

    view_id: str
    keypoints: dict[int, Keypoint2D] = field(default_factory=dict)

    def add(self, kp: Keypoint2D) -> None:
        if kp.joint in self.keypoints:
            raise ValueError(f"joint {kp.joint} already detected in this pose")
        self.keypoints[kp.joint] = kp

    def __len__(self):
        return len(self.keypoints)

    def arrays(self):
        """``(joint_indices, pixels (K, 2), confidences (K,))`` in joint order."""
        idx = sorted(self.keypoints)
        if not idx:
            return np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros(0)
        kps = [self.keypoints[i] for i in idx]
        return (np.array(idx, dtype=int),
                np.array([k.pixel for k in kps], dtype=float),
                np.array([k.confidence for k in kps], dtype=float))

    @classmethod
    def from_arrays(cls, view_id, joints, pixels, confidences=None) -> "Pose2D":
        pose = cls(str(view_id))
        for k, j in enumerate(joints):
            c = 1.0 if confidences is None else float(confidences[k])
            pose.add(Keypoint2D(int(j), (float(pixels[k][0]), float(pixels[k][1])), c))
        return pose

    def filtered(self, min_confidence: float) -> "Pose2D":
        return Pose2D(self.view_id, {j: k for j, k in self.keypoints.items() if k.confidence >= min_confidence})
