"""Synthetic multi-camera RGBD scenes with exact ground truth.

Bodies are unions of spheres (one per joint) and cylinders (one per skeleton
limb, capped by the joint spheres, i.e. capsules). Depth is intersected
analytically per pixel, so the rendered value at a joint is the *surface*
depth: joint-centre depth minus the joint radius on the central ray. That is
the discrepancy the per-joint depth offsets are meant to cancel.

World frame is z-up, meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraCalibration, look_at, project_points
from .sampling import DepthImage, round_pixel
from .skeleton import Pose2D, SkeletonDefinition, builtin_coco13

MAX_LIMB_LENGTH = 0.8
MAX_HEIGHT = 2.0
TORSO_JOINTS = frozenset({"left_shoulder", "right_shoulder", "left_hip", "right_hip"})


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    depth_sigma: float = 0.0
    pixel_sigma: float = 0.0
    keypoint_dropout: float = 0.0
    depth_holes: float = 0.0

    def __post_init__(self):
        if self.depth_sigma < 0 or self.pixel_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        for name in ("keypoint_dropout", "depth_holes"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")

    @property
    def is_zero(self) -> bool:
        return self == NoiseConfig()


@dataclass(frozen=True)
class SceneConfig:
    person_count: int = 3
    camera_count: int = 5
    camera_ring_radius: float = 3.5
    camera_height: float = 2.0
    target_height: float = 0.9
    image_width: int = 640
    image_height: int = 480
    focal: float = 525.0
    noise: NoiseConfig = NoiseConfig()
    seed: int = 0
    area_radius: float = 1.0
    min_separation: float = 0.8
    drift_amplitude: float = 0.1
    drift_period: int = 120
    limb_radius: float = 0.04
    torso_radius: float = 0.06
    include_occluded: bool = False

    def __post_init__(self):
        if self.person_count < 0 or self.camera_count < 1:
            raise ValueError("person_count must be >= 0 and camera_count >= 1")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseConfig(**self.noise))


@dataclass(eq=False)
class SyntheticPerson:
    joint_names: tuple[str, ...]
    joint_positions: np.ndarray
    joint_radii: np.ndarray
    limbs: tuple[tuple[int, int], ...]
    limb_radii: np.ndarray
    person_id: int = 0

    def __post_init__(self):
        self.joint_positions = np.asarray(self.joint_positions, dtype=float)
        self.joint_radii = np.asarray(self.joint_radii, dtype=float)
        self.limb_radii = np.asarray(self.limb_radii, dtype=float)
        self.check()

    def check(self):
        p = self.joint_positions
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite joint position")
        for a, b in self.limbs:
            length = np.linalg.norm(p[a] - p[b])
            if length >= MAX_LIMB_LENGTH:
                raise ValueError(f"limb {self.joint_names[a]}-{self.joint_names[b]} is {length:.3f} m")
        if np.ptp(p[:, 2]) + self.joint_radii.max() >= MAX_HEIGHT:
            raise ValueError("person taller than 2 m")

    def transformed(self, rotation, translation) -> "SyntheticPerson":
        return SyntheticPerson(self.joint_names, self.joint_positions @ np.asarray(rotation).T + translation,
                               self.joint_radii, self.limbs, self.limb_radii, self.person_id)


# --- parametric body -------------------------------------------------------

@dataclass(frozen=True)
class PoseParams:
    """Angles in radians; local frame is x forward, y left, z up."""

    arm_abduction: tuple[float, float] = (0.35, 0.35)
    arm_flexion: tuple[float, float] = (0.0, 0.0)
    elbow_bend: tuple[float, float] = (0.3, 0.3)
    leg_swing: tuple[float, float] = (0.0, 0.0)
    knee_bend: tuple[float, float] = (0.1, 0.1)
    scale: float = 1.0


def _limb_dir(abduction, flexion, side):
    """Unit vector hanging down, rotated outward by abduction and forward by flexion."""
    return np.array([
        math.sin(flexion) * math.cos(abduction),
        side * math.sin(abduction),
        -math.cos(flexion) * math.cos(abduction),
    ])


def body_joints(params: PoseParams = PoseParams()) -> dict[str, np.ndarray]:
    """Named joint positions of a standing person in its local frame (feet at z=0)."""
    s = params.scale
    j = {}
    head = np.array([0.0, 0.0, 1.60])
    j["nose"] = head + [0.09, 0.0, 0.0]
    j["left_eye"] = head + [0.08, 0.035, 0.035]
    j["right_eye"] = head + [0.08, -0.035, 0.035]
    j["left_ear"] = head + [0.0, 0.08, 0.0]
    j["right_ear"] = head + [0.0, -0.08, 0.0]
    for k, (side, sign) in enumerate((("left", 1.0), ("right", -1.0))):
        sh = np.array([0.0, sign * 0.19, 1.45])
        hip = np.array([0.0, sign * 0.10, 0.95])
        elbow = sh + 0.30 * _limb_dir(params.arm_abduction[k], params.arm_flexion[k], sign)
        wrist = elbow + 0.27 * _limb_dir(params.arm_abduction[k] * 0.7,
                                         params.arm_flexion[k] + params.elbow_bend[k], sign)
        knee = hip + 0.45 * _limb_dir(0.03, params.leg_swing[k], sign)
        ankle = knee + 0.42 * _limb_dir(0.0, params.leg_swing[k] - params.knee_bend[k], sign)
        j[f"{side}_shoulder"], j[f"{side}_elbow"], j[f"{side}_wrist"] = sh, elbow, wrist
        j[f"{side}_hip"], j[f"{side}_knee"], j[f"{side}_ankle"] = hip, knee, ankle
    lowest = min(p[2] for p in j.values())
    return {k: (v - [0.0, 0.0, lowest - 0.08]) * s for k, v in j.items()}


def joint_radius(name: str, limb_radius: float = 0.04, torso_radius: float = 0.06) -> float:
    return torso_radius if name in TORSO_JOINTS else limb_radius


def skeleton_radii(skel: SkeletonDefinition, limb_radius=0.04, torso_radius=0.06) -> np.ndarray:
    return np.array([joint_radius(n, limb_radius, torso_radius) for n in skel.joints])


def matched_offsets(skel: SkeletonDefinition, limb_radius=0.04, torso_radius=0.06) -> SkeletonDefinition:
    """Skeleton whose depth offsets equal the synthetic joint radii."""
    return skel.with_offsets(tuple(skeleton_radii(skel, limb_radius, torso_radius)))


def make_person(skel: SkeletonDefinition, position=(0.0, 0.0), yaw: float = 0.0,
                params: PoseParams = PoseParams(), person_id: int = 0,
                limb_radius: float = 0.04, torso_radius: float = 0.06) -> SyntheticPerson:
    """Place a body on the floor at ``position`` facing ``yaw`` (0 = +x)."""
    local = body_joints(params)
    missing = [n for n in skel.joints if n not in local]
    if missing:
        raise ValueError(f"synthetic body has no joints named {missing}")
    c, s = math.cos(yaw), math.sin(yaw)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    pts = np.array([local[n] for n in skel.joints]) @ R.T + [position[0], position[1], 0.0]
    radii = skeleton_radii(skel, limb_radius, torso_radius)
    limb_r = np.array([min(radii[a], radii[b]) for a, b in skel.limbs])
    return SyntheticPerson(skel.joints, pts, radii, skel.limbs, limb_r, person_id)


# --- scene generation ------------------------------------------------------

def camera_ring(cfg: SceneConfig) -> list[CameraCalibration]:
    cams = []
    for k in range(cfg.camera_count):
        a = 2.0 * math.pi * k / cfg.camera_count
        center = (cfg.camera_ring_radius * math.cos(a), cfg.camera_ring_radius * math.sin(a), cfg.camera_height)
        cams.append(look_at(f"cam{k}", center, (0.0, 0.0, cfg.target_height),
                            fx=cfg.focal, fy=cfg.focal, width=cfg.image_width, height=cfg.image_height))
    return cams


def _person_layout(cfg: SceneConfig):
    rng = np.random.default_rng([cfg.seed, 0xB0D1])
    layout = []
    need = cfg.min_separation + 2 * cfg.drift_amplitude
    for _ in range(cfg.person_count):
        for _attempt in range(1000):
            r = cfg.area_radius * math.sqrt(rng.uniform())
            a = rng.uniform(0, 2 * math.pi)
            pos = np.array([r * math.cos(a), r * math.sin(a)])
            if all(np.linalg.norm(pos - q["pos"]) >= need for q in layout):
                break
        else:
            raise PlacementError(f"could not place {cfg.person_count} persons without overlap")
        layout.append({
            "pos": pos,
            "yaw": rng.uniform(-math.pi, math.pi),
            "phase": rng.uniform(0, 2 * math.pi, size=6),
            "abd": rng.uniform(0.25, 0.6, size=2),
            "flex": rng.uniform(-0.3, 0.6, size=2),
            "elbow": rng.uniform(0.1, 0.8, size=2),
            "swing": rng.uniform(-0.25, 0.25, size=2),
            "knee": rng.uniform(0.0, 0.35, size=2),
            "scale": rng.uniform(0.92, 1.06),
        })
    return layout


def generate_scene(cfg: SceneConfig, frame_index: int = 0,
                   skel: SkeletonDefinition | None = None) -> tuple[list[SyntheticPerson], list[CameraCalibration]]:
    """Persons and cameras for one frame; a pure function of ``(cfg, frame_index)``."""
    skel = skel or builtin_coco13()
    w = 2.0 * math.pi * frame_index / cfg.drift_period
    persons = []
    for pid, L in enumerate(_person_layout(cfg)):
        ph = L["phase"]
        pos = L["pos"] + cfg.drift_amplitude * np.array([math.sin(w + ph[0]), math.cos(w + ph[0])])
        wiggle = 0.15 * np.sin(w + ph[1:3])
        params = PoseParams(
            arm_abduction=tuple(L["abd"] + 0.5 * wiggle),
            arm_flexion=tuple(L["flex"] + wiggle),
            elbow_bend=tuple(L["elbow"]),
            leg_swing=tuple(L["swing"] * math.cos(w + ph[3])),
            knee_bend=tuple(L["knee"]),
            scale=L["scale"],
        )
        persons.append(make_person(skel, pos, L["yaw"] + 0.2 * math.sin(w + ph[4]), params, pid,
                                   cfg.limb_radius, cfg.torso_radius))
    return persons, camera_ring(cfg)


# --- depth rendering -------------------------------------------------------

def _pixel_box(calib, centers_cam, radius, margin=2):
    """Conservative pixel bbox of spheres (camera frame); None if not fully in front."""
    z = centers_cam[:, 2]
    if (z - radius <= 1e-6).any():
        return None
    u = calib.fx * centers_cam[:, 0] / z + calib.cx
    v = calib.fy * centers_cam[:, 1] / z + calib.cy
    # sphere silhouettes stay within r*f/(z-r) of the centre projection, plus a
    # perspective stretch bounded by the same factor times the off-axis slope
    ru = radius * calib.fx / (z - radius) * (1.0 + np.abs(centers_cam[:, 0]) / (z - radius))
    rv = radius * calib.fy / (z - radius) * (1.0 + np.abs(centers_cam[:, 1]) / (z - radius))
    c0 = max(int(math.floor((u - ru).min())) - margin, 0)
    c1 = min(int(math.ceil((u + ru).max())) + margin, calib.width - 1)
    r0 = max(int(math.floor((v - rv).min())) - margin, 0)
    r1 = min(int(math.ceil((v + rv).max())) + margin, calib.height - 1)
    if c0 > c1 or r0 > r1:
        return (0, -1, 0, -1)
    return c0, c1, r0, r1


def _rays(calib, box):
    c0, c1, r0, r1 = box
    cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
    d = np.stack([(cols - calib.cx) / calib.fx, (rows - calib.cy) / calib.fy, np.ones(cols.shape)], axis=-1)
    return d


def _sphere_hits(d, c, r):
    a = np.einsum("...k,...k->...", d, d)
    b = d @ c
    disc = b * b - a * (c @ c - r * r)
    with np.errstate(invalid="ignore"):
        t = (b - np.sqrt(disc)) / a
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _cylinder_hits(d, p0, p1, r):
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length < 1e-9:
        return np.full(d.shape[:-1], np.inf)
    w = axis / length
    m = -p0
    dw = d @ w
    d_perp = d - dw[..., None] * w
    m_perp = m - (m @ w) * w
    A = np.einsum("...k,...k->...", d_perp, d_perp)
    B = d_perp @ m_perp
    C = m_perp @ m_perp - r * r
    disc = B * B - A * C
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-B - np.sqrt(disc)) / A
    s = t * dw + m @ w
    return np.where((disc >= 0) & (A > 0) & (t > 0) & (s >= 0) & (s <= length), t, np.inf)


@dataclass(frozen=True)
class _Primitive:
    person: int
    joints: tuple[int, ...]
    """one index for a joint sphere, two for a limb cylinder"""
    box: tuple[int, int, int, int]
    params: tuple

    def hits(self, d):
        if len(self.joints) == 1:
            return _sphere_hits(d, *self.params)
        return _cylinder_hits(d, *self.params)


def _primitives(persons, calib) -> list[_Primitive]:
    full = (0, calib.width - 1, 0, calib.height - 1)
    out = []
    for k, person in enumerate(persons):
        pc = calib.world_to_camera(person.joint_positions)
        for j, r in enumerate(person.joint_radii):
            if pc[j, 2] + r <= 0:
                continue
            box = _pixel_box(calib, pc[j:j + 1], r) or full
            out.append(_Primitive(k, (j,), box, (pc[j], r)))
        for (a, b), r in zip(person.limbs, person.limb_radii):
            if max(pc[a, 2], pc[b, 2]) + r <= 0:
                continue
            box = _pixel_box(calib, pc[[a, b]], r) or full
            out.append(_Primitive(k, (a, b), box, (pc[a], pc[b], r)))
    return [p for p in out if p.box[0] <= p.box[1] and p.box[2] <= p.box[3]]


def _intersect(a, b):
    box = (max(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), min(a[3], b[3]))
    return box if box[0] <= box[1] and box[2] <= box[3] else None


def render_depth(persons: list[SyntheticPerson], calib: CameraCalibration) -> DepthImage:
    """Noiseless surface depth (camera-frame z) of all capsule bodies; background is 0."""
    buf = np.full((calib.height, calib.width), np.inf)
    for prim in _primitives(persons, calib):
        c0, c1, r0, r1 = prim.box
        view = buf[r0:r1 + 1, c0:c1 + 1]
        np.minimum(view, prim.hits(_rays(calib, prim.box)), out=view)
    buf[np.isinf(buf)] = 0.0
    return DepthImage(calib.view_id, buf)


def add_depth_noise(img: DepthImage, noise: NoiseConfig, rng: np.random.Generator) -> DepthImage:
    v = img.values.copy()
    valid = v > 0
    if noise.depth_sigma > 0:
        v[valid] += rng.normal(0.0, noise.depth_sigma, size=int(valid.sum()))
        v[valid] = np.maximum(v[valid], 1e-3)
    if noise.depth_holes > 0:
        v[rng.uniform(size=v.shape) < noise.depth_holes] = 0.0
    return DepthImage(img.view_id, v)


# --- 2D keypoints ----------------------------------------------------------

def _silhouette_clear(calib, prims, owner, j, center, radius, eps, core=5) -> bool:
    """No foreign surface more than ``eps`` in front of joint sphere ``j`` on its silhouette.

    The joint's own sphere is not an occluder. Limbs attached to the joint
    only count within ``core`` pixels of the joint's own pixel, where depth
    is sampled, and only where they stick out more than ``eps`` in front of
    the sphere's nearest point (e.g. an arm pointing at the camera).
    """
    box = _pixel_box(calib, center[None], radius, margin=0)
    if box is None:
        return False
    box = _intersect(box, (0, calib.width - 1, 0, calib.height - 1))
    if box is None:
        return True
    d = _rays(calib, box)
    t = _sphere_hits(d, center, radius)
    if not np.isfinite(t).any():
        return True
    u = np.floor(calib.fx * center[0] / center[2] + calib.cx + 0.5)
    v = np.floor(calib.fy * center[1] / center[2] + calib.cy + 0.5)
    near = (int(u - core), int(u + core), int(v - core), int(v + core))
    for prim in prims:
        own = prim.person == owner and j in prim.joints
        if own and len(prim.joints) == 1:
            continue
        sub = _intersect(box, prim.box)
        if own and sub is not None:
            sub = _intersect(sub, near)
        if sub is None:
            continue
        sl = (slice(sub[2] - box[2], sub[3] - box[2] + 1), slice(sub[0] - box[0], sub[1] - box[0] + 1))
        ts = t[sl]
        limit = np.minimum(ts, center[2] - radius) if own else ts
        if np.any(np.isfinite(ts) & (prim.hits(d[sl]) < limit - eps)):
            return False
    return True


def visible_joints(person: SyntheticPerson, calib: CameraCalibration, depth: DepthImage,
                   scene: list[SyntheticPerson] | None = None) -> np.ndarray:
    """Boolean mask of directly visible joints of ``person``.

    A joint is visible when the rendered depth at its pixel is within
    ``eps = 0.5 * limb_radius + 0.02`` of its own surface depth and no other body
    part lies more than ``eps`` in front of its sphere anywhere on the
    sphere's silhouette (partly covered joints count as occluded).
    ``scene`` lists every person in the view; defaults to ``[person]``.
    """
    scene = scene if scene is not None else [person]
    owner = next(k for k, p in enumerate(scene) if p is person)
    px, z, front = project_points(calib, person.joint_positions)
    vis = np.zeros(len(z), dtype=bool)
    pix = round_pixel(np.where(front[:, None], px, -1.0))
    inside = front & (pix[:, 0] >= 0) & (pix[:, 0] < calib.width) & (pix[:, 1] >= 0) & (pix[:, 1] < calib.height)
    if not inside.any():
        return vis
    cols = pix[inside, 0].astype(int)
    rows = pix[inside, 1].astype(int)
    rendered = depth.values[rows, cols]
    surface = z[inside] - person.joint_radii[inside]
    # the thinnest body part is the limb radius
    eps = 0.5 * person.joint_radii.min() + 0.02
    vis[inside] = (rendered > 0) & (np.abs(rendered - surface) <= eps)
    if vis.any():
        prims = _primitives(scene, calib)
        pc = calib.world_to_camera(person.joint_positions)
        for j in np.flatnonzero(vis):
            vis[j] = _silhouette_clear(calib, prims, owner, j, pc[j], person.joint_radii[j], eps)
    return vis


def project_person(person: SyntheticPerson, calib: CameraCalibration, depth: DepthImage,
                   noise: NoiseConfig = NoiseConfig(), rng: np.random.Generator | None = None,
                   scene: list[SyntheticPerson] | None = None, include_occluded: bool = False) -> Pose2D:
    """2D detections of one person. ``include_occluded`` also emits joints hidden
    behind other surfaces (ablation; their sampled depth is usually wrong)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    px, _, front = project_points(calib, person.joint_positions)
    if include_occluded:
        vis = front & (px[:, 0] >= 0) & (px[:, 0] <= calib.width - 1) & (px[:, 1] >= 0) & (px[:, 1] <= calib.height - 1)
    else:
        vis = visible_joints(person, calib, depth, scene)
    idx = np.flatnonzero(vis)
    pix = px[idx]
    if noise.pixel_sigma > 0:
        pix = pix + rng.normal(0.0, noise.pixel_sigma, size=pix.shape)
    keep = np.ones(len(idx), dtype=bool)
    if noise.keypoint_dropout > 0:
        keep = rng.uniform(size=len(idx)) >= noise.keypoint_dropout
    if noise.is_zero:
        conf = np.ones(len(idx))
    else:
        conf = rng.uniform(0.5, 1.0, size=len(idx))
    return Pose2D.from_arrays(calib.view_id, idx[keep], pix[keep], conf[keep])


def project_keypoints(persons: list[SyntheticPerson], calib: CameraCalibration, depth: DepthImage,
                      noise: NoiseConfig = NoiseConfig(), rng: np.random.Generator | None = None) -> list[Pose2D]:
    """Visibility-filtered 2D detections, one Pose2D per person with any keypoint."""
    return [p for p, _ in project_keypoints_with_owners(persons, calib, depth, noise, rng)]


def project_keypoints_with_owners(persons, calib, depth, noise=NoiseConfig(), rng=None, include_occluded=False):
    rng = rng if rng is not None else np.random.default_rng(0)
    out = []
    for k, person in enumerate(persons):
        pose = project_person(person, calib, depth, noise, rng, scene=persons, include_occluded=include_occluded)
        if len(pose):
            out.append((pose, k))
    return out


@dataclass
class SyntheticFrame:
    frame_index: int
    persons: list[SyntheticPerson]
    calibrations: list[CameraCalibration]
    depth: dict[str, DepthImage] = field(default_factory=dict)
    detections: dict[str, list[Pose2D]] = field(default_factory=dict)
    owners: dict[str, list[int]] = field(default_factory=dict)

    def ground_truth(self) -> list[np.ndarray]:
        return [p.joint_positions for p in self.persons]


def frame_rng(seed: int, frame_index: int, view_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, frame_index, view_index, 0x5EED])


def render_frame(persons: list[SyntheticPerson], calibs: list[CameraCalibration],
                 noise: NoiseConfig = NoiseConfig(), seed: int = 0, frame_index: int = 0,
                 include_occluded: bool = False) -> SyntheticFrame:
    """Render depth and detections for every view of an explicit scene."""
    frame = SyntheticFrame(frame_index, persons, list(calibs))
    for k, calib in enumerate(calibs):
        rng = frame_rng(seed, frame_index, k)
        clean = render_depth(persons, calib)
        dets = project_keypoints_with_owners(persons, calib, clean, noise, rng, include_occluded)
        frame.detections[calib.view_id] = [d for d, _ in dets]
        frame.owners[calib.view_id] = [o for _, o in dets]
        frame.depth[calib.view_id] = clean if noise.depth_sigma == 0 and noise.depth_holes == 0 \
            else add_depth_noise(clean, noise, rng)
    return frame


def synthesize_frame(cfg: SceneConfig, frame_index: int = 0,
                     skel: SkeletonDefinition | None = None) -> SyntheticFrame:
    persons, calibs = generate_scene(cfg, frame_index, skel)
    return render_frame(persons, calibs, cfg.noise, cfg.seed, frame_index, cfg.include_occluded)
