"""Procedural articulated-body generator with ground-truth shape/pose factors.

A capsule-per-bone implicit surface is polygonized once per generator spec to
get a single closed template mesh with fixed connectivity; every sample is then
produced by shape maps (per-bone length/radius scaling) and linear blend
skinning, so the true factors behind every mesh are known exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage import measure

from .mesh import Mesh, build_adjacency, save_mesh
from .skeleton import SkeletonSpec, save_skeleton


class GeneratorError(ValueError):
    """Factors out of range or a generator spec that fails to produce a body."""


JOINT_NAMES = [
    "pelvis_root", "spine_base", "spine_mid", "neck", "head_top",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
]

REST_JOINTS = np.array([
    [0.00, 0.0, 1.00],   # pelvis_root
    [0.00, 0.0, 1.08],   # spine_base
    [0.00, 0.0, 1.32],   # spine_mid
    [0.00, 0.0, 1.56],   # neck
    [0.00, 0.0, 1.76],   # head_top
    [0.18, 0.0, 1.50],   # l_shoulder
    [0.48, 0.0, 1.50],   # l_elbow
    [0.74, 0.0, 1.50],   # l_wrist
    [-0.18, 0.0, 1.50],  # r_shoulder
    [-0.48, 0.0, 1.50],  # r_elbow
    [-0.74, 0.0, 1.50],  # r_wrist
    [0.10, 0.0, 0.96],   # l_hip
    [0.10, 0.0, 0.52],   # l_knee
    [0.10, 0.0, 0.08],   # l_ankle
    [-0.10, 0.0, 0.96],  # r_hip
    [-0.10, 0.0, 0.52],  # r_knee
    [-0.10, 0.0, 0.08],  # r_ankle
])

JOINT_PARENT = [-1, 0, 1, 2, 3, 3, 5, 6, 3, 8, 9, 0, 11, 12, 0, 14, 15]

# (name, proximal joint, distal joint, capsule radius, angle limit in radians)
BONES = [
    ("pelvis", 0, 1, 0.140, 0.30),
    ("lower_torso", 1, 2, 0.130, 0.35),
    ("upper_torso", 2, 3, 0.130, 0.35),
    ("head", 3, 4, 0.095, 0.50),
    ("l_upper_arm", 5, 6, 0.060, 0.90),
    ("l_lower_arm", 6, 7, 0.048, 0.90),
    ("r_upper_arm", 8, 9, 0.060, 0.90),
    ("r_lower_arm", 9, 10, 0.048, 0.90),
    ("l_upper_leg", 11, 12, 0.075, 0.70),
    ("l_lower_leg", 12, 13, 0.058, 0.70),
    ("r_upper_leg", 14, 15, 0.075, 0.70),
    ("r_lower_leg", 15, 16, 0.058, 0.70),
]

BONE_COUNT = len(BONES)
MULTIPLIER_RANGE = (0.7, 1.3)


@dataclass(frozen=True)
class GeneratorSpec:
    """Kinematic tree defaults plus tessellation and sampling controls."""

    voxel_size: float = 0.044
    weight_falloff: float = 1.5     # skin weight reach, in capsule radii
    sample_low: float = 0.85        # uniform sampling range for multipliers
    sample_high: float = 1.15

    @property
    def bone_names(self):
        return [b[0] for b in BONES]

    @property
    def joint_limits(self) -> np.ndarray:
        return np.array([b[4] for b in BONES])


@dataclass(frozen=True)
class BodyFactors:
    """Ground-truth generative factors: shape (lengths/radii/girth) and pose."""

    length_multipliers: np.ndarray
    radius_multipliers: np.ndarray
    girth: float
    pose_rotations: np.ndarray  # (BONE_COUNT, 3) axis-angle

    def __post_init__(self):
        lm = np.ascontiguousarray(np.asarray(self.length_multipliers, dtype=np.float64))
        rm = np.ascontiguousarray(np.asarray(self.radius_multipliers, dtype=np.float64))
        rot = np.ascontiguousarray(np.asarray(self.pose_rotations, dtype=np.float64))
        object.__setattr__(self, "length_multipliers", lm)
        object.__setattr__(self, "radius_multipliers", rm)
        object.__setattr__(self, "pose_rotations", rot)
        if lm.shape != (BONE_COUNT,) or rm.shape != (BONE_COUNT,):
            raise GeneratorError("multipliers must have one entry per bone")
        if rot.shape != (BONE_COUNT, 3):
            raise GeneratorError("pose_rotations must be (bones, 3) axis-angle")
        lo, hi = MULTIPLIER_RANGE
        for arr, what in ((lm, "length"), (rm, "radius"), (np.array([self.girth]), "girth")):
            if arr.min() < lo - 1e-12 or arr.max() > hi + 1e-12:
                raise GeneratorError(f"{what} multiplier outside [{lo}, {hi}]")

    @staticmethod
    def identity() -> "BodyFactors":
        return BodyFactors(
            np.ones(BONE_COUNT), np.ones(BONE_COUNT), 1.0, np.zeros((BONE_COUNT, 3))
        )

    def to_dict(self) -> dict:
        return {
            "length_multipliers": self.length_multipliers.tolist(),
            "radius_multipliers": self.radius_multipliers.tolist(),
            "girth": float(self.girth),
            "pose_rotations": self.pose_rotations.tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "BodyFactors":
        return BodyFactors(
            np.array(doc["length_multipliers"]),
            np.array(doc["radius_multipliers"]),
            float(doc["girth"]),
            np.array(doc["pose_rotations"]),
        )


def _axis_angle_matrix(rot: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(rot)
    if angle < 1e-12:
        return np.eye(3)
    axis = rot / angle
    K = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Distance of each point to segment ab and clamped axis parameter t."""
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0) if denom > 1e-30 else np.zeros(len(points))
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1), t


def _capsule_union_sdf(points: np.ndarray, joints: np.ndarray, radii: np.ndarray) -> np.ndarray:
    best = np.full(points.shape[0], np.inf)
    for bi, (_, ja, jb, _, _) in enumerate(BONES):
        d, _ = _segment_distances(points, joints[ja], joints[jb])
        best = np.minimum(best, d - radii[bi])
    return best


_template_cache: dict = {}


def build_template(spec: GeneratorSpec) -> Mesh:
    """Polygonize the rest-pose capsule union once; connectivity is fixed forever."""
    key = (spec.voxel_size,)
    if key in _template_cache:
        return _template_cache[key]
    radii = np.array([b[3] for b in BONES])
    pad = 3.0 * spec.voxel_size
    lo = REST_JOINTS.min(axis=0) - radii.max() - pad
    hi = REST_JOINTS.max(axis=0) + radii.max() + pad
    counts = np.ceil((hi - lo) / spec.voxel_size).astype(int) + 1
    axes = [lo[i] + np.arange(counts[i]) * spec.voxel_size for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    sdf = _capsule_union_sdf(pts, REST_JOINTS, radii).reshape(counts)

    verts, faces, _, _ = measure.marching_cubes(sdf, level=0.0, spacing=(spec.voxel_size,) * 3)
    verts = verts + lo
    mesh = Mesh(verts, faces.astype(np.int64))
    # marching cubes yields inward or outward winding depending on convention;
    # normalize to outward (positive signed volume)
    tri = mesh.vertices[mesh.faces]
    signed_volume = float(np.einsum("ij,ij->", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))) / 6.0
    if signed_volume < 0:
        mesh = Mesh(mesh.vertices, mesh.faces[:, ::-1])
    build_adjacency(mesh)  # fail loudly if the tessellation is not manifold
    _template_cache[key] = mesh
    return mesh


_weights_cache: dict = {}


def skin_weights(spec: GeneratorSpec) -> np.ndarray:
    """Smooth distance-based weights on the template: (V, bones), rows sum to 1."""
    key = (spec.voxel_size, spec.weight_falloff)
    if key in _weights_cache:
        return _weights_cache[key]
    mesh = build_template(spec)
    raw = np.zeros((mesh.vertex_count, BONE_COUNT))
    for bi, (_, ja, jb, radius, _) in enumerate(BONES):
        d, _ = _segment_distances(mesh.vertices, REST_JOINTS[ja], REST_JOINTS[jb])
        surface_dist = np.maximum(d - radius, 0.0)
        reach = spec.weight_falloff * radius
        raw[:, bi] = np.maximum(1.0 - surface_dist / reach, 0.0) ** 2
    row_sums = raw.sum(axis=1)
    zero = row_sums <= 0
    if zero.any():
        # every surface vertex lies on some capsule, but guard against grid noise
        nearest = np.argmax(raw, axis=1)
        raw[zero, nearest[zero]] = 1.0
        row_sums = raw.sum(axis=1)
    weights = raw / row_sums[:, None]
    weights.flags.writeable = False
    _weights_cache[key] = weights
    return weights


def _shaped_rest_joints(factors: BodyFactors) -> np.ndarray:
    bone_of_child = {b: bi for bi, (_, a, b, _, _) in enumerate(BONES)}
    shaped = np.zeros_like(REST_JOINTS)
    for j in range(REST_JOINTS.shape[0]):
        p = JOINT_PARENT[j]
        if p < 0:
            shaped[j] = REST_JOINTS[j]
            continue
        offset = REST_JOINTS[j] - REST_JOINTS[p]
        if j in bone_of_child:
            offset = offset * factors.length_multipliers[bone_of_child[j]]
        shaped[j] = shaped[p] + offset
    return shaped


def _shape_mapped_vertices(template: Mesh, weights: np.ndarray,
                           factors: BodyFactors, shaped_joints: np.ndarray) -> np.ndarray:
    """Per-bone axial/radial scaling of rest vertices, blended by skin weights."""
    out = np.zeros_like(template.vertices)
    pts = template.vertices
    for bi, (_, ja, jb, _, _) in enumerate(BONES):
        a, b = REST_JOINTS[ja], REST_JOINTS[jb]
        _, t = _segment_distances(pts, a, b)
        axis_point = a + t[:, None] * (b - a)
        radial = pts - axis_point
        rho = factors.radius_multipliers[bi] * factors.girth
        new_axis_point = shaped_joints[ja] + t[:, None] * (shaped_joints[jb] - shaped_joints[ja])
        out += weights[:, bi:bi + 1] * (new_axis_point + rho * radial)
    return out


def _bone_transforms(factors: BodyFactors, shaped_joints: np.ndarray):
    """Global (R, t) per bone from forward kinematics over the joint tree."""
    bone_of_child = {b: bi for bi, (_, a, b, _, _) in enumerate(BONES)}
    J = shaped_joints.shape[0]
    R_acc = [None] * J
    t_acc = [None] * J
    for j in range(J):
        p = JOINT_PARENT[j]
        if p < 0:
            R_acc[j], t_acc[j] = np.eye(3), np.zeros(3)
            continue
        if j in bone_of_child:
            bi = bone_of_child[j]
            R_local = _axis_angle_matrix(factors.pose_rotations[bi])
            pivot = shaped_joints[p]
            # rotate about the proximal joint, then apply the parent transform
            R_edge = R_local
            t_edge = pivot - R_local @ pivot
            R_acc[j] = R_acc[p] @ R_edge
            t_acc[j] = R_acc[p] @ t_edge + t_acc[p]
        else:
            R_acc[j], t_acc[j] = R_acc[p], t_acc[p]
    bone_R = np.stack([R_acc[b] for _, a, b, _, _ in BONES])
    bone_t = np.stack([t_acc[b] for _, a, b, _, _ in BONES])
    return bone_R, bone_t


def generate_body(factors: BodyFactors, spec: GeneratorSpec) -> Mesh:
    """Deterministic body surface for the given factors; connectivity is fixed."""
    template = build_template(spec)
    weights = skin_weights(spec)
    shaped_joints = _shaped_rest_joints(factors)
    rest = _shape_mapped_vertices(template, weights, factors, shaped_joints)
    bone_R, bone_t = _bone_transforms(factors, shaped_joints)
    posed = np.einsum("vb,bij,vj->vi", weights, bone_R, rest) + weights @ bone_t
    return Mesh(posed, template.faces)


def posed_joints(factors: BodyFactors, spec: GeneratorSpec) -> np.ndarray:
    """Ground-truth joint positions for the posed body (forward kinematics)."""
    shaped = _shaped_rest_joints(factors)
    bone_of_child = {b: bi for bi, (_, a, b, _, _) in enumerate(BONES)}
    bone_R, bone_t = _bone_transforms(factors, shaped)
    out = shaped.copy()
    for j in range(shaped.shape[0]):
        if j in bone_of_child:
            bi = bone_of_child[j]
            out[j] = bone_R[bi] @ shaped[j] + bone_t[bi]
        else:
            p = JOINT_PARENT[j]
            if p >= 0 and p in bone_of_child:
                bi = bone_of_child[p]
                out[j] = bone_R[bi] @ shaped[j] + bone_t[bi]
    return out


def emit_skeleton_spec(spec: GeneratorSpec) -> SkeletonSpec:
    """Joint regressor, part labels, and per-bone groups for the template."""
    mesh = build_template(spec)
    weights = skin_weights(spec)
    labels = np.argmax(weights, axis=1)

    incident = {j: [] for j in range(len(JOINT_NAMES))}
    for bi, (_, ja, jb, _, _) in enumerate(BONES):
        incident[ja].append(bi)
        incident[jb].append(bi)

    radii = np.array([b[3] for b in BONES])

    def joint_row(j, center, sigma):
        dist = np.linalg.norm(mesh.vertices - center, axis=1)
        kernel = np.exp(-((dist / sigma) ** 2))
        relevance = weights[:, incident[j]].sum(axis=1)
        row = kernel * relevance
        row[row < 1e-3 * row.max()] = 0.0
        return row / row.sum()

    # the kernel center is calibrated by fixed point so the weighted surface
    # average lands on the joint despite asymmetric surrounding geometry
    reg = np.zeros((len(JOINT_NAMES), mesh.vertex_count))
    for j in range(len(JOINT_NAMES)):
        sigma = max(radii[bi] for bi in incident[j])
        center = REST_JOINTS[j].copy()
        row = joint_row(j, center, sigma)
        for _ in range(50):
            residual = REST_JOINTS[j] - row @ mesh.vertices
            if np.linalg.norm(residual) < 1e-6:
                break
            center = center + residual
            row = joint_row(j, center, sigma)
        reg[j] = row

    groups = [[ja, jb] for (_, ja, jb, _, _) in BONES]
    return SkeletonSpec(
        BONE_COUNT, JOINT_NAMES, reg, labels, groups, [b[0] for b in BONES]
    )


def sample_factors(rng: np.random.Generator, spec: GeneratorSpec) -> BodyFactors:
    lo, hi = spec.sample_low, spec.sample_high
    lengths = rng.uniform(lo, hi, size=BONE_COUNT)
    radii = rng.uniform(lo, hi, size=BONE_COUNT)
    girth = rng.uniform(lo, hi)
    limits = spec.joint_limits
    axes = rng.normal(size=(BONE_COUNT, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(0.0, limits)
    return BodyFactors(lengths, radii, girth, axes * angles[:, None])


def sample_dataset(n: int, seed: int, spec: GeneratorSpec | None = None):
    """n (mesh, factors) samples plus deterministic 80/10/10 split indices."""
    if n < 1:
        raise GeneratorError("need at least one sample")
    spec = spec or GeneratorSpec()
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        factors = sample_factors(rng, spec)
        samples.append((generate_body(factors, spec), factors))
    n_train = max(1, int(round(n * 0.8)))
    n_val = max(1, int(round(n * 0.1))) if n - n_train >= 2 else max(0, n - n_train - 1)
    n_train = min(n_train, n - 2) if n >= 3 else n_train
    train = list(range(n_train))
    val = list(range(n_train, n_train + n_val))
    test = list(range(n_train + n_val, n))
    splits = {"train": train, "val": val, "test": test}
    return samples, splits


def oracle_mesh(shape_of: BodyFactors, pose_of: BodyFactors, spec: GeneratorSpec) -> Mesh:
    """Ground truth for pose transfer: shape factors of one body, pose of another."""
    combined = BodyFactors(
        shape_of.length_multipliers,
        shape_of.radius_multipliers,
        shape_of.girth,
        pose_of.pose_rotations,
    )
    return generate_body(combined, spec)


def write_dataset(out_dir, n: int, seed: int, spec: GeneratorSpec | None = None) -> dict:
    """Emit OBJ meshes, skeleton spec JSON, and a factors manifest."""
    spec = spec or GeneratorSpec()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    template = build_template(spec)
    save_mesh(template, out / "template.obj")
    save_skeleton(emit_skeleton_spec(spec), out / "skeleton.json")
    samples, splits = sample_dataset(n, seed, spec)
    split_of = {}
    for name, idxs in splits.items():
        for i in idxs:
            split_of[i] = name
    records = []
    for i, (mesh, factors) in enumerate(samples):
        mesh_id = f"body_{i:04d}"
        save_mesh(mesh, out / f"{mesh_id}.obj")
        records.append(
            {
                "id": mesh_id,
                "file": f"{mesh_id}.obj",
                "split": split_of[i],
                "factors": factors.to_dict(),
            }
        )
    manifest = {
        "template": "template.obj",
        "skeleton": "skeleton.json",
        "seed": seed,
        "voxel_size": spec.voxel_size,
        "meshes": records,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return manifest
