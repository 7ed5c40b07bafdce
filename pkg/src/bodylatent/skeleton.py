"""Anatomical priors: linear joint regressor, per-vertex part labels, bone groups.

The skeleton spec is a single JSON document:

    {
      "K": 12,
      "joints": ["pelvis", ...],
      "regressor": [[j, v, w], ...],        # sparse triplets, rows sum to 1
      "part_labels": [0, 3, ...],           # one id in 0..K-1 per vertex
      "groups": [[0, 1], ...],              # joint ids feeding each pose branch
      "group_names": ["lower_torso", ...]   # optional
    }
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import Mesh


class SkeletonError(ValueError):
    """Invalid skeleton spec or mismatch with the mesh it is applied to."""


@dataclass(frozen=True)
class SkeletonSpec:
    """Bone-group count K, J x V joint regressor, part labels, group memberships."""

    K: int
    joint_names: tuple
    regressor: np.ndarray
    part_labels: np.ndarray
    groups: tuple
    group_names: tuple

    def __post_init__(self):
        reg = np.ascontiguousarray(np.asarray(self.regressor, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.part_labels, dtype=np.int64))
        reg.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "regressor", reg)
        object.__setattr__(self, "part_labels", labels)
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "groups", tuple(tuple(int(j) for j in g) for g in self.groups))
        object.__setattr__(self, "group_names", tuple(self.group_names))
        _validate_spec(self)

    @property
    def joint_count(self) -> int:
        return self.regressor.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.regressor.shape[1]

    def group_vector_dims(self) -> list:
        """Flat per-group pose-feature dimensionality: 3*(members + 1)."""
        return [3 * (len(g) + 1) for g in self.groups]

    def canonical_json(self) -> str:
        """Deterministic serialization, used both for saving and for hashing."""
        rows, cols = np.nonzero(self.regressor)
        triplets = [
            [int(r), int(c), float(self.regressor[r, c])] for r, c in zip(rows, cols)
        ]
        doc = {
            "K": self.K,
            "joints": list(self.joint_names),
            "regressor": triplets,
            "part_labels": self.part_labels.tolist(),
            "groups": [list(g) for g in self.groups],
            "group_names": list(self.group_names),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _validate_spec(spec: SkeletonSpec) -> None:
    if spec.K < 1:
        raise SkeletonError("K must be >= 1")
    J, V = spec.regressor.shape
    if len(spec.joint_names) != J:
        raise SkeletonError(f"{len(spec.joint_names)} joint names for {J} regressor rows")
    if (spec.regressor < 0).any():
        raise SkeletonError("regressor weights must be nonnegative")
    sums = spec.regressor.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > 1e-9)[0]
    if bad.size:
        raise SkeletonError(f"regressor row {bad[0]} sums to {sums[bad[0]]:.6g}")
    if spec.part_labels.shape != (V,):
        raise SkeletonError(
            f"part_labels length {spec.part_labels.shape[0]} != vertex count {V}"
        )
    if spec.part_labels.min(initial=0) < 0 or spec.part_labels.max(initial=0) >= spec.K:
        raise SkeletonError("part label out of range 0..K-1")
    present = set(np.unique(spec.part_labels).tolist())
    missing = sorted(set(range(spec.K)) - present)
    if missing:
        raise SkeletonError(f"part id {missing[0]} labels no vertex")
    if len(spec.groups) != spec.K:
        raise SkeletonError(f"{len(spec.groups)} groups for K={spec.K}")
    if len(spec.group_names) != spec.K:
        raise SkeletonError(f"{len(spec.group_names)} group names for K={spec.K}")
    referenced = set()
    for g in spec.groups:
        if not g:
            raise SkeletonError("empty bone group")
        for j in g:
            if j < 0 or j >= J:
                raise SkeletonError(f"group joint id {j} outside 0..{J - 1}")
            referenced.add(j)
    unreferenced = sorted(set(range(J)) - referenced)
    if unreferenced:
        raise SkeletonError(f"joint {unreferenced[0]} is not referenced by any group")


def skeleton_hash(spec: SkeletonSpec) -> str:
    return hashlib.sha256(spec.canonical_json().encode("utf-8")).hexdigest()


def save_skeleton(spec: SkeletonSpec, path) -> None:
    Path(path).write_text(spec.canonical_json() + "\n", encoding="utf-8")


def load_skeleton(path, mesh: Mesh) -> SkeletonSpec:
    """Load and validate a skeleton spec against the mesh it will be used with."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        K = int(doc["K"])
        joints = list(doc["joints"])
        triplets = doc["regressor"]
        labels = doc["part_labels"]
        groups = doc["groups"]
    except KeyError as exc:
        raise SkeletonError(f"skeleton spec missing field {exc}") from exc
    group_names = doc.get("group_names", [f"group_{k}" for k in range(K)])
    V = mesh.vertex_count
    if len(labels) != V:
        raise SkeletonError(f"part_labels length {len(labels)} != mesh vertex count {V}")
    reg = np.zeros((len(joints), V), dtype=np.float64)
    for j, v, w in triplets:
        j, v = int(j), int(v)
        if not (0 <= j < len(joints)) or not (0 <= v < V):
            raise SkeletonError(f"regressor triplet ({j}, {v}) out of range")
        reg[j, v] += float(w)
    return SkeletonSpec(K, joints, reg, labels, groups, group_names)


def regress_joints(mesh: Mesh, spec: SkeletonSpec) -> np.ndarray:
    """Joint positions as the fixed linear map of vertex positions: (J, 3)."""
    if mesh.vertex_count != spec.vertex_count:
        raise SkeletonError(
            f"mesh has {mesh.vertex_count} vertices, regressor expects {spec.vertex_count}"
        )
    return spec.regressor @ mesh.vertices


def group_joint_vectors(joints: np.ndarray, spec: SkeletonSpec) -> list:
    """Per-group flat pose-branch inputs.

    For group k with member joints (j0, j1, ...): the members' positions
    relative to j0, concatenated, followed by j0's absolute position.
    """
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (spec.joint_count, 3):
        raise SkeletonError(f"joints must have shape ({spec.joint_count}, 3)")
    out = []
    for g in spec.groups:
        anchor = joints[g[0]]
        rel = joints[list(g)] - anchor
        out.append(np.concatenate([rel.ravel(), anchor]))
    return out
