"""Triangle-mesh data model, OBJ I/O, topology validation, and adjacency queries.

All meshes in one dataset are expected to share an identical face list; the
rest of the package relies on that and on 1-ring adjacency being available.
Vertex coordinates are in meters throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid mesh data, unsupported mesh file, or topology mismatch."""


def _as_vertices(vertices) -> np.ndarray:
    v = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64))
    if v.ndim != 2 or v.shape[1] != 3:
        raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
    if not np.isfinite(v).all():
        raise MeshError("vertices contain non-finite coordinates")
    return v


def _as_faces(faces, vertex_count: int) -> np.ndarray:
    f = np.ascontiguousarray(np.asarray(faces, dtype=np.int64))
    if f.size == 0:
        f = f.reshape(0, 3)
    if f.ndim != 2 or f.shape[1] != 3:
        raise MeshError(f"faces must have shape (F, 3), got {f.shape}")
    if f.size and (f.min() < 0 or f.max() >= vertex_count):
        bad = int(np.argmax((f < 0).any(axis=1) | (f >= vertex_count).any(axis=1)))
        raise MeshError(f"face {bad} references a vertex outside [0, {vertex_count})")
    degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    if degenerate.any():
        raise MeshError(f"face {int(np.argmax(degenerate))} repeats a vertex index")
    return f


@dataclass(frozen=True)
class Mesh:
    """Shared-topology triangle mesh: vertex positions (meters) and face triples."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _as_vertices(self.vertices)
        f = _as_faces(self.faces, v.shape[0])
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def face_count(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity, new vertex positions."""
        return Mesh(vertices, self.faces)

    def bounding_box_diagonal(self) -> float:
        if self.vertex_count == 0:
            return 0.0
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(extent))


@dataclass(frozen=True)
class Adjacency:
    """Per-vertex ordered 1-ring neighbor lists plus the unique edge list.

    Rings are ordered counterclockwise with respect to the outward face
    orientation; at boundary vertices the walk starts from the boundary edge.
    """

    rings: tuple
    edges: np.ndarray

    def __post_init__(self):
        e = np.ascontiguousarray(np.asarray(self.edges, dtype=np.int64))
        e.flags.writeable = False
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "rings", tuple(np.asarray(r, dtype=np.int64) for r in self.rings))

    @property
    def vertex_count(self) -> int:
        return len(self.rings)

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]


def load_mesh(path) -> Mesh:
    """Load a triangular OBJ mesh. Normals/UVs are ignored; quads are rejected."""
    path = Path(path)
    vertices = []
    faces = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: vertex line needs 3 coordinates")
                try:
                    vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError as exc:
                    raise MeshError(f"{path}:{lineno}: bad vertex coordinate: {exc}") from exc
            elif tag == "f":
                idx = parts[1:]
                if len(idx) != 3:
                    raise MeshError(f"{path}:{lineno}: non-triangular face with {len(idx)} vertices")
                face = []
                for token in idx:
                    head = token.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as exc:
                        raise MeshError(f"{path}:{lineno}: bad face index {token!r}") from exc
                    if i < 1:
                        raise MeshError(f"{path}:{lineno}: face indices must be positive (1-based)")
                    face.append(i - 1)
                faces.append(face)
            # vn/vt/o/g/s/usemtl/mtllib are ignored
    try:
        return Mesh(np.array(vertices, dtype=np.float64).reshape(len(vertices), 3), faces)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc


def save_mesh(mesh: Mesh, path) -> None:
    """Write an OBJ file with deterministic bytes (9 significant digit coordinates)."""
    if mesh.vertex_count == 0:
        raise MeshError("empty mesh")
    path = Path(path)
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def build_adjacency(mesh: Mesh) -> Adjacency:
    """Ordered 1-ring adjacency; fails on non-manifold or inconsistently wound edges."""
    V = mesh.vertex_count
    # next_in_ring[v][a] = b for each face (v, a, b) in cyclic order
    next_in_ring = [dict() for _ in range(V)]
    prev_count = [dict() for _ in range(V)]  # incoming-edge counts, to find boundary starts
    edge_faces = {}
    for fi, (a, b, c) in enumerate(mesh.faces):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            edge_faces.setdefault(key, []).append(fi)
            if len(edge_faces[key]) > 2:
                raise MeshError(f"non-manifold edge ({key[0]}, {key[1]}) shared by more than 2 faces")
        for v, x, y in ((a, b, c), (b, c, a), (c, a, b)):
            ring = next_in_ring[v]
            if x in ring:
                raise MeshError(
                    f"inconsistent face winding around vertex {v}: edge to {x} appears twice"
                )
            ring[x] = y
            prev_count[v][y] = prev_count[v].get(y, 0) + 1

    rings = []
    for v in range(V):
        ring = next_in_ring[v]
        if not ring:
            rings.append(np.empty(0, dtype=np.int64))
            continue
        neighbors = set(ring) | set(ring.values())
        # boundary start: a neighbor that is nobody's successor; otherwise lowest index
        starts = sorted(n for n in neighbors if n not in prev_count[v])
        start = starts[0] if starts else min(ring)
        ordered = [start]
        seen = {start}
        cur = start
        while cur in ring and ring[cur] not in seen:
            cur = ring[cur]
            ordered.append(cur)
            seen.add(cur)
        if len(ordered) != len(neighbors):
            raise MeshError(f"non-manifold fan around vertex {v}")
        rings.append(np.array(ordered, dtype=np.int64))

    edges = np.array(sorted(edge_faces.keys()), dtype=np.int64).reshape(len(edge_faces), 2)
    return Adjacency(tuple(rings), edges)


def validate_dataset_topology(meshes) -> None:
    """Check that every mesh shares the first mesh's exact face list."""
    meshes = list(meshes)
    if not meshes:
        raise MeshError("dataset is empty")
    ref = meshes[0].faces
    for i, m in enumerate(meshes[1:], start=1):
        if m.faces.shape != ref.shape or not np.array_equal(m.faces, ref):
            raise MeshError(f"mesh {i} has a different face list than mesh 0")
