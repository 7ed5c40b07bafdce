"""Multi-resolution sampling hierarchy and spiral orderings.

Decimation is greedy quadric-error-metric edge collapse where the surviving
endpoint keeps its original position, so downsampling is pure row selection
and upsampling is barycentric interpolation on the coarse surface.
"""
from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .binio import BinaryFormatError, pack_frames, unpack_frames
from .mesh import Adjacency, Mesh, build_adjacency

# Cross-part collapses must lose to every geometric cost so each bone group
# survives to the coarsest level; boundary planes only need a positive weight.
PART_PENALTY_FACTOR = 1e6
BOUNDARY_QUADRIC_WEIGHT = 1e3


class HierarchyError(ValueError):
    """Decimation failure or malformed hierarchy data."""


@dataclass(frozen=True)
class SamplingLevel:
    """One decimation step: coarse mesh plus down (selection) and up (barycentric) maps."""

    coarse_mesh: Mesh
    down_map: np.ndarray      # (Vc,) fine vertex each coarse vertex survives from
    up_tris: np.ndarray       # (Vf,) coarse triangle id per fine vertex
    up_bary: np.ndarray       # (Vf, 3) barycentric weights, nonnegative, sum 1
    collapse_costs: np.ndarray  # executed collapse costs in execution order

    def __post_init__(self):
        for name in ("down_map", "up_tris", "collapse_costs"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name)))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        bary = np.ascontiguousarray(np.asarray(self.up_bary, dtype=np.float64))
        bary.flags.writeable = False
        object.__setattr__(self, "up_bary", bary)
        if len(np.unique(self.down_map)) != self.down_map.shape[0]:
            raise HierarchyError("down_map is not injective")
        if bary.size and (bary.min() < -1e-12 or np.abs(bary.sum(axis=1) - 1.0).max() > 1e-9):
            raise HierarchyError("barycentric weights must be nonnegative and sum to 1")

    @property
    def fine_vertex_count(self) -> int:
        return self.up_tris.shape[0]

    @property
    def coarse_vertex_count(self) -> int:
        return self.coarse_mesh.vertex_count


@dataclass(frozen=True)
class SpiralTable:
    """Fixed-length spiral vertex orderings, one row per vertex."""

    indices: np.ndarray  # (V, S)

    def __post_init__(self):
        idx = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64))
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    @property
    def length(self) -> int:
        return self.indices.shape[1]


@dataclass(frozen=True)
class SamplingHierarchy:
    """Chained sampling levels with per-level spiral tables and part labels.

    Index 0 of `spirals`/`part_labels` refers to the template resolution;
    index l+1 refers to the coarse mesh of `levels[l]`.
    """

    template: Mesh
    levels: tuple
    spirals: tuple
    part_labels: tuple
    ratios: tuple
    spiral_lengths: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "spirals", tuple(self.spirals))
        labels = []
        for arr in self.part_labels:
            a = np.ascontiguousarray(np.asarray(arr, dtype=np.int64))
            a.flags.writeable = False
            labels.append(a)
        object.__setattr__(self, "part_labels", tuple(labels))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(self, "spiral_lengths", tuple(int(s) for s in self.spiral_lengths))
        counts = [self.template.vertex_count] + [l.coarse_vertex_count for l in self.levels]
        for a, b in zip(counts, counts[1:]):
            if b > a:
                raise HierarchyError("level vertex counts must be non-increasing")

    def meshes(self) -> list:
        return [self.template] + [l.coarse_mesh for l in self.levels]

    @property
    def coarsest_labels(self) -> np.ndarray:
        return self.part_labels[-1]


def _face_quadric(a, b, c):
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n)
    if norm < 1e-30:
        return np.zeros((4, 4))
    n = n / norm
    p = np.array([n[0], n[1], n[2], -float(np.dot(n, a))])
    return np.outer(p, p)


def _boundary_quadric(u, v, face_normal):
    edge = v - u
    n = np.cross(edge, face_normal)
    norm = np.linalg.norm(n)
    if norm < 1e-30:
        return np.zeros((4, 4))
    n = n / norm
    p = np.array([n[0], n[1], n[2], -float(np.dot(n, u))])
    return BOUNDARY_QUADRIC_WEIGHT * np.outer(p, p)


def _quadric_error(Q, v):
    h = np.array([v[0], v[1], v[2], 1.0])
    return max(float(h @ Q @ h), 0.0)


def qem_decimate(mesh: Mesh, keep_ratio: float, part_labels=None) -> SamplingLevel:
    """Collapse minimum-cost edges until ceil(keep_ratio * V) vertices remain.

    The endpoint with lower resulting quadric error survives at its original
    position. When part labels are given, collapses that merge two labels pay
    a large penalty and a label's last vertex is never removed.
    """
    if not (0.0 < keep_ratio <= 1.0):
        raise HierarchyError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    V = mesh.vertex_count
    target = math.ceil(keep_ratio * V)
    if target < 4:
        raise HierarchyError(f"target vertex count {target} is below 4")
    if part_labels is not None:
        part_labels = np.asarray(part_labels, dtype=np.int64)
        if part_labels.shape != (V,):
            raise HierarchyError("part_labels length must match vertex count")

    verts = mesh.vertices
    diag = mesh.bounding_box_diagonal()
    penalty = PART_PENALTY_FACTOR * diag * diag if part_labels is not None else 0.0

    quadrics = np.zeros((V, 4, 4))
    neighbor = [set() for _ in range(V)]
    vertex_faces = [set() for _ in range(V)]
    faces = [list(f) for f in mesh.faces]
    face_alive = [True] * len(faces)
    edge_face_count = {}
    for fi, (a, b, c) in enumerate(faces):
        Q = _face_quadric(verts[a], verts[b], verts[c])
        for v in (a, b, c):
            quadrics[v] += Q
            vertex_faces[v].add(fi)
        for u, v in ((a, b), (b, c), (c, a)):
            neighbor[u].add(v)
            neighbor[v].add(u)
            key = (min(u, v), max(u, v))
            edge_face_count[key] = edge_face_count.get(key, 0) + 1
    # boundary edges get a perpendicular constraint plane so open borders only
    # slide along themselves during collapse
    for fi, (a, b, c) in enumerate(faces):
        fn = np.cross(verts[b] - verts[a], verts[c] - verts[a])
        norm = np.linalg.norm(fn)
        fn = fn / norm if norm > 1e-30 else fn
        for u, v in ((a, b), (b, c), (c, a)):
            if edge_face_count[(min(u, v), max(u, v))] == 1:
                Qb = _boundary_quadric(verts[u], verts[v], fn)
                quadrics[u] += Qb
                quadrics[v] += Qb

    label = part_labels.copy() if part_labels is not None else None
    label_counts = None
    if label is not None:
        label_counts = np.bincount(label, minlength=int(label.max()) + 1)

    stamp = [0] * V
    alive = [True] * V

    def edge_entry(i, j):
        a, b = (i, j) if i < j else (j, i)
        err_a = _quadric_error(quadrics[a] + quadrics[b], verts[a])
        err_b = _quadric_error(quadrics[a] + quadrics[b], verts[b])
        if err_a <= err_b:
            keep, err = a, err_a
        else:
            keep, err = b, err_b
        cost = err
        if label is not None and label[a] != label[b]:
            cost += penalty
        return (cost, (a, b), stamp[a], stamp[b], keep)

    heap = [edge_entry(a, b) for (a, b) in edge_face_count if True]
    heapq.heapify(heap)
    blocked = {}

    def link_condition_ok(i, j):
        shared_faces = vertex_faces[i] & vertex_faces[j]
        opposite = set()
        for fi in shared_faces:
            opposite.update(faces[fi])
        opposite -= {i, j}
        if (neighbor[i] & neighbor[j]) != opposite:
            return False
        # removing the shared faces must not strand an opposite vertex
        for k in opposite:
            if len(vertex_faces[k] - shared_faces) == 0:
                return False
        return len(shared_faces) in (1, 2)

    alive_count = V
    executed_costs = []
    while alive_count > target:
        if not heap:
            raise HierarchyError(
                f"no valid collapse remains at {alive_count} vertices (target {target})"
            )
        cost, (a, b), sa, sb, keep = heapq.heappop(heap)
        if not (alive[a] and alive[b]):
            continue
        if stamp[a] != sa or stamp[b] != sb:
            continue
        if b not in neighbor[a]:
            continue
        removed = b if keep == a else a
        if label is not None and label[a] != label[b] and label_counts[label[removed]] <= 1:
            blocked[(a, b)] = (sa, sb)
            continue
        if not link_condition_ok(a, b):
            blocked[(a, b)] = (sa, sb)
            continue

        executed_costs.append(cost)
        kept = keep
        quadrics[kept] = quadrics[a] + quadrics[b]
        if label is not None:
            label_counts[label[removed]] -= 1
        shared = vertex_faces[kept] & vertex_faces[removed]
        for fi in shared:
            face_alive[fi] = False
            for v in faces[fi]:
                vertex_faces[v].discard(fi)
        for fi in list(vertex_faces[removed]):
            faces[fi] = [kept if v == removed else v for v in faces[fi]]
            vertex_faces[removed].discard(fi)
            vertex_faces[kept].add(fi)
        for n in list(neighbor[removed]):
            neighbor[n].discard(removed)
            if n != kept:
                neighbor[n].add(kept)
                neighbor[kept].add(n)
        neighbor[kept].discard(removed)
        neighbor[kept].discard(kept)
        alive[removed] = False
        alive_count -= 1
        stamp[kept] += 1
        stamp[removed] += 1
        for n in neighbor[kept]:
            stamp_key = (min(kept, n), max(kept, n))
            blocked.pop(stamp_key, None)
            heapq.heappush(heap, edge_entry(kept, n))

    survivors = np.array([v for v in range(V) if alive[v]], dtype=np.int64)
    coarse_index = -np.ones(V, dtype=np.int64)
    coarse_index[survivors] = np.arange(survivors.shape[0])
    coarse_faces = []
    seen_faces = set()
    for fi, f in enumerate(faces):
        if not face_alive[fi]:
            continue
        tri = tuple(coarse_index[v] for v in f)
        key = tuple(sorted(tri))
        if key in seen_faces:
            raise HierarchyError("collapse produced a duplicate face")
        seen_faces.add(key)
        coarse_faces.append(tri)
    coarse = Mesh(verts[survivors], np.array(coarse_faces, dtype=np.int64))

    up_tris, up_bary = _closest_point_map(verts, coarse)
    # survivors map exactly to their own coarse slot
    vert_tris = [[] for _ in range(coarse.vertex_count)]
    for ti, (x, y, z) in enumerate(coarse.faces):
        vert_tris[x].append((ti, 0))
        vert_tris[y].append((ti, 1))
        vert_tris[z].append((ti, 2))
    up_tris = up_tris.copy()
    up_bary = up_bary.copy()
    for ci, fi in enumerate(survivors):
        if not vert_tris[ci]:
            raise HierarchyError(f"surviving vertex {int(fi)} has no incident coarse face")
        ti, corner = min(vert_tris[ci])
        up_tris[fi] = ti
        w = np.zeros(3)
        w[corner] = 1.0
        up_bary[fi] = w

    return SamplingLevel(coarse, survivors, up_tris, up_bary, np.array(executed_costs))


def _closest_point_map(points: np.ndarray, surface: Mesh, chunk: int = 512):
    """Closest point on `surface` for each row of `points`: (triangle id, barycentrics)."""
    tris = surface.vertices[surface.faces]  # (F, 3, 3)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab = b - a
    ac = c - a
    out_tri = np.empty(points.shape[0], dtype=np.int64)
    out_bary = np.empty((points.shape[0], 3))
    for lo in range(0, points.shape[0], chunk):
        p = points[lo:lo + chunk][:, None, :]  # (n, 1, 3)
        ap = p - a[None]
        d1 = np.einsum("fk,nfk->nf", ab, ap)
        d2 = np.einsum("fk,nfk->nf", ac, ap)
        bp = p - b[None]
        d3 = np.einsum("fk,nfk->nf", ab, bp)
        d4 = np.einsum("fk,nfk->nf", ac, bp)
        cp = p - c[None]
        d5 = np.einsum("fk,nfk->nf", ab, cp)
        d6 = np.einsum("fk,nfk->nf", ac, cp)

        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4

        n, F = d1.shape
        v = np.zeros((n, F))
        w = np.zeros((n, F))
        # interior by default
        denom = va + vb + vc
        safe = np.where(np.abs(denom) < 1e-300, 1.0, denom)
        v = vb / safe
        w = vc / safe
        # edge bc
        t_bc = (d4 - d3) / np.where(np.abs((d4 - d3) + (d5 - d6)) < 1e-300, 1.0,
                                    (d4 - d3) + (d5 - d6))
        on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        v = np.where(on_bc, 1.0 - t_bc, v)
        w = np.where(on_bc, t_bc, w)
        # edge ac
        t_ac = d2 / np.where(np.abs(d2 - d6) < 1e-300, 1.0, d2 - d6)
        on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        v = np.where(on_ac, 0.0, v)
        w = np.where(on_ac, t_ac, w)
        # edge ab
        t_ab = d1 / np.where(np.abs(d1 - d3) < 1e-300, 1.0, d1 - d3)
        on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        v = np.where(on_ab, t_ab, v)
        w = np.where(on_ab, 0.0, w)
        # corners
        at_a = (d1 <= 0) & (d2 <= 0)
        at_b = (d3 >= 0) & (d4 <= d3)
        at_c = (d6 >= 0) & (d5 <= d6)
        v = np.where(at_c, 0.0, np.where(at_b, 1.0, np.where(at_a, 0.0, v)))
        w = np.where(at_c, 1.0, np.where(at_b, 0.0, np.where(at_a, 0.0, w)))

        v = np.clip(v, 0.0, 1.0)
        w = np.clip(w, 0.0, 1.0)
        scale = np.maximum(v + w, 1.0)
        v, w = v / scale, w / scale
        closest = a[None] + v[..., None] * ab[None] + w[..., None] * ac[None]
        d2_all = ((p - closest) ** 2).sum(axis=2)
        best = np.argmin(d2_all, axis=1)
        rows = np.arange(n)
        out_tri[lo:lo + chunk] = best
        bv = v[rows, best]
        bw = w[rows, best]
        out_bary[lo:lo + chunk] = np.stack([1.0 - bv - bw, bv, bw], axis=1)
    return out_tri, out_bary


def apply_down(level: SamplingLevel, fine_features: np.ndarray) -> np.ndarray:
    """Select surviving rows: coarse row i = fine row down_map[i]."""
    fine_features = np.asarray(fine_features)
    if fine_features.shape[0] != level.fine_vertex_count:
        raise HierarchyError(
            f"expected {level.fine_vertex_count} fine rows, got {fine_features.shape[0]}"
        )
    return fine_features[level.down_map]


def apply_up(level: SamplingLevel, coarse_features: np.ndarray) -> np.ndarray:
    """Barycentric interpolation from coarse rows back to fine rows."""
    coarse_features = np.asarray(coarse_features)
    if coarse_features.shape[0] != level.coarse_vertex_count:
        raise HierarchyError(
            f"expected {level.coarse_vertex_count} coarse rows, got {coarse_features.shape[0]}"
        )
    corners = level.coarse_mesh.faces[level.up_tris]  # (Vf, 3)
    gathered = coarse_features[corners]               # (Vf, 3, C...)
    bary = level.up_bary.reshape(level.up_bary.shape + (1,) * (gathered.ndim - 2))
    return (gathered * bary).sum(axis=1)


def compute_spirals(mesh: Mesh, adjacency: Adjacency, length: int) -> SpiralTable:
    """Spiral orderings: self, 1-ring from the nearest neighbor CCW, then the 2-ring."""
    if length < 1:
        raise HierarchyError("spiral length must be >= 1")
    rows = np.empty((mesh.vertex_count, length), dtype=np.int64)
    verts = mesh.vertices
    for v in range(mesh.vertex_count):
        ring = adjacency.rings[v]
        if ring.shape[0] == 0:
            raise HierarchyError(f"isolated vertex {v} has no spiral")
        dists = np.linalg.norm(verts[ring] - verts[v], axis=1)
        start = int(np.lexsort((ring, dists))[0])
        ring1 = np.roll(ring, -start)
        spiral = [v] + ring1.tolist()
        seen = set(spiral)
        for u in ring1:
            for w in adjacency.rings[u]:
                w = int(w)
                if w not in seen:
                    spiral.append(w)
                    seen.add(w)
        if len(spiral) >= length:
            row = spiral[:length]
        else:
            row = spiral + [spiral[-1]] * (length - len(spiral))
        rows[v] = row
    return SpiralTable(rows)


def build_hierarchy(template: Mesh, skeleton, ratios, spiral_lengths) -> SamplingHierarchy:
    """Chain QEM levels on the template, propagating part labels to every level."""
    ratios = tuple(float(r) for r in ratios)
    spiral_lengths = tuple(int(s) for s in spiral_lengths)
    if len(ratios) != len(spiral_lengths):
        raise HierarchyError("need one spiral length per level")
    labels = np.asarray(skeleton.part_labels, dtype=np.int64)
    if labels.shape[0] != template.vertex_count:
        raise HierarchyError("skeleton labels do not match template vertex count")

    current = template
    level_labels = [labels]
    spirals = [compute_spirals(current, build_adjacency(current), spiral_lengths[0])]
    levels = []
    for li, ratio in enumerate(ratios):
        level = qem_decimate(current, ratio, part_labels=level_labels[-1])
        levels.append(level)
        level_labels.append(level_labels[-1][level.down_map])
        current = level.coarse_mesh
        spirals.append(compute_spirals(current, build_adjacency(current),
                                       spiral_lengths[min(li + 1, len(spiral_lengths) - 1)]))
    present = set(np.unique(level_labels[-1]).tolist())
    missing = sorted(set(np.unique(labels).tolist()) - present)
    if missing:
        raise HierarchyError(f"part id {missing[0]} lost before the coarsest level")
    return SamplingHierarchy(template, levels, spirals, level_labels, ratios, spiral_lengths)


# --- serialization ------------------------------------------------------------

HIERARCHY_MAGIC = b"DHBRHIER"
_HIERARCHY_VERSION = 1


def hierarchy_to_bytes(h: SamplingHierarchy) -> bytes:
    arrays = [
        ("template/vertices", h.template.vertices),
        ("template/faces", h.template.faces),
        ("ratios", np.array(h.ratios)),
        ("spiral_lengths", np.array(h.spiral_lengths, dtype=np.int64)),
        ("n_levels", np.array([len(h.levels)], dtype=np.int64)),
    ]
    for i, (table, labels) in enumerate(zip(h.spirals, h.part_labels)):
        arrays.append((f"spiral/{i}", table.indices))
        arrays.append((f"labels/{i}", labels))
    for i, lvl in enumerate(h.levels):
        arrays.append((f"level/{i}/vertices", lvl.coarse_mesh.vertices))
        arrays.append((f"level/{i}/faces", lvl.coarse_mesh.faces))
        arrays.append((f"level/{i}/down_map", lvl.down_map))
        arrays.append((f"level/{i}/up_tris", lvl.up_tris))
        arrays.append((f"level/{i}/up_bary", lvl.up_bary))
        arrays.append((f"level/{i}/collapse_costs", lvl.collapse_costs))
    return pack_frames(HIERARCHY_MAGIC, _HIERARCHY_VERSION, arrays)


def hierarchy_from_bytes(blob: bytes) -> SamplingHierarchy:
    try:
        arrays = unpack_frames(blob, HIERARCHY_MAGIC, _HIERARCHY_VERSION)
    except BinaryFormatError as exc:
        raise HierarchyError(str(exc)) from exc
    template = Mesh(arrays["template/vertices"], arrays["template/faces"])
    n = int(arrays["n_levels"][0])
    levels = []
    for i in range(n):
        levels.append(
            SamplingLevel(
                Mesh(arrays[f"level/{i}/vertices"], arrays[f"level/{i}/faces"]),
                arrays[f"level/{i}/down_map"],
                arrays[f"level/{i}/up_tris"],
                arrays[f"level/{i}/up_bary"],
                arrays[f"level/{i}/collapse_costs"],
            )
        )
    spirals = tuple(SpiralTable(arrays[f"spiral/{i}"]) for i in range(n + 1))
    labels = tuple(arrays[f"labels/{i}"] for i in range(n + 1))
    return SamplingHierarchy(
        template, levels, spirals, labels,
        tuple(arrays["ratios"].tolist()),
        tuple(int(s) for s in arrays["spiral_lengths"]),
    )


def write_hierarchy(h: SamplingHierarchy, path) -> None:
    Path(path).write_bytes(hierarchy_to_bytes(h))


def read_hierarchy(path) -> SamplingHierarchy:
    return hierarchy_from_bytes(Path(path).read_bytes())


def hierarchy_hash(h: SamplingHierarchy) -> str:
    return hashlib.sha256(hierarchy_to_bytes(h)).hexdigest()
