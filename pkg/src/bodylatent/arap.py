"""As-rigid-as-possible deformation toward sparse anchor targets.

Local/global alternation with uniform edge weights: per-vertex rotations are
the polar factors of 1-ring covariances, the global step solves the uniform
Laplacian system with anchors enforced as hard constraints by row substitution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .mesh import Adjacency, Mesh, build_adjacency


class ArapError(ValueError):
    """Invalid deformation problem (bad anchors, unanchored component, mismatch)."""


@dataclass(frozen=True)
class ArapProblem:
    source: Mesh
    anchor_indices: np.ndarray
    anchor_targets: np.ndarray
    iterations: int = 1

    def __post_init__(self):
        idx = np.ascontiguousarray(np.asarray(self.anchor_indices, dtype=np.int64))
        tgt = np.ascontiguousarray(np.asarray(self.anchor_targets, dtype=np.float64))
        object.__setattr__(self, "anchor_indices", idx)
        object.__setattr__(self, "anchor_targets", tgt)
        if idx.ndim != 1 or tgt.shape != (idx.shape[0], 3):
            raise ArapError("anchors must be (A,) indices with (A, 3) targets")
        if idx.shape[0] == 0:
            raise ArapError("at least one anchor is required")
        if len(np.unique(idx)) != idx.shape[0]:
            raise ArapError("anchor indices must be unique")
        if idx.min() < 0 or idx.max() >= self.source.vertex_count:
            raise ArapError("anchor index out of range")
        if self.iterations < 1:
            raise ArapError("iterations must be >= 1")


def _ring_arrays(adjacency: Adjacency):
    """Flattened (center, neighbor) index arrays over every directed ring edge."""
    cached = getattr(adjacency, "_flat_rings", None)
    if cached is not None:
        return cached
    centers = np.concatenate(
        [np.full(r.shape[0], i, dtype=np.int64) for i, r in enumerate(adjacency.rings)]
    )
    neighbors = np.concatenate(adjacency.rings)
    object.__setattr__(adjacency, "_flat_rings", (centers, neighbors))
    return centers, neighbors


def _laplacian_parts(adjacency: Adjacency, V: int):
    """COO triplets of the uniform Laplacian, cached on the adjacency."""
    cached = getattr(adjacency, "_laplacian_parts", None)
    if cached is not None:
        return cached
    centers, neighbors = _ring_arrays(adjacency)
    degrees = np.bincount(centers, minlength=V).astype(np.float64)
    rows = np.concatenate([np.arange(V), centers])
    cols = np.concatenate([np.arange(V), neighbors])
    vals = np.concatenate([degrees, -np.ones(centers.shape[0])])
    object.__setattr__(adjacency, "_laplacian_parts", (rows, cols, vals))
    return rows, cols, vals


def _component_labels(adjacency: Adjacency, V: int):
    cached = getattr(adjacency, "_component_labels", None)
    if cached is not None:
        return cached
    rows, cols = _ring_arrays(adjacency)
    graph = sp.coo_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(V, V))
    n_comp, comp = csgraph.connected_components(graph, directed=False)
    object.__setattr__(adjacency, "_component_labels", (n_comp, comp))
    return n_comp, comp


def _local_rotations(src_edges, cur_edges, centers, V):
    """Per-vertex polar factor of the 1-ring covariance between edge sets."""
    cov = np.zeros((V, 3, 3))
    outer = src_edges[:, :, None] * cur_edges[:, None, :]
    np.add.at(cov, centers, outer)
    U, _, Vt = np.linalg.svd(cov)
    R = np.transpose(Vt, (0, 2, 1)) @ np.transpose(U, (0, 2, 1))
    flip = np.linalg.det(R) < 0
    if flip.any():
        Vt_f = Vt[flip].copy()
        Vt_f[:, -1, :] *= -1.0
        R[flip] = np.transpose(Vt_f, (0, 2, 1)) @ np.transpose(U[flip], (0, 2, 1))
    return R


def _check_anchored_components(adjacency: Adjacency, anchor_indices, V):
    n_comp, comp = _component_labels(adjacency, V)
    anchored = np.zeros(n_comp, dtype=bool)
    anchored[comp[anchor_indices]] = True
    if not anchored.all():
        missing = int(np.nonzero(~anchored)[0][0])
        size = int((comp == missing).sum())
        raise ArapError(f"connected component {missing} ({size} vertices) has no anchor")


def arap_deform(problem: ArapProblem, adjacency: Adjacency | None = None) -> Mesh:
    """Deform the source so anchors hit their targets as-rigidly-as-possible."""
    mesh = problem.source
    V = mesh.vertex_count
    if adjacency is None:
        adjacency = build_adjacency(mesh)
    _check_anchored_components(adjacency, problem.anchor_indices, V)

    centers, neighbors = _ring_arrays(adjacency)
    rows, cols, vals = _laplacian_parts(adjacency, V)
    # hard constraints by row substitution: drop Laplacian rows at anchors and
    # put identity rows in their place
    anchor_mask = np.zeros(V, dtype=bool)
    anchor_mask[problem.anchor_indices] = True
    keep = ~anchor_mask[rows]
    system = sp.coo_matrix(
        (
            np.concatenate([vals[keep], np.ones(problem.anchor_indices.shape[0])]),
            (
                np.concatenate([rows[keep], problem.anchor_indices]),
                np.concatenate([cols[keep], problem.anchor_indices]),
            ),
        ),
        shape=(V, V),
    )
    solver = spla.splu(system.tocsc())

    src = mesh.vertices
    src_edges = src[centers] - src[neighbors]
    cur = src.copy()
    cur[problem.anchor_indices] = problem.anchor_targets

    for _ in range(problem.iterations):
        R = _local_rotations(src_edges, cur[centers] - cur[neighbors], centers, V)
        rotated = np.einsum("eij,ej->ei", 0.5 * (R[centers] + R[neighbors]), src_edges)
        rhs = np.zeros((V, 3))
        np.add.at(rhs, centers, rotated)
        rhs[problem.anchor_indices] = problem.anchor_targets
        cur = solver.solve(rhs)

    return mesh.with_vertices(cur)


def sample_anchors(mesh: Mesh, fraction: float, seed: int) -> np.ndarray:
    """ceil(fraction * V) distinct vertex indices, uniform, deterministic per seed."""
    if not (0.0 < fraction <= 1.0):
        raise ArapError(f"anchor fraction must be in (0, 1], got {fraction}")
    count = math.ceil(fraction * mesh.vertex_count)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(mesh.vertex_count, size=count, replace=False))


def arap_energy(source: Mesh, deformed: Mesh, adjacency: Adjacency | None = None) -> float:
    """Rigidity energy of `deformed` relative to `source` under local-step rotations."""
    if source.vertex_count != deformed.vertex_count or not np.array_equal(
        source.faces, deformed.faces
    ):
        raise ArapError("source and deformed meshes must share connectivity")
    if adjacency is None:
        adjacency = build_adjacency(source)
    centers, neighbors = _ring_arrays(adjacency)
    src_edges = source.vertices[centers] - source.vertices[neighbors]
    cur_edges = deformed.vertices[centers] - deformed.vertices[neighbors]
    R = _local_rotations(src_edges, cur_edges, centers, source.vertex_count)
    residual = cur_edges - np.einsum("eij,ej->ei", R[centers], src_edges)
    return float((residual ** 2).sum())
