"""Training objectives: reconstruction with edge regularization plus the two
ARAP-mediated consistency losses that force shape and pose apart.

The deformed meshes and the pose-preserving transform are prepared outside the
tape (`prepare_triplet_inputs`) and enter the differentiable objective as
constants, so no gradient ever flows through the ARAP path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .arap import ArapProblem, arap_deform, sample_anchors
from .autodiff import Tensor, constant
from .mesh import Adjacency, Mesh
from .model import DhbrModel, LatentCode


class LossError(ValueError):
    """Mesh/connectivity mismatch inside a loss term."""


@dataclass(frozen=True)
class LossWeights:
    lambda_e: float = 5e-3
    lambda_c: float = 0.5
    lambda_s: float = 0.5

    def __post_init__(self):
        for name in ("lambda_e", "lambda_c", "lambda_s"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise LossError(f"{name} must be finite and >= 0")


@dataclass(frozen=True)
class TransformConfig:
    """Pose-preserving corruption: random scaling about the centroid plus noise."""

    noise_sigma: float = 5e-3
    scale_range: tuple = (0.9, 1.1)

    def __post_init__(self):
        lo, hi = self.scale_range
        if self.noise_sigma < 0 or not (0 < lo <= hi):
            raise LossError("invalid transform config")


def _require_same_connectivity(a: Mesh, b: Mesh):
    if a.vertex_count != b.vertex_count or not np.array_equal(a.faces, b.faces):
        raise LossError("meshes must share connectivity")


def vertex_loss(x: Mesh, x_hat: Mesh) -> float:
    """Mean absolute deviation over all vertices and coordinates."""
    _require_same_connectivity(x, x_hat)
    return float(np.abs(x.vertices - x_hat.vertices).mean())


def edge_loss(x_hat: Mesh, adjacency: Adjacency) -> float:
    """Sum over vertices and ring neighbors of squared edge length (no normalization)."""
    if adjacency.vertex_count != x_hat.vertex_count:
        raise LossError("adjacency does not match mesh")
    centers, neighbors = _ring_index_arrays(adjacency)
    d = x_hat.vertices[centers] - x_hat.vertices[neighbors]
    return float((d * d).sum())


def _ring_index_arrays(adjacency: Adjacency):
    centers = np.concatenate(
        [np.full(r.shape[0], i, dtype=np.int64) for i, r in enumerate(adjacency.rings)]
    )
    neighbors = np.concatenate(adjacency.rings)
    return centers, neighbors


def edge_loss_t(x_hat: Tensor, centers: np.ndarray, neighbors: np.ndarray) -> Tensor:
    d = ad.sub(ad.gather_rows(x_hat, centers), ad.gather_rows(x_hat, neighbors))
    return ad.sum_all(ad.square(d))


def transform_pose_preserving(x: Mesh, cfg: TransformConfig, seed: int) -> Mesh:
    """Scale about the centroid by a random factor and add i.i.d. Gaussian noise."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
    noise = rng.normal(0.0, cfg.noise_sigma, size=x.vertices.shape) if cfg.noise_sigma > 0 \
        else np.zeros_like(x.vertices)
    centroid = x.vertices.mean(axis=0)
    return x.with_vertices(centroid + s * (x.vertices - centroid) + noise)


@dataclass(frozen=True)
class TripletInputs:
    """Gradient-constant intermediates for one training triplet."""

    x2_deformed: Mesh        # ARAP(x2 -> anchors from D(beta1, theta2))
    x1_transformed: Mesh     # T(x1), fed to the pose branch in the cross loss
    x3_deformed_transformed: Mesh  # T(ARAP(x3 -> anchors from D(beta3, theta1)))


def _spawn_seeds(seed: int, n: int):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def prepare_triplet_inputs(x1: Mesh, x2: Mesh, x3: Mesh, model: DhbrModel,
                           transform_cfg: TransformConfig, seed: int,
                           anchor_fraction: float = 0.08, arap_iterations: int = 1,
                           adjacency: Adjacency | None = None,
                           need_cross: bool = True, need_self: bool = True):
    """Decode the swapped-code intermediates and run ARAP; all outputs are constants."""
    _require_same_connectivity(x1, x2)
    _require_same_connectivity(x1, x3)
    seed_a2, seed_a3, seed_t1, seed_t3 = _spawn_seeds(seed, 4)

    beta1 = model.encode_shape_full(x1)
    theta1 = model.encode_pose_full(x1) if need_self else None

    x2_deformed = None
    x1_transformed = None
    if need_cross:
        theta2 = model.encode_pose_full(x2)
        x2_tilde = model.decode(LatentCode(beta1, theta2))
        idx = sample_anchors(x2_tilde, anchor_fraction, seed_a2)
        x2_deformed = arap_deform(
            ArapProblem(x2, idx, x2_tilde.vertices[idx], arap_iterations), adjacency
        )
        x1_transformed = transform_pose_preserving(x1, transform_cfg, seed_t1)

    x3_deformed_transformed = None
    if need_self:
        beta3 = model.encode_shape_full(x3)
        x3_tilde = model.decode(LatentCode(beta3, theta1))
        idx = sample_anchors(x3_tilde, anchor_fraction, seed_a3)
        x3_deformed = arap_deform(
            ArapProblem(x3, idx, x3_tilde.vertices[idx], arap_iterations), adjacency
        )
        x3_deformed_transformed = transform_pose_preserving(x3_deformed, transform_cfg, seed_t3)

    return TripletInputs(x2_deformed, x1_transformed, x3_deformed_transformed)


def total_loss_t(x1: Mesh, inputs: TripletInputs, model: DhbrModel, weights: LossWeights,
                 edge_centers: np.ndarray, edge_neighbors: np.ndarray):
    """Differentiable objective for one triplet; returns (loss tensor, float parts).

    The reconstruction term applies to x1 only; the prepared constants carry
    the cross/self cycles. Base codes are recomputed in-tape so gradients reach
    the encoder through both the base and residual paths.
    """
    x1_t = constant(x1.vertices)
    if model.config.use_residual:
        base_beta = model.shape_branch_t(constant(model.template.vertices))
        base_thetas = model.pose_branch_t(constant(model.template.vertices))
    else:
        base_beta = constant(np.zeros(model.config.beta_dim))
        base_thetas = constant(np.zeros((model.K, model.config.theta_dim)))

    delta_beta1 = model.shape_branch_t(x1_t)
    delta_theta1 = model.pose_branch_t(x1_t)
    beta1 = ad.add(base_beta, delta_beta1)
    theta1 = ad.add(base_thetas, delta_theta1)

    x1_hat = model.decode_t(beta1, theta1)
    l_v = ad.mean_abs_diff(x1_hat, x1_t)
    l_e = edge_loss_t(x1_hat, edge_centers, edge_neighbors)
    loss = ad.add(l_v, ad.scale(l_e, weights.lambda_e))
    parts = {"vertex": float(l_v.data), "edge": float(l_e.data)}

    if weights.lambda_c > 0:
        beta_c = ad.add(base_beta, model.shape_branch_t(constant(inputs.x2_deformed.vertices)))
        theta_c = ad.add(
            base_thetas, model.pose_branch_t(constant(inputs.x1_transformed.vertices))
        )
        l_c = ad.mean_abs_diff(model.decode_t(beta_c, theta_c), x1_t)
        loss = ad.add(loss, ad.scale(l_c, weights.lambda_c))
        parts["cross"] = float(l_c.data)
    else:
        parts["cross"] = 0.0

    if weights.lambda_s > 0:
        theta_s = ad.add(
            base_thetas,
            model.pose_branch_t(constant(inputs.x3_deformed_transformed.vertices)),
        )
        l_s = ad.mean_abs_diff(model.decode_t(beta1, theta_s), x1_t)
        loss = ad.add(loss, ad.scale(l_s, weights.lambda_s))
        parts["self"] = float(l_s.data)
    else:
        parts["self"] = 0.0

    parts["total"] = float(loss.data)
    return loss, parts


# --- scalar convenience wrappers ---------------------------------------------------


def reconstruction_loss(x: Mesh, model: DhbrModel, weights: LossWeights,
                        adjacency: Adjacency) -> float:
    x_hat = model.reconstruct(x)
    return vertex_loss(x, x_hat) + weights.lambda_e * edge_loss(x_hat, adjacency)


def cross_consistency_loss(x1: Mesh, x2: Mesh, model: DhbrModel, weights: LossWeights,
                           transform_cfg: TransformConfig, seed: int,
                           anchor_fraction: float = 0.08, arap_iterations: int = 1,
                           adjacency: Adjacency | None = None) -> float:
    if weights.lambda_c == 0:
        return 0.0
    inputs = prepare_triplet_inputs(
        x1, x2, x1, model, transform_cfg, seed, anchor_fraction, arap_iterations,
        adjacency, need_cross=True, need_self=False,
    )
    code = full_code_pair(model, inputs.x2_deformed, inputs.x1_transformed)
    rebuilt = model.decode(code)
    return weights.lambda_c * float(np.abs(rebuilt.vertices - x1.vertices).mean())


def self_consistency_loss(x1: Mesh, x3: Mesh, model: DhbrModel, weights: LossWeights,
                          transform_cfg: TransformConfig, seed: int,
                          anchor_fraction: float = 0.08, arap_iterations: int = 1,
                          adjacency: Adjacency | None = None) -> float:
    if weights.lambda_s == 0:
        return 0.0
    inputs = prepare_triplet_inputs(
        x1, x1, x3, model, transform_cfg, seed, anchor_fraction, arap_iterations,
        adjacency, need_cross=False, need_self=True,
    )
    code = full_code_pair(model, x1, inputs.x3_deformed_transformed)
    rebuilt = model.decode(code)
    return weights.lambda_s * float(np.abs(rebuilt.vertices - x1.vertices).mean())


def full_code_pair(model: DhbrModel, shape_source: Mesh, pose_source: Mesh) -> LatentCode:
    """Full code taking beta from one mesh and thetas from another."""
    shape_code = model.encode_full(shape_source)
    pose_code = model.encode_full(pose_source)
    return LatentCode(shape_code.beta, pose_code.thetas)


def total_loss(triplet, model: DhbrModel, weights: LossWeights,
               transform_cfg: TransformConfig, seed: int,
               adjacency: Adjacency, anchor_fraction: float = 0.08,
               arap_iterations: int = 1):
    """Scalar total objective for a triplet (reconstruction on x1 + both cycles)."""
    x1, x2, x3 = triplet
    inputs = prepare_triplet_inputs(
        x1, x2, x3, model, transform_cfg, seed, anchor_fraction, arap_iterations,
        adjacency, need_cross=weights.lambda_c > 0, need_self=weights.lambda_s > 0,
    )
    centers, neighbors = _ring_index_arrays(adjacency)
    loss, parts = total_loss_t(x1, inputs, model, weights, centers, neighbors)
    return float(loss.data), parts
