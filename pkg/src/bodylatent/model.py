"""Two-branch body autoencoder with template-residual codes and a part-aware decoder.

The shape branch runs spiral convolutions down the sampling hierarchy to a
whole-body identity code; the pose branch feeds regressed joints through one
small FC stack per bone group (tanh heads). Codes are expressed as encoder
outputs on the template plus per-input residuals. The decoder assigns each
bone group's features to the coarsest-level vertices carrying that part label,
broadcasts the identity features everywhere, and runs spiral convolutions back
up the hierarchy to vertex positions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Dense, SpiralConv, Tensor, constant
from .binio import BinaryFormatError, pack_frames, unpack_frames
from .hierarchy import SamplingHierarchy, hierarchy_hash
from .mesh import Mesh
from .skeleton import SkeletonSpec, skeleton_hash


class ModelError(ValueError):
    """Dimension mismatch, topology mismatch, or checkpoint validation failure."""


@dataclass(frozen=True)
class ModelConfig:
    beta_dim: int = 10
    theta_dim: int = 8
    enc_channels: tuple = (16, 32, 32, 48)
    shape_hidden: int = 64
    pose_hidden: tuple = (32, 16)
    feature_dim: int = 8
    seed: int = 0
    use_residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))
        object.__setattr__(self, "pose_hidden", tuple(int(c) for c in self.pose_hidden))
        if len(self.enc_channels) != 4:
            raise ModelError("enc_channels must list four spiral conv widths")

    def to_text(self) -> str:
        lines = [
            f"beta_dim = {self.beta_dim}",
            f"theta_dim = {self.theta_dim}",
            f"enc_channels = {','.join(str(c) for c in self.enc_channels)}",
            f"shape_hidden = {self.shape_hidden}",
            f"pose_hidden = {','.join(str(c) for c in self.pose_hidden)}",
            f"feature_dim = {self.feature_dim}",
            f"seed = {self.seed}",
            f"use_residual = {str(self.use_residual).lower()}",
        ]
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "ModelConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        return ModelConfig(
            beta_dim=int(kv["beta_dim"]),
            theta_dim=int(kv["theta_dim"]),
            enc_channels=tuple(int(c) for c in kv["enc_channels"].split(",")),
            shape_hidden=int(kv["shape_hidden"]),
            pose_hidden=tuple(int(c) for c in kv["pose_hidden"].split(",")),
            feature_dim=int(kv["feature_dim"]),
            seed=int(kv["seed"]),
            use_residual=kv["use_residual"] == "true",
        )


@dataclass(frozen=True)
class LatentCode:
    """Whole-body identity code plus one pose code per bone group."""

    beta: np.ndarray
    thetas: np.ndarray

    def __post_init__(self):
        beta = np.ascontiguousarray(np.asarray(self.beta, dtype=np.float64))
        thetas = np.ascontiguousarray(np.asarray(self.thetas, dtype=np.float64))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "thetas", thetas)
        if beta.ndim != 1 or thetas.ndim != 2:
            raise ModelError("latent code must be a vector beta and a (K, d) theta block")


BaseCodes = LatentCode


def full_code(residual: LatentCode, base: LatentCode) -> LatentCode:
    """Template-residual composition: code = base + residual, elementwise."""
    if residual.beta.shape != base.beta.shape or residual.thetas.shape != base.thetas.shape:
        raise ModelError("residual and base code dimensions differ")
    return LatentCode(residual.beta + base.beta, residual.thetas + base.thetas)


class DhbrModel:
    """Holds all trainable weights plus the fixed template/hierarchy/skeleton."""

    def __init__(self, template: Mesh, hierarchy: SamplingHierarchy,
                 skeleton: SkeletonSpec, config: ModelConfig | None = None):
        config = config or ModelConfig()
        if hierarchy.template.vertex_count != template.vertex_count:
            raise ModelError("hierarchy was built for a different template")
        if skeleton.vertex_count != template.vertex_count:
            raise ModelError("skeleton spec does not match the template")
        self.template = template
        self.hierarchy = hierarchy
        self.skeleton = skeleton
        self.config = config
        self.K = skeleton.K

        rng = np.random.default_rng(config.seed)
        ch = config.enc_channels
        F = config.feature_dim
        levels = hierarchy.levels
        spirals = hierarchy.spirals

        # shape encoder: conv at each fine level, then pool to the next
        self.enc_convs = []
        c_in = 3
        for i in range(4):
            self.enc_convs.append(
                SpiralConv(rng, c_in, ch[i], spirals[i].indices, f"enc_shape/conv{i}")
            )
            c_in = ch[i]
        v_coarse = levels[-1].coarse_vertex_count
        self.enc_fc_hidden = Dense(rng, v_coarse * ch[-1], config.shape_hidden, "enc_shape/fc0")
        self.enc_fc_out = Dense(rng, config.shape_hidden, config.beta_dim, "enc_shape/fc1")

        # pose encoder: independent FC stack with a tanh head per bone group
        self.pose_stacks = []
        h1, h2 = config.pose_hidden
        for k, dim in enumerate(skeleton.group_vector_dims()):
            self.pose_stacks.append(
                (
                    Dense(rng, dim, h1, f"enc_pose/g{k}/fc0"),
                    Dense(rng, h1, h2, f"enc_pose/g{k}/fc1"),
                    Dense(rng, h2, config.theta_dim, f"enc_pose/g{k}/fc2"),
                )
            )

        # decoder: per-group pose features (one feature row per owned coarse
        # vertex), broadcast identity features, then spiral convolutions back
        # up the hierarchy
        labels = hierarchy.coarsest_labels
        group_sizes = [int((labels == k).sum()) for k in range(self.K)]
        self.dec_pose_stacks = []
        for k in range(self.K):
            self.dec_pose_stacks.append(
                (
                    Dense(rng, config.theta_dim, 2 * F, f"dec/pose{k}/fc0"),
                    Dense(rng, 2 * F, group_sizes[k] * F, f"dec/pose{k}/fc1"),
                )
            )
        self.dec_shape_hidden = Dense(rng, config.beta_dim, config.shape_hidden, "dec/shape/fc0")
        self.dec_shape_out = Dense(rng, config.shape_hidden, F, "dec/shape/fc1")
        dec_ch = [2 * F, ch[3], ch[2], ch[1], 3]
        self.dec_convs = []
        for j in range(4):
            level_idx = 3 - j  # conv runs at the fine side of levels[level_idx]
            self.dec_convs.append(
                SpiralConv(rng, dec_ch[j], dec_ch[j + 1],
                           spirals[level_idx].indices, f"dec/conv{j}")
            )

        # per-group vertex slots at the coarsest level (labels partition vertices)
        self._group_rows = [np.nonzero(labels == k)[0] for k in range(self.K)]
        order = np.concatenate(self._group_rows)
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.shape[0])
        self._group_unpermute = inverse
        self._coarse_count = v_coarse
        # stable index arrays so gather/upsample scatter caches stay bounded
        self._up_corners = [lvl.coarse_mesh.faces[lvl.up_tris] for lvl in levels]
        self._group_index = [np.array([k], dtype=np.int64) for k in range(self.K)]
        self._group_members = [np.array(g, dtype=np.int64) for g in skeleton.groups]
        self._group_anchor = [np.array([g[0]], dtype=np.int64) for g in skeleton.groups]

        # internal coordinate frame: center and scale from the template keep
        # activations O(1); all public interfaces stay in meters
        self._center = template.vertices.mean(axis=0)
        self._scale = max(template.bounding_box_diagonal() / 2.0, 1e-9)

        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ModelError("parameter registry has duplicate names")
        self._base_cache = None

    # --- parameter registry ---------------------------------------------------

    def parameters(self):
        params = []
        for conv in self.enc_convs:
            params += conv.parameters()
        params += self.enc_fc_hidden.parameters() + self.enc_fc_out.parameters()
        for stack in self.pose_stacks:
            for layer in stack:
                params += layer.parameters()
        for stack in self.dec_pose_stacks:
            for layer in stack:
                params += layer.parameters()
        params += self.dec_shape_hidden.parameters() + self.dec_shape_out.parameters()
        for conv in self.dec_convs:
            params += conv.parameters()
        return params

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def shape_parameters(self):
        return [p for p in self.parameters() if p.name.startswith("enc_shape/")]

    def pose_parameters(self):
        return [p for p in self.parameters() if p.name.startswith("enc_pose/")]

    def decoder_parameters(self):
        return [p for p in self.parameters() if p.name.startswith("dec/")]

    def mark_updated(self):
        self._base_cache = None

    # --- tape-level forward passes ---------------------------------------------

    def _normalize_t(self, x: Tensor) -> Tensor:
        return ad.scale(ad.add_rowvec(x, constant(-self._center)), 1.0 / self._scale)

    def shape_branch_t(self, x: Tensor) -> Tensor:
        """Vertex positions (V, 3) -> identity code (beta_dim,)."""
        h = self._normalize_t(x)
        for i, conv in enumerate(self.enc_convs):
            h = ad.elu(conv(h))
            h = ad.gather_rows(h, self.hierarchy.levels[i].down_map)
        flat = ad.reshape(h, (1, self._coarse_count * self.config.enc_channels[-1]))
        hidden = ad.elu(self.enc_fc_hidden(flat))
        return ad.reshape(self.enc_fc_out(hidden), (self.config.beta_dim,))

    def pose_branch_t(self, x: Tensor) -> Tensor:
        """Vertex positions (V, 3) -> per-group pose codes (K, theta_dim) in (-1, 1)."""
        joints = ad.matmul(constant(self.skeleton.regressor), self._normalize_t(x))
        rows = []
        for k, group in enumerate(self.skeleton.groups):
            members = ad.gather_rows(joints, self._group_members[k])
            anchor = ad.reshape(ad.gather_rows(joints, self._group_anchor[k]), (3,))
            rel = ad.add_rowvec(members, ad.scale(anchor, -1.0))
            flat = ad.concat_cols(
                [ad.reshape(rel, (1, 3 * len(group))), ad.reshape(anchor, (1, 3))]
            )
            fc0, fc1, fc2 = self.pose_stacks[k]
            rows.append(ad.tanh(fc2(ad.elu(fc1(ad.elu(fc0(flat)))))))
        return ad.concat_rows(rows)

    def decode_t(self, beta: Tensor, thetas: Tensor) -> Tensor:
        """Full codes -> vertex positions (V, 3) at template resolution."""
        F = self.config.feature_dim
        group_feats = []
        for k in range(self.K):
            theta_k = ad.reshape(
                ad.gather_rows(thetas, self._group_index[k]), (1, self.config.theta_dim)
            )
            fc0, fc1 = self.dec_pose_stacks[k]
            feat = fc1(ad.elu(fc0(theta_k)))
            group_feats.append(ad.reshape(feat, (self._group_rows[k].shape[0], F)))
        pose_grid = ad.gather_rows(ad.concat_rows(group_feats), self._group_unpermute)
        shape_feat = self.dec_shape_out(
            ad.elu(self.dec_shape_hidden(ad.reshape(beta, (1, self.config.beta_dim))))
        )
        shape_grid = ad.broadcast_rows(ad.reshape(shape_feat, (F,)), self._coarse_count)
        h = ad.concat_cols([pose_grid, shape_grid])
        for j, conv in enumerate(self.dec_convs):
            level = self.hierarchy.levels[3 - j]
            h = ad.barycentric_up(h, self._up_corners[3 - j], level.up_bary)
            h = conv(h)
            if j < 3:
                h = ad.elu(h)
        return ad.add_rowvec(ad.scale(h, self._scale), constant(self._center))

    def encode_t(self, x: Tensor):
        return self.shape_branch_t(x), self.pose_branch_t(x)

    # --- numpy-level public API -------------------------------------------------

    def _check_topology(self, mesh: Mesh):
        if mesh.vertex_count != self.template.vertex_count or not np.array_equal(
            mesh.faces, self.template.faces
        ):
            raise ModelError("mesh topology does not match the model template")

    def encode(self, mesh: Mesh) -> LatentCode:
        """Residual codes for a mesh (base codes not yet added)."""
        self._check_topology(mesh)
        x = constant(mesh.vertices)
        beta, thetas = self.encode_t(x)
        return LatentCode(beta.data.copy(), thetas.data.copy())

    def encode_shape_full(self, mesh: Mesh) -> np.ndarray:
        """Full identity code only (skips the pose branch)."""
        self._check_topology(mesh)
        beta = self.shape_branch_t(constant(mesh.vertices)).data.copy()
        return beta + self.base_codes().beta

    def encode_pose_full(self, mesh: Mesh) -> np.ndarray:
        """Full pose codes only (skips the shape branch)."""
        self._check_topology(mesh)
        thetas = self.pose_branch_t(constant(mesh.vertices)).data.copy()
        return thetas + self.base_codes().thetas

    def base_codes(self) -> BaseCodes:
        """Encoder outputs on the template; cached until mark_updated()."""
        if not self.config.use_residual:
            return LatentCode(
                np.zeros(self.config.beta_dim), np.zeros((self.K, self.config.theta_dim))
            )
        if self._base_cache is None:
            self._base_cache = self.encode(self.template)
        return self._base_cache

    def encode_full(self, mesh: Mesh) -> LatentCode:
        return full_code(self.encode(mesh), self.base_codes())

    def decode(self, code: LatentCode) -> Mesh:
        if code.beta.shape != (self.config.beta_dim,):
            raise ModelError(
                f"beta has dim {code.beta.shape[0]}, expected {self.config.beta_dim}"
            )
        if code.thetas.shape != (self.K, self.config.theta_dim):
            raise ModelError(
                f"thetas have shape {code.thetas.shape}, expected "
                f"({self.K}, {self.config.theta_dim})"
            )
        out = self.decode_t(constant(code.beta), constant(code.thetas))
        return Mesh(out.data.copy(), self.template.faces)

    def reconstruct(self, mesh: Mesh) -> Mesh:
        return self.decode(self.encode_full(mesh))

    def pose_transfer(self, shape_src: Mesh, pose_src: Mesh) -> Mesh:
        """Decode the shape source's identity code with the pose source's pose codes."""
        shape_code = self.encode_full(shape_src)
        pose_code = self.encode_full(pose_src)
        return self.decode(LatentCode(shape_code.beta, pose_code.thetas))

    def bilinear_interpolate(self, code_a: LatentCode, code_b: LatentCode,
                             s: float, t: float) -> Mesh:
        """Decode codes mixed linearly: s blends identity, t blends pose."""
        if not (0.0 <= s <= 1.0) or not (0.0 <= t <= 1.0):
            raise ModelError(f"interpolation parameters must lie in [0, 1], got ({s}, {t})")
        beta = (1.0 - s) * code_a.beta + s * code_b.beta
        thetas = (1.0 - t) * code_a.thetas + t * code_b.thetas
        return self.decode(LatentCode(beta, thetas))


# --- checkpoints -----------------------------------------------------------------

CHECKPOINT_MAGIC = b"DHBRCKPT"
_CHECKPOINT_VERSION = 1


def checkpoint_to_bytes(model: DhbrModel, run_config_text: str = "") -> bytes:
    frames = [
        ("model_config", model.config.to_text().encode("utf-8")),
        ("run_config", run_config_text.encode("utf-8")),
        ("skeleton_hash", skeleton_hash(model.skeleton).encode("ascii")),
        ("hierarchy_hash", hierarchy_hash(model.hierarchy).encode("ascii")),
    ]
    for name, p in sorted(model.named_parameters().items()):
        frames.append((f"param/{name}", p.data))
    return pack_frames(CHECKPOINT_MAGIC, _CHECKPOINT_VERSION, frames)


def save_checkpoint(model: DhbrModel, path, run_config_text: str = "") -> None:
    from pathlib import Path

    Path(path).write_bytes(checkpoint_to_bytes(model, run_config_text))


def read_checkpoint_metadata(path) -> dict:
    """Config echo and hashes from a checkpoint, without building the model."""
    from pathlib import Path

    blob = Path(path).read_bytes()
    try:
        frames = unpack_frames(blob, CHECKPOINT_MAGIC, _CHECKPOINT_VERSION)
    except BinaryFormatError as exc:
        raise ModelError(str(exc)) from exc
    return {
        "run_config": frames["run_config"].decode("utf-8"),
        "model_config": frames["model_config"].decode("utf-8"),
        "skeleton_hash": frames["skeleton_hash"].decode("ascii"),
        "hierarchy_hash": frames["hierarchy_hash"].decode("ascii"),
    }


def load_checkpoint(path, template: Mesh, hierarchy: SamplingHierarchy,
                    skeleton: SkeletonSpec):
    """Rebuild the model and verify the stored hierarchy/skeleton hashes."""
    from pathlib import Path

    blob = Path(path).read_bytes()
    try:
        frames = unpack_frames(blob, CHECKPOINT_MAGIC, _CHECKPOINT_VERSION)
    except BinaryFormatError as exc:
        raise ModelError(str(exc)) from exc
    want_skel = frames["skeleton_hash"].decode("ascii")
    want_hier = frames["hierarchy_hash"].decode("ascii")
    if skeleton_hash(skeleton) != want_skel:
        raise ModelError("checkpoint was trained against a different skeleton spec")
    if hierarchy_hash(hierarchy) != want_hier:
        raise ModelError("checkpoint was trained against a different hierarchy")
    config = ModelConfig.from_text(frames["model_config"].decode("utf-8"))
    model = DhbrModel(template, hierarchy, skeleton, config)
    named = model.named_parameters()
    for key, payload in frames.items():
        if not key.startswith("param/"):
            continue
        name = key[len("param/"):]
        if name not in named:
            raise ModelError(f"checkpoint parameter {name} does not exist in this model")
        if named[name].data.shape != payload.shape:
            raise ModelError(f"checkpoint parameter {name} has shape {payload.shape}")
        named[name].data = payload.copy()
    model.mark_updated()
    return model, frames["run_config"].decode("utf-8")
