"""Training loop, evaluation metrics, and run configuration.

A run is fully determined by (config, seed, dataset): triplet sampling, anchor
selection, and the pose-preserving transform all draw from one seeded generator
in a fixed order, so identical runs produce bitwise-identical checkpoints.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .autodiff import AdamState, backward, lr_schedule, zero_grads
from .hierarchy import SamplingHierarchy, build_hierarchy, read_hierarchy
from .losses import (
    LossWeights,
    TransformConfig,
    _ring_index_arrays,
    prepare_triplet_inputs,
    total_loss_t,
)
from .mesh import Mesh, build_adjacency, load_mesh, validate_dataset_topology
from .model import (
    DhbrModel,
    ModelConfig,
    load_checkpoint,
    read_checkpoint_metadata,
    save_checkpoint,
)
from .skeleton import SkeletonSpec, load_skeleton
from .synth import BodyFactors, GeneratorSpec, oracle_mesh


class TrainingError(RuntimeError):
    """Non-finite loss or invalid run setup."""


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    hierarchy: str = ""
    ratios: tuple = (0.5, 0.5, 0.5, 0.5)
    spiral_lengths: tuple = (12, 12, 12, 12)
    beta_dim: int = 10
    theta_dim: int = 8
    k: int = 0  # expected bone-group count; 0 accepts whatever the skeleton defines
    enc_channels: tuple = (16, 32, 32, 48)
    shape_hidden: int = 64
    pose_hidden: tuple = (32, 16)
    feature_dim: int = 8
    lambda_e: float = 5e-3
    lambda_c: float = 0.5
    lambda_s: float = 0.5
    noise_sigma: float = 5e-3
    scale_min: float = 0.9
    scale_max: float = 1.1
    anchor_fraction: float = 0.08
    arap_iterations: int = 1
    epochs: int = 300
    batch_size: int = 1
    lr: float = 5e-3
    decay: float = 0.9
    seed: int = 0
    use_residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(self, "spiral_lengths", tuple(int(s) for s in self.spiral_lengths))
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))
        object.__setattr__(self, "pose_hidden", tuple(int(c) for c in self.pose_hidden))
        for name in ("epochs", "batch_size", "beta_dim", "theta_dim", "feature_dim"):
            if getattr(self, name) < 1:
                raise TrainingError(f"{name} must be positive")
        if self.lr <= 0 or self.decay <= 0:
            raise TrainingError("lr and decay must be positive")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "RunConfig":
        kv = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise TrainingError(f"config line {lineno} is not 'key = value': {line!r}")
            kv[key.strip()] = value.strip()
        known = {f.name: f for f in fields(RunConfig)}
        values = {}
        defaults = RunConfig()
        for key, raw in kv.items():
            if key not in known:
                raise TrainingError(f"unknown config key {key!r}")
            default = getattr(defaults, key)
            if isinstance(default, bool):
                values[key] = raw.lower() == "true"
            elif isinstance(default, int):
                values[key] = int(raw)
            elif isinstance(default, float):
                values[key] = float(raw)
            elif isinstance(default, tuple):
                parts = [p for p in raw.split(",") if p]
                values[key] = tuple(float(p) if "." in p else int(p) for p in parts)
            else:
                values[key] = raw
        return RunConfig(**values)

    @staticmethod
    def from_file(path) -> "RunConfig":
        return RunConfig.from_text(Path(path).read_text(encoding="utf-8"))

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            beta_dim=self.beta_dim,
            theta_dim=self.theta_dim,
            enc_channels=self.enc_channels,
            shape_hidden=self.shape_hidden,
            pose_hidden=self.pose_hidden,
            feature_dim=self.feature_dim,
            seed=self.seed,
            use_residual=self.use_residual,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_e, self.lambda_c, self.lambda_s)

    def transform_config(self) -> TransformConfig:
        return TransformConfig(self.noise_sigma, (self.scale_min, self.scale_max))


@dataclass
class Dataset:
    root: Path
    template: Mesh
    skeleton: SkeletonSpec
    ids: list
    meshes: list
    factors: list
    splits: dict
    voxel_size: float | None = None

    def split_meshes(self, split: str):
        return [self.meshes[i] for i in self.splits.get(split, [])]


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    template = load_mesh(root / manifest["template"])
    skeleton = load_skeleton(root / manifest["skeleton"], template)
    ids, meshes, factors = [], [], []
    splits = {"train": [], "val": [], "test": []}
    for i, record in enumerate(manifest["meshes"]):
        ids.append(record["id"])
        meshes.append(load_mesh(root / record["file"]))
        factors.append(
            BodyFactors.from_dict(record["factors"]) if "factors" in record else None
        )
        splits.setdefault(record["split"], []).append(i)
    validate_dataset_topology([template] + meshes)
    return Dataset(root, template, skeleton, ids, meshes, factors, splits,
                   manifest.get("voxel_size"))


def prepare_hierarchy(config: RunConfig, dataset: Dataset) -> SamplingHierarchy:
    """Load the sidecar hierarchy if configured, else build it from the template."""
    if config.hierarchy:
        h = read_hierarchy(config.hierarchy)
        if h.template.vertex_count != dataset.template.vertex_count or not np.array_equal(
            h.template.faces, dataset.template.faces
        ):
            raise TrainingError("hierarchy file does not match the dataset template")
        return h
    return build_hierarchy(dataset.template, dataset.skeleton, config.ratios,
                           config.spiral_lengths)


def e_avd(a: Mesh, b: Mesh) -> float:
    """Mean per-vertex Euclidean distance in millimeters."""
    if a.vertex_count != b.vertex_count or not np.array_equal(a.faces, b.faces):
        raise TrainingError("meshes must share connectivity")
    return float(np.linalg.norm(a.vertices - b.vertices, axis=1).mean() * 1000.0)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_eavd: float = float("inf")
    wall_clock_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "epochs": self.epochs,
                "best_epoch": self.best_epoch,
                "best_val_eavd": self.best_val_eavd,
                "wall_clock_seconds": self.wall_clock_seconds,
            },
            indent=1,
        )


def train(config: RunConfig, dataset: Dataset,
          hierarchy: SamplingHierarchy | None = None, log=None):
    """Train on the dataset's train split; keep the best-validation parameters."""
    started = time.time()
    hierarchy = hierarchy or prepare_hierarchy(config, dataset)
    model = DhbrModel(dataset.template, hierarchy, dataset.skeleton, config.model_config())
    adjacency = build_adjacency(dataset.template)
    centers, neighbors = _ring_index_arrays(adjacency)
    weights = config.loss_weights()
    transform_cfg = config.transform_config()

    if config.k and dataset.skeleton.K != config.k:
        raise TrainingError(
            f"config expects K={config.k} bone groups, skeleton has {dataset.skeleton.K}"
        )
    train_idx = dataset.splits.get("train", [])
    if len(train_idx) < 3:
        raise TrainingError("training requires at least 3 meshes in the train split")
    val_idx = dataset.splits.get("val", []) or train_idx
    steps_per_epoch = max(len(train_idx) // 3, 1)

    params = model.parameters()
    optimizer = AdamState(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    best_params = None

    for epoch in range(config.epochs):
        optimizer.lr = lr_schedule(epoch, config.lr, config.decay)
        epoch_parts = {"total": 0.0, "vertex": 0.0, "edge": 0.0, "cross": 0.0, "self": 0.0}
        for step in range(steps_per_epoch):
            zero_grads(params)
            for _ in range(config.batch_size):
                picks = rng.choice(len(train_idx), size=3, replace=False)
                x1, x2, x3 = (dataset.meshes[train_idx[i]] for i in picks)
                step_seed = int(rng.integers(0, 2**63 - 1))
                inputs = prepare_triplet_inputs(
                    x1, x2, x3, model, transform_cfg, step_seed,
                    anchor_fraction=config.anchor_fraction,
                    arap_iterations=config.arap_iterations,
                    adjacency=adjacency,
                    need_cross=weights.lambda_c > 0,
                    need_self=weights.lambda_s > 0,
                )
                loss, parts = total_loss_t(x1, inputs, model, weights, centers, neighbors)
                if not np.isfinite(parts["total"]):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} step {step}: {parts}"
                    )
                backward(loss)
                for key in epoch_parts:
                    epoch_parts[key] += parts[key] / config.batch_size
            if config.batch_size > 1:
                for p in params:
                    if p.grad is not None:
                        p.grad /= config.batch_size
            optimizer.step()
            model.mark_updated()

        for key in epoch_parts:
            epoch_parts[key] /= steps_per_epoch
        val_eavd = float(
            np.mean([e_avd(model.reconstruct(dataset.meshes[i]), dataset.meshes[i])
                     for i in val_idx])
        )
        record = {
            "epoch": epoch,
            "lr": optimizer.lr,
            "val_eavd": val_eavd,
            **{f"loss_{k}": v for k, v in epoch_parts.items()},
        }
        report.epochs.append(record)
        if val_eavd < report.best_val_eavd:
            report.best_val_eavd = val_eavd
            report.best_epoch = epoch
            best_params = [p.data.copy() for p in params]
        if log is not None:
            log(record)

    if best_params is not None:
        for p, data in zip(params, best_params):
            p.data = data.copy()
        model.mark_updated()
    report.wall_clock_seconds = time.time() - started
    return model, report


def evaluate(model: DhbrModel, dataset: Dataset, split: str = "test"):
    """Reconstruction E_avd per mesh: returns (mean, [(mesh_id, value_mm), ...])."""
    idx = dataset.splits.get(split, [])
    if not idx:
        raise TrainingError(f"split {split!r} is empty")
    rows = []
    for i in idx:
        rows.append((dataset.ids[i], e_avd(model.reconstruct(dataset.meshes[i]),
                                           dataset.meshes[i])))
    mean = float(np.mean([v for _, v in rows]))
    return mean, rows


def write_eval_csv(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mesh_id", "e_avd_mm"])
        for mesh_id, value in rows:
            writer.writerow([mesh_id, f"{value:.6f}"])


def eval_transfer(model: DhbrModel, dataset: Dataset, n_pairs: int = 32,
                  seed: int = 0, split: str = "test"):
    """Oracle pose-transfer error against the generator's ground truth.

    For sampled pairs (a, b): E_avd(pose_transfer(mesh_a, mesh_b), oracle(a, b)),
    with the naive baseline E_avd(mesh_a, oracle(a, b)) reported for context.
    """
    idx = [i for i in dataset.splits.get(split, []) if dataset.factors[i] is not None]
    if len(idx) < 2:
        raise TrainingError("transfer evaluation needs >= 2 meshes with factors")
    if dataset.voxel_size is None:
        raise TrainingError("dataset manifest lacks generator settings")
    gen_spec = GeneratorSpec(voxel_size=dataset.voxel_size)
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_pairs):
        a, b = rng.choice(len(idx), size=2, replace=False)
        ia, ib = idx[a], idx[b]
        oracle = oracle_mesh(dataset.factors[ia], dataset.factors[ib], gen_spec)
        transferred = model.pose_transfer(dataset.meshes[ia], dataset.meshes[ib])
        rows.append(
            {
                "shape_id": dataset.ids[ia],
                "pose_id": dataset.ids[ib],
                "transfer_eavd": e_avd(transferred, oracle),
                "baseline_eavd": e_avd(dataset.meshes[ia], oracle),
            }
        )
    return {
        "pairs": len(rows),
        "mean_transfer_eavd": float(np.mean([r["transfer_eavd"] for r in rows])),
        "mean_baseline_eavd": float(np.mean([r["baseline_eavd"] for r in rows])),
        "rows": rows,
    }


def save_run(model: DhbrModel, config: RunConfig, report: TrainReport,
             checkpoint_path, report_path=None) -> None:
    save_checkpoint(model, checkpoint_path, run_config_text=config.to_text())
    if report_path is not None:
        Path(report_path).write_text(report.to_json(), encoding="utf-8")


def load_run(checkpoint_path, dataset: Dataset):
    """Rebuild the hierarchy from the checkpoint's config echo and load the model."""
    meta = read_checkpoint_metadata(checkpoint_path)
    config = RunConfig.from_text(meta["run_config"])
    if config.hierarchy and not Path(config.hierarchy).exists():
        # sidecar from the training machine is gone; rebuild from the echoed
        # ratios, the stored hash still guards against mismatch
        config = replace(config, hierarchy="")
    hierarchy = prepare_hierarchy(config, dataset)
    model, _ = load_checkpoint(checkpoint_path, dataset.template, hierarchy,
                               dataset.skeleton)
    return model, config, hierarchy
