"""Command-line interface: dataset generation, hierarchy prep, training,
evaluation, pose transfer, interpolation grids, and the explorer service."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .hierarchy import build_hierarchy, write_hierarchy
from .mesh import load_mesh, save_mesh
from .pipeline import (
    RunConfig,
    eval_transfer,
    evaluate,
    load_dataset,
    load_run,
    save_run,
    train,
    write_eval_csv,
)
from .synth import GeneratorSpec, write_dataset


def _parse_floats(text: str, n: int, what: str):
    parts = [p for p in text.split(",") if p]
    if len(parts) != n:
        raise ValueError(f"{what} needs {n} comma-separated values")
    return tuple(float(p) for p in parts)


def _parse_ints(text: str, n: int, what: str):
    return tuple(int(v) for v in _parse_floats(text, n, what))


def cmd_synth(args) -> int:
    spec = GeneratorSpec(voxel_size=args.voxel_size)
    manifest = write_dataset(args.out, n=args.count, seed=args.seed, spec=spec)
    print(f"wrote {len(manifest['meshes'])} bodies to {args.out}")
    return 0


def cmd_prep(args) -> int:
    dataset = load_dataset(args.dataset)
    ratios = _parse_floats(args.ratios, 4, "--ratios")
    lengths = _parse_ints(args.spiral_lengths, 4, "--spiral-lengths")
    hierarchy = build_hierarchy(dataset.template, dataset.skeleton, ratios, lengths)
    write_hierarchy(hierarchy, args.out)
    sizes = [dataset.template.vertex_count] + [
        lvl.coarse_vertex_count for lvl in hierarchy.levels
    ]
    print(f"hierarchy {' -> '.join(str(s) for s in sizes)} written to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for key in ("dataset", "hierarchy", "epochs", "seed", "lr", "batch_size",
                "lambda_e", "lambda_c", "lambda_s"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.no_residual:
        overrides["use_residual"] = False
    config = replace(config, **overrides)
    if not config.dataset:
        raise ValueError("a dataset is required (--dataset or config file)")
    dataset = load_dataset(config.dataset)

    def log(record):
        print(
            f"epoch {record['epoch']:4d}  loss {record['loss_total']:.5f}  "
            f"val E_avd {record['val_eavd']:.3f} mm",
            flush=True,
        )

    model, report = train(config, dataset, log=log if args.verbose else None)
    save_run(model, config, report, args.out, args.report)
    print(
        f"best epoch {report.best_epoch} (val E_avd {report.best_val_eavd:.3f} mm); "
        f"checkpoint written to {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    model, _, _ = load_run(args.checkpoint, dataset)
    mean, rows = evaluate(model, dataset, args.split)
    if args.out:
        write_eval_csv(rows, args.out)
    if args.transfer_pairs:
        result = eval_transfer(model, dataset, n_pairs=args.transfer_pairs,
                               seed=args.seed, split=args.split)
        print(
            f"transfer E_avd {result['mean_transfer_eavd']:.3f} mm "
            f"(naive baseline {result['mean_baseline_eavd']:.3f} mm, "
            f"{result['pairs']} pairs)"
        )
        if args.transfer_report:
            Path(args.transfer_report).write_text(json.dumps(result, indent=1))
    print(f"reconstruction E_avd on {args.split}: {mean:.3f} mm over {len(rows)} meshes")
    return 0


def cmd_transfer(args) -> int:
    dataset = load_dataset(args.dataset)
    model, _, _ = load_run(args.checkpoint, dataset)
    shape_mesh = load_mesh(args.shape)
    pose_mesh = load_mesh(args.pose)
    result = model.pose_transfer(shape_mesh, pose_mesh)
    save_mesh(result, args.out)
    print(f"transfer written to {args.out}")
    return 0


def cmd_interp(args) -> int:
    dataset = load_dataset(args.dataset)
    model, _, _ = load_run(args.checkpoint, dataset)
    mesh_a = load_mesh(args.mesh_a)
    mesh_b = load_mesh(args.mesh_b)
    try:
        rows, cols = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        raise ValueError("--grid must look like 4x4")
    if rows < 1 or cols < 1:
        raise ValueError("--grid dimensions must be >= 1")
    code_a = model.encode_full(mesh_a)
    code_b = model.encode_full(mesh_b)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(rows):
        t = i / (rows - 1) if rows > 1 else 0.0
        for j in range(cols):
            s = j / (cols - 1) if cols > 1 else 0.0
            mesh = model.bilinear_interpolate(code_a, code_b, s, t)
            save_mesh(mesh, out_dir / f"grid_r{i}_c{j}.obj")
    print(f"wrote {rows * cols} meshes to {out_dir}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.checkpoint, args.dataset_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bodylatent",
        description="shape/pose-disentangled body mesh autoencoder",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic body dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--voxel-size", type=float, default=GeneratorSpec().voxel_size)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", help="build and save the sampling hierarchy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default="0.5,0.5,0.5,0.5")
    p.add_argument("--spiral-lengths", default="12,12,12,12")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="run config file (key = value lines)")
    p.add_argument("--dataset")
    p.add_argument("--hierarchy", help="precomputed hierarchy file")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--report", help="JSON training report output path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lambda-e", type=float, dest="lambda_e")
    p.add_argument("--lambda-c", type=float, dest="lambda_c")
    p.add_argument("--lambda-s", type=float, dest="lambda_s")
    p.add_argument("--no-residual", action="store_true",
                   help="disable the template-residual scheme")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate reconstruction (and optionally transfer)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="per-mesh CSV output path")
    p.add_argument("--transfer-pairs", type=int, default=0, dest="transfer_pairs")
    p.add_argument("--transfer-report", dest="transfer_report")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="pose transfer between two meshes")
    p.add_argument("shape", help="shape-source OBJ")
    p.add_argument("pose", help="pose-source OBJ")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("interp", help="bilinear interpolation grid between two meshes")
    p.add_argument("mesh_a")
    p.add_argument("mesh_b")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", default="4x4")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("serve", help="run the latent explorer HTTP service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset-dir", required=True, dest="dataset_dir")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single-line reason then nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
