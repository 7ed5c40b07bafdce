"""Process-pool workers for the acceptance experiment (spawn-safe, top level)."""
from dataclasses import replace
from pathlib import Path


def train_variant(args):
    """Train one loss-ablation variant and summarize its metrics."""
    name, dataset_dir, checkpoint_dir, overrides = args
    from bodylatent.pipeline import (
        RunConfig,
        eval_transfer,
        evaluate,
        load_dataset,
        save_run,
        train,
    )

    dataset = load_dataset(dataset_dir)
    config = replace(
        RunConfig(dataset=str(dataset_dir), epochs=150, seed=0,
                  lr=1e-3, decay=0.98, lambda_e=2e-4),
        **overrides,
    )
    model, report = train(config, dataset)
    recon_mean, _ = evaluate(model, dataset, "test")
    train_mean, _ = evaluate(model, dataset, "train")
    transfer = eval_transfer(model, dataset, n_pairs=30, seed=7, split="test")
    checkpoint = Path(checkpoint_dir) / f"{name}.ckpt"
    save_run(model, config, report, checkpoint)
    return name, {
        "checkpoint": str(checkpoint),
        "best_epoch": report.best_epoch,
        "best_val_eavd": report.best_val_eavd,
        "test_recon_eavd": recon_mean,
        "train_recon_eavd": train_mean,
        "transfer_eavd": transfer["mean_transfer_eavd"],
        "baseline_eavd": transfer["mean_baseline_eavd"],
        "epochs_recorded": len(report.epochs),
    }
