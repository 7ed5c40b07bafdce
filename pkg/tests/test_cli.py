import json

import numpy as np

from bodylatent.cli import main
from bodylatent.mesh import load_mesh
from bodylatent.pipeline import load_dataset


def test_synth_writes_dataset(tmp_path):
    out = tmp_path / "ds"
    rc = main(["synth", "--out", str(out), "--count", "4", "--seed", "1",
               "--voxel-size", "0.07"])
    assert rc == 0
    ds = load_dataset(out)
    assert len(ds.meshes) == 4


def test_prep_deterministic_bytes(tmp_path, tiny_run):
    a = tmp_path / "a.hier"
    b = tmp_path / "b.hier"
    args = ["prep", "--dataset", str(tiny_run["dataset_dir"]),
            "--ratios", "0.5,0.5,0.5,0.7", "--spiral-lengths", "10,10,10,10"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_eval_cycle(tmp_path, tiny_run):
    ckpt = tmp_path / "run.ckpt"
    report = tmp_path / "report.json"
    rc = main([
        "train", "--dataset", str(tiny_run["dataset_dir"]), "--out", str(ckpt),
        "--report", str(report), "--epochs", "1", "--seed", "3",
    ])
    assert rc == 0
    assert ckpt.exists()
    assert len(json.loads(report.read_text())["epochs"]) == 1

    csv_out = tmp_path / "eval.csv"
    rc = main(["eval", "--checkpoint", str(ckpt), "--dataset",
               str(tiny_run["dataset_dir"]), "--out", str(csv_out)])
    assert rc == 0
    dataset = load_dataset(tiny_run["dataset_dir"])
    assert len(csv_out.read_text().strip().splitlines()) == \
        len(dataset.splits["test"]) + 1


def test_transfer_self_equals_reconstruction(tmp_path, tiny_run):
    dataset = tiny_run["dataset"]
    mesh_path = tiny_run["dataset_dir"] / f"{dataset.ids[0]}.obj"
    out = tmp_path / "self_transfer.obj"
    rc = main([
        "transfer", str(mesh_path), str(mesh_path),
        "--checkpoint", str(tiny_run["checkpoint"]),
        "--dataset", str(tiny_run["dataset_dir"]), "-o", str(out),
    ])
    assert rc == 0
    produced = load_mesh(out)
    expected = tiny_run["model"].reconstruct(load_mesh(mesh_path))
    assert np.abs(produced.vertices - expected.vertices).max() < 1e-6


def test_interp_grid_1x1_is_endpoint(tmp_path, tiny_run):
    dataset = tiny_run["dataset"]
    a = tiny_run["dataset_dir"] / f"{dataset.ids[0]}.obj"
    b = tiny_run["dataset_dir"] / f"{dataset.ids[1]}.obj"
    out_dir = tmp_path / "grid"
    rc = main([
        "interp", str(a), str(b), "--checkpoint", str(tiny_run["checkpoint"]),
        "--dataset", str(tiny_run["dataset_dir"]), "--grid", "1x1",
        "-o", str(out_dir),
    ])
    assert rc == 0
    produced = load_mesh(out_dir / "grid_r0_c0.obj")
    model = tiny_run["model"]
    expected = model.decode(model.encode_full(load_mesh(a)))
    assert np.abs(produced.vertices - expected.vertices).max() < 1e-6


def test_interp_grid_counts(tmp_path, tiny_run):
    dataset = tiny_run["dataset"]
    a = tiny_run["dataset_dir"] / f"{dataset.ids[0]}.obj"
    b = tiny_run["dataset_dir"] / f"{dataset.ids[1]}.obj"
    out_dir = tmp_path / "grid32"
    rc = main([
        "interp", str(a), str(b), "--checkpoint", str(tiny_run["checkpoint"]),
        "--dataset", str(tiny_run["dataset_dir"]), "--grid", "3x2",
        "-o", str(out_dir),
    ])
    assert rc == 0
    assert len(list(out_dir.glob("grid_*.obj"))) == 6


def test_cli_error_exits_nonzero(tmp_path, capsys):
    rc = main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"),
               "--dataset", str(tmp_path / "nowhere")])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert len(err.strip().splitlines()) == 1


def test_cli_bad_grid_spec(tmp_path, tiny_run, capsys):
    dataset = tiny_run["dataset"]
    a = tiny_run["dataset_dir"] / f"{dataset.ids[0]}.obj"
    rc = main([
        "interp", str(a), str(a), "--checkpoint", str(tiny_run["checkpoint"]),
        "--dataset", str(tiny_run["dataset_dir"]), "--grid", "oops",
        "-o", str(tmp_path / "g"),
    ])
    assert rc == 1
    assert "4x4" in capsys.readouterr().err
