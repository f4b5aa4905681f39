import json

import numpy as np
import pytest

from spvd.cli import MANIFEST, REPORT, main
from spvd.data import load_checkpoint, load_ply, save_ply, synth_dataset
from spvd.training import RESOLVED_CONFIG
from spvd.training.trainer import CHECKPOINT
from tests._test_utils import resource_path

CONFIG = str(resource_path("run_config.json"))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--config", CONFIG, "--out", str(out), "--set", "train.steps=1"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(run_dir):
    return str(run_dir / CHECKPOINT)


@pytest.fixture
def chair(tmp_path):
    shape = synth_dataset("chairoid", 1, 96, seed=12).shapes[0]
    path = tmp_path / "chair.ply"
    save_ply(shape, path)
    return path, shape


def test_train_writes_checkpoint_and_config(run_dir):
    with open(run_dir / RESOLVED_CONFIG) as f:
        resolved = json.load(f)

    assert resolved["train"]["steps"] == 1
    assert resolved["task"] == {"completion": {"m": 2}}
    assert load_checkpoint(run_dir / CHECKPOINT).step == 1


def test_train_resumes_from_checkpoint(tmp_path, checkpoint):
    args = ["train", "--config", CONFIG, "--checkpoint", checkpoint, "--steps", "2"]

    assert main(args + ["--out", str(tmp_path)]) == 0
    assert load_checkpoint(tmp_path / CHECKPOINT).step == 2


def test_sample_writes_clouds_and_manifest(tmp_path, checkpoint):
    args = ["sample", "--checkpoint", checkpoint, "--config", CONFIG, "--count", "3"]

    assert main(args + ["--batch", "2", "--num-points", "64", "--out", str(tmp_path)]) == 0

    with open(tmp_path / MANIFEST) as f:
        manifest = json.load(f)
    assert manifest["rule"] == "ddim"
    assert manifest["steps"] == 5
    assert manifest["timesteps"][0] == 20 and manifest["timesteps"][-1] == 1
    assert manifest["files"] == ["sample_0000.ply", "sample_0001.ply", "sample_0002.ply"]
    cloud = load_ply(tmp_path / "sample_0002.ply")
    assert cloud.points.shape == (64, 3)
    assert np.isfinite(cloud.points).all()


def test_sample_with_ddpm_and_class(tmp_path, checkpoint):
    args = ["sample", "--checkpoint", checkpoint, "--config", CONFIG, "--rule", "ddpm"]

    assert main(args + ["--count", "1", "--class-id", "3", "--out", str(tmp_path)]) == 0

    with open(tmp_path / MANIFEST) as f:
        manifest = json.load(f)
    assert manifest["steps"] == 20
    assert manifest["class_id"] == 3
    assert load_ply(tmp_path / "sample_0000.ply").points.shape == (96, 3)


def test_complete_keeps_known_points(tmp_path, checkpoint, chair):
    path, shape = chair
    out = tmp_path / "completed.ply"

    args = ["complete", "--checkpoint", checkpoint, "--config", CONFIG, "--m", "2"]
    code = main(args + ["--input", str(path), "--out", str(out)])

    assert code == 0
    completed = load_ply(out)
    assert completed.points.shape == shape.points.shape
    assert np.array_equal(completed.part_ids, shape.part_ids)
    kept = (completed.points == shape.points).all(axis=1)
    assert 0 < kept.sum() < len(kept)
    freed = np.unique(shape.part_ids[~kept])
    assert np.array_equal(~kept, np.isin(shape.part_ids, freed))
    assert 1 <= len(freed) <= 2


def test_superres_adds_points(tmp_path, checkpoint):
    sparse = synth_dataset("sphere", 1, 64, seed=2).shapes[0]
    save_ply(sparse, tmp_path / "sparse.ply")
    out = tmp_path / "dense.ply"

    args = ["superres", "--checkpoint", checkpoint, "--config", CONFIG, "--n-out", "128"]
    code = main(args + ["--input", str(tmp_path / "sparse.ply"), "--out", str(out)])

    assert code == 0
    dense = load_ply(out).points
    assert dense.shape == (128, 3)
    rows = {tuple(p) for p in sparse.points}
    assert {tuple(p) for p in dense[:64]} == rows


def test_eval_of_identical_sets(tmp_path):
    dataset = synth_dataset("box", 3, 64, seed=8)
    for folder in ("gen", "ref"):
        (tmp_path / folder).mkdir()
        for i, shape in enumerate(dataset.shapes):
            save_ply(shape, tmp_path / folder / f"s{i}.ply")

    args = ["eval", "--gen", str(tmp_path / "gen"), "--ref", str(tmp_path / "ref"), "--runs", "1"]
    code = main(args + ["--workers", "1", "--out", str(tmp_path / "eval")])

    assert code == 0
    with open(tmp_path / "eval" / REPORT) as f:
        report = json.load(f)
    assert report["one_nna_cd"] == 0.0
    assert report["cov_cd"] == 100.0


def test_inspect_reports_parameter_count(capsys, checkpoint):
    assert main(["inspect"]) == 0
    default = json.loads(capsys.readouterr().out)
    assert main(["inspect", "--checkpoint", checkpoint]) == 0
    stored = json.loads(capsys.readouterr().out)

    assert default["param_count"] == 263_795
    assert default["network"]["preset"] == "spvd-tiny"
    assert stored["param_count"] == 263_795 + 5 * 32
    assert stored["step"] == 1
    assert stored["seed"] == 7


@pytest.mark.parametrize(
    "args",
    [
        [],
        ["train"],
        ["sample", "--checkpoint", "c.spvd", "--rule", "euler", "--out", "x"],
        ["inspect", "--set", "train.epochs=1"],
        ["inspect", "--set", "oops"],
    ],
)
def test_usage_and_configuration_errors_exit_with_2(args):
    assert main(args) == 2


def test_unreadable_config_exits_with_3(tmp_path):
    assert main(["inspect", "--config", str(tmp_path / "missing.json")]) == 3


def test_missing_input_is_a_configuration_error(tmp_path, checkpoint):
    args = ["complete", "--checkpoint", checkpoint, "--config", CONFIG]

    assert main(args + ["--input", str(tmp_path / "none.ply"), "--out", "x.ply"]) == 2


def test_corrupt_checkpoint_exits_with_3(tmp_path):
    broken = tmp_path / "broken.spvd"
    broken.write_bytes(b"NOPE" + bytes(40))

    assert main(["inspect", "--checkpoint", str(broken)]) == 3
    assert main(["sample", "--checkpoint", str(tmp_path / "none.spvd"), "--out", "x"]) == 3
