import csv

import numpy as np
import pytest

from eqnio.cli import main
from eqnio.evaluation import cumulate
from eqnio.imu import read_imu_csv, read_pose_csv, rotate_world, write_pose_csv
from eqnio.so3 import rot_z

TINY_CFG = """\
# small network so the suite stays quick
mode = o2
frame_hidden = 4
frame_blocks = 1
frame_kernel = 3
width = 8
blocks = 1
kernel = 3
epochs_mse = 1
epochs_mle = 1
batch = 16
stride = 50
"""


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY_CFG)
    assert run("simulate", "--out", root / "data", "--count", 2, "--duration", 6, "--seed", 3) == 0
    assert run("train", "--config", root / "tiny.cfg", "--data", root / "data", "--out", root / "ckpt") == 0
    return root


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_simulate_row_counts(workspace):
    imu = rows(workspace / "data" / "seq000_imu.csv")
    gt = rows(workspace / "data" / "seq001_gt.csv")
    assert imu[0] == ["t", "wx", "wy", "wz", "ax", "ay", "az"]
    assert len(imu) - 1 == 6 * 200 + 1 and len(gt) - 1 == 6 * 200 + 1
    manifest = (workspace / "data" / "dataset.manifest").read_text().splitlines()
    assert manifest[1:] == ["seq000 seq000_imu.csv seq000_gt.csv", "seq001 seq001_imu.csv seq001_gt.csv"]


def test_zero_rate_is_usage_error(tmp_path, capsys):
    assert run("simulate", "--out", tmp_path, "--rate", 0) == 2
    err = capsys.readouterr().err
    assert err.startswith("eqnio-error kind=usage command=simulate")


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("duration = 2\nwarp_speed = 9\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "x") == 2
    assert "warp_speed" in capsys.readouterr().err


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("duration = 2\nrate = 100\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "d", "--duration", 1) == 0
    assert len(read_imu_csv(tmp_path / "d" / "seq000_imu.csv")) == 101


def test_missing_data_is_reported(tmp_path, capsys):
    assert run("train", "--data", tmp_path / "nowhere", "--out", tmp_path / "c") == 1
    assert "kind=data" in capsys.readouterr().err


def test_zero_epochs_still_writes_checkpoint(workspace, tmp_path):
    assert run("train", "--config", workspace / "tiny.cfg", "--data", workspace / "data", "--out", tmp_path,
               "--epochs-mse", 0, "--epochs-mle", 0) == 0
    assert (tmp_path / "model.manifest").is_file()
    assert "config epochs_done=0" in (tmp_path / "model.manifest").read_text()


def test_resume_reproduces_uninterrupted_training(workspace, tmp_path):
    base = ("train", "--config", workspace / "tiny.cfg", "--data", workspace / "data")
    assert run(*base, "--out", tmp_path / "full", "--epochs-mle", 2) == 0
    assert run(*base, "--out", tmp_path / "part", "--epochs-mle", 1) == 0
    assert run(*base, "--out", tmp_path / "part", "--epochs-mle", 2, "--resume") == 0
    for name in ("model.bin", "model.manifest", "loss.csv"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "part" / name).read_bytes()


def test_resume_with_changed_model_fails(workspace, tmp_path, capsys):
    base = ("train", "--config", workspace / "tiny.cfg", "--data", workspace / "data", "--out", tmp_path)
    assert run(*base) == 0
    assert run(*base, "--mode", "so2", "--resume") == 1
    assert "kind=checkpoint" in capsys.readouterr().err


def test_network_run_is_cumulated_windows(workspace, tmp_path):
    assert run("run", "--data", workspace / "data", "--checkpoint", workspace / "ckpt", "--out", tmp_path,
               "--ekf", "off", "--plot") == 0
    traj = read_pose_csv(tmp_path / "seq000_traj.csv")
    win = np.loadtxt(tmp_path / "seq000_windows.csv", delimiter=",", skiprows=1)
    assert np.allclose(traj.pos, cumulate(win[:, 2:5], traj.pos[0]), atol=1e-12)
    svg = (tmp_path / "seq000.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<ellipse") == len(win)


def test_ekf_run_writes_outputs(workspace, tmp_path):
    assert run("run", "--data", workspace / "data", "--checkpoint", workspace / "ckpt", "--out", tmp_path,
               "--ekf", "on", "--sequences", "seq001") == 0
    traj = read_pose_csv(tmp_path / "seq001_traj.csv")
    assert len(traj) == 6 * 200 + 1
    assert not (tmp_path / "seq000_traj.csv").exists()


def test_rotated_dataset_gives_rotated_trajectory(workspace, tmp_path):
    theta = 0.9
    moved = tmp_path / "moved"
    moved.mkdir()
    for f in (workspace / "data").iterdir():
        (moved / f.name).write_bytes(f.read_bytes())
    write_pose_csv(moved / "seq000_gt.csv", rotate_world(read_pose_csv(workspace / "data" / "seq000_gt.csv"), theta))
    for src, dst in ((workspace / "data", tmp_path / "a"), (moved, tmp_path / "b")):
        assert run("run", "--data", src, "--checkpoint", workspace / "ckpt", "--out", dst,
                   "--sequences", "seq000") == 0
    a = read_pose_csv(tmp_path / "a" / "seq000_traj.csv").pos
    b = read_pose_csv(tmp_path / "b" / "seq000_traj.csv").pos
    assert np.max(np.abs(b - a @ rot_z(theta).T)) < 1e-4


def test_eval_against_itself_is_zero(workspace, tmp_path, capsys):
    gt = workspace / "data" / "seq000_gt.csv"
    assert run("eval", "--pred", gt, "--gt", gt, "--rte-window", 2, "--out", tmp_path / "m.csv") == 0
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "name,ate,rte,aye,mse"
    assert [float(x) for x in lines[1].split(",")[1:4]] == [0.0, 0.0, 0.0]
    assert "ATE" in capsys.readouterr().out


def test_eval_directory_and_literal_flag(workspace, tmp_path):
    run_dir = tmp_path / "run"
    assert run("run", "--data", workspace / "data", "--checkpoint", workspace / "ckpt", "--out", run_dir) == 0
    common = ("eval", "--pred", run_dir, "--gt", workspace / "data", "--rte-window", 2)
    assert run(*common, "--out", tmp_path / "rms.csv") == 0
    assert run(*common, "--metric-literal", "--out", tmp_path / "lit.csv") == 0
    rms = rows(tmp_path / "rms.csv")
    lit = rows(tmp_path / "lit.csv")
    assert [r[0] for r in rms[1:]] == ["seq000", "seq001", "mean"]
    assert float(rms[1][4]) >= 0.0
    assert rms[1][1] != lit[1][1]


def test_eval_schema_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run("eval", "--pred", bad, "--gt", bad) == 1
    assert "kind=schema" in capsys.readouterr().err


def test_pipeline_is_byte_deterministic(workspace, tmp_path):
    for tag in ("x", "y"):
        d = tmp_path / tag
        assert run("simulate", "--out", d / "data", "--count", 1, "--duration", 4, "--seed", 9) == 0
        assert run("train", "--config", workspace / "tiny.cfg", "--data", d / "data", "--out", d / "ckpt",
                   "--seed", 9) == 0
        assert run("run", "--data", d / "data", "--checkpoint", d / "ckpt", "--out", d / "run") == 0
        assert run("eval", "--pred", d / "run", "--gt", d / "data", "--rte-window", 1, "--out", d / "m.csv") == 0
    files = sorted(p.relative_to(tmp_path / "x") for p in (tmp_path / "x").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "x" / rel).read_bytes() == (tmp_path / "y" / rel).read_bytes(), rel
