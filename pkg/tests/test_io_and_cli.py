import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from swarmlearn.cli import main
from swarmlearn.config import (
    ExperimentConfig,
    default_2d_config,
    default_3d_config,
    emit_config,
    parse_config,
)
from swarmlearn.errors import ConfigError, FormatError
from swarmlearn.io_formats import (
    emit_checkpoint,
    emit_trajectory,
    load_checkpoint,
    load_dataset,
    load_history_csv,
    parse_checkpoint,
    parse_trajectory,
    save_checkpoint,
    save_dataset,
    save_history_csv,
    save_trajectory,
)
from swarmlearn.knode_controller import ControllerMeta, init_controller
from swarmlearn.sim_core import RngSpec, Trajectory
from swarmlearn.sim_groundtruth import generate_dataset
from swarmlearn.trainer import TrainHistory


def small_cfg_text(space="2d", steps=30, traj=3, train=2, epochs=2, hidden=8,
                   k=3, n=5, seed=3):
    cfg = default_2d_config() if space == "2d" else default_3d_config()
    cfg.steps, cfg.traj_count, cfg.train_count = steps, traj, train
    cfg.epochs, cfg.hidden, cfg.k, cfg.n, cfg.seed = epochs, hidden, k, n, seed
    cfg.batch_size = 16
    return emit_config(cfg)


class TestConfigFormat:
    def test_round_trip_bitwise(self):
        cfg = default_3d_config()
        cfg.lr = 0.0003141
        cfg.d_cr = 2.7182818
        assert parse_config(emit_config(cfg)) == cfg

    def test_unknown_key_line_number(self):
        text = "space=2d\nnn=10\n"
        with pytest.raises(ConfigError) as ei:
            parse_config(text)
        assert "line 2" in str(ei.value)
        assert ei.value.line == 2

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("n=10\nn=12\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError) as ei:
            parse_config("n=ten\n")
        assert ei.value.line == 1

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# a comment\n\nspace=2d\n")
        assert cfg.space == "2d"

    def test_semantic_validation(self):
        with pytest.raises(ConfigError):
            parse_config("traj_count=5\ntrain_count=5\n")


class TestTrajectoryFormat:
    def test_round_trip_bitwise(self):
        rng = RngSpec(70).generator()
        traj = Trajectory(rng.normal(size=(7, 3, 4)) * 1e3, dt=0.01, t0=0.1,
                          space_tag="2d")
        assert parse_trajectory(emit_trajectory(traj)) == traj

    def test_header_contents(self):
        traj = Trajectory(np.zeros((2, 2, 6)), dt=0.02, t0=0.2, space_tag="3d")
        text = emit_trajectory(traj)
        head = text.splitlines()
        assert head[0] == "# swarmlearn-traj v1"
        assert head[1] == "# n=2 d=6 dt=0.02 space=3d t0=0.2"
        assert head[2] == "step,robot,c0,c1,c2,c3,c4,c5"

    def test_file_round_trip(self, tmp_path):
        traj = Trajectory(RngSpec(71).generator().normal(size=(3, 2, 4)), dt=0.5)
        path = tmp_path / "t.csv"
        save_trajectory(traj, path)
        assert parse_trajectory(path.read_text()) == traj

    def test_rejects_foreign_file(self):
        with pytest.raises(FormatError):
            parse_trajectory("hello,world\n")


class TestCheckpointFormat:
    def params(self, space="2d"):
        meta = ControllerMeta(space=space, k=3, d=4 if space == "2d" else 6,
                              hidden=8, d_cr=5.0, tau=0 if space == "2d" else 1,
                              gain_form="offset_square" if space == "2d" else "square")
        return init_controller(meta, RngSpec(72))

    def test_round_trip_bitwise_2d(self):
        p = self.params()
        q, epochs = parse_checkpoint(emit_checkpoint(p, epochs_completed=7))
        assert epochs == 7
        assert np.array_equal(p.W1, q.W1)
        assert np.array_equal(p.b1, q.b1)
        assert np.array_equal(p.W2, q.W2)
        assert np.array_equal(p.b2, q.b2)
        assert p.phi_neighbor == q.phi_neighbor
        assert q.phi_wall is None
        assert p.meta == q.meta
        assert emit_checkpoint(p, 7) == emit_checkpoint(q, 7)

    def test_round_trip_bitwise_3d(self):
        p = self.params("3d")
        q, _ = parse_checkpoint(emit_checkpoint(p))
        assert p.phi_wall == q.phi_wall
        assert emit_checkpoint(p) == emit_checkpoint(q)

    def test_rejects_foreign_file(self):
        with pytest.raises(FormatError):
            parse_checkpoint("not a checkpoint")


class TestDatasetIo:
    def test_save_load_round_trip(self, tmp_path):
        cfg = default_2d_config()
        cfg.steps, cfg.traj_count, cfg.train_count = 10, 3, 2
        ds = generate_dataset(cfg)
        save_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        assert back.manifest["config"] == ds.manifest["config"]
        for a, b in zip(ds.trajectories, back.trajectories):
            assert a == b

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError):
            load_dataset(tmp_path)


class TestHistoryCsv:
    def test_round_trip(self, tmp_path):
        hist = TrainHistory(epochs=[0, 1], train_loss=[1.5, 0.5],
                            holdout_loss=[2.0, 1.0], phi_neighbor=[1.0, 0.9],
                            phi_wall=[None, None], wall_clock=[0.1, 0.2])
        path = tmp_path / "h.csv"
        save_history_csv(hist, path)
        back = load_history_csv(path)
        assert back.epochs == hist.epochs
        assert back.train_loss == hist.train_loss
        assert back.phi_wall == hist.phi_wall


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny end-to-end CLI workspace shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.txt"
    cfg_path.write_text(small_cfg_text())
    assert main(["generate", "--config", str(cfg_path), "--out",
                 str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--config", str(cfg_path),
                 "--out", str(root / "model.ckpt")]) == 0
    return root, cfg_path


class TestCli:
    def test_generate_outputs(self, workspace):
        root, _ = workspace
        files = sorted((root / "data").glob("traj_*.csv"))
        assert len(files) == 3
        manifest = json.loads((root / "data" / "manifest.json").read_text())
        assert [r["split"] for r in manifest["trajectories"]] == \
            ["train", "train", "test"]

    def test_generate_seed_determinism(self, workspace, tmp_path):
        root, cfg_path = workspace
        assert main(["generate", "--config", str(cfg_path), "--out",
                     str(tmp_path / "again"), "--seed", "3"]) == 0
        for name in ["traj_000.csv", "manifest.json"]:
            assert (tmp_path / "again" / name).read_bytes() == \
                (root / "data" / name).read_bytes()

    def test_train_outputs(self, workspace):
        root, _ = workspace
        params, epochs = load_checkpoint(root / "model.ckpt")
        assert epochs == 2
        hist = load_history_csv(root / "model.ckpt.history.csv")
        assert hist.epochs == [0, 1]

    def test_train_resume_continues_epochs(self, workspace, tmp_path):
        root, cfg_path = workspace
        out = tmp_path / "resumed.ckpt"
        assert main(["train", "--data", str(root / "data"), "--config",
                     str(cfg_path), "--out", str(out), "--resume",
                     str(root / "model.ckpt")]) == 0
        _, epochs = load_checkpoint(out)
        assert epochs == 4

    def test_eval_outputs_and_svg(self, workspace):
        root, _ = workspace
        out = root / "eval"
        assert main(["eval", "--model", str(root / "model.ckpt"), "--data",
                     str(root / "data"), "--out", str(out), "--tail", "5"]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "step,amd_mean,amd_lo,amd_hi,avd_mean,avd_lo,avd_hi"
        assert len(lines) == 32  # 31 predicted snapshots + header
        summary = (out / "summary.csv").read_text().splitlines()
        assert len(summary) == 2  # one test trajectory
        for svg in (out / "amd.svg", out / "avd.svg"):
            ET.fromstring(svg.read_text())  # strict XML parse

    def test_plot_command(self, workspace, tmp_path):
        root, _ = workspace
        assert main(["plot", "--input", str(root / "eval" / "metrics.csv"),
                     "--out", str(tmp_path)]) == 0
        made = list(tmp_path.glob("*.svg"))
        assert len(made) == 2
        for f in made:
            ET.fromstring(f.read_text())

    def test_scale_command(self, workspace):
        root, _ = workspace
        out = root / "scale"
        assert main(["scale", "--model", str(root / "model.ckpt"), "--sizes",
                     "4,6", "--runs", "2", "--steps", "10", "--dt", "0.01",
                     "--out", str(out), "--seed", "1"]) == 0
        lines = (out / "scale.csv").read_text().splitlines()
        assert lines[0].startswith("size,metric,min,q1,median,q3,max")
        assert len(lines) == 5  # 2 sizes x 2 metrics + header
        assert main(["plot", "--input", str(out / "scale.csv"), "--out",
                     str(out)]) == 0

    def test_gridsearch_single_cell_and_resume(self, workspace):
        root, cfg_path = workspace
        out = root / "grid"
        argv = ["gridsearch", "--config", str(cfg_path), "--data",
                str(root / "data"), "--out", str(out), "--dcr", "5.0",
                "--k", "3", "--runs", "2", "--steps", "10", "--tail", "5"]
        assert main(argv) == 0
        grid = (out / "grid.csv").read_text().splitlines()
        assert len(grid) == 2
        cell = out / "cells" / "cell_dcr5_k3.json"
        assert cell.exists()
        stamp = cell.stat().st_mtime_ns
        assert main(argv) == 0  # resume: completed cell untouched
        assert cell.stat().st_mtime_ns == stamp
        assert main(["plot", "--input", str(out / "grid.csv"), "--out",
                     str(out)]) == 0


class TestCliExitCodes:
    def test_bad_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("space=2d\nbogus_key=1\n")
        assert main(["generate", "--config", str(bad), "--out",
                     str(tmp_path / "d")]) == 2

    def test_missing_manifest_exits_2(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(small_cfg_text())
        (tmp_path / "empty").mkdir()
        assert main(["train", "--data", str(tmp_path / "empty"), "--config",
                     str(cfg), "--out", str(tmp_path / "m.ckpt")]) == 2

    def test_space_mismatch_exits_2(self, tmp_path):
        cfg2d = tmp_path / "c2.cfg"
        cfg2d.write_text(small_cfg_text())
        assert main(["generate", "--config", str(cfg2d), "--out",
                     str(tmp_path / "d2")]) == 0
        cfg3d = tmp_path / "c3.cfg"
        cfg3d.write_text(small_cfg_text(space="3d", steps=40, traj=3, train=1))
        assert main(["train", "--data", str(tmp_path / "d2"), "--config",
                     str(cfg3d), "--out", str(tmp_path / "m.ckpt")]) == 2

    def test_empty_test_set_exits_2(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(small_cfg_text())
        assert main(["generate", "--config", str(cfg), "--out",
                     str(tmp_path / "d")]) == 0
        manifest_path = tmp_path / "d" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        for rec in manifest["trajectories"]:
            rec["split"] = "train"
        manifest_path.write_text(json.dumps(manifest))
        model = tmp_path / "m.ckpt"
        meta = ControllerMeta(space="2d", k=3, d=4, hidden=8, d_cr=5.0, tau=0)
        save_checkpoint(init_controller(meta, RngSpec(1)), model)
        assert main(["eval", "--model", str(model), "--data", str(tmp_path / "d"),
                     "--out", str(tmp_path / "e")]) == 2


class TestDeterministicRetrain:
    def test_generate_train_emit_twice_is_byte_identical(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(small_cfg_text(steps=20, epochs=2))
        outputs = []
        for tag in ("a", "b"):
            d = tmp_path / tag
            assert main(["generate", "--config", str(cfg), "--out",
                         str(d / "data")]) == 0
            assert main(["train", "--data", str(d / "data"), "--config", str(cfg),
                         "--out", str(d / "model.ckpt")]) == 0
            outputs.append(d)
        a, b = outputs
        for rel in ["data/manifest.json", "data/traj_000.csv", "model.ckpt"]:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()
