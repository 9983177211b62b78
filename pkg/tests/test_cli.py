import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from cisnet import dataset
from cisnet.cli import UsageError, main, parse_grid
from cisnet.config import ConfigError, RunConfig, load_config
from cisnet.evaluation import detection_error
from cisnet.experiments import desk_task, run
from cisnet.layers import SublinearConfig

SMALL = ["--set", "network.input_size=16", "--set", "network.channels=4,4,4,4,4"]


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    argv = ["prepare", "--out-dir", str(out), "--seed", "3", "--set", "data.synthetic_count=20",
            "--set", "data.size=16", "--set", "data.payloads=0.4,0"]
    assert main(argv) == 0
    return out


@pytest.fixture(scope="module")
def trained(prepared, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    argv = ["train", "--out-dir", str(out), "--manifest", str(prepared / "train_p0.4.txt"),
            "--set", "train.epochs=3", *SMALL]
    assert main(argv) == 0
    return out


class TestVerifyVariance:
    def test_default_grid(self, tmp_path):
        assert main(["verify-variance", "--out-dir", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "variance.csv")
        assert len(rows) == 27 and all(r["pass"] == "1" for r in rows)
        row = next(r for r in rows if (r["alpha"], r["s"], r["T"]) == ("1.0", "1.0", "1.0"))
        assert float(row["mu_s"]) == pytest.approx(0.36787944, abs=1e-8)

    @pytest.mark.parametrize("grid", ["alpha=1;s=1", "alpha=1;s=x;T=1", "alpha=1;s=1;T=-1", "nonsense"])
    def test_malformed_grid(self, tmp_path, grid):
        assert main(["verify-variance", "--out-dir", str(tmp_path), "--grid", grid]) == 2

    def test_grid_parser(self):
        assert parse_grid("alpha=1,2;s=3;T=4") == {"alpha": [1.0, 2.0], "s": [3.0], "T": [4.0]}
        with pytest.raises(UsageError):
            parse_grid("alpha=1;alpha=2;T=1")

    def test_monte_carlo_column(self, tmp_path):
        argv = ["verify-variance", "--out-dir", str(tmp_path), "--grid", "alpha=1;s=1;T=1", "--samples", "100000"]
        assert main(argv) == 0
        (row,) = read_csv(tmp_path / "variance.csv")
        assert float(row["empirical_gap"]) == pytest.approx(math.exp(-2), rel=0.1)


class TestConfig:
    def test_unknown_key(self, tmp_path):
        assert main(["verify-variance", "--out-dir", str(tmp_path), "--set", "network.bogus=1"]) == 2

    def test_unknown_section_in_file(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text("[nowhere]\nx = 1\n")
        assert main(["verify-variance", "--out-dir", str(tmp_path), "--config", str(p)]) == 2

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            load_config(overrides=["network.truncation_mode=sideways"])

    def test_file_then_overrides(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text("[network]\nthreshold = inf\ngamma2 = 0.8\n[train]\nepochs = 7\n")
        cfg = load_config(p, ["train.epochs=9"])
        assert math.isinf(cfg.network(0).truncation.threshold)
        assert cfg.network(0).spl.gamma2 == 0.8
        assert cfg.train(0).epochs == 9

    def test_snapshot_round_trip(self, tmp_path):
        assert main(["verify-variance", "--out-dir", str(tmp_path), "--grid", "alpha=1;s=1;T=1",
                     "--set", "network.threshold=3"]) == 0
        back = RunConfig.defaults()
        back.update_from_text((tmp_path / "config.resolved.ini").read_text())
        assert back.values == load_config(overrides=["network.threshold=3"]).values


class TestPrepare:
    def test_shared_split(self, prepared):
        for split in ("train", "test"):
            a = [p.stem for p, _, _ in dataset.read_manifest(prepared / f"{split}_p0.4.txt")]
            b = [p.stem for p, _, _ in dataset.read_manifest(prepared / f"{split}_p0.txt")]
            assert a == b
        train = {p.stem for p, _, _ in dataset.read_manifest(prepared / "train_p0.4.txt")}
        test = {p.stem for p, _, _ in dataset.read_manifest(prepared / "test_p0.4.txt")}
        assert not train & test and len(train | test) == 20

    def test_zero_payload_stegos_equal_covers(self, prepared):
        for cover, _, _ in dataset.read_manifest(prepared / "train_p0.txt"):
            assert dataset.stego_path(prepared, 0.0, cover.stem).read_bytes() == cover.read_bytes()

    def test_rerun_byte_identical(self, prepared, tmp_path):
        argv = ["prepare", "--out-dir", str(tmp_path), "--seed", "3", "--set", "data.synthetic_count=20",
                "--set", "data.size=16", "--set", "data.payloads=0.4,0"]
        assert main(argv) == 0
        files = sorted(p.relative_to(prepared) for p in prepared.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
        for f in files:
            assert (prepared / f).read_bytes() == (tmp_path / f).read_bytes(), f

    def test_duplicate_cover_names(self):
        with pytest.raises(ValueError):
            dataset.split_names(["x", "x"], 0.2, 0)

    def test_augmented(self, tmp_path):
        covers = dataset.write_synthetic_covers(tmp_path, 5, 16, 0)
        dataset.prepare(tmp_path, covers, [0.4], 0, 0.2, augment=True)
        train = dataset.read_manifest(tmp_path / "train_p0.4.txt")
        assert len(train) == 4 * 4
        assert sum(p.stem.endswith("_r90") for p, _, _ in train) == 4

    def test_manifest_reload_matches_stored(self, prepared):
        pairs = dataset.load_manifest(prepared / "test_p0.4.txt")
        assert pairs.covers.shape[1:] == (1, 16, 16)
        assert np.any(pairs.stegos != pairs.covers)


class TestTrain:
    def test_loss_log(self, trained):
        rows = read_csv(trained / "losses.csv")
        assert [r["epoch"] for r in rows] == ["0", "1", "2"]
        for r in rows:
            t = int(r["epoch"])
            for g, base in (("fusion", 1e-2), ("type1", 1e-3), ("fc", 1e-4), ("hpf", 5e-6)):
                assert abs(float(r[f"lr_{g}"]) - base * 0.985 ** t) <= 1e-12 * base
        assert (trained / "checkpoint.ckpt").is_file()
        assert (trained / "config.resolved.ini").is_file()

    def test_resume_reproduces_losses(self, prepared, trained, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        manifest = str(prepared / "train_p0.4.txt")
        assert main(["train", "--out-dir", str(first), "--manifest", manifest, "--set", "train.epochs=1", *SMALL]) == 0
        assert main(["train", "--out-dir", str(second), "--manifest", manifest, "--set", "train.epochs=3",
                     "--resume", str(first / "checkpoint.ckpt"), *SMALL]) == 0
        assert (second / "losses.csv").read_bytes() == (trained / "losses.csv").read_bytes()
        assert (second / "checkpoint.ckpt").read_bytes() == (trained / "checkpoint.ckpt").read_bytes()

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_divergence_keeps_last_checkpoint(self, prepared, trained, tmp_path, capsys):
        good = (trained / "checkpoint.ckpt").read_bytes()
        (tmp_path / "checkpoint.ckpt").write_bytes(good)
        argv = ["train", "--out-dir", str(tmp_path), "--manifest", str(prepared / "train_p0.4.txt"),
                "--set", "train.lr_fc=1e300", "--set", "train.lr_fusion=1e300", *SMALL]
        assert main(argv) == 1
        assert "check failed" in capsys.readouterr().err
        assert (tmp_path / "checkpoint.ckpt").read_bytes() == good

    def test_curriculum_from_data_dir(self, tmp_path):
        data = tmp_path / "data"
        assert main(["prepare", "--out-dir", str(data), "--set", "data.synthetic_count=10",
                     "--set", "data.size=16", "--set", "data.payloads=0.5,0.4"]) == 0
        out = tmp_path / "run"
        assert main(["train", "--out-dir", str(out), "--data-dir", str(data), "--set", "train.epochs=1",
                     "--set", "train.curriculum=0.5,0.4", *SMALL]) == 0
        assert (out / "checkpoint_p0.5.ckpt").is_file() and (out / "checkpoint_p0.4.ckpt").is_file()

    def test_missing_manifest(self, tmp_path):
        assert main(["train", "--out-dir", str(tmp_path), "--manifest", str(tmp_path / "none.txt")]) == 1
        assert main(["train", "--out-dir", str(tmp_path)]) == 2


class TestEvalCam:
    def test_eval_round_trip(self, prepared, trained, tmp_path):
        argv = ["eval", "--out-dir", str(tmp_path), "--checkpoint", str(trained / "checkpoint.ckpt"),
                "--manifest", str(prepared / "train_p0.4.txt"), "--manifest", str(prepared / "test_p0.4.txt"),
                *SMALL]
        assert main(argv) == 0
        summary = {r["split"]: r for r in read_csv(tmp_path / "summary.csv")}
        assert set(summary) == {"train_p0.4", "test_p0.4"}
        for split, r in summary.items():
            rows = read_csv(tmp_path / f"scores_{split}.csv")
            rep = detection_error([float(x["score"]) for x in rows], [int(x["label"]) for x in rows])
            assert rep.pe == float(r["pe"]) and rep.auc == float(r["auc"])

    def test_missing_checkpoint(self, prepared, tmp_path):
        argv = ["eval", "--out-dir", str(tmp_path), "--checkpoint", str(tmp_path / "none.ckpt"),
                "--manifest", str(prepared / "test_p0.4.txt")]
        assert main(argv) == 1

    def test_cam_count(self, prepared, trained, tmp_path):
        argv = ["cam", "--out-dir", str(tmp_path), "--checkpoint", str(trained / "checkpoint.ckpt"),
                "--manifest", str(prepared / "test_p0.4.txt"), "--count", "3", *SMALL]
        assert main(argv) == 0
        assert len(list((tmp_path / "cam").glob("*.pgm"))) == 3
        assert len(read_csv(tmp_path / "cam.csv")) == 3

    def test_cam_bad_count(self, prepared, trained, tmp_path):
        argv = ["cam", "--out-dir", str(tmp_path), "--checkpoint", str(trained / "checkpoint.ckpt"),
                "--manifest", str(prepared / "test_p0.4.txt"), "--count", "0"]
        assert main(argv) == 2


class TestAblate:
    OVERRIDES = ["ablate.train_pairs=16", "ablate.test_pairs=8", "network.input_size=16",
                 "ablate.channels=4,4,4,4,4", "train.epochs=1"]
    ARGS = [a for o in OVERRIDES for a in ("--set", o)] + ["--seed", "2"]

    def test_unit_gamma_cell_is_average_pooling(self, tmp_path):
        argv = ["ablate", "--out-dir", str(tmp_path), "--set", "ablate.axis=gamma", "--values", "1:1", *self.ARGS]
        assert main(argv) == 0
        (row,) = read_csv(tmp_path / "ablate.csv")
        cfg = load_config(overrides=self.OVERRIDES)
        base = replace(cfg.network(2), channels=(4, 4, 4, 4, 4), spl=SublinearConfig(1.0, 1.0, 2))
        ref = run(desk_task(16, 8, 0.4, 2, 16), base, cfg.train(2))
        assert float(row["train_pe"]) == ref.train_pe and float(row["test_pe"]) == ref.test_pe

    def test_threshold_axis(self, tmp_path):
        argv = ["ablate", "--out-dir", str(tmp_path), "--values", "3,inf", *self.ARGS]
        assert main(argv) == 0
        assert [r["cell"] for r in read_csv(tmp_path / "ablate.csv")] == ["T=3", "T=inf"]

    def test_bad_values(self, tmp_path):
        assert main(["ablate", "--out-dir", str(tmp_path), "--values", "0", *self.ARGS]) == 2
