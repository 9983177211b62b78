import json

import numpy as np
import pytest

from cisnet.checkpoint import MAGIC, Checkpoint, CheckpointError
from cisnet.experiments import desk_network, desk_task
from cisnet.train import TrainConfig, Trainer, train_new


@pytest.fixture(scope="module")
def data():
    return desk_task(32, 4, seed=2, size=16).train


@pytest.fixture(scope="module")
def trained(data):
    return train_new(data, desk_network(1, input_size=(16, 16)), TrainConfig(seed=1), epochs=2)


class TestRoundTrip:
    def test_save_load_save_identical(self, trained, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        Checkpoint.capture(trained, note="x").save(a)
        Checkpoint.load(a).save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_restore_exact(self, trained):
        back = Checkpoint.from_bytes(Checkpoint.capture(trained).to_bytes()).restore()
        for k, t in trained.net.named_parameters().items():
            np.testing.assert_array_equal(back.net.named_parameters()[k].data, t.data)
            np.testing.assert_array_equal(back.optimizer.m[k], trained.optimizer.m[k])
            np.testing.assert_array_equal(back.optimizer.v[k], trained.optimizer.v[k])
        assert back.epoch == 2 and back.optimizer.step_count == trained.optimizer.step_count
        assert back.step_losses == trained.step_losses

    def test_manifest_contents(self, trained):
        raw = Checkpoint.capture(trained).to_bytes()
        man = json.loads(raw[len(MAGIC):raw.index(b"\n", len(MAGIC))])
        assert man["epoch"] == 2
        assert man["rng"] == {"seed": 1, "epoch": 2}
        assert man["learning_rates"]["current"]["fusion"] == pytest.approx(0.01 * 0.985 ** 2, rel=1e-12)
        names = {e["name"] for e in man["arrays"]}
        assert "param/fc.weight" in names and "adam_v/fusion.slope" in names


class TestResume:
    def test_resumed_losses_match_uninterrupted(self, data, tmp_path):
        cfg = TrainConfig(seed=7)
        net_cfg = desk_network(7, input_size=(16, 16))
        full = train_new(data, net_cfg, cfg, epochs=3)

        part = train_new(data, net_cfg, cfg, epochs=1)
        Checkpoint.capture(part).save(tmp_path / "mid.ckpt")
        resumed = Checkpoint.load(tmp_path / "mid.ckpt").restore()
        resumed.fit(data, 3)
        assert resumed.step_losses == full.step_losses
        for k, t in full.net.named_parameters().items():
            np.testing.assert_array_equal(resumed.net.named_parameters()[k].data, t.data)


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            Checkpoint.load(tmp_path / "nope.ckpt")

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(b"not a checkpoint")

    def test_truncated_payload(self, trained):
        raw = Checkpoint.capture(trained).to_bytes()
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(raw[:-8])

    def test_fingerprint_mismatch(self, trained):
        raw = Checkpoint.capture(trained).to_bytes()
        end = raw.index(b"\n", len(MAGIC))
        man = json.loads(raw[len(MAGIC):end])
        man["network"]["dilation_type2"] = 3
        forged = MAGIC + json.dumps(man, sort_keys=True).encode() + raw[end:]
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(forged)

    def test_shape_mismatch_on_restore(self, trained):
        ck = Checkpoint.capture(trained)
        ck.arrays["param/fc.weight"] = np.zeros((2, 3))
        with pytest.raises(CheckpointError):
            ck.restore()


def test_restored_trainer_is_independent(trained):
    ck = Checkpoint.capture(trained)
    tr = ck.restore()
    tr.net.named_parameters()["fc.bias"].data[...] = 99.0
    assert not np.any(trained.net.named_parameters()["fc.bias"].data == 99.0)
    assert isinstance(tr, Trainer)
