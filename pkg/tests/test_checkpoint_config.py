import struct

import numpy as np
import pytest
import torch

from crlc_ssl.checkpoint import (
    MAGIC,
    load_checkpoint,
    load_into,
    module_tensors,
    parameter_checksum,
    save_checkpoint,
)
from crlc_ssl.config import RunConfig, parse_config_text
from crlc_ssl.errors import CheckpointMismatchError, FormatError, InvalidArgumentError
from crlc_ssl.mpnn import SSLModel


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = SSLModel()
        path = tmp_path / "m.ckpt"
        cfg = RunConfig.synthetic(seed=9)
        save_checkpoint(path, module_tensors(model), cfg.to_text())
        ckpt = load_checkpoint(path)
        assert ckpt.n_parameters == 601_184
        assert RunConfig.from_text(ckpt.config_text) == cfg
        fresh = SSLModel()
        load_into(fresh, ckpt.tensors)
        assert parameter_checksum(fresh) == parameter_checksum(model)
        for name, t in model.state_dict().items():
            assert np.array_equal(ckpt.tensors[name], t.numpy())

    def test_layout(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}, "a = 1\n")
        raw = path.read_bytes()
        expected = (MAGIC + struct.pack("<HI", 1, 6) + b"a = 1\n" + struct.pack("<I", 1)
                    + struct.pack("<HB", 1, 2) + b"w" + struct.pack("<2I", 2, 3)
                    + np.arange(6, dtype="<f4").tobytes())
        assert raw == expected

    def test_scalar_and_empty(self, tmp_path):
        path = tmp_path / "s.ckpt"
        save_checkpoint(path, {"s": np.float32(2.5)})
        ckpt = load_checkpoint(path)
        assert ckpt.tensors["s"].shape == () and float(ckpt.tensors["s"]) == 2.5
        save_checkpoint(path, {})
        assert load_checkpoint(path).tensors == {}

    def test_empty_file(self, tmp_path):
        path = tmp_path / "e.ckpt"
        path.write_bytes(b"")
        with pytest.raises(FormatError) as exc:
            load_checkpoint(path)
        assert exc.value.offset == 0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "b.ckpt"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(FormatError) as exc:
            load_checkpoint(path)
        assert exc.value.offset == 0

    def test_truncated_payload_offset(self, tmp_path):
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, {"w": np.ones(4, dtype=np.float32)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        payload_start = len(raw) - 16
        with pytest.raises(FormatError) as exc:
            load_checkpoint(path)
        assert exc.value.offset == payload_start
        assert "payload of w" in str(exc.value)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, {"w": np.ones(2, dtype=np.float32)})
        size = path.stat().st_size
        path.write_bytes(path.read_bytes() + b"\0\0")
        with pytest.raises(FormatError) as exc:
            load_checkpoint(path)
        assert exc.value.offset == size

    def test_mismatch_names_tensor(self, tmp_path):
        model = SSLModel(K=3)
        tensors = {k: v.numpy() for k, v in module_tensors(model).items()}
        with pytest.raises(CheckpointMismatchError, match="backbone.mpnn.rounds.2"):
            load_into(SSLModel(K=2), tensors)
        tensors["projector.linear.bias"] = np.zeros(31, dtype=np.float32)
        with pytest.raises(CheckpointMismatchError, match="projector.linear.bias"):
            load_into(SSLModel(K=3), tensors)
        del tensors["projector.linear.bias"]
        with pytest.raises(CheckpointMismatchError, match="projector.linear.bias"):
            load_into(SSLModel(K=3), tensors)

    def test_failed_save_keeps_previous_file(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"a": np.zeros(3)})
        before = path.read_bytes()

        class Exploding(dict):
            def items(self):
                yield "a", np.ones(3)
                raise RuntimeError("interrupted")

        with pytest.raises(RuntimeError):
            save_checkpoint(path, Exploding())
        assert path.read_bytes() == before
        assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]

    def test_checksum_tracks_changes(self):
        model = SSLModel()
        before = parameter_checksum(model)
        with torch.no_grad():
            model.projector.linear.bias[0] += 1
        assert parameter_checksum(model) != before


class TestConfig:
    def test_parse(self):
        text = "# comment\n\nstrategy = csc   # trailing\nK=2\n"
        assert parse_config_text(text) == {"strategy": "csc", "K": "2"}

    def test_parse_errors(self):
        with pytest.raises(InvalidArgumentError, match="line 2"):
            parse_config_text("K = 1\nnonsense\n")
        with pytest.raises(InvalidArgumentError, match="empty key"):
            parse_config_text(" = 3")

    def test_from_text_types_and_base(self):
        base = RunConfig.biosignal()
        cfg = RunConfig.from_text("learning_rate = 5e-4\nbatch_size = 1e2\nloss = ts2vec\n", base)
        assert cfg.learning_rate == 5e-4 and cfg.batch_size == 100 and cfg.loss == "ts2vec"
        assert cfg.epochs == base.epochs == 20

    def test_round_trip(self):
        cfg = RunConfig(strategy="cac", K=0, tau=0.25, augment_family="ecg", sample_rate=250.0)
        assert RunConfig.from_text(cfg.to_text()) == cfg

    def test_unknown_key_and_bad_value(self):
        with pytest.raises(InvalidArgumentError, match="unknown config key"):
            RunConfig.from_text("temperature = 0.1")
        with pytest.raises(InvalidArgumentError, match="cannot parse"):
            RunConfig.from_text("epochs = many")

    @pytest.mark.parametrize("change", [
        {"strategy": "xyz"}, {"loss": "mse"}, {"K": -1}, {"epochs": 0}, {"dropout": 1.0},
        {"tau": 0.0}, {"weight_decay": -1.0}, {"augment_family": "emg"},
    ])
    def test_validation(self, change):
        with pytest.raises(InvalidArgumentError):
            RunConfig(**change)

    def test_profiles(self):
        syn, bio = RunConfig.synthetic(), RunConfig.biosignal()
        assert (syn.epochs, syn.learning_rate, syn.batch_size) == (50, 1e-4, 32)
        assert (bio.epochs, bio.learning_rate, bio.batch_size) == (20, 1e-3, 64)
        assert syn.K == bio.K == 3
