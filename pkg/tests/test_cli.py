import csv
import subprocess
import sys

import numpy as np
import pytest

from crlc_ssl.checkpoint import load_checkpoint
from crlc_ssl.cli import METRICS_HEADER, main, mean_sem
from crlc_ssl.config import RunConfig
from crlc_ssl.data import read_dataset


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("simulate", "--mode", "pretrain-drift", "--n", 8, "--t", 384, "--seed", 1,
               "--out", d / "pre.mvts") == 0
    assert run("pretrain", "--data", d / "pre.mvts", "--epochs", 1, "--batch", 4, "--seed", 5,
               "--out", d / "m.ckpt") == 0
    assert run("simulate", "--mode", "finetune-block", "--n", 80, "--t", 384, "--seed", 2,
               "--out", d / "ft.mvts") == 0
    return d


class TestSimulate:
    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert run("simulate", "--mode", "finetune-full", "--n", 6, "--c", 5, "--m", 3, "--t", 200,
                       "--seed", 4, "--out", tmp_path / f"{name}.mvts") == 0
        assert (tmp_path / "a.mvts").read_bytes() == (tmp_path / "b.mvts").read_bytes()
        ds = read_dataset(tmp_path / "a.mvts")
        assert ds.windows.shape == (6, 5, 200) and ds.labels is not None and ds.paired is None

    def test_pretrain_modes_carry_pairs(self, tmp_path):
        for mode in ("pretrain-drift", "pretrain-stationary"):
            assert run("simulate", "--mode", mode, "--n", 3, "--t", 100, "--out", tmp_path / "p.mvts") == 0
            ds = read_dataset(tmp_path / "p.mvts")
            assert ds.paired is not None and ds.labels is None

    def test_manifest_line(self, tmp_path, capsys):
        run("simulate", "--mode", "pretrain-drift", "--n", 2, "--t", 100, "--seed", 3, "--out", tmp_path / "x")
        assert "n=2 C=10 T=100 mode=pretrain-drift seed=3" in capsys.readouterr().out

    def test_invalid_arguments(self, tmp_path, capsys):
        assert run("simulate", "--mode", "pretrain-drift", "--n", 2, "--c", 0, "--out", tmp_path / "x") == 2
        assert capsys.readouterr().err.startswith("error:")
        assert not (tmp_path / "x").exists()


class TestPretrain:
    def test_checkpoint_and_log(self, workdir):
        ckpt = load_checkpoint(workdir / "m.ckpt")
        assert ckpt.n_parameters == 601_184
        cfg = RunConfig.from_text(ckpt.config_text)
        assert (cfg.epochs, cfg.batch_size, cfg.seed) == (1, 4, 5)
        log = (workdir / "m.ckpt.log").read_text()
        assert "epoch 1 train_loss" in log

    def test_reproducible(self, workdir, tmp_path):
        assert run("pretrain", "--data", workdir / "pre.mvts", "--epochs", 1, "--batch", 4, "--seed", 5,
                   "--out", tmp_path / "again.ckpt", "--log", tmp_path / "again.log") == 0
        assert (tmp_path / "again.ckpt").read_bytes() == (workdir / "m.ckpt").read_bytes()

    def test_config_file_and_override(self, workdir, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("strategy = csc\nloss = ts2vec\nK = 1\nbatch_size = 4\nepochs = 3\n")
        assert run("pretrain", "--data", workdir / "pre.mvts", "--config", conf, "--epochs", 1,
                   "--out", tmp_path / "c.ckpt") == 0
        cfg = RunConfig.from_text(load_checkpoint(tmp_path / "c.ckpt").config_text)
        assert (cfg.strategy, cfg.loss, cfg.K, cfg.epochs) == ("csc", "ts2vec", 1, 1)

    def test_crlc_on_three_channels_fails_cleanly(self, tmp_path, capsys):
        run("simulate", "--mode", "pretrain-drift", "--n", 4, "--c", 3, "--t", 100, "--out", tmp_path / "c3.mvts")
        assert run("pretrain", "--data", tmp_path / "c3.mvts", "--strategy", "crlc",
                   "--out", tmp_path / "bad.ckpt") == 2
        assert "4 channels" in capsys.readouterr().err
        assert not (tmp_path / "bad.ckpt").exists()

    def test_csc_needs_even_length_without_pairs(self, tmp_path, capsys):
        # labelled files carry no successor windows, so CSC must halve each window
        run("simulate", "--mode", "finetune-full", "--n", 4, "--t", 193, "--out", tmp_path / "odd.mvts")
        assert run("pretrain", "--data", tmp_path / "odd.mvts", "--strategy", "csc", "--epochs", 1,
                   "--batch", 4, "--out", tmp_path / "odd.ckpt") == 2
        assert "odd" in capsys.readouterr().err
        assert not (tmp_path / "odd.ckpt").exists()
        run("simulate", "--mode", "finetune-full", "--n", 4, "--t", 192, "--out", tmp_path / "even.mvts")
        assert run("pretrain", "--data", tmp_path / "even.mvts", "--strategy", "csc", "--epochs", 1,
                   "--batch", 4, "--out", tmp_path / "even.ckpt") == 0

    def test_missing_data_file(self, tmp_path):
        assert run("pretrain", "--data", tmp_path / "nope.mvts", "--out", tmp_path / "m.ckpt") == 2


class TestFinetune:
    def test_rows_and_summary(self, workdir, tmp_path, capsys):
        metrics = tmp_path / "metrics.csv"
        argv = ["finetune", "--ckpt", workdir / "m.ckpt", "--data", workdir / "ft.mvts", "--n-per-class", 10,
                "--freeze", "--seeds", "1,2", "--test-size", 20, "--max-epochs", 2, "--metrics", metrics]
        assert run(*argv) == 0
        out = capsys.readouterr().out
        rows = list(csv.DictReader(metrics.open()))
        assert metrics.read_text().splitlines()[0] == ",".join(METRICS_HEADER)
        assert [r["seed"] for r in rows] == ["1", "2"]
        assert all(r["split"] == "test" and r["stage"] == "probe" and r["n_per_class"] == "10" for r in rows)
        accs = [float(r["balanced_accuracy"]) for r in rows]
        mean, sem = mean_sem(accs)
        assert f"balanced accuracy {mean:.4f} ({sem:.4f}) over 2 seeds" in out
        # a second invocation appends below the same header
        assert run(*argv[:-2], "--seeds", "3", "--metrics", metrics) == 0
        lines = metrics.read_text().splitlines()
        assert len(lines) == 4 and lines.count(",".join(METRICS_HEADER)) == 1

    def test_split_sizes(self, workdir, tmp_path, monkeypatch):
        import crlc_ssl.cli as cli
        seen = {}
        real = cli.attach_probe_and_finetune

        def spy(backbone, cfg, train, val, *args, **kwargs):
            seen["train"], seen["val"] = np.bincount(train.labels), np.bincount(val.labels)
            return real(backbone, cfg, train, val, *args, **kwargs)

        monkeypatch.setattr(cli, "attach_probe_and_finetune", spy)
        assert run("finetune", "--ckpt", workdir / "m.ckpt", "--data", workdir / "ft.mvts", "--n-per-class", 10,
                   "--freeze", "--seeds", "1", "--test-size", 20, "--max-epochs", 1,
                   "--metrics", tmp_path / "m.csv") == 0
        assert seen["train"].tolist() == [10, 10] and seen["val"].tolist() == [10, 10]

    def test_head_out_and_full_finetune(self, workdir, tmp_path):
        assert run("finetune", "--ckpt", workdir / "m.ckpt", "--data", workdir / "ft.mvts", "--n-per-class", 4,
                   "--seeds", "1", "--test-size", 20, "--max-epochs", 1, "--metrics", tmp_path / "m.csv",
                   "--head-out", tmp_path / "head.ckpt") == 0
        assert set(load_checkpoint(tmp_path / "head.ckpt").tensors) == {"head.linear.weight", "head.linear.bias"}
        row = next(csv.DictReader((tmp_path / "m.csv").open()))
        assert row["stage"] == "finetune" and int(row["epochs_ran"]) == 1

    def test_not_enough_instances(self, workdir, tmp_path, capsys):
        assert run("finetune", "--ckpt", workdir / "m.ckpt", "--data", workdir / "ft.mvts", "--n-per-class", 30,
                   "--freeze", "--seeds", "1", "--test-size", 20, "--metrics", tmp_path / "m.csv") == 2
        assert "error:" in capsys.readouterr().err
        assert not (tmp_path / "m.csv").exists()

    def test_bad_test_size_and_seeds(self, workdir, tmp_path):
        base = ["finetune", "--ckpt", workdir / "m.ckpt", "--data", workdir / "ft.mvts", "--n-per-class", 2,
                "--metrics", tmp_path / "m.csv"]
        assert run(*base, "--test-size", 80) == 2
        assert run(*base, "--seeds", "a,b") == 2

    def test_config_tensor_mismatch_names_tensor(self, workdir, tmp_path, capsys):
        from crlc_ssl.checkpoint import save_checkpoint
        ckpt = load_checkpoint(workdir / "m.ckpt")
        save_checkpoint(tmp_path / "k2.ckpt", ckpt.tensors, ckpt.config_text.replace("K = 3", "K = 2"))
        assert run("finetune", "--ckpt", tmp_path / "k2.ckpt", "--data", workdir / "ft.mvts", "--n-per-class", 2,
                   "--metrics", tmp_path / "m.csv") == 2
        assert "backbone.mpnn.rounds.2" in capsys.readouterr().err

    def test_unlabeled_data(self, workdir, tmp_path):
        assert run("finetune", "--ckpt", workdir / "m.ckpt", "--data", workdir / "pre.mvts", "--n-per-class", 2,
                   "--metrics", tmp_path / "m.csv") == 2


class TestInspect:
    def test_summary(self, workdir, capsys):
        assert run("inspect", workdir / "m.ckpt") == 0
        out = capsys.readouterr().out
        assert "parameters: 601184" in out
        assert "projector.linear.weight" in out and "32x64" in out
        assert "strategy = crlc" in out

    def test_corrupt_file(self, tmp_path, capsys):
        (tmp_path / "bad.ckpt").write_bytes(b"CAMC\x01")
        assert run("inspect", tmp_path / "bad.ckpt") == 2
        assert "byte offset 4" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "crlc_ssl.cli", "simulate", "--mode", "pretrain-drift",
                           "--n", "2", "--t", "100", "--out", str(tmp_path / "x.mvts")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "x.mvts").exists()


def test_mean_sem():
    mean, sem = mean_sem([0.5, 0.7, 0.9])
    assert mean == pytest.approx(0.7) and sem == pytest.approx(0.2 / np.sqrt(3))
    assert mean_sem([0.6]) == (0.6, 0.0)
