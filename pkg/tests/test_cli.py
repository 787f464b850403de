import csv

import numpy as np
import pytest

from spectral_nn.cli import main, read_config_file
from spectral_nn.svd_param import loads_spectral, materialize
from spectral_nn.training import MetricRecord

SMALL = ["--seq-len", "6", "--hidden", "5", "--m1", "2", "--m2", "2", "--batch", "3",
         "--test-batch", "8"]


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestTrain:
    def test_zero_iterations(self, tmp_path):
        assert main(["train", "--out", str(tmp_path), "--iters", "0"] + SMALL) == 0
        rows = _rows(tmp_path / "metrics.csv")
        assert rows[0] == list(MetricRecord.CSV_FIELDS)
        assert rows[0] == "iter,loss,eval_metric,grad_norm_h0,spectral_margin,flops,seconds".split(",")
        assert len(rows) == 2
        assert (tmp_path / "model.ckpt").exists()

    def test_snapshot_reproduces(self, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--out", str(first), "--iters", "4", "--record-every", "2"]
                    + SMALL) == 0
        assert main(["train", "--out", str(second), "--config",
                     str(first / "config.resolved")]) == 0
        a = [r[:6] for r in _rows(first / "metrics.csv")]
        b = [r[:6] for r in _rows(second / "metrics.csv")]
        assert a == b and len(a) == 4

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("# comment\nhidden = 4\nm1 = 2\nm2 = 2\nseq-len = 5\niters = 3\n")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out), "--iters", "0",
                     "--batch", "2", "--test-batch", "4"]) == 0
        resolved = read_config_file(out / "config.resolved")
        assert resolved["iters"] == "0" and resolved["hidden"] == "4"
        assert resolved["seq_len"] == "5"

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("dropout = 0.5\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1

    def test_invalid_flags(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path), "--hidden", "0"]) == 1
        assert "usage" in capsys.readouterr().err
        with pytest.raises(SystemExit) as info:
            main(["train", "--no-such-flag"])
        assert info.value.code == 1

    def test_env_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPECTRAL_NN_SEED", "77")
        assert main(["train", "--out", str(tmp_path), "--iters", "0"] + SMALL) == 0
        assert read_config_file(tmp_path / "config.resolved")["seed"] == "77"

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit(self, tmp_path):
        args = ["train", "--out", str(tmp_path), "--model", "vanilla", "--activation", "identity",
                "--vanilla-scale", "1e200", "--iters", "3"] + SMALL
        assert main(args) == 2
        # the failing iteration leaves no row
        assert len(_rows(tmp_path / "metrics.csv")) == 1

    def test_vanilla_copy(self, tmp_path):
        args = ["train", "--out", str(tmp_path), "--model", "vanilla", "--task", "copy",
                "--lag", "5", "--hidden", "6", "--iters", "2", "--batch", "2",
                "--test-batch", "4"]
        assert main(args) == 0


class TestGradcheck:
    def test_default(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        err = float(out.strip().splitlines()[-1].split()[3])
        assert err < 1e-6

    def test_broken(self):
        assert main(["gradcheck", "--break-gradient"]) == 3

    def test_identity(self):
        assert main(["gradcheck", "--activation", "identity"]) == 0

    def test_vanilla(self):
        assert main(["gradcheck", "--model", "vanilla", "--hidden", "4"]) == 0

    def test_size_limits(self):
        assert main(["gradcheck", "--hidden", "9"]) == 1
        assert main(["gradcheck", "--steps", "6"]) == 1


class TestBench:
    def test_table(self, capsys):
        assert main(["bench", "--hidden", "64", "--m1", "8", "--m2", "8", "--repeats", "2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        table = {line.split()[0]: line.split() for line in lines[2:]}
        assert table["spectral_fp"][2] == "4096"
        assert int(table["hprod"][3]) == 129

    def test_no_reflectors(self, capsys):
        assert main(["bench", "--m1", "0", "--m2", "0", "--repeats", "1"]) == 0
        lines = capsys.readouterr().out.splitlines()
        fp = [line for line in lines if line.startswith("spectral_fp")][0]
        assert int(fp.split()[3]) == 64


class TestDecompose:
    def _write(self, path, A):
        path.write_text("\n".join(",".join(repr(float(x)) for x in row) for row in A) + "\n")

    def test_identity(self, tmp_path):
        src, dst = tmp_path / "eye.csv", tmp_path / "eye.txt"
        self._write(src, np.eye(3))
        assert main(["decompose", "--input", str(src), "--output", str(dst)]) == 0
        np.testing.assert_allclose(materialize(loads_spectral(dst.read_text())), np.eye(3),
                                   atol=1e-14)

    def test_random(self, tmp_path, rng, capsys):
        A = rng.standard_normal((8, 8))
        src, dst = tmp_path / "a.csv", tmp_path / "a.txt"
        self._write(src, A)
        assert main(["decompose", "--input", str(src), "--output", str(dst)]) == 0
        W = loads_spectral(dst.read_text())
        assert np.linalg.norm(materialize(W) - A) / np.linalg.norm(A) < 1e-8
        assert "reconstruction error" in capsys.readouterr().err

    def test_rectangular(self, tmp_path):
        src = tmp_path / "r.csv"
        self._write(src, np.ones((3, 4)))
        assert main(["decompose", "--input", str(src)]) == 1

    def test_range_error(self, tmp_path, capsys):
        src = tmp_path / "d.csv"
        self._write(src, np.diag([3.0, 1.0]))
        assert main(["decompose", "--input", str(src), "--sigma-star", "1", "--r", "0.1"]) == 4
        assert "suggested --sigma-star" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["decompose", "--input", str(tmp_path / "nope.csv")]) == 1
