import csv

import pytest

from tttlab.cli import main
from tttlab.harness.checkpoint import load_checkpoint
from tttlab.harness.data import DATA_DIR_ENV, read_cifar_file


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Data directory with a small generated dataset and a one-epoch checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--data-dir", str(data), "--n-train", "64", "--n-test", "40"]) == 0
    assert main(["--data-dir", str(data), "--seed", "1", "train", "--epochs", "1", "--batch-size", "32",
                 "--checkpoint", str(root / "m.ckpt"), "--out-csv", str(root / "hist.csv")]) == 0
    return root


class TestGenDataAndTrain:
    def test_files(self, workdir):
        images, labels = read_cifar_file(workdir / "data" / "synthetic_train.bin", None)
        assert images.shape == (64, 3, 32, 32) and labels.max() < 10
        assert read_cifar_file(workdir / "data" / "synthetic_test.bin", None)[0].shape[0] == 40

    def test_checkpoint_written(self, workdir):
        ck = load_checkpoint(workdir / "m.ckpt")
        assert ck.meta["epochs"] == 1 and ck.meta["seed"] == 1
        assert ck.config.split_index == 3

    def test_history_csv(self, workdir):
        assert header(workdir / "hist.csv") == ["epoch", "l_m", "l_s", "train_acc", "lr"]
        assert len(rows(workdir / "hist.csv")) == 1


class TestEval:
    @pytest.mark.parametrize("mode", ["baseline", "joint", "ttt", "ttt-online"])
    def test_modes(self, workdir, mode, capsys):
        out = workdir / f"{mode}.csv"
        code = main(["eval", "--mode", mode, "--data-dir", str(workdir / "data"), "--checkpoint",
                     str(workdir / "m.ckpt"), "--limit", "6", "--steps", "1", "--out-csv", str(out)])
        assert code == 0
        assert header(out)[:4] == ["index", "mode", "prediction", "label"]
        assert len(rows(out)) == 6
        assert "error=" in capsys.readouterr().out

    def test_corrupted_eval(self, workdir, capsys):
        assert main(["eval", "--mode", "joint", "--kind", "contrast", "--level", "3", "--data-dir",
                     str(workdir / "data"), "--checkpoint", str(workdir / "m.ckpt"), "--limit", "5"]) == 0

    def test_missing_checkpoint(self, workdir, capsys):
        code = main(["eval", "--mode", "joint", "--data-dir", str(workdir / "data"),
                     "--checkpoint", str(workdir / "none.ckpt")])
        assert code == 2
        assert "checkpoint not found" in capsys.readouterr().err

    def test_bad_mode(self, workdir):
        with pytest.raises(SystemExit):
            main(["eval", "--mode", "fast"])


class TestCorrupt:
    def test_level(self, workdir):
        assert main(["corrupt", "--kind", "gaussian_noise", "--level", "2", "--data-dir", str(workdir / "data")]) == 0
        images, _ = read_cifar_file(workdir / "data" / "gaussian_noise_2.bin", None)
        assert images.shape[0] == 40

    def test_gradual(self, workdir):
        out = workdir / "grad.bin"
        assert main(["corrupt", "--kind", "pixelate", "--gradual", "20", "--output", str(out),
                     "--data-dir", str(workdir / "data")]) == 0
        assert read_cifar_file(out, None)[0].shape[0] == 20

    def test_level_out_of_range(self, workdir):
        assert main(["corrupt", "--kind", "contrast", "--level", "9", "--data-dir", str(workdir / "data")]) == 2

    def test_level_or_gradual_required(self, workdir):
        with pytest.raises(SystemExit):
            main(["corrupt", "--kind", "contrast"])


class TestTheory:
    def test_toy(self, capsys):
        assert main(["theory", "toy"]) == 0
        out = capsys.readouterr().out
        assert "eta* = 1" in out and "l_m after one step at eta*: 0" in out

    @pytest.mark.parametrize("check", ["lemma1", "lemma2"])
    def test_lemmas(self, check, capsys):
        assert main(["theory", check, "--trials", "200"]) == 0
        assert "200/200 hold" in capsys.readouterr().out

    def test_theorem1_csv(self, tmp_path, capsys):
        out = tmp_path / "cert.csv"
        assert main(["theory", "theorem1", "--trials", "100", "--out-csv", str(out)]) == 0
        assert header(out) == ["trial", "correlation", "status", "eta", "decrease", "bound"]
        assert "certified: yes" in capsys.readouterr().out

    def test_correlate(self, workdir, tmp_path, capsys):
        out = tmp_path / "points.csv"
        code = main(["theory", "correlate", "--data-dir", str(workdir / "data"), "--checkpoint",
                     str(workdir / "m.ckpt"), "--limit", "3", "--levels", "5", "--steps", "1", "--out-csv", str(out)])
        assert code == 0
        assert header(out) == ["kind", "level", "inner_product", "joint_error", "ttt_error", "improvement"]
        assert len(rows(out)) == 7


class TestDataDirResolution:
    def test_env_default_and_flag_override(self, tmp_path, monkeypatch):
        env_dir, flag_dir = tmp_path / "env", tmp_path / "flag"
        monkeypatch.setenv(DATA_DIR_ENV, str(env_dir))
        assert main(["gen-data", "--n-train", "10", "--n-test", "10"]) == 0
        assert (env_dir / "synthetic_train.bin").exists()
        assert main(["--data-dir", str(flag_dir), "gen-data", "--n-train", "10", "--n-test", "10"]) == 0
        assert (flag_dir / "synthetic_test.bin").exists()
