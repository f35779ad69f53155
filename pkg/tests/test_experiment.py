import os
import subprocess
import sys

import numpy as np
import pytest

from ssl_iqa.cli import main
from ssl_iqa.data import load_dataset
from ssl_iqa.evaluation import parse_scores
from ssl_iqa.experiment import build_config, read_config, run_experiment, sweep_points

SMALL = """
[synthetic]
n_labeled = 120
n_unlabeled = 80
feature_dim = 6
ood_fraction = 0.1
ood_in_labeled = false
seed = 4

[arch]
shared_layer_widths = 12
head_layer_widths = 6, 1
num_heads = 3

[objective]
gamma = 0.06

[train]
epochs = 2
initial_lr = 0.003
batch_size = 8

[analysis]
spot_k = 20
random_draws = 3
"""


def _read_report(path):
    return dict(line.split("\t") for line in open(path).read().splitlines())


class TestConfig:
    def test_build(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text(SMALL)
        cfg = build_config(read_config(path), str(tmp_path))
        assert cfg.train.arch.input_dim == 6
        assert cfg.train.arch.head_layer_widths == (6,)
        assert cfg.train.objective.gamma == 0.06
        assert cfg.train.epochs == 2 and cfg.train.batch_size == 8
        assert cfg.synthetic.ood_in_labeled is False
        assert cfg.split.seeds == (0, 1, 2)

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ValueError):
            build_config({"synthetic": {}, "train": {"epoch": "3"}})

    def test_sweep_expansion(self):
        raw = {"objective": {"gamma": "0.06"}, "sweep": {"objective.gamma": "0.0, 0.1", "arch.num_heads": "2,4"}}
        points = list(sweep_points(raw))
        assert [n for n, _ in points] == ["gamma=0.0,num_heads=2", "gamma=0.0,num_heads=4",
                                          "gamma=0.1,num_heads=2", "gamma=0.1,num_heads=4"]
        assert points[3][1]["objective"]["gamma"] == "0.1"
        assert "sweep" not in points[0][1]


class TestRun:
    def test_outputs(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text(SMALL)
        (res,) = run_experiment(cfg, tmp_path / "out")
        out = tmp_path / "out"
        for r in range(3):
            for name in ("checkpoint.bin", "history.tsv", "report_test.tsv", "report_pool.tsv",
                         "scores_pool.tsv", "spot.tsv", "report_spot.tsv", "report_random.tsv"):
                assert (out / f"repeat{r}" / name).exists(), name
        summary = _read_report(out / "summary.tsv")
        assert summary["repeats_completed"] == "3" and summary["repeats_failed"] == "0"
        per = [_read_report(out / f"repeat{r}" / "report_test.tsv") for r in range(3)]
        mean = np.mean([float(p["srcc"]) for p in per])
        assert abs(float(summary["test_srcc"]) - mean) <= 1e-12
        assert len(open(out / "repeat0" / "spot.tsv").read().splitlines()) == 20
        assert (out / "data" / "synthetic_spec.txt").exists()

    def test_failed_repeat_is_recorded(self, tmp_path):
        cfg = tmp_path / "c.ini"
        # a split this small leaves a validation set of one sample: SRCC is undefined
        cfg.write_text(SMALL.replace("n_labeled = 120", "n_labeled = 5"))
        (res,) = run_experiment(cfg, tmp_path / "out")
        summary = _read_report(tmp_path / "out" / "summary.tsv")
        assert int(summary["repeats_failed"]) == 3
        assert (tmp_path / "out" / "repeat0" / "error.txt").exists()


class TestCli:
    def test_generate_train_eval_spot_gmad(self, tmp_path):
        data = tmp_path / "data"
        assert main(["generate", "--out", str(data), "--n-labeled", "120", "--n-unlabeled", "60",
                     "--dim", "6", "--ood-fraction", "0.1", "--pool-only-ood", "--seed", "2"]) == 0
        assert load_dataset(data / "labeled.tsv").dim == 6
        cfg = tmp_path / "c.ini"
        cfg.write_text(
            "[data]\nlabeled = data/labeled.tsv\nunlabeled = data/unlabeled.tsv\n"
            "[arch]\nshared_layer_widths = 8\nhead_layer_widths = 4\nnum_heads = 3\n"
            "[train]\nepochs = 2\ninitial_lr = 0.003\n"
        )
        assert main(["train", str(cfg), "--out", str(tmp_path / "model")]) == 0
        ckpt = tmp_path / "model" / "checkpoint.bin"
        assert ckpt.exists() and (tmp_path / "model" / "history.tsv").exists()

        report = tmp_path / "pool_report.tsv"
        scores = tmp_path / "pool_scores.tsv"
        assert main(["eval", str(ckpt), str(data / "unlabeled.tsv"), "--mos", str(data / "unlabeled_mos.tsv"),
                     "--out", str(report), "--scores", str(scores)]) == 0
        rep = _read_report(report)
        assert int(rep["n"]) == 60 and -1 <= float(rep["srcc"]) <= 1

        spot = tmp_path / "spot.tsv"
        assert main(["spot", str(ckpt), str(data / "unlabeled.tsv"), "7", "--out", str(spot)]) == 0
        assert len(spot.read_text().splitlines()) == 7

        pairs = tmp_path / "gmad.tsv"
        assert main(["gmad", str(scores), str(data / "latent.tsv"), "--levels", "3", "--out", str(pairs)]) != 0
        latent = parse_scores((data / "latent.tsv").read_text())
        ref = tmp_path / "ref.tsv"
        ref.write_text("".join(f"{k}\t{latent[k]!r}\n" for k in parse_scores(scores.read_text())))
        assert main(["gmad", str(scores), str(ref), "--levels", "3", "--out", str(pairs)]) == 0
        lines = pairs.read_text().splitlines()
        assert len(lines) == 3 and all(len(line.split("\t")) == 4 for line in lines)

    def test_error_line(self, tmp_path, capsys):
        assert main(["spot", str(tmp_path / "missing.bin"), "x", "3", "--out", "y"]) == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("error\tFileNotFoundError\t")

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "ssl_iqa", "gmad", "nope.tsv", "nope.tsv", "--out", str(tmp_path / "o")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1
        assert proc.stderr.startswith("error\t")


def test_inline_comments_in_config(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[synthetic]\nfeature_dim = 4   ; small\n\n[objective]\ndiversity = variance ; or to_ensemble\n")
    built = build_config(read_config(cfg), str(tmp_path))
    assert built.train.objective.diversity == "variance"
    assert built.train.arch.input_dim == 4
