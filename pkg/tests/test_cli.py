import csv
import io
import json

import numpy as np
import pytest

from vcecnn import cli
from vcecnn.errors import ConfigError, SpecError
from vcecnn.model import ModelSpec, build, load
from vcecnn.rng import SplitMix64

SIZE = "96"


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert run(["synth", "--out-dir", str(root), "--n-per-class", "2", "--seed", "42"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(tmp_path_factory, synth_root):
    out = tmp_path_factory.mktemp("run")
    argv = ["train", "--data", str(synth_root), "--out-dir", str(out), "--image-size", SIZE, "--epochs", "2", "--batch-size", "8", "--lr", "1e-3"]
    assert run(argv) == 0
    return out, argv


def test_defaults():
    cfg = cli.config_from_args(cli.build_parser().parse_args(["train", "--data", "d", "--out-dir", "o"]))
    assert (cfg.lr, cfg.batch_size, cfg.epochs, cfg.seed) == (1e-4, 32, 40, 42)
    assert cfg.image_size == (224, 224)
    assert cfg.report_format == "both"
    synth = cli.config_from_args(cli.build_parser().parse_args(["synth", "--out-dir", "o"]))
    assert synth.image_size == (64, 64)


def test_parse_size():
    assert cli.parse_size("96") == (96, 96)
    assert cli.parse_size("128x96") == (128, 96)
    with pytest.raises(Exception):
        cli.parse_size("0")
    with pytest.raises(Exception):
        cli.parse_size("abc")


def test_synth_layout(synth_root):
    train = sorted(synth_root.glob("train/*/*.png"))
    val = sorted(synth_root.glob("val/*/*.png"))
    assert len(train) == 10 and len(val) == 10
    assert json.loads((synth_root / "run-config.json").read_text())["n_per_class"] == 2


def test_synth_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["synth", "--out-dir", str(d), "--n-per-class", "10", "--seed", "42"]) == 0
    files_a = sorted(p.relative_to(a) for p in a.rglob("*.png"))
    assert len(files_a) == 100
    assert len(list(a.glob("train/*/*.png"))) == 80
    assert files_a == sorted(p.relative_to(b) for p in b.rglob("*.png"))
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files_a)


def test_train_outputs(trained):
    out, _ = trained
    for name in ("run-config.json", "history.csv", "model.cvc", "metrics.json", "metrics.csv", "summary.json"):
        assert (out / name).exists(), name
    assert not (out / "history.csv.partial").exists()
    rows = list(csv.reader((out / "history.csv").open()))
    assert rows[0] == list(cli.HISTORY_COLUMNS)
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["adam_steps"] == 4  # 10 images, batch 8, 2 epochs
    assert summary["max_abs_update"] <= 10 * 1e-3
    assert json.loads((out / "run-config.json").read_text())["lr"] == 1e-3


def test_train_is_deterministic(tmp_path, trained):
    out, argv = trained
    again = tmp_path / "again"
    assert run([a if a != str(out) else str(again) for a in argv]) == 0
    assert (again / "model.cvc").read_bytes() == (out / "model.cvc").read_bytes()
    assert (again / "history.csv").read_bytes() == (out / "history.csv").read_bytes()


def test_zero_epochs_saves_initialisation(tmp_path, synth_root):
    out = tmp_path / "zero"
    assert run(["train", "--data", str(synth_root), "--out-dir", str(out), "--image-size", SIZE, "--epochs", "0"]) == 0
    rows = list(csv.reader((out / "history.csv").open()))
    assert rows == [list(cli.HISTORY_COLUMNS)]
    fresh = build(ModelSpec(input_size=(96, 96)), SplitMix64.substream(42, "init"))
    saved = load(out / "model.cvc")
    assert all(saved.params[k].array.tobytes() == fresh.params[k].array.tobytes() for k in fresh.params)


def test_eval_is_deterministic(tmp_path, trained, synth_root):
    out, _ = trained
    reports = []
    for name in ("e1", "e2"):
        argv = ["eval", "--data", str(synth_root), "--checkpoint", str(out / "model.cvc"), "--out-dir", str(tmp_path / name)]
        assert run(argv) == 0
        reports.append((tmp_path / name / "metrics.json").read_bytes())
    assert reports[0] == reports[1]
    d = json.loads(reports[0])
    assert d["total"] == 10


def test_eval_size_mismatch_writes_nothing(tmp_path, trained, synth_root, capsys):
    out, _ = trained
    target = tmp_path / "mismatch"
    argv = ["eval", "--data", str(synth_root), "--checkpoint", str(out / "model.cvc"), "--out-dir", str(target), "--image-size", "128"]
    assert run(argv) == 2
    assert "does not match" in capsys.readouterr().err
    assert not target.exists()
    cfg = cli.config_from_args(cli.build_parser().parse_args(argv))
    with pytest.raises(SpecError):
        cli.cmd_eval(cfg)


def test_predict_lines(trained, synth_root, tmp_path):
    out, _ = trained
    images = sorted(str(p) for p in synth_root.glob("val/*/*.png"))
    cfg = cli.config_from_args(
        cli.build_parser().parse_args(["predict", "--checkpoint", str(out / "model.cvc"), "--out-dir", str(tmp_path), *images])
    )
    buf = io.StringIO()
    assert cli.cmd_predict(cfg, stdout=buf) == 0
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert len(rows) == len(images)
    for row, path in zip(rows, images):
        assert row[0] == path
        probs = np.array(row[2:], dtype=float)
        assert len(probs) == 10
        assert abs(probs.sum() - 1) < 1e-4
    assert (tmp_path / "predictions.csv").exists()


def test_predict_counts_failures(trained, tmp_path):
    out, _ = trained
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"nope")
    cfg = cli.config_from_args(cli.build_parser().parse_args(["predict", "--checkpoint", str(out / "model.cvc"), str(bad)]))
    assert cli.cmd_predict(cfg, stdout=io.StringIO()) == 1


def test_errors_exit_codes(tmp_path):
    assert run(["train", "--out-dir", str(tmp_path)]) == 2
    assert run(["train", "--data", str(tmp_path / "missing"), "--out-dir", str(tmp_path)]) == 2
    assert run(["eval", "--data", str(tmp_path), "--checkpoint", str(tmp_path / "none.cvc"), "--out-dir", str(tmp_path)]) == 1
    cfg = cli.config_from_args(cli.build_parser().parse_args(["synth", "--out-dir", str(tmp_path), "--n-per-class", "0"]))
    with pytest.raises(ConfigError):
        cli.cmd_synth(cfg)


def test_too_small_image_size(tmp_path, synth_root):
    assert run(["train", "--data", str(synth_root), "--out-dir", str(tmp_path / "x"), "--image-size", "64", "--epochs", "0"]) == 2


@pytest.mark.slow
def test_plots(tmp_path, synth_root):
    pytest.importorskip("matplotlib")
    out = tmp_path / "plots"
    argv = ["train", "--data", str(synth_root), "--out-dir", str(out), "--image-size", SIZE, "--epochs", "1", "--plots"]
    assert run(argv) == 0
    assert (out / "history.png").stat().st_size > 0
    assert (out / "confusion.png").stat().st_size > 0
