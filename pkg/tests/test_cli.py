"""Command-line driver: config resolution, all commands, exit codes."""

import numpy as np
import pytest

from floodseg.checks import CheckResult
from floodseg.cli import main
from floodseg.dataio import load_mask, read_manifest
from floodseg.model import (ModelSpec, build_model, init_params, load_model,
                            serialize_model)
from floodseg.synthetic import write_flood_set

TRAIN_FLAGS = ["--input_size", "8", "--widths", "2,4", "--gat_out", "4",
               "--cheb_order", "1", "--cheb_out", "4", "--epochs", "1",
               "--batch_size", "4", "--seed", "0"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A raw synthetic corpus and a prepared split of it."""
    root = tmp_path_factory.mktemp("cliws")
    raw = root / "raw"
    write_flood_set(raw, count=6, size=32, seed=0)
    data = root / "data"
    code = main(["prepare", "--dataset_dir", str(raw), "--out_dir", str(data),
                 "--resize", "16", "--crop", "8"])
    assert code == 0
    return {"root": root, "raw": raw, "data": data,
            "manifest": data / "manifest.tsv"}


@pytest.fixture(scope="module")
def trained(workspace, tmp_path_factory):
    """A tiny model trained for one epoch through the CLI."""
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--manifest", str(workspace["manifest"]),
                 "--out_dir", str(out)] + TRAIN_FLAGS)
    assert code == 0
    return out


# ---- argument handling ------------------------------------------------------


def test_help_and_unknown_command(capsys):
    assert main([]) == 1
    assert main(["--help"]) == 0
    assert "commands:" in capsys.readouterr().out
    assert main(["florp"]) == 1
    assert "unknown command" in capsys.readouterr().err


def test_bad_flags_are_usage_errors(capsys):
    assert main(["train", "--bogus_key", "1"]) == 1
    assert "unknown configuration key" in capsys.readouterr().err
    assert main(["train", "--epochs"]) == 1
    assert "needs a value" in capsys.readouterr().err
    assert main(["train", "stray"]) == 1
    assert main(["train", "--epochs", "three"]) == 1
    assert main(["train", "--float_width", "16"]) == 1
    assert main(["train"]) == 1
    assert "needs --" in capsys.readouterr().err


def test_config_file_errors(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs 3\n", encoding="utf-8")
    assert main(["train", "--config", str(bad)]) == 1
    assert "expected key=value" in capsys.readouterr().err


def test_flags_override_config_file(workspace, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment line\n"
                   "epochs = 1\n"
                   "widths = 2,4   # small\n"
                   "input_size = 8\n"
                   "gat_out = 4\ncheb_order = 1\ncheb_out = 4\n",
                   encoding="utf-8")
    out = tmp_path / "out"
    code = main(["train", "--config", str(cfg), "--manifest", str(workspace["manifest"]),
                 "--out_dir", str(out), "--epochs", "2"])
    assert code == 0
    log = (out / "train.log").read_text(encoding="utf-8").splitlines()
    assert "# epochs=2" in log            # flag beat the file
    assert "# widths=2,4" in log          # file value survived
    rows = [line for line in log if not line.startswith("#")]
    assert len(rows) == 2


# ---- prepare / dataset-stats ------------------------------------------------


def test_prepare_reports_counts_and_writes_manifest(workspace, capsys):
    manifest = read_manifest(workspace["manifest"])
    assert sum(e.split == "train" for e in manifest) == 60   # 4 sources x 15
    assert sum(e.split == "test" for e in manifest) == 2


def test_prepare_rejects_unmatched_stems(tmp_path, capsys):
    raw = tmp_path / "raw"
    write_flood_set(raw, count=2, size=16, seed=1)
    (raw / "flood_000.ppm").rename(raw / "orphan.ppm")
    assert main(["prepare", "--dataset_dir", str(raw),
                 "--out_dir", str(tmp_path / "out")]) == 2
    assert "unmatched" in capsys.readouterr().err


def test_dataset_stats(workspace, capsys):
    assert main(["dataset-stats", "--dataset_dir", str(workspace["raw"])]) == 0
    out = capsys.readouterr().out
    assert "6 image/mask pairs" in out
    assert "positive pixel fraction" in out


# ---- train ------------------------------------------------------------------


def test_train_writes_model_and_log(workspace, trained):
    model_path = trained / "model.gacm"
    log = (trained / "train.log").read_text(encoding="utf-8").splitlines()
    echo = [line for line in log if line.startswith("#")]
    assert echo == sorted(echo)
    assert "# loss=dice" in echo and "# widths=2,4" in echo
    rows = [line for line in log if not line.startswith("#")]
    assert len(rows) == 1
    epoch, loss, val_iou, val_dice = rows[0].split("\t")
    assert epoch == "1" and float(loss) > 0
    float(val_iou), float(val_dice)       # validation columns are numeric

    net = load_model(model_path)
    assert net.spec.widths == (2, 4)
    assert net.spec.input_size == 8


def test_train_with_everything_frozen_keeps_init_weights(workspace, tmp_path):
    out = tmp_path / "frozen"
    code = main(["train", "--manifest", str(workspace["manifest"]), "--out_dir", str(out),
                 "--freeze", "enc,dec,gat,cheb,head"] + TRAIN_FLAGS)
    assert code == 0
    spec = ModelSpec(input_size=8, widths=(2, 4), gat_out=4, cheb_order=1,
                     cheb_out=4, seed=0)
    want = serialize_model(init_params(build_model(spec, np.float32), 0))
    assert (out / "model.gacm").read_bytes() == want


def test_train_rejects_malformed_manifest(tmp_path, capsys):
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("one\tfield\tmissing\textra\n", encoding="utf-8")
    assert main(["train", "--manifest", str(manifest),
                 "--out_dir", str(tmp_path / "out")]) == 2


# ---- eval / predict ---------------------------------------------------------


def test_eval_matches_direct_library_computation(workspace, trained, tmp_path, capsys):
    report_path = tmp_path / "report.tsv"
    code = main(["eval", "--model", str(trained / "model.gacm"),
                 "--manifest", str(workspace["manifest"]),
                 "--split", "test", "--report", str(report_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert report_path.read_text(encoding="utf-8") == out.rstrip("\n") + "\n"
    lines = out.strip().splitlines()
    assert lines[-1] == "# pred_threshold\t0.50"
    rows = [line for line in lines if not line.startswith("#")]
    assert len(rows) == 2                 # the two test-split sources

    from floodseg.dataio import resize_bilinear
    from floodseg.metrics import evaluate
    from floodseg.cli import _load_pairs
    net = load_model(trained / "model.gacm")
    pairs = _load_pairs(read_manifest(workspace["manifest"]), "test")

    def predict(image):
        prob = net.predict_proba(resize_bilinear(image, 8, 8))
        return resize_bilinear(prob, image.shape[0], image.shape[1])

    assert str(evaluate(predict, pairs, 0.5)) == out.rstrip("\n")


def test_eval_missing_model_is_a_data_error(workspace, tmp_path):
    assert main(["eval", "--model", str(tmp_path / "none.gacm"),
                 "--manifest", str(workspace["manifest"])]) == 2


def test_predict_writes_binary_mask_at_source_size(workspace, trained, tmp_path, capsys):
    image = next(iter(sorted(workspace["raw"].glob("*.ppm"))))
    out_path = tmp_path / "pred.pgm"
    code = main(["predict", "--model", str(trained / "model.gacm"),
                 "--image", str(image), "--output", str(out_path)])
    assert code == 0
    mask = load_mask(out_path)
    assert mask.shape == (32, 32)
    assert set(np.unique(mask)) <= {0.0, 1.0}


def test_predict_missing_image_is_a_data_error(trained, tmp_path):
    assert main(["predict", "--model", str(trained / "model.gacm"),
                 "--image", str(tmp_path / "ghost.ppm"),
                 "--output", str(tmp_path / "out.pgm")]) == 2


# ---- reprogram --------------------------------------------------------------


def test_reprogram_freezes_base_and_logs_losses(workspace, tmp_path, capsys):
    base_path = tmp_path / "base.gacm"
    out = tmp_path / "rp"
    code = main(["reprogram", "--base_model", str(base_path),
                 "--manifest", str(workspace["manifest"]), "--out_dir", str(out),
                 "--init_base", "true", "--base_channels", "4",
                 "--input_size", "16", "--steps", "5", "--batch_size", "2"])
    assert code == 0
    out_text = capsys.readouterr().out
    checksums = [line.split(": ")[1] for line in out_text.splitlines()
                 if line.startswith("frozen base checksum:")]
    assert len(checksums) == 2 and checksums[0] == checksums[1]
    assert base_path.is_file()
    assert (out / "wrapper.gacm").is_file()
    log = (out / "reprogram.log").read_text(encoding="utf-8").splitlines()
    steps = [line for line in log if not line.startswith("#")]
    assert len(steps) == 5

    # reuse the saved base without init_base: wrapper loads against it
    out2 = tmp_path / "rp2"
    assert main(["reprogram", "--base_model", str(base_path),
                 "--manifest", str(workspace["manifest"]), "--out_dir", str(out2),
                 "--steps", "1", "--batch_size", "2"]) == 0
    from floodseg.reprogram import load_wrapper
    wrapper = load_wrapper(out2 / "wrapper.gacm", str(base_path))
    assert wrapper.c_new == 1


def test_reprogram_missing_base_is_a_data_error(workspace, tmp_path):
    assert main(["reprogram", "--base_model", str(tmp_path / "none.gacm"),
                 "--manifest", str(workspace["manifest"]),
                 "--out_dir", str(tmp_path / "out")]) == 2


# ---- gradcheck --------------------------------------------------------------


def test_gradcheck_passes_and_prints_a_table(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "all gradient checks passed" in out
    table = [line for line in out.splitlines() if "tolerance" in line]
    assert len(table) >= 10
    assert all(line.endswith("pass") for line in table)


def test_gradcheck_failure_exits_with_numeric_code(monkeypatch, capsys):
    def broken_suite(seed=0):
        return [CheckResult("sabotaged", 0.5, 1e-5)]

    monkeypatch.setattr("floodseg.checks.run_gradient_suite", broken_suite)
    assert main(["gradcheck"]) == 3
    assert "gradient check FAILED" in capsys.readouterr().out
