import json
import re
import struct

import pytest

from cli import parse_args, run
from commands import build_command


@pytest.fixture(autouse=True)
def run_log_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("FRAGKIT_RUN_LOG_DIR", str(tmp_path / "runs"))
    return tmp_path / "runs"


def test_gradcheck_passes(capsys, run_log_dir):
    assert run(["gradcheck", "--seed", "1", "--seeds", "1"]) == 0
    assert "gradcheck passed" in capsys.readouterr().out
    logged = json.loads(next(run_log_dir.glob("run_gradcheck_*.json")).read_text())
    assert logged["config"]["seed"] == 1


def test_help_exits_cleanly():
    assert run(["--help"]) == 0


def test_unknown_flag_is_a_usage_error(capsys):
    assert run(["train", "--bogus", "1"]) == 1
    assert "unrecognized arguments" in capsys.readouterr().err


def test_invalid_value_is_rejected(tmp_path, capsys):
    assert run(["synth", "--count", "0", "--out", str(tmp_path / "x")]) == 1
    assert "invalid configuration" in capsys.readouterr().err


def test_training_on_empty_folder(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = run(["train", "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "net.ckpt")])
    assert code == 1
    assert "empty dataset" in capsys.readouterr().err


def test_missing_checkpoint_is_an_io_error(tmp_path):
    assert run(["solve", "--ckpt", str(tmp_path / "none.ckpt"), "--image", str(tmp_path / "none.ppm")]) == 2


def test_missing_config_file(tmp_path):
    assert run(["synth", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path)]) == 2


def test_config_file_with_flags_on_top(tmp_path):
    config = tmp_path / "synth.cfg"
    config.write_text(f"kind=checker\ncount=3\nframe-side=36\nout={tmp_path / 'corpus'}\n")
    command, arguments = parse_args(["synth", "--config", str(config), "--count", "2"])
    assert command == "synth"
    assert arguments["kind"] == "checker" and arguments["count"] == 2

    assert run(["synth", "--config", str(config), "--count", "2"]) == 0
    assert len(list((tmp_path / "corpus").glob("checker_*.ppm"))) == 2


def test_unknown_config_key(tmp_path):
    config = tmp_path / "synth.cfg"
    config.write_text("colour=red\n")
    assert run(["synth", "--config", str(config), "--out", str(tmp_path)]) == 1


def test_end_to_end(tmp_path, capsys):
    data, ckpt = tmp_path / "data", tmp_path / "kron.ckpt"
    assert run(["synth", "--kind", "gradient", "--count", "6", "--seed", "3", "--frame-side", "136",
                "--out", str(data)]) == 0
    assert run(["train", "--data", str(data), "--geometry", "desk", "--fusion", "kron", "--epochs", "1",
                "--batch", "4", "--out", str(ckpt)]) == 0
    assert ckpt.is_file()
    assert (tmp_path / "kron.metrics.csv").is_file()
    capsys.readouterr()

    image = str(data / "gradient_00000.ppm")
    render = tmp_path / "solved.ppm"
    assert run(["solve", "--ckpt", str(ckpt), "--image", image, "--oracle", "--render", str(render)]) == 0
    out = capsys.readouterr().out
    assert re.search(r"correctly_placed=\d/8", out)
    greedy, optimal = map(float, re.search(r"greedy_score=([\d.]+) optimal_score=([\d.]+)", out).groups())
    assert greedy <= optimal + 1e-6
    assert render.read_bytes().startswith(b"P6")

    assert run(["eval", "--ckpt", str(ckpt), "--data", str(data)]) == 0
    assert "validation_accuracy=" in capsys.readouterr().out

    tuned = tmp_path / "concat.ckpt"
    assert run(["finetune", "--ckpt", str(ckpt), "--data", str(data), "--fusion", "concat",
                "--batch", "4", "--out", str(tuned)]) == 0
    assert run(["compare", "--concat", str(tmp_path / "concat.metrics.csv"),
                "--kron", str(tmp_path / "kron.metrics.csv")]) == 0
    assert "kron_val_accuracy" in capsys.readouterr().out

    report = tmp_path / "puzzles.csv"
    assert run(["solve", "--ckpt", str(ckpt), "--data", str(data), "--split", "train", "--oracle",
                "--report", str(report)]) == 0
    out = capsys.readouterr().out
    puzzles, perfect, fraction = re.search(r"puzzles=(\d+) perfect_rate=([\d.]+) fraction_correct=([\d.]+)",
                                           out).groups()
    assert int(puzzles) == 4
    assert float(perfect) <= float(fraction)
    assert len(report.read_text().splitlines()) == 1 + 4


def _desk_corpus(tmp_path, count=6):
    data = tmp_path / "data"
    assert run(["synth", "--count", str(count), "--frame-side", "136", "--out", str(data)]) == 0
    return data


def test_train_after_an_empty_run_sees_new_images(tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    ckpt = tmp_path / "net.ckpt"
    assert run(["train", "--data", str(data), "--geometry", "desk", "--out", str(ckpt)]) == 1
    assert not (data / "train.manifest").exists()

    corpus = _desk_corpus(tmp_path / "more")
    for image in corpus.glob("*.ppm"):
        (data / image.name).write_bytes(image.read_bytes())
    capsys.readouterr()
    assert run(["train", "--data", str(data), "--geometry", "desk", "--batch", "4", "--out", str(ckpt)]) == 0
    assert "train_accuracy=" in capsys.readouterr().out


def test_corrupt_checkpoint_exits_with_format_error(tmp_path, capsys):
    data = _desk_corpus(tmp_path)
    ckpt = tmp_path / "net.ckpt"
    assert run(["train", "--data", str(data), "--geometry", "desk", "--batch", "4", "--out", str(ckpt)]) == 0
    raw = bytearray(ckpt.read_bytes())
    raw[12 + struct.unpack("<I", raw[8:12])[0] + 4] = 0xFF
    ckpt.write_bytes(bytes(raw))
    capsys.readouterr()
    assert run(["solve", "--ckpt", str(ckpt), "--image", str(data / "gradient_00000.ppm")]) == 2
    assert "CheckpointError" in capsys.readouterr().err


def test_geometry_flags_layer_over_the_preset(tmp_path):
    command, arguments = parse_args(["train", "--data", "d", "--out", "o", "--geometry", "desk",
                                     "--gap", "8", "--jitter", "0"])
    cfg = build_command(command, arguments).train_config()
    assert (cfg.sampler.frame_side, cfg.sampler.fragment_side, cfg.sampler.gap, cfg.sampler.jitter) == (136, 32, 8, 0)
    assert cfg.fen.input_side == 32

    command, arguments = parse_args(["train", "--data", "d", "--out", "o"])
    cfg = build_command(command, arguments).train_config()
    assert (cfg.sampler.frame_side, cfg.sampler.fragment_side, cfg.sampler.gap, cfg.sampler.jitter) == (398, 96, 48, 7)
    assert cfg.fusion.hidden_dims == [512, 512]


def test_geometry_from_config_file(tmp_path):
    config = tmp_path / "train.cfg"
    config.write_text("geometry=desk\nfragment-side=24\nframe_side=120\n")
    command, arguments = parse_args(["train", "--config", str(config), "--data", "d", "--out", "o"])
    cfg = build_command(command, arguments).train_config()
    assert (cfg.sampler.frame_side, cfg.sampler.fragment_side) == (120, 24)
    assert cfg.fen.input_side == 24


def test_geometry_that_does_not_fit_is_rejected(tmp_path, capsys):
    data = _desk_corpus(tmp_path)
    code = run(["train", "--data", str(data), "--geometry", "desk", "--frame-side", "100",
                "--out", str(tmp_path / "net.ckpt")])
    assert code == 1
    assert "invalid configuration" in capsys.readouterr().err


def test_solve_needs_one_source(tmp_path, capsys):
    assert run(["solve", "--ckpt", str(tmp_path / "net.ckpt")]) == 1
    assert "exactly one of image or data" in capsys.readouterr().err


@pytest.mark.slow
def test_fifty_puzzle_report_from_a_trained_model(tmp_path, capsys):
    data = tmp_path / "data"
    ckpt = tmp_path / "kron.ckpt"
    assert run(["synth", "--count", "70", "--frame-side", "136", "--seed", "1", "--out", str(data)]) == 0
    assert run(["train", "--data", str(data), "--geometry", "desk", "--epochs", "30", "--batch", "16",
                "--out", str(ckpt)]) == 0
    capsys.readouterr()
    report = tmp_path / "puzzles.csv"
    assert run(["solve", "--ckpt", str(ckpt), "--data", str(data), "--split", "train", "--count", "50",
                "--oracle", "--report", str(report)]) == 0
    out = capsys.readouterr().out
    puzzles, perfect, fraction = re.search(r"puzzles=(\d+) perfect_rate=([\d.]+) fraction_correct=([\d.]+)",
                                           out).groups()
    assert int(puzzles) == 50
    assert float(perfect) <= float(fraction)
    assert len(report.read_text().splitlines()) == 51
