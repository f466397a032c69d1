import csv
import subprocess
import sys
import time

import pytest
import yaml

from alf.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main

from helpers import toy_config


def write_config(tmp_path, cfg=None, name="run.yaml"):
    d = (cfg or toy_config(epochs=2)).to_dict()
    d["out_dir"] = str(tmp_path / "out")
    path = tmp_path / name
    path.write_text(yaml.safe_dump(d))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def trained(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg)]) == EXIT_OK
    return cfg, tmp_path / "out"


def test_analyze_single_layer(tmp_path):
    cfg = tmp_path / "one.yaml"
    cfg.write_text(yaml.safe_dump({
        "input": [8, 8, 64],
        "layers": [{"type": "alf", "ci": 64, "co": 128, "k": 3, "padding": 1}],
        "training": {"pr": 0.5},
        "out_dir": str(tmp_path / "a"),
    }))
    assert main(["analyze", "--config", str(cfg)]) == EXIT_OK
    rows = read_csv(tmp_path / "a" / "cost.csv")
    assert rows[0]["c_code_max"] == "104"
    assert rows[0]["c_code_eff"] == "64"
    assert rows[0]["economical"] == "1"


def test_analyze_hundred_layers_fast(tmp_path):
    layers = [{"type": "alf", "ci": 32, "co": 32, "k": 3, "padding": 1} for _ in range(100)]
    cfg = tmp_path / "deep.yaml"
    cfg.write_text(yaml.safe_dump({"input": [16, 16, 32], "layers": layers, "out_dir": str(tmp_path / "d")}))
    start = time.perf_counter()
    assert main(["analyze", "--config", str(cfg)]) == EXIT_OK
    assert time.perf_counter() - start < 1.0
    assert len(read_csv(tmp_path / "d" / "cost.csv")) == 101


def test_train_zero_epochs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--epochs", "0"]) == EXIT_OK
    text = (tmp_path / "out" / "metrics.csv").read_text()
    assert text.count("\n") == 1 and text.startswith("epoch,")
    assert (tmp_path / "out" / "checkpoint.npz").exists()


def test_train_compress_eval_pipeline(trained, capsys):
    cfg, out = trained
    rows = read_csv(out / "metrics.csv")
    final = float(rows[-1]["accuracy"])
    assert [r["epoch"] for r in rows] == ["1", "2"]
    ckpt = str(out / "checkpoint.npz")
    assert main(["compress", "--config", str(cfg), "--checkpoint", ckpt]) == EXIT_OK
    cost = read_csv(out / "cost.csv")
    assert cost[-1]["layer"] == "total"
    compressed = (out / "model.alf1").read_bytes()
    assert main(["export", "--checkpoint", ckpt, "--out-dir", str(out / "x")]) == EXIT_OK
    assert (out / "x" / "model.alf1").read_bytes() == compressed
    capsys.readouterr()
    assert main(["eval", "--config", str(cfg), "--model", str(out / "model.alf1")]) == EXIT_OK
    assert float(capsys.readouterr().out.split()[-1]) == pytest.approx(final, abs=1e-12)
    assert read_csv(out / "eval.csv")[0]["split"] == "test"


def test_byte_reproducible(tmp_path):
    outs = []
    for run in ("r1", "r2"):
        cfg = write_config(tmp_path, name=f"{run}.yaml")
        assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / run)]) == EXIT_OK
        outs.append(tmp_path / run)
    for name in ("metrics.csv", "checkpoint.npz"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_flag_overrides_seed(tmp_path):
    cfg = write_config(tmp_path)
    main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "s0")])
    main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "s1"), "--seed", "1"])
    assert (tmp_path / "s0" / "metrics.csv").read_bytes() != (tmp_path / "s1" / "metrics.csv").read_bytes()


def test_exit_codes(tmp_path):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["eval"]) == EXIT_USAGE
    assert main(["train", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    assert main(["analyze", "--config", str(write_config(tmp_path)), "--pr", "1.5"]) == EXIT_CONFIG
    assert main(["analyze", "--dataset", "cifar10", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    junk = tmp_path / "junk.alf1"
    junk.write_bytes(b"NOPE" + bytes(20))
    assert main(["eval", "--config", str(write_config(tmp_path)), "--model", str(junk)]) == EXIT_RUNTIME
    assert main(["compress", "--checkpoint", str(tmp_path / "none.npz"), "--out-dir", str(tmp_path)]) == EXIT_RUNTIME


def test_break_even_warning(tmp_path, caplog):
    # pr=0 keeps all 6 channels of a 6->6 K3 layer; break-even is 5
    cfg = write_config(tmp_path)
    with caplog.at_level("WARNING", logger="alf"):
        main(["train", "--config", str(cfg), "--epochs", "0", "--pr", "0"])
    assert "break-even" in caplog.text


def test_module_entry_point_and_log_level(tmp_path):
    cfg = write_config(tmp_path)
    cmd = [sys.executable, "-m", "alf", "train", "--config", str(cfg), "--epochs", "0", "--pr", "0"]
    quiet = subprocess.run(cmd, capture_output=True, text=True, env={"ALF_LOG": "error", "PATH": ""})
    loud = subprocess.run(cmd, capture_output=True, text=True, env={"ALF_LOG": "debug", "PATH": ""})
    assert quiet.returncode == loud.returncode == 0
    assert "break-even" not in quiet.stderr
    assert "break-even" in loud.stderr
