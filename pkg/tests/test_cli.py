import json
import subprocess
import sys

import numpy as np
import pytest

from beamsr.cli import main
from beamsr.core import UsImage
from beamsr.dataio import PhantomParams, generate_phantoms, load_image, save_image
from beamsr.model import ModelConfig, model_init, model_save
from beamsr.core import SamplingScheme


def test_freq_prints_rate(capsys):
    assert main(["freq", "--depth", "0.1", "--lines", "100"]) == 0
    assert capsys.readouterr().out.strip() == "77.000000 Hz"


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["nonsense"]) == 1
    assert main(["freq", "--depth", "0.1"]) == 1
    assert main(["build-dataset", "--in", "x", "--scheme", "3X", "--out", "y"]) == 1
    assert "beamsr" in capsys.readouterr().err


def test_help_exits_0():
    assert main(["--help"]) == 0


def test_small_corpus_exit_2(tmp_path, capsys):
    src = tmp_path / "src"
    assert main(["phantom", "--count", "2", "--lines", "16", "--depth", "16", "--out", str(src)]) == 0
    code = main(["build-dataset", "--in", str(src), "--scheme", "2X", "--out", str(tmp_path / "d")])
    assert code == 2
    assert "corpus smaller than 3" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path):
    assert main(["predict", "--model", str(tmp_path / "none.bin"), "--in", "x.pgm",
                 "--out", str(tmp_path / "o.pgm")]) == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    img = tmp_path / "a.pgm"
    save_image(UsImage(np.zeros((8, 8))), img)
    assert main(["predict", "--model", str(bad), "--in", str(img), "--out", str(tmp_path / "o.pgm")]) == 2


def test_predict_scheme_mismatch_exit_2(tmp_path, capsys):
    m = model_init(ModelConfig.for_scheme(SamplingScheme(4), blocks=1, width=4), seed=0)
    model_save(m, tmp_path / "m4.bin")
    img = tmp_path / "in.pgm"
    save_image(UsImage(np.full((16, 8), 0.3)), img, stage="upsampled", scheme="2X")
    code = main(["predict", "--model", str(tmp_path / "m4.bin"), "--in", str(img),
                 "--out", str(tmp_path / "o.pgm")])
    assert code == 2
    assert "mismatch" in capsys.readouterr().err


@pytest.mark.parametrize("stage, lines, expect", [("target", 16, 16), ("upsampled", 16, 16),
                                                  ("lowres", 8, 16)])
def test_predict_stages(tmp_path, stage, lines, expect):
    m = model_init(ModelConfig.for_scheme(SamplingScheme(2), blocks=1, width=4), seed=0)
    model_save(m, tmp_path / "m.bin")
    img = tmp_path / "in.pgm"
    save_image(UsImage(np.full((lines, 8), 0.3)), img, stage=stage)
    assert main(["predict", "--model", str(tmp_path / "m.bin"), "--in", str(img),
                 "--out", str(tmp_path / "o.pgm")]) == 0
    assert load_image(tmp_path / "o.pgm").shape == (expect, 8)


def test_divergence_exit_3(tmp_path):
    src, ds = tmp_path / "src", tmp_path / "ds"
    assert main(["phantom", "--count", "3", "--lines", "16", "--depth", "16", "--out", str(src)]) == 0
    assert main(["build-dataset", "--in", str(src), "--scheme", "2X", "--ratios", "1", "1", "1",
                 "--out", str(ds)]) == 0
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"blocks": 1, "width": 4}, "train": {"lr_start": 1e300,
                                                                              "lr_end": 1e299}}))
    code = main(["train", "--manifest", str(ds / "manifest.json"), "--config", str(cfg),
                 "--epochs", "3", "--out-model", str(tmp_path / "m.bin")])
    assert code == 3


def test_bad_config_exit_2(tmp_path):
    src, ds = tmp_path / "src", tmp_path / "ds"
    main(["phantom", "--count", "3", "--lines", "16", "--depth", "16", "--out", str(src)])
    main(["build-dataset", "--in", str(src), "--scheme", "2X", "--ratios", "1", "1", "1",
          "--out", str(ds)])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"depth": 3}}))
    assert main(["train", "--manifest", str(ds / "manifest.json"), "--config", str(cfg),
                 "--out-model", str(tmp_path / "m.bin")]) == 2
    cfg.write_text("{not json")
    assert main(["train", "--manifest", str(ds / "manifest.json"), "--config", str(cfg),
                 "--out-model", str(tmp_path / "m.bin")]) == 2


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "beamsr.cli", "freq", "--depth", "0.05",
                          "--lines", "100"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.strip() == "154.000000 Hz"
