"""CLI behaviour: argument handling, config precedence, pipeline smoke."""

import os

import numpy as np
import pytest

import moirequant as mq
from moirequant.cli import main, parse_config_file, UsageError


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    mq.gen_dataset(7, {"train": 4, "calib": 3, "test": 2}, 16, 16, root)
    return str(root)


@pytest.fixture(scope="module")
def trained(small_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    rc = main(["train", "--data", small_data, "--out", str(out),
               "--epochs", "2", "--seed", "3"])
    assert rc == 0
    return os.path.join(str(out), "fp32.qdck")


class TestUsage:
    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--wat", "1"])
        assert exc.value.code == 2

    def test_unsupported_bit_width(self, small_data, tmp_path, capsys):
        rc = main(["quantize", "--bits-w", "5", "--ckpt", "x", "--data", small_data,
                   "--out", str(tmp_path)])
        assert rc == 2
        assert "bits_w" in capsys.readouterr().err

    def test_unknown_method(self, small_data, tmp_path):
        rc = main(["quantize", "--method", "magic", "--ckpt", "x",
                   "--data", small_data, "--out", str(tmp_path)])
        assert rc == 2

    def test_missing_required_path(self):
        assert main(["train"]) == 2

    def test_missing_data_is_pipeline_error(self, tmp_path):
        rc = main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)])
        assert rc == 1


class TestConfigFile:
    def test_parse_and_comments(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed = 9\n# comment line\nbits_w = 4  # trailing\nmethod = minmax\n")
        vals = parse_config_file(p)
        assert vals == {"seed": 9, "bits_w": 4, "method": "minmax"}

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("turbo = on\n")
        with pytest.raises(UsageError):
            parse_config_file(p)

    def test_bad_value_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed = banana\n")
        with pytest.raises(UsageError):
            parse_config_file(p)

    def test_flag_overrides_file(self, small_data, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("bits_w = 5\n")  # invalid, but flag wins
        out = tmp_path / "o"
        rc = main(["quantize", "--config", str(cfg), "--bits-w", "4",
                   "--bits-a", "4", "--ckpt", str(tmp_path / "missing.qdck"),
                   "--data", small_data, "--out", str(out)])
        # config resolved fine (bits 4); failure is the missing checkpoint
        assert rc == 1
        assert "error" in capsys.readouterr().err


class TestPipeline:
    def test_train_writes_outputs(self, trained):
        assert os.path.exists(trained)
        trace = os.path.join(os.path.dirname(trained), "train_trace.csv")
        with open(trace) as fh:
            header = fh.readline().strip()
        assert header == "step,lr,loss"

    @pytest.mark.parametrize("method", ["minmax", "percentile", "sample", "quantdemoire"])
    def test_quantize_eval_report(self, small_data, trained, tmp_path, method):
        qdir = tmp_path / f"q_{method}"
        rc = main(["quantize", "--ckpt", trained, "--data", small_data,
                   "--out", str(qdir), "--method", method, "--bits-w", "4",
                   "--bits-a", "4", "--epochs", "1", "--crop", "16"])
        assert rc == 0
        qckpt = qdir / "quantized.qdck"
        assert qckpt.exists()
        assert (qdir / "compression.csv").exists()
        assert (qdir / "summary.txt").exists()
        assert (qdir / "calib_trace.csv").exists() == (method == "quantdemoire")

        edir = tmp_path / f"e_{method}"
        assert main(["eval", "--ckpt", str(qckpt), "--data", small_data,
                     "--out", str(edir)]) == 0
        eval_lines = (edir / "eval.csv").read_text().strip().splitlines()
        assert len(eval_lines) == 3  # header + 2 test images

        rdir = tmp_path / f"r_{method}"
        assert main(["report", "--ckpt", str(qckpt), "--out", str(rdir)]) == 0
        assert (rdir / "compression.csv").exists()

    def test_calibrate_command(self, small_data, trained, tmp_path):
        qdir = tmp_path / "q"
        assert main(["quantize", "--ckpt", trained, "--data", small_data,
                     "--out", str(qdir), "--method", "quantdemoire",
                     "--bits-w", "4", "--bits-a", "4", "--epochs", "0",
                     "--crop", "16"]) == 0
        cdir = tmp_path / "c"
        rc = main(["calibrate", "--ckpt", str(qdir / "quantized.qdck"),
                   "--data", small_data, "--out", str(cdir),
                   "--epochs", "2", "--crop", "16"])
        assert rc == 0
        assert (cdir / "calibrated.qdck").exists()
        lines = (cdir / "calib_trace.csv").read_text().strip().splitlines()
        assert lines[0] == "step,lr,l1,lp,total"
        assert len(lines) == 1 + 2 * 3  # 2 epochs x 3 calib pairs

    def test_quantize_rejects_quantized_ckpt(self, small_data, trained, tmp_path):
        qdir = tmp_path / "qq"
        assert main(["quantize", "--ckpt", trained, "--data", small_data,
                     "--out", str(qdir), "--method", "minmax",
                     "--bits-w", "4", "--bits-a", "4"]) == 0
        rc = main(["quantize", "--ckpt", str(qdir / "quantized.qdck"),
                   "--data", small_data, "--out", str(tmp_path / "x"),
                   "--method", "minmax", "--bits-w", "4", "--bits-a", "4"])
        assert rc == 1

    def test_report_on_fp32(self, trained, tmp_path):
        rdir = tmp_path / "rf"
        assert main(["report", "--ckpt", trained, "--out", str(rdir)]) == 0
        text = (rdir / "summary.txt").read_text()
        assert "down 0.00%" in text
