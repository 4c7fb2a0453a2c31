import json
import subprocess
import sys

import numpy as np
import pytest

from pgdistill import DistillConfig, read_array, write_bundle

from helpers import gradcheck_fixtures


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "pgdistill", *args],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="module")
def spec_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("spec") / "spec.json"
    p.write_text(
        json.dumps(
            {
                "seed": 77,
                "image_width": 96,
                "image_height": 96,
                "num_objects": 2,
                "quality_concentration": 6.0,
            }
        )
    )
    return p


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory, spec_file):
    out = tmp_path_factory.mktemp("bundles") / "scene"
    r = run_cli("synth", "--spec", str(spec_file), "--out", str(out))
    assert r.returncode == 0, r.stderr
    return out


@pytest.fixture(scope="module")
def quiet_bundle_dir(tmp_path_factory):
    """student == teacher: every loss term must be exactly zero."""
    spec = tmp_path_factory.mktemp("spec0") / "spec.json"
    spec.write_text(json.dumps({"seed": 5, "student_noise": 0.0}))
    out = tmp_path_factory.mktemp("bundles0") / "scene"
    r = run_cli("synth", "--spec", str(spec), "--out", str(out))
    assert r.returncode == 0, r.stderr
    return out


class TestHelpAndUsage:
    def test_top_level_help(self):
        r = run_cli("--help")
        assert r.returncode == 0
        for name in ("quality", "mask", "loss", "gradcheck", "maskout", "compare", "synth"):
            assert name in r.stdout

    @pytest.mark.parametrize(
        "cmd", ["quality", "mask", "loss", "gradcheck", "maskout", "compare", "synth"]
    )
    def test_subcommand_help(self, cmd):
        r = run_cli(cmd, "--help")
        assert r.returncode == 0
        assert "--help" in r.stdout or "usage" in r.stdout.lower()

    def test_unknown_flag_is_usage_error(self):
        r = run_cli("quality", "--bundle", "x", "--frobnicate")
        assert r.returncode == 2

    def test_unknown_subcommand_is_usage_error(self):
        r = run_cli("qualitty")
        assert r.returncode == 2

    def test_missing_bundle_is_validation_error(self, tmp_path):
        r = run_cli(
            "quality",
            "--bundle", str(tmp_path / "nope"),
            "--out", str(tmp_path / "q.pgm"),
        )
        assert r.returncode == 1
        assert "error" in r.stderr.lower()


class TestQuality:
    def test_pgm_output(self, bundle_dir, tmp_path):
        out = tmp_path / "q.pgm"
        r = run_cli("quality", "--bundle", str(bundle_dir), "--xi", "0.8", "--out", str(out))
        assert r.returncode == 0, r.stderr
        data = out.read_bytes()
        assert data.startswith(b"P5\n")
        header = data.split(b"\n")
        assert header[2] == b"255"

    def test_bin_output_is_finest_grid(self, bundle_dir, tmp_path):
        out = tmp_path / "q.bin"
        r = run_cli("quality", "--bundle", str(bundle_dir), "--out", str(out))
        assert r.returncode == 0, r.stderr
        arr = read_array(out)
        assert arr.ndim == 2
        assert arr.shape == (12, 12)  # 96 / stride 8
        assert arr.max() <= 1.0

    def test_bad_extension_is_usage_error(self, bundle_dir, tmp_path):
        r = run_cli("quality", "--bundle", str(bundle_dir), "--out", str(tmp_path / "q.txt"))
        assert r.returncode == 2


class TestMask:
    @pytest.mark.parametrize(
        "strategy", ["box", "boxgauss", "centre", "quality", "topkeq", "kde", "pgw"]
    )
    def test_strategies_write_per_level_files(self, bundle_dir, tmp_path, strategy):
        out = tmp_path / strategy
        r = run_cli(
            "mask", "--bundle", str(bundle_dir), "--strategy", strategy, "--out", str(out)
        )
        assert r.returncode == 0, r.stderr
        for i in range(2):
            arr = read_array(out / f"mask_l{i}.bin")
            assert arr.ndim == 2
            assert (out / f"mask_l{i}.pgm").exists()

    def test_unknown_strategy_rejected(self, bundle_dir, tmp_path):
        r = run_cli(
            "mask", "--bundle", str(bundle_dir), "--strategy", "magic", "--out", str(tmp_path)
        )
        assert r.returncode == 2

    def test_reg_head_flag(self, bundle_dir, tmp_path):
        r = run_cli(
            "mask",
            "--bundle", str(bundle_dir),
            "--strategy", "pgw",
            "--head", "reg",
            "--out", str(tmp_path / "reg"),
        )
        assert r.returncode == 0, r.stderr


class TestLoss:
    def test_report_document(self, bundle_dir, tmp_path):
        out = tmp_path / "loss.json"
        r = run_cli("loss", "--bundle", str(bundle_dir), "--out", str(out))
        assert r.returncode == 0, r.stderr
        doc = json.loads(out.read_text())
        assert doc["total"] > 0.0
        assert doc["total"] == pytest.approx(
            doc["fea_cls"] + doc["fea_reg"] + doc["att_cls"] + doc["att_reg"]
        )

    def test_self_distillation_is_zero(self, quiet_bundle_dir, tmp_path):
        out = tmp_path / "loss.json"
        r = run_cli("loss", "--bundle", str(quiet_bundle_dir), "--out", str(out))
        assert r.returncode == 0, r.stderr
        doc = json.loads(out.read_text())
        assert doc["total"] == 0.0

    def test_config_override(self, bundle_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"alpha": 0.0, "beta": 0.0, "gamma": 0.0, "delta": 0.0}))
        out = tmp_path / "loss.json"
        r = run_cli(
            "loss", "--bundle", str(bundle_dir), "--config", str(cfg), "--out", str(out)
        )
        assert r.returncode == 0, r.stderr
        assert json.loads(out.read_text())["total"] == 0.0

    def test_bad_config_key_is_validation_error(self, bundle_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"alpa": 1.0}))
        r = run_cli(
            "loss", "--bundle", str(bundle_dir), "--config", str(cfg),
            "--out", str(tmp_path / "l.json"),
        )
        assert r.returncode == 1


class TestGradcheck:
    def test_passes_on_constructed_fixture(self, tmp_path):
        (bundle,) = gradcheck_fixtures(1, DistillConfig())
        d = tmp_path / "fixture"
        write_bundle(d, bundle)
        r = run_cli("gradcheck", "--bundle", str(d))
        assert r.returncode == 0, r.stdout + r.stderr
        assert "max_relative_error" in r.stdout

    def test_kink_riddled_bundle_fails_nonzero(self, quiet_bundle_dir):
        # student == teacher puts every |P_t - P_s| gap exactly on its kink,
        # so finite differences and the subgradient legitimately disagree
        r = run_cli("gradcheck", "--bundle", str(quiet_bundle_dir))
        assert r.returncode == 1
        assert "max_relative_error" in r.stdout

    def test_step_flag(self, tmp_path):
        (bundle,) = gradcheck_fixtures(1, DistillConfig())
        d = tmp_path / "fixture"
        write_bundle(d, bundle)
        r = run_cli("gradcheck", "--bundle", str(d), "--step", "1e-3")
        assert r.returncode == 0, r.stdout + r.stderr


class TestMaskout:
    def test_csv_baseline_row(self, bundle_dir, tmp_path):
        out = tmp_path / "curve.csv"
        r = run_cli(
            "maskout", "--bundle", str(bundle_dir), "--ratios", "0,1,5", "--out", str(out)
        )
        assert r.returncode == 0, r.stderr
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "ratio_percent,ap"
        assert lines[1].startswith("0.000000,")
        assert len(lines) == 4

    def test_bad_ratios_rejected(self, bundle_dir, tmp_path):
        r = run_cli(
            "maskout", "--bundle", str(bundle_dir), "--ratios", "5,1",
            "--out", str(tmp_path / "c.csv"),
        )
        assert r.returncode == 1


class TestCompare:
    def test_topkeq_overlaps_pgw_fully(self, bundle_dir, tmp_path):
        out = tmp_path / "cmp.csv"
        r = run_cli("compare", "--bundle", str(bundle_dir), "--k", "30", "--out", str(out))
        assert r.returncode == 0, r.stderr
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "strategy,support_size,entropy,pgw_overlap"
        rows = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
        assert list(rows) == ["box", "boxgauss", "centre", "quality", "topkeq", "kde", "pgw"]
        assert float(rows["topkeq"][3]) == 1.0
        assert float(rows["pgw"][3]) == 1.0


class TestSynthCommand:
    def test_deterministic_across_runs(self, spec_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("synth", "--spec", str(spec_file), "--out", str(a)).returncode == 0
        assert run_cli("synth", "--spec", str(spec_file), "--out", str(b)).returncode == 0
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_invalid_spec_is_validation_error(self, tmp_path):
        spec = tmp_path / "bad.json"
        spec.write_text(json.dumps({"seed": 1, "quality_concentration": -2}))
        r = run_cli("synth", "--spec", str(spec), "--out", str(tmp_path / "o"))
        assert r.returncode == 1
        assert "quality_concentration" in r.stderr
