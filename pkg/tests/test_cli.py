"""End-to-end command-line tests on tiny configurations."""

import json
import subprocess
import sys

import pytest

from rbnudge.cli import main
from rbnudge.config import parse_config_text, write_config
from rbnudge.experiment import load_manifest
from rbnudge.metrics import read_skill_series_csv

from _support import tiny_config


@pytest.fixture()
def tiny_cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    write_config(path, tiny_config())
    return path


@pytest.fixture()
def reference_dir(tmp_path, tiny_cfg_file):
    ref = tmp_path / "reference"
    assert main(["simulate", "--config", str(tiny_cfg_file),
                 "--out", str(ref)]) == 0
    return ref


class TestSimulate:
    def test_writes_reference(self, reference_dir):
        manifest = load_manifest(reference_dir)
        assert manifest["kind"] == "reference"
        assert manifest["status"] == "complete"
        assert (reference_dir / "config.cfg").exists()

    def test_seed_flag_derives_all_three(self, tmp_path, tiny_cfg_file):
        out = tmp_path / "seeded"
        assert main(["simulate", "--config", str(tiny_cfg_file),
                     "--seed", "42", "--out", str(out)]) == 0
        cfg = parse_config_text(load_manifest(out)["config_text"])
        assert (cfg.seed_reference, cfg.seed_noise, cfg.seed_ic) \
            == (42, 43, 44)

    def test_bad_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("physics.ra=-5\n")
        assert main(["simulate", "--config", str(bad),
                     "--out", str(tmp_path / "x")]) == 2

    def test_unknown_key_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("physics.gravity=9.8\n")
        assert main(["simulate", "--config", str(bad),
                     "--out", str(tmp_path / "x")]) == 2


class TestObserve:
    def test_rebuilds_stream(self, tmp_path, reference_dir):
        out = tmp_path / "rebuilt.rbobs"
        assert main(["observe", str(reference_dir),
                     "--out", str(out)]) == 0
        manifest = load_manifest(reference_dir)
        original = (reference_dir
                    / manifest["streams"]["r4_s10"]).read_bytes()
        assert out.read_bytes() == original

    def test_incompatible_cadence_exits_2(self, tmp_path, reference_dir):
        assert main(["observe", str(reference_dir), "--s", "5",
                     "--out", str(tmp_path / "x.rbobs")]) == 2

    def test_missing_reference_exits_4(self, tmp_path):
        assert main(["observe", str(tmp_path / "nowhere"),
                     "--out", str(tmp_path / "x.rbobs")]) == 4


class TestDownscale:
    def test_single_member(self, tmp_path, reference_dir):
        out = tmp_path / "member"
        assert main(["downscale", str(reference_dir), "--member", "1",
                     "--out", str(out)]) == 0
        series = read_skill_series_csv(out / "member_001_skill.csv")
        assert {s.member for s in series} == {"1"}

    def test_blowup_exits_3(self, tmp_path, reference_dir):
        wild = tmp_path / "wild.cfg"
        wild.write_text("nudging.mu_velocity=1e9\n"
                        "nudging.mu_temperature=1e9\n")
        assert main(["downscale", str(reference_dir),
                     "--config", str(wild),
                     "--out", str(tmp_path / "member")]) == 3


class TestEnsemble:
    def test_full_run_and_analyze(self, tmp_path, reference_dir):
        arm = tmp_path / "arm.cfg"
        arm.write_text("observation.n_members=4\n")
        ens = tmp_path / "ensemble"
        assert main(["ensemble", str(reference_dir), "--config", str(arm),
                     "--workers", "1", "--out", str(ens)]) == 0
        manifest = load_manifest(ens)
        assert len(manifest["members"]) == 4
        assert manifest["status"] == "complete"

        assert main(["analyze", str(ens)]) == 0
        payload = json.loads((ens / "analysis.json").read_text())
        assert payload["kind"] == "ensemble"
        assert payload["members_complete"] == 4
        box = payload["final_rrmse"]["theta"]
        assert box["min"] <= box["median"] <= box["max"]
        assert "bootstrap_theta" in payload

    def test_missing_reference_exits_4(self, tmp_path):
        assert main(["ensemble", str(tmp_path / "nowhere"),
                     "--out", str(tmp_path / "x")]) == 4

    def test_inherits_reference_config(self, tmp_path, reference_dir):
        # no --config: the stored reference configuration is reused
        ens = tmp_path / "ensemble"
        assert main(["ensemble", str(reference_dir),
                     "--workers", "1", "--out", str(ens)]) == 0
        cfg = parse_config_text(load_manifest(ens)["config_text"])
        assert cfg.n_members == tiny_config().n_members


class TestAnalyze:
    def test_reference_dir(self, reference_dir):
        assert main(["analyze", str(reference_dir)]) == 0
        payload = json.loads((reference_dir / "analysis.json").read_text())
        assert payload["kind"] == "reference"
        assert payload["n_snapshots"] == 6

    def test_empty_dir_exits_4(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["analyze", str(empty)]) == 4


class TestPreset:
    def test_mu_search_end_to_end(self, tmp_path, tiny_cfg_file, capsys):
        out = tmp_path / "study"
        assert main(["preset", "mu_search", "--config", str(tiny_cfg_file),
                     "--workers", "1", "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["preset"] == "mu_search"
        assert summary["best_mu"] in summary["mu_values"]
        printed = capsys.readouterr().out
        assert "best_mu" in printed

        assert main(["analyze", str(out)]) == 0
        payload = json.loads((out / "analysis.json").read_text())
        assert payload["kind"] == "preset"

    def test_unknown_preset_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["preset", "nope", "--out", str(tmp_path / "x")])
        assert err.value.code == 2


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "rbnudge.cli", "--help"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        for name in ("simulate", "observe", "downscale", "ensemble",
                     "analyze", "preset"):
            assert name in proc.stdout
