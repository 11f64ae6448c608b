"""CLI behaviour: exit codes, config validation, output schema, determinism."""

import json
import math
import subprocess
import sys

import pytest

from hierdet.bounds import (
    BoundParams,
    missed_detection_bound_concentration,
    missed_detection_bound_recovery,
    threshold_miss_constant,
)
from hierdet.cli import CSV_BASE_COLUMNS, PRESETS, load_config, main, resolve_config
from hierdet.core import ProblemDims

TINY = {
    "dims": {"n": 64, "u": 4, "s": 16, "k_u": 1, "k_s": 2, "m": 32},
    "noise": {"snr_db": 10.0},
    "run": {"trials": 10, "seed": 5},
}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def read_rows(path):
    lines = path.read_text().splitlines()
    comments = [l for l in lines if l.startswith("#")]
    header = next(l for l in lines if not l.startswith("#"))
    rows = [l for l in lines if not l.startswith("#")][1:]
    return comments, header.split(","), [r.split(",") for r in rows]


class TestConfigHandling:
    def test_missing_config_exits_2(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.json")
        assert main(["simulate", "--config", missing]) == 2
        assert missing in capsys.readouterr().err

    def test_invalid_json_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["simulate", "--config", str(path)]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        path = write_config(tmp_path, {"dims": {"n": 64, "bogus": 1}})
        assert main(["simulate", "--config", path]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_unknown_preset(self, capsys):
        assert main(["simulate", "--preset", "fig99"]) == 2

    def test_invalid_dims_exit_2(self, tmp_path, capsys):
        payload = dict(TINY)
        payload["dims"] = {"n": 64, "u": 4, "s": 32, "k_u": 1, "k_s": 2, "m": 32}
        path = write_config(tmp_path, payload)
        assert main(["simulate", "--config", path]) == 2

    def test_runtime_error_exits_1(self, tmp_path, capsys, monkeypatch):
        import hierdet.cli as cli

        def boom(*a, **k):
            raise RuntimeError("exploded")

        monkeypatch.setattr(cli, "monte_carlo", boom)
        path = write_config(tmp_path, TINY)
        assert main(["simulate", "--config", path]) == 1
        assert "exploded" in capsys.readouterr().err

    def test_presets_resolve(self):
        for name in PRESETS:
            config = load_config(None, name, {})
            trial_config = resolve_config(config)
            assert trial_config.dims.n == 1024

    def test_derived_s(self):
        config = load_config(None, None, {"dims": {"u": 16}})
        assert resolve_config(config).dims.s == 64


class TestSimulateCommand:
    def test_csv_single_row_schema(self, tmp_path):
        path = write_config(tmp_path, TINY)
        out = tmp_path / "out.csv"
        assert main(["simulate", "--config", path, "--out", str(out)]) == 0
        comments, header, rows = read_rows(out)
        assert len(rows) == 1
        assert header == CSV_BASE_COLUMNS + ["runtime_s"]
        assert any(c.startswith("# seed=5") for c in comments)
        assert any(c.startswith("# version=hierdet") for c in comments)
        assert any(c.startswith("# config_hash=") for c in comments)
        row = dict(zip(header, rows[0]))
        assert row["n"] == "64" and row["detector"] == "hiiht" and row["trials"] == "10"
        assert row["runtime_s"] == ""  # timings are opt-in to keep bytes stable
        assert 0.0 <= float(row["pmd"]) <= 1.0

    def test_seed_replay_byte_identical(self, tmp_path):
        path = write_config(tmp_path, TINY)
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert main(["simulate", "--config", path, "--out", str(out), "--seed", "9"]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_timings_flag_populates_runtime(self, tmp_path):
        path = write_config(tmp_path, TINY)
        out = tmp_path / "timed.csv"
        assert main(["simulate", "--config", path, "--out", str(out), "--timings"]) == 0
        _, header, rows = read_rows(out)
        runtime = dict(zip(header, rows[0]))["runtime_s"]
        assert float(runtime) > 0.0

    def test_json_format(self, tmp_path):
        path = write_config(tmp_path, TINY)
        out = tmp_path / "out.json"
        assert main(["simulate", "--config", path, "--out", str(out), "--format", "json"]) == 0
        payload = json.loads(out.read_text())
        assert payload["seed"] == 5 and len(payload["rows"]) == 1
        assert payload["rows"][0]["detector"] == "hiiht"


class TestSweepCommand:
    def test_empty_grid_exits_2(self, tmp_path, capsys):
        path = write_config(tmp_path, TINY)
        assert main(["sweep", "--config", path]) == 2
        assert "grid" in capsys.readouterr().err

    def test_sweep_rows_and_worker_invariance(self, tmp_path):
        payload = dict(TINY)
        payload["sweep"] = {"snr_db": [0.0, 10.0], "m": [24, 32]}
        path = write_config(tmp_path, payload)
        outputs = []
        for workers, name in ((1, "w1.csv"), (2, "w2.csv")):
            out = tmp_path / name
            code = main(
                ["sweep", "--config", path, "--out", str(out), "--workers", str(workers)]
            )
            assert code == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
        _, header, rows = read_rows(tmp_path / "w1.csv")
        assert len(rows) == 4
        assert [dict(zip(header, r))["m"] for r in rows] == ["24", "32", "24", "32"]

    def test_bound_overlay_columns(self, tmp_path):
        payload = dict(TINY)
        payload["sweep"] = {"snr_db": [5.0, 15.0]}
        payload["bounds"] = {"tau": 2.0}
        path = write_config(tmp_path, payload)
        out = tmp_path / "bounds.csv"
        code = main(
            [
                "sweep", "--config", path, "--out", str(out),
                "--bounds", "recovery,concentration,correlator",
            ]
        )
        assert code == 0
        _, header, rows = read_rows(out)
        for col in ("bound_recovery", "bound_concentration", "bound_correlator", "tau"):
            assert col in header
        row = dict(zip(header, rows[0]))
        assert 0.0 <= float(row["bound_recovery"]) <= 1.0
        assert float(row["tau"]) == 2.0

    def test_fig2_preset_schema(self, tmp_path):
        override = write_config(
            tmp_path,
            {
                "sweep": {"snr_db": [-5.0, 0.0], "k_u": [1]},
                "bounds": {"tau": 1.5},
                "run": {"trials": 2, "seed": 1},
            },
        )
        out = tmp_path / "fig2.csv"
        code = main(
            [
                "sweep", "--preset", "fig2", "--config", override,
                "--out", str(out), "--bounds", "recovery,concentration",
            ]
        )
        assert code == 0
        _, header, rows = read_rows(out)
        for col in ("snr_db", "pmd", "pmd_lo", "pmd_hi", "bound_recovery", "bound_concentration"):
            assert col in header
        first = dict(zip(header, rows[0]))
        assert first["n"] == "1024" and first["u"] == "4" and first["k_s"] == "3"


class TestBoundsCommand:
    def test_threshold_constant_value(self, tmp_path):
        payload = {"dims": {"n": 64, "u": 4, "s": 16, "k_u": 1, "k_s": 3, "m": 3}}
        path = write_config(tmp_path, payload)
        out = tmp_path / "bounds.json"
        code = main(
            [
                "bounds", "--config", path, "--out", str(out),
                "--which", "threshold_constant", "--tau", "2.0",
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["threshold_constant"]["value"] == pytest.approx(10.0)

    def test_all_users_active_zeroes_terms(self, tmp_path):
        payload = {"dims": {"n": 64, "u": 4, "s": 16, "k_u": 4, "k_s": 2, "m": 32}}
        path = write_config(tmp_path, payload)
        out = tmp_path / "bounds.json"
        code = main(
            [
                "bounds", "--config", path, "--out", str(out),
                "--which", "concentration", "--tau", "2.0",
            ]
        )
        assert code == 0
        report = json.loads(out.read_text())["concentration"]
        assert report["terms"]["threshold"] == 0.0
        assert report["terms"]["diversity"] == 0.0
        assert report["flags"]["applicable"] is False

    def test_cli_matches_library(self, tmp_path):
        payload = {
            "dims": {"n": 256, "u": 8, "s": 32, "k_u": 2, "k_s": 2, "m": 128},
            "noise": {"snr_db": 13.0},
            "bounds": {"epsilon": 0.02, "rip_rate": 0.07},
        }
        path = write_config(tmp_path, payload)
        out = tmp_path / "bounds.json"
        code = main(
            [
                "bounds", "--config", path, "--out", str(out),
                "--which", "recovery,concentration", "--tau", "1.7",
            ]
        )
        assert code == 0
        report = json.loads(out.read_text())
        params = BoundParams(
            dims=ProblemDims(n=256, u=8, s=32, k_u=2, k_s=2, m=128),
            snr=10 ** 1.3,
            tau=1.7,
            xi=0.0,
            epsilon=0.02,
            rip_rate=0.07,
        )
        lib_rec = missed_detection_bound_recovery(params)
        lib_conc = missed_detection_bound_concentration(params)
        assert report["recovery"]["total"] == pytest.approx(lib_rec.total, rel=1e-12)
        assert report["recovery"]["terms"]["diversity"] == pytest.approx(
            lib_rec.terms["diversity"], rel=1e-12
        )
        assert report["concentration"]["total"] == pytest.approx(lib_conc.total, rel=1e-12)


def test_module_entry_point(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    out = tmp_path / "out.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "hierdet", "simulate", "--config", str(path), "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert out.exists()
