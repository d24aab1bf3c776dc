import json
from pathlib import Path

import numpy as np
import pytest

from contagion_lab import cli
from contagion_lab.errors import ConfigError


MINIMAL_3BANK = {"mode": "reproduce-3bank", "common_seed": 100}


def solve_mf_config(**overrides):
    cfg = {
        "mode": "solve-mf",
        "mixture": {
            "types": [{
                "weight": 1.0, "sigma": 0.4, "net_liability_rate": 1.0,
                "density": {"kind": "uniform_distance", "lo": 0.3, "hi": 1.3},
            }],
            "horizon": 0.2, "r2": 0.0, "rho": 0.0,
            "exposure": [[0.0]],
        },
        "grid": {"dx": 0.01, "x_max": 3.0, "snapshot_count": 3},
    }
    cfg.update(overrides)
    return cfg


class TestParseConfig:
    def test_minimal_defaults(self):
        cfg = cli.parse_config(MINIMAL_3BANK)
        assert cfg.mode == "reproduce-3bank"
        assert cfg.seed == 0  # documented default
        assert cfg.common_seed == 100
        assert cfg.out == "out"

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="unknown key bogus"):
            cli.parse_config({"mode": "reproduce-3bank", "bogus": 1})

    def test_nested_unknown_key_path(self):
        bad = solve_mf_config()
        bad["mixture"]["types"][0]["surprise"] = 2
        with pytest.raises(ConfigError, match=r"mixture.types\[0\].surprise"):
            cli.parse_config(bad) and cli._parse_mixture(bad["mixture"], "mixture")

    def test_negative_r2_rejected_with_field(self):
        bad = solve_mf_config()
        bad["mixture"]["r2"] = -0.2
        cfg = cli.parse_config(bad)
        with pytest.raises(ConfigError, match="mixture.r2"):
            cli._parse_mixture(cfg.body["mixture"], "mixture")

    def test_bad_mode(self):
        with pytest.raises(ConfigError, match="mode"):
            cli.parse_config({"mode": "nonsense"})

    def test_json_text_and_file(self, tmp_path):
        text = json.dumps(MINIMAL_3BANK)
        assert cli.parse_config(text).mode == "reproduce-3bank"
        p = tmp_path / "c.json"
        p.write_text(text)
        assert cli.parse_config(p).mode == "reproduce-3bank"


class TestRun:
    def test_reproduce_3bank_emits_documented_files(self, tmp_path):
        cfg = cli.parse_config({**MINIMAL_3BANK, "dt": 1 / 200})
        out = cli.run(cfg, tmp_path / "r")
        names = {p.name for p in out.iterdir()}
        assert names == {"trajectories.csv", "defaults.csv", "losses.csv",
                         "cascades.json", "manifest.json"}
        header = (out / "trajectories.csv").read_text().splitlines()[0]
        assert header == "t,bank,X,K,alive"
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["files"]) == names - {"manifest.json"}

    def test_manifest_hashes_match_contents(self, tmp_path):
        import hashlib
        cfg = cli.parse_config({**MINIMAL_3BANK, "dt": 1 / 200})
        out = cli.run(cfg, tmp_path / "r")
        manifest = json.loads((out / "manifest.json").read_text())
        for name, digest in manifest["files"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest

    def test_byte_identical_reruns(self, tmp_path):
        cfg = cli.parse_config({**MINIMAL_3BANK, "dt": 1 / 200})
        out1 = cli.run(cfg, tmp_path / "a")
        out2 = cli.run(cfg, tmp_path / "b")
        for p in sorted(out1.iterdir()):
            assert (out2 / p.name).read_bytes() == p.read_bytes()

    def test_solve_mf_smoke(self, tmp_path):
        cfg = cli.parse_config(solve_mf_config())
        out = cli.run(cfg, tmp_path / "mf")
        names = {p.name for p in out.iterdir()}
        assert names == {"mf_losses.csv", "mf_jumps.json", "mf_density.csv",
                         "mf_checks.json", "manifest.json"}
        checks = json.loads((out / "mf_checks.json").read_text())
        assert checks["smallness"]["passed"] is True

    def test_simulate_finite_with_inline_network(self, tmp_path):
        cfg = cli.parse_config({
            "mode": "simulate-finite",
            "seed": 1, "common_seed": 2, "dt": 1 / 100,
            "network": {"n": 2, "T": 1.0, "rates": [[0.0, 1.0], [1.0, 0.0]],
                        "societal": [1.0, 1.0]},
            "params": {"x0": 1.6, "mu": 0.0, "sigma": 0.4, "rho": 0.0, "r2": 0.5},
        })
        out = cli.run(cfg, tmp_path / "fin")
        assert (out / "defaults.csv").exists()

    def test_cascade_test_mode(self, tmp_path):
        cfg = cli.parse_config({"mode": "cascade-test", "trials": 50, "n_min": 2, "n_max": 5})
        out = cli.run(cfg, tmp_path / "ct")
        rows = (out / "cascade_equiv.csv").read_text().splitlines()
        assert len(rows) == 51
        assert all(r.endswith(",1") for r in rows[1:])


class TestMain:
    def test_exit_codes(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({**MINIMAL_3BANK, "dt": 1 / 100}))
        assert cli.main(["reproduce-3bank", "--config", str(cfg_path),
                         "--out", str(tmp_path / "ok")]) == 0
        # mode mismatch is a validation failure
        assert cli.main(["solve-mf", "--config", str(cfg_path)]) == 1
        # unstable grid is a numerical failure
        bad = solve_mf_config()
        bad["grid"]["dt"] = 1.0
        bad_path = tmp_path / "bad.json"
        bad_path.write_text(json.dumps(bad))
        assert cli.main(["solve-mf", "--config", bad_path.as_posix(),
                         "--out", str(tmp_path / "nope")]) == 2

    def test_seed_override_changes_manifest(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({**MINIMAL_3BANK, "dt": 1 / 100}))
        assert cli.main(["reproduce-3bank", "--config", str(cfg_path),
                         "--out", str(tmp_path / "o1"), "--seed", "9"]) == 0
        manifest = json.loads((tmp_path / "o1" / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 9
