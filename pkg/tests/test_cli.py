import csv
import json
import math
import subprocess
import sys

import pytest

from gjms.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, ConfigError, build_config, load_config, main
from gjms.heisenberg import negative_count


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestSpectrum:
    def test_analytic_classes(self, tmp_path):
        out = tmp_path / "spectrum.csv"
        code = main(["spectrum", "--model", "heis", "--d", "1", "--s", "1", "--op", "delta",
                     "--cutoff", "50", "--analytic", "--out", str(out)])
        assert code == EXIT_PASS
        rows = _rows(out)
        assert rows[0] == ["sector", "indices", "delta_eig", "operator_eig", "multiplicity"]
        vals = [float(r[3]) for r in rows[1:]]
        assert vals == pytest.approx([0.0, 4 * math.pi ** 2, 2 * math.pi + 4 * math.pi ** 2], abs=1e-12)
        assert [int(r[4]) for r in rows[1:]] == [1, 4, 2]

    def test_grid_torus(self, tmp_path):
        out = tmp_path / "grid.csv"
        assert main(["spectrum", "--model", "torus", "--n", "3", "--N", "8", "--op", "yamabe",
                     "--out", str(out)]) == EXIT_PASS
        rows = _rows(out)[1:]
        assert len(rows) == 512
        assert abs(float(rows[0][1])) < 1e-10

    def test_grid_needs_count_when_large(self, capsys):
        assert main(["spectrum", "--model", "torus", "--N", "32", "--op", "delta"]) == EXIT_CONFIG

    def test_analytic_torus_rejected(self):
        assert main(["spectrum", "--model", "torus", "--analytic", "--cutoff", "10"]) == EXIT_CONFIG


class TestConfig:
    def test_malformed_toml(self, tmp_path):
        cfg = _write(tmp_path, "bad.toml", "schema_version = 1\n[model\nkind = 'torus'\n")
        out = tmp_path / "never.json"
        assert main(["battery", "--config", cfg, "--out", str(out)]) == EXIT_CONFIG
        assert not out.exists()

    def test_schema_version(self, tmp_path):
        cfg = _write(tmp_path, "v2.toml", "schema_version = 2\n")
        with pytest.raises(ConfigError, match="schema_version"):
            load_config(cfg)

    def test_unknown_keys(self, tmp_path):
        cfg = _write(tmp_path, "k.toml", "schema_version = 1\nbogus = 3\n")
        assert main(["spectrum", "--config", cfg]) == EXIT_CONFIG

    def test_flags_override_file(self, tmp_path):
        cfg = _write(tmp_path, "m.toml", "schema_version = 1\n[model]\nkind = 'heisenberg'\nd = 2\ns = 3.0\n")
        rc = build_config(["spectrum", "--config", cfg, "--s", "1.5"])
        assert (rc.kind, rc.d, rc.s) == ("heisenberg", 2, 1.5)

    def test_upsilon_validation(self, tmp_path):
        cfg = _write(tmp_path, "u.toml",
                     "schema_version = 1\n[model]\nkind = 'torus'\n[[model.upsilon]]\nindex = [1, 0]\namplitude = 0.1\n")
        with pytest.raises(ConfigError, match="index"):
            build_config(["spectrum", "--config", cfg]).model()

    def test_t_dependent_upsilon_rejected(self, tmp_path):
        cfg = _write(tmp_path, "t.toml",
                     "schema_version = 1\n[model]\nkind = 'heisenberg'\n[[model.upsilon]]\n"
                     "index = [0, 0, 1]\namplitude = 0.1\n")
        assert main(["spectrum", "--config", cfg, "--N", "4"]) == EXIT_CONFIG

    def test_bad_N(self):
        assert main(["spectrum", "--N", "7"]) == EXIT_CONFIG


class TestNegcount:
    def test_yamabe_d1_slope_is_reported(self, tmp_path):
        out = tmp_path / "neg.csv"
        code = main(["negcount", "--d", "1", "--op", "yamabe", "--s-sweep", "5,10,20,40", "--out", str(out)])
        summary = json.loads((tmp_path / "neg.csv.summary.json").read_text())
        assert summary["counts"] == [3, 115, 7163, 455663]
        # the closed-form counts grow like s^6, outside the [2.7, 3.3] window
        assert summary["slope"] == pytest.approx(5.76, abs=0.01)
        assert code == EXIT_FAIL and summary["verdict"] == "fail"

    def test_paneitz_d3_increasing(self, tmp_path):
        out = tmp_path / "p3.csv"
        assert main(["negcount", "--d", "3", "--op", "paneitz", "--s-sweep", "1.5,1.8,2.2,2.6",
                     "--out", str(out)]) == EXIT_PASS
        counts = [int(r[1]) for r in _rows(out)[1:]]
        assert all(b > a for a, b in zip(counts, counts[1:]))

    def test_paneitz_d1_never_negative(self, tmp_path):
        out = tmp_path / "p1.csv"
        assert main(["negcount", "--d", "1", "--op", "paneitz", "--s-sweep", "2,4,8,16",
                     "--out", str(out)]) == EXIT_FAIL
        assert [int(r[1]) for r in _rows(out)[1:]] == [0, 0, 0, 0]

    def test_grid_counts(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GJMS_THREADS", "2")
        out = tmp_path / "g.csv"
        main(["negcount", "--grid", "--N", "8", "--d", "1", "--op", "yamabe", "--s-sweep", "2,3",
              "--out", str(out)])
        # only the shifted zero mode is negative here, far from any grid eigenvalue
        want = [negative_count("yamabe", 1, s) for s in (2, 3)]
        assert [int(r[1]) for r in _rows(out)[1:]] == want

    def test_needs_sweep(self):
        assert main(["negcount", "--op", "yamabe"]) == EXIT_CONFIG


class TestBattery:
    CONFIG = """schema_version = 1
N = 16
[model]
kind = "torus"
n = 3
[[samples]]
upsilon = [{index = [1, 0, 0], amplitude = 0.1}]
[[samples]]
upsilon = []
"""

    def test_pass_and_deterministic(self, tmp_path):
        cfg = _write(tmp_path, "b.toml", self.CONFIG)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["battery", "--config", cfg, "--out", str(a)]) == EXIT_PASS
        assert main(["battery", "--config", cfg, "--out", str(b)]) == EXIT_PASS
        assert a.read_bytes() == b.read_bytes()
        data = json.loads(a.read_text())
        assert data["summary"]["fail"] == 0
        zero = [r for r in data["reports"] if r["quantity"].endswith("[1]") and
                not r["quantity"].startswith("conjugation")]
        assert all(r["discrepancy"] == 0.0 for r in zero)

    def test_heisenberg_rejected(self):
        assert main(["battery", "--model", "heis"]) == EXIT_CONFIG


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gjms", "spectrum", "--model", "heis", "--s", "1",
                           "--cutoff", "40", "--analytic"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert len(proc.stdout.strip().splitlines()) == 3
