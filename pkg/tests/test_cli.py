import json

import pytest

from gapweaver import io as gio
from gapweaver.cli import apply_thread_cap, main


def manifest(out, command):
    return gio.read_json(out / f"manifest-{command}.json")


def test_no_command_is_usage_error(capsys):
    assert main([]) == 2
    assert "no command" in capsys.readouterr().err


def test_bad_config_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    assert main(["--config", str(cfg)]) == 2
    assert main(["--config", str(tmp_path / "missing.json")]) == 2


def test_bad_thread_cap(monkeypatch, tmp_path):
    monkeypatch.setenv("GAPWEAVER_THREADS", "many")
    assert main(["bifurcate", "--grid-n", "64", "--out", str(tmp_path)]) == 2
    monkeypatch.setenv("GAPWEAVER_THREADS", "2")
    assert apply_thread_cap() == 2


def test_bifurcate_writes_manifest(tmp_path, capsys):
    assert main(["bifurcate", "--grid-n", "128", "--out", str(tmp_path)]) == 0
    assert "eta0" in capsys.readouterr().out
    man = manifest(tmp_path, "bifurcate")
    assert man["results"]["eta0"] == pytest.approx(0.1745, abs=1e-4)
    for entry in man["outputs"]:
        assert gio.sha256_file(tmp_path / entry["path"]) == entry["sha256"]


def test_config_replay_reproduces_outputs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["nonres", "--grid-n", "64", "--n-max", "6", "--out", str(a)]) == 0
    cfg = gio.read_json(a / "config-nonres.json")
    cfg["out"] = str(b)
    path = tmp_path / "replay.json"
    path.write_text(json.dumps(cfg))
    assert main(["--config", str(path)]) == 0
    assert gio.read_json(a / "nonres.json") == gio.read_json(b / "nonres.json")
    assert manifest(b, "nonres")["results"]["status"] in ("certified", "inconclusive")


def test_coeffs_then_solve_is_deterministic(tmp_path, capsys):
    assert main(["coeffs", "--grid-n", "128", "--out", str(tmp_path)]) == 0
    assert "gamma4" in capsys.readouterr().out
    coeffs = str(tmp_path / "coeffs.json")
    sums = []
    for run in ("s1", "s2"):
        out = tmp_path / run
        assert main(["solve", "--class", "A-m0", "--omega", "1.3", "--D", "10", "--dy", "0.8",
                     "--coeffs", coeffs, "--out", str(out)]) == 0
        sums.append(gio.sha256_file(out / "field.bin"))
    assert sums[0] == sums[1]


def test_solve_on_wrong_side_reports_error(tmp_path, capsys):
    rc = main(["solve", "--class", "A-m0", "--omega", "0.5", "--D", "6", "--dy", "1.0",
               "--grid-n", "64", "--out", str(tmp_path)])
    assert rc == 1
    assert "NoLocalizedSolutionError" in capsys.readouterr().err


def test_bands_tables(tmp_path):
    assert main(["bands", "--grid-n", "64", "--eta", "0.2", "--k-points", "5",
                 "--n-bands", "3", "--n-surfaces", "4", "--out", str(tmp_path)]) == 0
    head, cols, rows = gio.read_csv(tmp_path / "bands.csv")
    assert cols == ["k", "rho1", "rho2", "rho3"] and len(rows) == 5
    head, cols, rows = gio.read_csv(tmp_path / "bands2d.csv")
    assert head["path"] == "Gamma-X-M-Gamma" and len(rows) == 13 and len(cols) == 7
