import json
import os
import subprocess
import sys

import pytest

from precisionkit.errors import ConfigError
from precisionkit.expcli import cli
from precisionkit.expcli.config import load_config, resolve_experiment


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_aliases_and_unknown_ids():
    assert resolve_experiment("fig3") == "fig3_sysid"
    with pytest.raises(ConfigError):
        resolve_experiment("fig9")


def test_defaults_and_overrides(tmp_path):
    cfg = load_config("fig5")
    assert cfg.settings.sigma_w == 0.05 and cfg.seeds == (0, 1, 2, 3)
    path = _write(tmp_path, "c.yaml", "seeds: [3, 1, 3]\nsigma_w: 0.02\nworkers: 2\n")
    cfg = load_config("fig5_noise", path)
    assert cfg.seeds == (1, 3) and cfg.settings.sigma_w == 0.02 and cfg.workers == 2
    assert load_config("fig5_noise", path, seed=9).seeds == (9,)


def test_json_config(tmp_path):
    path = _write(tmp_path, "c.json", json.dumps({"budget": 100, "no_fly": None}))
    cfg = load_config("ipp", path)
    assert cfg.settings.budget == 100.0 and cfg.settings.no_fly is None


@pytest.mark.parametrize("text", ["sigma_q: 1\n", "orders: 3\n", "seeds: [-1]\n", "- 1\n- 2\n", "a: [\n"])
def test_bad_configs_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config("fig2", _write(tmp_path, "bad.yaml", text))


def test_header_echoes_every_setting():
    lines = load_config("fig4").header_lines()
    keys = [line.split("=", 1)[0] for line in lines]
    assert keys[:3] == ["package_version", "experiment", "seeds"]
    assert "prior_grid" in keys and "sigma_z" in keys
    assert "workers" not in keys and "out" not in keys
    assert "prior_grid=0.1,1.0,10.0,100.0,1000.0,10000.0,100000.0,1000000.0" in lines


def test_exit_code_for_unknown_key(tmp_path, capsys):
    path = _write(tmp_path, "c.yaml", "bogus: 1\n")
    assert cli.main(["run", "fig2", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "bogus" in capsys.readouterr().err


def test_exit_code_for_missing_config(tmp_path):
    assert cli.main(["run", "fig2", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_exit_code_for_unknown_experiment():
    assert cli.main(["run", "fig9"]) == 2


def test_exit_code_for_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["run", "ipp", "--seed", "0", "--out", str(blocker / "sub")]) == 2


def test_exit_code_for_run_failure(tmp_path, monkeypatch):
    def boom(cfg):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["run", "ipp", "--seed", "0", "--out", str(tmp_path)]) == 3


def test_small_ipp_run_writes_headed_csvs(tmp_path, capsys):
    cfg = _write(tmp_path, "c.yaml", "width: 12\nheight: 12\nn_targets: 2\nno_fly: null\n"
                                     "footprint_radius: [1, 2, 3]\nsnapshot_every: 1\n")
    out = tmp_path / "out"
    assert cli.main(["run", "ipp", "--config", str(cfg), "--seed", "5", "--out", str(out)]) == 0
    printed = capsys.readouterr().out.split()
    assert printed and all(os.path.exists(p) for p in printed)
    runs = (out / "ipp_mission_runs.csv").read_text().splitlines()
    assert "# seeds=5" in runs and "# width=12" in runs
    assert any((out / "snapshots").iterdir())


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "precisionkit.expcli", "run", "nothing"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
