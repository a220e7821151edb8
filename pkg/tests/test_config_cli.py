import csv
import json
from pathlib import Path

import numpy as np
import pytest

from fastscramble import checks, cli
from fastscramble.config import ConfigError, ExperimentConfig, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MARKOV = """\
kind: markov-evolve
name: tiny
seed: 5
checkpoint_every: 2
params:
  n_sites: 8
  steps: 6
sweep:
  coupling: [0.2, 0.4]
"""


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "out"))
    return tmp_path / "out"


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# --- schema ---------------------------------------------------------------------------

def test_shipped_configs_parse():
    files = sorted(CONFIGS.glob("*.yaml"))
    assert len(files) >= 8
    for f in files:
        cfg = load_config(f)
        assert cfg.points()


def test_sweep_is_cartesian_product():
    cfg = parse_config(MARKOV.replace("  steps: 6\n", "").replace(
        "sweep:\n", "sweep:\n  steps: [1, 2, 3]\n"))
    pts = cfg.points()
    assert len(pts) == 6
    assert [(p.steps, p.coupling) for p in pts[:2]] == [(1, 0.2), (1, 0.4)]


def test_unknown_top_level_key_names_line():
    with pytest.raises(ConfigError, match=r"colour.*line 3"):
        parse_config("kind: validate\nseed: 1\ncolour: red\n")


def test_unknown_parameter_names_line():
    text = MARKOV.replace("  steps: 6\n", "  steps: 6\n  stepz: 7\n")
    with pytest.raises(ConfigError, match=r"params\.stepz \(line 8\)"):
        parse_config(text)


def test_bad_sweep_value_points_at_sweep():
    text = MARKOV.replace("[0.2, 0.4]", "[0.2, fast]")
    with pytest.raises(ConfigError, match=r"sweep\.coupling \(line 9\)"):
        parse_config(text)


@pytest.mark.parametrize("text", [
    "kind: nonsense\n",
    "- a\n- b\n",
    "kind: validate\nseed: -1\n",
    "kind: validate\nsweep:\n  profile: []\n",
    "kind: validate\nsweep:\n  n_sites: [3]\n",
    "kind: circuit-mc\nparams: {n_sites: 12, coupling: 0.1, steps: 1, n_realizations: 5}\n",
    "kind: [unclosed\n",
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")


def test_config_is_frozen():
    cfg = parse_config(MARKOV)
    with pytest.raises(Exception):
        cfg.seed = 3
    assert isinstance(cfg, ExperimentConfig)


# --- run -----------------------------------------------------------------------------------

def test_run_writes_tables_and_manifest(tmp_path, out_root, capsys):
    assert cli.main(["run", write(tmp_path, MARKOV)]) == 0
    d = out_root / "tiny"
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["schema_version"] == 1 and len(manifest["points"]) == 2
    assert {p["status"] for p in manifest["points"]} == {"ok"}
    seeds = [p["seed"] for p in manifest["points"]]
    assert seeds[0] != seeds[1] and seeds[0] == cli.point_seed(5, 0)
    rows = list(csv.DictReader((d / "point-000.csv").open()))
    assert [r["t"] for r in rows] == ["0", "2", "4", "6"]
    assert float(rows[0]["mean_weight"]) == 1.0
    with (d / "records.csv").open() as fh:
        assert next(csv.reader(fh)) == list(cli.RECORD_COLUMNS)
    assert "tiny" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path, out_root):
    path = write(tmp_path, MARKOV)
    cli.main(["run", path])
    first = {f.name: f.read_bytes() for f in (out_root / "tiny").iterdir()}
    cli.main(["run", path])
    second = {f.name: f.read_bytes() for f in (out_root / "tiny").iterdir()}
    assert first == second


def test_circuit_run_reproducible_with_workers(tmp_path, out_root):
    text = ("kind: circuit-mc\nname: mc\nseed: 9\nparams: {n_sites: 3, steps: 2, n_realizations: 20}\n"
            "sweep:\n  coupling: [0.3, 0.6]\n")
    cli.main(["run", write(tmp_path, text)])
    serial = (out_root / "mc" / "records.csv").read_bytes()
    cli.main(["run", write(tmp_path, text + "workers: 2\n", "par.yaml")])
    assert (out_root / "mc" / "records.csv").read_bytes() == serial


def test_output_dir_fallback(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    cfg = parse_config(MARKOV + f"output_dir: {tmp_path / 'alt'}\n")
    assert cli.output_root(cfg) == tmp_path / "alt"
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.output_root(cfg) == tmp_path / "env"


def test_config_error_exit_code(tmp_path, out_root, capsys):
    assert cli.main(["run", write(tmp_path, "kind: validate\nbogus: 1\n")]) == 2
    assert "bogus" in capsys.readouterr().err


def test_failed_point_exit_code(tmp_path, out_root):
    text = ("kind: level-stats\nname: lv\nparams: {n_sites: 6, n_boot: 10}\n"
            "sweep:\n  min_dim: [3, 100000]\n")
    assert cli.main(["run", write(tmp_path, text)]) == 1
    points = json.loads((out_root / "lv" / "manifest.json").read_text())["points"]
    assert [p["status"] for p in points] == ["ok", "failed"]
    assert "no sector" in points[1]["error"]


def test_validate_subset(capsys):
    assert cli.main(["validate", "--checks", "2", "4"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("[PASS]") and out[-1].startswith("2/2")


def test_validate_unknown_key(capsys):
    assert cli.main(["validate", "--checks", "99"]) == 2


def test_list_experiments(capsys):
    assert cli.main(["list-experiments"]) == 0
    out = capsys.readouterr().out
    for kind in ("markov-evolve", "fp-integrate", "circuit-mc", "otoc", "entropy",
                 "level-stats", "classical-growth", "validate"):
        assert kind in out


def test_point_seed_independent_of_other_points():
    assert cli.point_seed(1, 0) == cli.point_seed(1, 0)
    assert len({cli.point_seed(1, i) for i in range(100)}) == 100
    assert 0 <= cli.point_seed(2 ** 64 - 1, 3) < 2 ** 63


# --- check helpers ----------------------------------------------------------------------

def test_collapse_check_needs_two_curves():
    t = np.linspace(0, 5, 11)
    with pytest.raises(ValueError):
        checks.collapse_check({0.1: (t, t / 10)})
    gap = checks.collapse_check({0.1: (t, t / 10), 0.2: (t, t / 10 + 0.01)})
    assert gap == pytest.approx(0.01, abs=1e-9)


def test_check_result_line_and_registry():
    keys = [c.key for c in checks.CHECKS]
    assert keys == ["1", "2", "3", "4", "5", "6", "7", "8", "9a", "9b", "10", "11", "12", "13", "14"]
    r = checks.run_check("2")
    assert r.passed and r.line().startswith("[PASS]")
    with pytest.raises(KeyError):
        checks.get_check("0")
