import csv
import io
import os
import subprocess
import sys
from pathlib import Path

import pytest

from imexdwr import cli
from imexdwr.cli import ConfigError, compare_dirs, emit_plot_data, main, parse_config_text, read_manifest

GOLDEN = Path(__file__).parent / "golden"


def write_cfg(path, **kw):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kw.items()))
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def spatial_run(tmp_path):
    cfg = write_cfg(tmp_path / "s.cfg", experiment="ac_effectivity_spatial", mesh=4, levels=2,
                    output=tmp_path / "run")
    assert main(["run", cfg]) == 0
    return tmp_path / "run"


# -- config parsing -----------------------------------------------------------------
def test_parse_defaults_and_comments():
    cfg = parse_config_text("# temporal study\nexperiment = ac_effectivity_temporal  # inline\nlevels = 2\n")
    assert cfg.mesh == (64,) and cfg.levels == 2
    assert cfg.steps == (0.05,) * 4 and cfg.T == pytest.approx(0.2)
    assert cfg.boundary == "dirichlet"


def test_parse_step_forms():
    a = parse_config_text("experiment = ac_effectivity_temporal\nsteps = 0.08, 0.06 0.04,0.02\n")
    assert a.steps == (0.08, 0.06, 0.04, 0.02)
    b = parse_config_text("experiment = ac_effectivity_temporal\nsteps = 0.05*4\n")
    assert b.steps == (0.05,) * 4
    c = parse_config_text("experiment = ac_effectivity_temporal\nT = 0.2\ntau = 0.01\n")
    assert len(c.steps) == 20
    d = parse_config_text("experiment = custom\nproblem = ac_ring\nmesh = 8\nn_steps = 4\nT = 0.02\n")
    assert d.epsilon == 0.0625 and d.box == (-1.0, 1.0, -1.0, 1.0)


@pytest.mark.parametrize("text", [
    "",
    "experiment = wave\n",
    "experiment = ac_ring\nnonsense\n",
    "experiment = ac_ring\ncolour = red\n",
    "experiment = ac_ring\ntheta = 1.5\n",
    "experiment = ac_ring\ntheta = abc\n",
    "experiment = ac_ring\nT = 1.0\n",
    "experiment = ac_ring\nmode = sideways\n",
    "experiment = ac_ring\nsteps = 0.1,-0.1\n",
    "experiment = ac_ring\nlevels = 1\nlevels = 2\n",
    "experiment = dual_consistency\nmode = adaptive\n",
    "experiment = custom\n",
    "experiment = ac_effectivity_temporal\nboundary = periodic\n",
    "experiment = ac_effectivity_temporal\nT = 0.2\ntau = 0.01\nn_steps = 3\n",
])
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_invalid_config_exit_code(tmp_path, capsys):
    assert main(["run", write_cfg(tmp_path / "bad.cfg", experiment="nope")]) == 2
    assert "invalid config" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    assert main(["frobnicate"]) == 2


def test_manifest_echoes_config(spatial_run):
    man = read_manifest(spatial_run / "manifest.txt")
    assert man["experiment"] == "ac_effectivity_spatial"
    assert man["steps"] == "0.0001*20"
    assert man["mesh"] == "4" and man["levels"] == "2" and man["boundary"] == "dirichlet"
    assert man["complete"] == "true"
    again = parse_config_text("".join(f"{k} = {man[k]}\n" for k in
                                      ("experiment", "mesh", "steps", "levels", "T", "boundary")))
    assert again.steps == (1e-4,) * 20


def test_sweep_artifacts(spatial_run):
    table = rows(spatial_run / "results.csv")
    assert list(table[0]) == cli.SWEEP_COLUMNS
    assert [r["M"] for r in table] == ["16", "64"]
    assert table[0]["error_ratio"] == ""
    for r in table:
        assert abs(float(r["E_st"]) - float(r["E_s"]) - float(r["E_t"]) - float(r["Osc"])) <= \
            1e-10 * abs(float(r["E_st"]))
    assert (spatial_run / "indicators_level01.csv").exists()
    assert len(rows(spatial_run / "timesteps.csv")) == 21


def test_spatial_table_matches_golden(spatial_run):
    got = rows(spatial_run / "results.csv")
    gold = rows(GOLDEN / "spatial_results.csv")
    for g, r in zip(gold, got):
        assert abs(float(g["effectivity"]) - float(r["effectivity"])) <= 0.05
        assert float(r["true_error"]) == pytest.approx(float(g["true_error"]), rel=1e-8)


# -- compare -----------------------------------------------------------------------------
def test_compare_with_itself_is_zero(spatial_run):
    buf = io.StringIO()
    assert compare_dirs(str(spatial_run), str(spatial_run), stream=buf) == 0
    assert "max_rel_diff = 0.0" in buf.getvalue()


def test_runs_are_bitwise_deterministic(tmp_path, spatial_run):
    cfg = write_cfg(tmp_path / "s2.cfg", experiment="ac_effectivity_spatial", mesh=4, levels=2,
                    output=tmp_path / "run2")
    assert main(["run", cfg]) == 0
    for name in ("results.csv", "indicators_level00.csv", "indicators_level01.csv", "timesteps.csv"):
        assert (spatial_run / name).read_bytes() == (tmp_path / "run2" / name).read_bytes()


def test_compare_detects_differences(tmp_path, spatial_run):
    other = tmp_path / "other"
    other.mkdir()
    (other / "manifest.txt").write_text((spatial_run / "manifest.txt").read_text())
    text = (spatial_run / "results.csv").read_text().splitlines()
    fields = text[1].split(",")
    fields[4] = repr(float(fields[4]) * 1.01)
    text[1] = ",".join(fields)
    (other / "results.csv").write_text("\n".join(text) + "\n")
    assert compare_dirs(str(spatial_run), str(other), tol=0.0, stream=io.StringIO()) == 1
    assert compare_dirs(str(spatial_run), str(other), tol=0.02, stream=io.StringIO()) == 0


def test_compare_mismatched_experiments(tmp_path, spatial_run):
    other = tmp_path / "other"
    other.mkdir()
    (other / "manifest.txt").write_text("experiment = ac_ring\n")
    (other / "results.csv").write_text((spatial_run / "results.csv").read_text())
    assert compare_dirs(str(spatial_run), str(other), stream=io.StringIO()) == 2
    assert compare_dirs(str(spatial_run), str(tmp_path / "nowhere"), stream=io.StringIO()) == 2


# -- plot data and output root -------------------------------------------------------------
def test_plot_data(spatial_run):
    plot = Path(emit_plot_data(str(spatial_run)))
    conv = rows(plot / "convergence.csv")
    assert list(conv[0]) == cli.CONVERGENCE_COLUMNS
    assert sum(r["series"] == "true_error" for r in conv) == 2
    assert len(rows(plot / "timesteps.csv")) == 21
    snaps = sorted(plot.glob("snapshot_*.csv"))
    assert len(snaps) == 2
    snap = rows(snaps[-1])
    assert list(snap[0]) == cli.SNAPSHOT_COLUMNS and len(snap) == 81


def test_plot_data_rejects_incomplete_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        emit_plot_data(str(tmp_path))
    assert main(["plot-data", str(tmp_path)]) == 2


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    cfg = write_cfg(tmp_path / "c.cfg", experiment="dual_consistency", levels=2, mesh=64, output="rel")
    assert main(["run", cfg]) == 0
    table = rows(tmp_path / "root" / "rel" / "results.csv")
    assert len(table) == 3 and list(table[0]) == cli.CONSISTENCY_COLUMNS
    man = read_manifest(tmp_path / "root" / "rel" / "manifest.txt")
    assert "slope_terminal" in man


def test_adaptive_run_writes_iteration_tables(tmp_path):
    cfg = write_cfg(tmp_path / "m.cfg", experiment="heat_moving_source", max_outer_iterations=3,
                    output=tmp_path / "ms")
    assert main(["run", cfg]) == 0
    out = tmp_path / "ms"
    table = rows(out / "results.csv")
    assert [r["iteration"] for r in table] == ["0", "1", "2"]
    assert list(table[0]) == cli.ADAPTIVE_COLUMNS
    assert len(os.listdir(out / "iterations")) == 3
    steps = rows(out / "timesteps.csv")
    assert len(steps) == int(table[-1]["N"]) + 1
    assert {"primal", "dual"} == {p.name.split("_")[0] for p in (out / "snapshots").iterdir()}
    man = read_manifest(out / "manifest.txt")
    assert man["status"] == "max_iterations"
    assert 0.0 <= float(man["added_dofs_fraction_last20"]) <= 1.0


def test_solver_failure_exit_code(tmp_path, monkeypatch, capsys):
    from imexdwr.linalg import SolverError

    def boom(cfg, out):
        raise SolverError("diverged")

    monkeypatch.setattr(cli, "run_sweep", boom)
    cfg = write_cfg(tmp_path / "s.cfg", experiment="ac_effectivity_temporal", output=tmp_path / "f")
    assert main(["run", cfg]) == 3
    assert read_manifest(tmp_path / "f" / "manifest.txt")["complete"] == "false"


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "imexdwr.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "plot-data" in res.stdout
