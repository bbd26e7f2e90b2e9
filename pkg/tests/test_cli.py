import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fielddla import output
from fielddla.analysis import bridging_time_closed_form
from fielddla.cli import load_model_params, main, step_values

from test_analysis import FIT, vicsek

PARAMS = """
[model]
gap_m = 120e-6
particle_radius_m = 1e-6
mean_spacing_m = 3e-6
accretion_count = 2
growth_dimension = 1.8
medium_permittivity_F_m = 22.12e-12
dynamic_viscosity_Pa_s = 300e-6
"""

SMALL = """
[geometry]
electrode_segments = [[0, 0, 60, 0, 0.5], [0, 30, 60, 30, 0]]
domain_um = [60, 30]
[medium]
permittivity_F_m = 22.12e-12
dynamic_viscosity_Pa_s = 300e-6
[particles]
radius_um = 1
count = 60
[sim]
dt_s = 2e-3
max_time_s = 0.2
seed = 4
snapshot_interval_s = 0.1
[output]
write_snapshots = true
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_model_curve_equals_closed_form(tmp_path):
    params = write(tmp_path, "p.toml", PARAMS)
    out = tmp_path / "m"
    assert main(["model", "--params", params, "--field-range", "0.075e6:0.3e6:10", "--out", str(out)]) == 0
    rows = read_rows(out / "tau_b_closed.csv")
    assert rows[0] == ["xi_V_per_m", "tau_b_s"]
    taus = []
    for xi, tau in rows[1:]:
        want = bridging_time_closed_form(FIT.with_(field=float(xi)))
        assert float(tau) == want
        taus.append(float(tau))
    assert all(b < a for a, b in zip(taus, taus[1:]))
    assert (out / "tau_b_series.csv").exists()
    assert b"\r\n" not in (out / "tau_b_closed.csv").read_bytes()


def test_model_spacing_curve(tmp_path):
    params = write(tmp_path, "p.toml", PARAMS + "field_V_per_m = 0.25e6\n")
    out = tmp_path / "m"
    assert main(["model", "--params", params, "--spacing-range", "2e-6:4e-6:3", "--out", str(out)]) == 0
    rows = read_rows(out / "tau_b_vs_r0_closed.csv")
    assert rows[0] == ["r0_m", "tau_b_s"]
    assert float(rows[2][1]) == pytest.approx(41.8508847234771, rel=1e-12)


def test_model_params_loader():
    p = load_model_params(PARAMS, default_field=0.25e6)
    assert p == FIT


def test_simulate_is_byte_reproducible(tmp_path):
    cfg = write(tmp_path, "c.toml", SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b), "--workers", "2"]) == 0
    for name in ("summary.json", "events.csv", "conductance.csv", "snapshots.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    s = json.loads((a / "summary.json").read_text())
    assert set(s) == {"schema_version", "t_min_s", "t_max_s", "G_max_S", "bridged", "seed", "config_hash"}
    assert s["schema_version"] == 1 and s["seed"] == 4


def test_simulate_seed_override(tmp_path):
    cfg = write(tmp_path, "c.toml", SMALL)
    assert main(["simulate", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "summary.json").read_text())["seed"] == 9
    # the written config reproduces the run
    again = tmp_path / "again"
    assert main(["simulate", "--config", str(tmp_path / "r" / "config.toml"), "--out", str(again)]) == 0
    assert (again / "summary.json").read_bytes() == (tmp_path / "r" / "summary.json").read_bytes()


def test_sweep_rows_sorted_and_censored(tmp_path):
    cfg = write(tmp_path, "c.toml", SMALL.replace("count = 60", "count = 20"))
    out = tmp_path / "s"
    rc = main(["sweep", "--config", cfg, "--param", "viscosity=0.6e-3,0.3e-3", "--replicates", "2",
               "--out", str(out)])
    assert rc == 0
    rows = read_rows(out / "sweep.csv")
    assert rows[0] == ["param_value", "seed", "t_min_s", "t_max_s", "G_max_S"]
    keys = [(float(r[0]), int(r[1])) for r in rows[1:]]
    assert keys == [(0.3e-3, 4), (0.3e-3, 5), (0.6e-3, 4), (0.6e-3, 5)]
    for r in rows[1:]:
        if r[2] == "":
            assert float(r[3]) == 0.2 and float(r[4]) == 0.0


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = write(tmp_path, "c.toml", SMALL.replace("count = 60", "count = 20"))
    for jobs, d in (("1", "one"), ("2", "two")):
        assert main(["sweep", "--config", cfg, "--param", "field=1e4:2e4:1e4", "--replicates", "2",
                     "--jobs", jobs, "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "one" / "sweep.csv").read_bytes() == (tmp_path / "two" / "sweep.csv").read_bytes()


def test_step_values_include_the_end():
    assert step_values(0.075e6, 0.3e6, 0.025e6)[-1] == pytest.approx(0.3e6)
    assert len(step_values(0.075e6, 0.3e6, 0.025e6)) == 10


def test_analyze_branched_snapshot(tmp_path):
    pts = vicsek(4) + 5e-5
    rows = [(0.5, i, x, y, 0, "") for i, (x, y) in enumerate(pts)]
    rows += [(0.5, len(pts), 1e-6, 1e-6, len(pts), "")]  # a stray free particle
    snap = tmp_path / "snapshots.csv"
    output.write_csv(snap, output.SNAPSHOT_HEADER, rows)
    out = tmp_path / "g"
    assert main(["analyze", "--snapshot", str(snap), "--radius-m", "1e-6", "--out", str(out)]) == 0
    doc = json.loads((out / "gamma.json").read_text())
    assert doc["n_particles"] == len(pts)
    a, b = doc["area_law"]["gamma"], doc["box_count"]["gamma"]
    assert 1 < a < 2 and 1 < b < 2 and abs(a - b) <= 0.2


# --------------------------------------------------------------------------
# exit codes

def test_parse_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "c.toml", "[geometry]\ngap_um = = 1\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("fielddla: ") and err.count("\n") == 1


def test_unknown_subcommand_exit_code(capsys):
    assert main(["frobnicate"]) == 1
    assert capsys.readouterr().err.count("\n") == 1


def test_invariant_violation_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "c.toml", SMALL.replace("dt_s = 2e-3", "dt_s = 0"))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "dt" in capsys.readouterr().err


def test_runtime_failure_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "c.toml", SMALL.replace("count = 60", "count = 400"))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x")]) == 3
    assert "fielddla: " in capsys.readouterr().err


def test_degenerate_analyze_exit_code(tmp_path):
    snap = tmp_path / "s.csv"
    output.write_csv(snap, output.SNAPSHOT_HEADER, [(0.0, 0, 1e-5, 1e-5, 0, ""), (0.0, 1, 1.2e-5, 1e-5, 0, "")])
    assert main(["analyze", "--snapshot", str(snap), "--radius-m", "1e-6", "--out", str(tmp_path / "g")]) == 3


def test_module_entry_point(tmp_path):
    params = write(tmp_path, "p.toml", PARAMS)
    r = subprocess.run([sys.executable, "-m", "fielddla", "model", "--params", params,
                        "--field-range", "1e5:2e5:2", "--out", str(tmp_path / "m")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "m" / "tau_b_closed.csv").exists()


# --------------------------------------------------------------------------
# atomic writes

def test_interrupted_write_leaves_previous_file(tmp_path, monkeypatch):
    target = tmp_path / "conductance.csv"
    output.write_csv(target, output.CONDUCTANCE_HEADER, [(0.0, 0.0)])
    before = target.read_bytes()

    def boom(*a, **k):
        raise KeyboardInterrupt

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(KeyboardInterrupt):
        output.write_csv(target, output.CONDUCTANCE_HEADER, [(t, 1.0) for t in np.arange(1000.0)])
    assert target.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["conductance.csv"]


def test_csv_round_trip(tmp_path):
    rows = [(0.1, 3e-300, "x"), (1.0 / 3.0, -0.0, "")]
    output.write_csv(tmp_path / "r.csv", ("a", "b", "c"), rows)
    back = output.read_csv(tmp_path / "r.csv")
    assert [float(r["a"]) for r in back] == [0.1, 1.0 / 3.0]
    assert float(back[0]["b"]) == 3e-300
