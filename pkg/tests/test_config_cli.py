import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from mfg_dtue import io
from mfg_dtue.cli import main
from mfg_dtue.config import load_scenario, read_config
from mfg_dtue.errors import ConfigurationError, ValidationError

DATA = Path(__file__).parent / "data"
REGRESSION = DATA / "regression.ini"


def write(tmp_path, text, name="s.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ------------------------------------------------------------------ config

def test_regression_file_loads():
    sc = load_scenario(str(REGRESSION), env={})
    assert sc.name == "regression"
    assert sc.profile.n_trips == 120
    assert sc.grid.dt == 2.0 and sc.grid.dx == 20.0  # dx defaults to v_max * dt
    assert sc.prefs.for_class(2).gamma == 3.0 and sc.prefs.for_class(1).gamma == 2.0
    assert sc.solver.max_iter == 300 and sc.solver.seed == 1


def test_environment_overrides_file():
    env = {"DTUE_SOLVER_MAX_ITER": "7", "DTUE_PREFS_2_GAMMA": "4.5", "DTUE_SPEED_V_MIN": "3"}
    sc = load_scenario(str(REGRESSION), env=env)
    assert sc.solver.max_iter == 7
    assert sc.prefs.for_class(2).gamma == 4.5
    assert sc.speed.v_min == 3.0


def test_builtin_name_and_base(tmp_path):
    assert load_scenario("pulse", env={}).name == "pulse"
    path = write(tmp_path, "[scenario]\nbase = pulse\nname = tweaked\n[prefs]\nk = 5\n")
    sc = load_scenario(str(path), env={})
    assert sc.name == "tweaked" and sc.profile.equals(load_scenario("pulse", env={}).profile)
    assert sc.prefs.default.gamma == pytest.approx(1.5 + 5 / 9)


def test_demand_csv_relative_to_file(tmp_path):
    shutil.copy(DATA / "trips.csv", tmp_path / "trips.csv")
    path = write(tmp_path, "[demand]\ncsv = trips.csv\n[speed]\nv_max = 10\nv_min = 2\n"
                           "[prefs]\nalpha = 1\nbeta = 0.5\ngamma = 2\n")
    sc = load_scenario(str(path), env={})
    assert len(sc.profile) == 4 and sc.grid.horizon_s == 901.0


@pytest.mark.parametrize("text,error", [
    ("[weather]\nrain = 1\n", ValidationError),
    ("[scenario]\nbase = pulse\n[solver]\nmax_iters = 3\n", ValidationError),
    ("[scenario]\nbase = nowhere\n", ValidationError),
    ("[scenario]\nbase = pulse\n[solver]\ntol = fast\n", ValidationError),
    ("[scenario]\nbase = pulse\n[grid]\ndx = 5\n", ConfigurationError),
    ("[scenario]\nbase = pulse\n[grid]\nhorizon_s = 300\n", ConfigurationError),
    ("[speed]\nv_max = 10\nv_min = 2\n[prefs]\nk = 5\n", ValidationError),
    ("[scenario]\nbase = pulse\n[speed]\nv_min = 20\n", ValidationError),
])
def test_invalid_files(tmp_path, text, error):
    with pytest.raises(error):
        load_scenario(str(write(tmp_path, text)), env={})


def test_missing_file():
    with pytest.raises(ValidationError):
        read_config("/nonexistent/scenario.ini", env={})


# ------------------------------------------------------------------ command line

def test_solve_writes_every_output(tmp_path):
    code = main(["solve", "--scenario", "toy_two_cells", "--out-dir", str(tmp_path)])
    assert code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "curves.csv", "indicator.csv", "mu.csv", "report.txt", "series.csv"]
    report = io.read_report(tmp_path / "report.txt")
    assert report["converged"] is True and report["scenario"] == "toy_two_cells"


def test_exit_codes(tmp_path, capsys):
    assert main(["solve", "--scenario", "pulse", "--max-iter", "3",
                 "--out-dir", str(tmp_path / "a")]) == 2
    empty = tmp_path / "empty.csv"
    empty.write_text("length_m,desired_arrival_s\n")
    ini = write(tmp_path, f"[demand]\ncsv = {empty}\n[speed]\nv_max = 10\nv_min = 2\n"
                          "[prefs]\nk = 5\n")
    assert main(["solve", "--scenario", str(ini), "--out-dir", str(tmp_path / "b")]) == 1
    assert "no trips" in capsys.readouterr().err
    assert main(["solve", "--scenario", "pulse", "--dx", "5",
                 "--out-dir", str(tmp_path / "c")]) == 1


def test_flags_override_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DTUE_SOLVER_MAX_ITER", "2")
    main(["solve", "--scenario", "toy_two_cells", "--out-dir", str(tmp_path / "env")])
    assert io.read_report(tmp_path / "env" / "report.txt")["iterations"] <= 2
    main(["solve", "--scenario", "toy_two_cells", "--max-iter", "50",
          "--out-dir", str(tmp_path / "flag")])
    assert io.read_report(tmp_path / "flag" / "report.txt")["converged"] is True


def test_same_seed_same_bytes(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        main(["baseline", "--scenario", str(REGRESSION), "--seed", "9", "--max-iter", "40",
              "--out-dir", str(out)])
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]
    other = tmp_path / "c"
    main(["baseline", "--scenario", str(REGRESSION), "--seed", "10", "--max-iter", "40",
          "--out-dir", str(other)])
    assert (other / "mu.csv").read_bytes() != outs[0]["mu.csv"]


def test_compare_matches_golden_file(tmp_path):
    assert main(["compare", "--scenario", str(REGRESSION), "--out-dir", str(tmp_path)]) == 0
    got = io.read_compare_csv(tmp_path / "compare.csv")
    want = io.read_compare_csv(DATA / "regression_compare.csv")
    assert set(got) == set(want) == {"mfg", "msa", "improvement_pct"}
    for solver, row in want.items():
        assert got[solver]["iterations"] == row["iterations"]
        for key, value in row.items():
            assert got[solver][key] == pytest.approx(value, rel=1e-9, abs=1e-12)


def test_oracle_subcommand(tmp_path):
    code = main(["oracle", "--scenario", "toy_two_cells", "--agents", "20",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    arr = io.read_arrivals_csv(tmp_path / "arrivals.csv")
    assert len(arr["agent"]) == 20
    err = io.read_report(tmp_path / "oracle.txt")["sup_accumulation_error"]
    assert 0.0 <= err <= 1.0
    assert (tmp_path / "series.csv").exists() and (tmp_path / "mu_meanfield.csv").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mfg_dtue", "solve", "--scenario", "toy_two_cells",
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    bad = subprocess.run([sys.executable, "-m", "mfg_dtue", "solve"], capture_output=True, text=True)
    assert bad.returncode == 1 and "--scenario" in bad.stderr
