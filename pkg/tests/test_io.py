import numpy as np
import pytest

from mfg_dtue import SolverOptions, heuristic_solve, network_series
from mfg_dtue import io
from mfg_dtue.errors import ParseError
from mfg_dtue.scenarios import lyon_small_scenario, nash_toy_scenario


@pytest.fixture(scope="module")
def toy_run():
    sc = nash_toy_scenario("toy_three_cells_a")
    mu, rep = heuristic_solve(sc.demand, sc.speed, sc.prefs, sc.grid, sc.solver)
    return sc, mu, rep


def test_fmt():
    assert io.fmt(-0.0) == "0.0"
    assert io.fmt(0.1) == "0.1"
    assert io.fmt(np.float64(1 / 3)) == repr(1 / 3)
    assert io.fmt(np.int64(7)) == "7"
    assert io.fmt(True) == "true" and io.fmt(np.bool_(False)) == "false"


def test_report_round_trip(tmp_path, toy_run):
    sc, _, rep = toy_run
    path = io.write_report(rep, tmp_path / "r.txt", {"scenario": sc.name})
    got = io.read_report(path)
    assert got["iterations"] == rep.iterations and got["converged"] is rep.converged
    assert got["avg_cost"] == rep.avg_cost and got["scenario"] == sc.name
    assert list(got)[:len(io.REPORT_KEYS)] == list(io.REPORT_KEYS)


def test_mu_round_trip(tmp_path, toy_run):
    _, mu, _ = toy_run
    path = io.write_mu_csv(mu, tmp_path / "mu.csv")
    assert path.read_text().splitlines()[0] == ",".join(io.MU_HEADER)
    back = io.read_mu_csv(path, mu.n_t, mu.n_k, mu.dt, mu.dx)
    assert back.equals(mu)


def test_mu_with_classes_round_trip(tmp_path):
    sc = lyon_small_scenario()
    mu, _ = heuristic_solve(sc.demand, sc.speed, sc.prefs, sc.grid, SolverOptions(max_iter=3))
    path = io.write_mu_csv(mu, tmp_path / "mu.csv")
    assert path.read_text().splitlines()[0].endswith(",class_id")
    assert io.read_mu_csv(path, mu.n_t, mu.n_k, mu.dt, mu.dx).equals(mu)


def test_series_curves_indicator_round_trip(tmp_path, toy_run):
    sc, mu, rep = toy_run
    series = network_series(rep.zeta, mu.marginal(rep.zeta.n_t), sc.speed)
    back = io.read_series_csv(io.write_series_csv(series, tmp_path / "s.csv"))
    for name in ("accumulation", "speed", "cum_inflow", "cum_outflow"):
        np.testing.assert_array_equal(getattr(back, name), getattr(series, name))
    assert back.dt == sc.grid.dt

    t, dep, arr = io.emit_curves(mu, rep.zeta, rep.grid)
    assert dep[-1] == pytest.approx(1.0) and arr[-1] == pytest.approx(1.0)
    assert np.all(arr <= dep)
    for a, b in zip(io.read_curves_csv(io.write_curves_csv(t, dep, arr, tmp_path / "c.csv")),
                    (t, dep, arr)):
        np.testing.assert_array_equal(a, b)

    log = io.read_indicator_csv(io.write_indicator_csv(rep, tmp_path / "i.csv"))
    assert log["iteration"].tolist() == list(range(1, rep.iterations + 1))
    np.testing.assert_array_equal(log["indicator"], rep.indicator_history)


def test_arrivals_and_compare(tmp_path, toy_run):
    _, _, rep = toy_run
    got = io.read_arrivals_csv(io.write_arrivals_csv([0.0, 10.0], [55.5, 70.0], [60.0, 61.0],
                                                     tmp_path / "a.csv"))
    assert got["agent"].tolist() == [0, 1] and got["arrival_s"].tolist() == [55.5, 70.0]
    rows = io.read_compare_csv(io.write_compare_csv(rep, rep, tmp_path / "cmp.csv"))
    assert set(rows) == {"mfg", "improvement_pct"}  # both rows are labelled by solver name
    assert rows["improvement_pct"]["avg_cost"] == 0.0


def test_improvement_pct():
    assert io.improvement_pct(50.0, 200.0) == 75.0
    assert io.improvement_pct(0.0, 0.0) == 0.0
    assert io.improvement_pct(1.0, 0.0) == -np.inf


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("t_s,accumulation\n0,0\n", 1),
    ("t_s,accumulation,speed_mps,cum_inflow,cum_outflow\n0,0,10,0\n", 2),
])
def test_series_parse_errors(tmp_path, text, line):
    path = tmp_path / "s.csv"
    path.write_text(text)
    with pytest.raises(ParseError) as info:
        io.read_series_csv(path)
    assert info.value.line == line


def test_bad_numbers_and_report_lines(tmp_path):
    path = tmp_path / "mu.csv"
    path.write_text("tau_d,kappa,tau_a,mass\n1,2,3,heavy\n")
    with pytest.raises(ParseError, match="mass"):
        io.read_mu_csv(path, 10, 10, 1.0, 10.0)
    rep = tmp_path / "r.txt"
    rep.write_text("solver=mfg\nnot a pair\n")
    with pytest.raises(ParseError) as info:
        io.read_report(rep)
    assert info.value.line == 2


def test_writers_are_byte_stable(tmp_path, toy_run):
    _, mu, rep = toy_run
    a = io.write_mu_csv(mu, tmp_path / "a.csv").read_bytes()
    b = io.write_mu_csv(mu, tmp_path / "b.csv").read_bytes()
    assert a == b and b"\r" not in a
