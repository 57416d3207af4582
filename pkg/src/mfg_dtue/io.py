"""Writers and readers for every file the command line emits.

Floats are written with ``repr`` (shortest round-tripping form), rows are
written in a fixed order and line endings are always ``\\n``, so equal runs
give byte-identical files.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np

from .bathtub import CharacteristicDistance, Grid, NetworkSeries, cumulative_flows
from .equilibrium import DisaggInFlow, EquilibriumReport
from .errors import ParseError

SERIES_HEADER = ("t_s", "accumulation", "speed_mps", "cum_inflow", "cum_outflow")
MU_HEADER = ("tau_d", "kappa", "tau_a", "mass")
CURVES_HEADER = ("t_s", "cum_departures", "cum_arrivals")
INDICATOR_HEADER = ("iteration", "indicator", "avg_cost", "total_travel_time_s",
                    "max_accumulation", "max_inflow_density")
ARRIVALS_HEADER = ("agent", "departure_s", "arrival_s", "cost")
COMPARE_HEADER = ("solver", "iterations", "final_indicator", "avg_cost", "total_travel_time_s")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if x == 0.0:
            return "0.0"  # drop the sign of -0.0
        return repr(x)
    return str(x)


def _write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _read_rows(path, header: Sequence[str], optional: Sequence[str] = ()) -> Dict[str, List[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        if got[:len(header)] != list(header) or any(h not in optional for h in got[len(header):]):
            raise ParseError(f"{path}: expected header {','.join(header)}, got {','.join(got)}",
                             line=1)
        cols: Dict[str, List[str]] = {h: [] for h in got}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(got):
                raise ParseError(f"{path}: expected {len(got)} fields, got {len(row)}", line=lineno)
            for h, v in zip(got, row):
                cols[h].append(v)
    return cols


def _floats(values, path, name):
    try:
        return np.array([float(v) for v in values], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: column {name}: {exc}") from None


def _ints(values, path, name):
    try:
        return np.array([int(v) for v in values], dtype=np.int64)
    except ValueError as exc:
        raise ParseError(f"{path}: column {name}: {exc}") from None


# ------------------------------------------------------------------ report

REPORT_KEYS = ("solver", "iterations", "final_indicator", "avg_cost", "total_travel_time_s",
               "epsilon_residual_mass", "converged", "max_accumulation",
               "foc_nonviolating_share", "max_inflow_density", "regularity_constant",
               "speed_lipschitz", "horizon_s")


def write_report(report: EquilibriumReport, path, extra: Mapping[str, object] = ()) -> Path:
    """Flat ``key=value`` text report, one key per line in a fixed order."""
    items = dict(report.summary())
    items.update(dict(extra))
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in items.items():
            fh.write(f"{key}={fmt(value)}\n")
    return path


def _parse_value(text: str):
    if text in ("true", "false"):
        return text == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_report(path) -> Dict[str, object]:
    out: Dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: expected key=value", line=lineno)
            key, value = line.split("=", 1)
            out[key.strip()] = _parse_value(value.strip())
    return out


# ------------------------------------------------------------------ mu

def write_mu_csv(mu: DisaggInFlow, path) -> Path:
    """``tau_d,kappa,tau_a,mass``; a trailing ``class_id`` column appears only
    when more than one trip class is present."""
    header = MU_HEADER
    rows = zip(mu.td.tolist(), mu.k.tolist(), mu.ta.tolist(), mu.mass.tolist())
    if len(mu) and np.any(mu.group != 0):
        header = MU_HEADER + ("class_id",)
        rows = zip(mu.td.tolist(), mu.k.tolist(), mu.ta.tolist(), mu.mass.tolist(),
                   mu.group.tolist())
    return _write_rows(path, header, rows)


def read_mu_csv(path, n_t: int, n_k: int, dt: float, dx: float) -> DisaggInFlow:
    cols = _read_rows(path, MU_HEADER, optional=("class_id",))
    group = (_ints(cols["class_id"], path, "class_id") if "class_id" in cols
             else np.zeros(len(cols["mass"]), dtype=np.int64))
    return DisaggInFlow(_ints(cols["tau_d"], path, "tau_d"), _ints(cols["kappa"], path, "kappa"),
                        _ints(cols["tau_a"], path, "tau_a"), group,
                        _floats(cols["mass"], path, "mass"), n_t, n_k, dt, dx)


# ------------------------------------------------------------------ series

def write_series_csv(series: NetworkSeries, path) -> Path:
    t = series.times
    return _write_rows(path, SERIES_HEADER, zip(
        t.tolist(), series.accumulation.tolist(), series.speed.tolist(),
        series.cum_inflow.tolist(), series.cum_outflow.tolist()))


def read_series_csv(path) -> NetworkSeries:
    cols = _read_rows(path, SERIES_HEADER)
    t = _floats(cols["t_s"], path, "t_s")
    dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
    return NetworkSeries(dt, *(_floats(cols[h], path, h) for h in SERIES_HEADER[1:]))


def emit_curves(mu: DisaggInFlow, zeta: CharacteristicDistance, g: Grid):
    """Cumulative departure and arrival fractions at every bin ``0..n_t``."""
    cum_dep, cum_arr = cumulative_flows(zeta, mu.marginal(zeta.n_t))
    return np.arange(len(cum_dep)) * g.dt, cum_dep, cum_arr


def write_curves_csv(t, cum_dep, cum_arr, path) -> Path:
    return _write_rows(path, CURVES_HEADER, zip(np.asarray(t).tolist(), np.asarray(cum_dep).tolist(),
                                                np.asarray(cum_arr).tolist()))


def read_curves_csv(path):
    cols = _read_rows(path, CURVES_HEADER)
    return tuple(_floats(cols[h], path, h) for h in CURVES_HEADER)


# ------------------------------------------------------------------ iteration log

def write_indicator_csv(report: EquilibriumReport, path) -> Path:
    n = len(report.indicator_history)
    return _write_rows(path, INDICATOR_HEADER, zip(
        range(1, n + 1), report.indicator_history.tolist(), report.avg_cost_history.tolist(),
        report.travel_time_history.tolist(), report.max_accumulation_history.tolist(),
        report.max_density_history.tolist()))


def read_indicator_csv(path) -> Dict[str, np.ndarray]:
    cols = _read_rows(path, INDICATOR_HEADER)
    out = {h: _floats(cols[h], path, h) for h in INDICATOR_HEADER[1:]}
    out["iteration"] = _ints(cols["iteration"], path, "iteration")
    return out


# ------------------------------------------------------------------ oracle

def write_arrivals_csv(departure_s, arrival_s, cost, path) -> Path:
    return _write_rows(path, ARRIVALS_HEADER, zip(
        range(len(departure_s)), np.asarray(departure_s).tolist(), np.asarray(arrival_s).tolist(),
        np.asarray(cost).tolist()))


def read_arrivals_csv(path) -> Dict[str, np.ndarray]:
    cols = _read_rows(path, ARRIVALS_HEADER)
    out = {h: _floats(cols[h], path, h) for h in ARRIVALS_HEADER[1:]}
    out["agent"] = _ints(cols["agent"], path, "agent")
    return out


# ------------------------------------------------------------------ comparison

def improvement_pct(mfg: float, msa: float) -> float:
    """Relative reduction achieved by the heuristic, in percent of the MSA value."""
    if msa == 0.0:
        return 0.0 if mfg == 0.0 else -math.inf
    return 100.0 * (msa - mfg) / msa


def compare_rows(mfg: EquilibriumReport, msa: EquilibriumReport):
    rows = []
    for r in (mfg, msa):
        rows.append((r.solver, r.iterations, r.final_indicator, r.avg_cost, r.total_travel_time_s))
    rows.append(("improvement_pct",) + tuple(
        improvement_pct(a, b) for a, b in zip(rows[0][1:], rows[1][1:])))
    return rows


def write_compare_csv(mfg: EquilibriumReport, msa: EquilibriumReport, path) -> Path:
    return _write_rows(path, COMPARE_HEADER, compare_rows(mfg, msa))


def read_compare_csv(path) -> Dict[str, Dict[str, float]]:
    cols = _read_rows(path, COMPARE_HEADER)
    out = {}
    for i, name in enumerate(cols["solver"]):
        out[name] = {h: float(cols[h][i]) for h in COMPARE_HEADER[1:]}
    return out
