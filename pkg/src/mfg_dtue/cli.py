"""Command line front end: ``solve``, ``baseline``, ``compare`` and ``oracle``.

Exit status: 0 when the run converged, 2 when it stopped at ``max_iter``
without converging, 1 on any input, configuration or horizon error
(including a malformed command line).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io, oracle
from .baseline import msa_solve
from .bathtub import accumulation_series, network_series
from .config import load_scenario, validate_scenario
from .equilibrium import heuristic_solve
from .errors import DTUEError
from .scenarios import Scenario, build

log = logging.getLogger("mfg_dtue")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help="scenario file (INI) or the name of a built-in scenario")
    common.add_argument("--out-dir", required=True, type=Path)
    common.add_argument("--seed", type=int, help="solver seed (random orderings)")
    common.add_argument("--max-iter", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--dt", type=float, help="time bin (s)")
    common.add_argument("--dx", type=float, help="length bin (m); defaults to v_max * dt")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mfg-dtue", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", parents=[common], help="solve for the equilibrium")
    solve.add_argument("--solver", choices=("mfg", "msa"), default="mfg")
    sub.add_parser("baseline", parents=[common], help="same as solve --solver msa")
    sub.add_parser("compare", parents=[common], help="run both solvers on a matched budget")
    orc = sub.add_parser("oracle", parents=[common],
                         help="simulate agents drawn from the solved equilibrium")
    orc.add_argument("--agents", type=int, default=1000)
    orc.add_argument("--sample-seed", type=int, default=0)
    return p


def apply_overrides(sc: Scenario, args) -> Scenario:
    """Command-line flags take precedence over file and environment values."""
    if args.dt is not None or args.dx is not None:
        dt = args.dt if args.dt is not None else sc.grid.dt
        dx = args.dx if args.dx is not None else (
            sc.grid.dx if args.dt is None else sc.speed.v_max * dt)
        sc = build(sc.name, sc.profile, sc.speed, sc.prefs, dt, dx, sc.grid.horizon_s, sc.solver)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.max_iter is not None:
        changes["max_iter"] = args.max_iter
    if args.tol is not None:
        changes["tol"] = args.tol
    if changes:
        sc = replace(sc, solver=replace(sc.solver, **changes))
    validate_scenario(sc)
    return sc


def _solve(sc: Scenario, solver: str):
    fn = heuristic_solve if solver == "mfg" else msa_solve
    return fn(sc.demand, sc.speed, sc.prefs, sc.grid, sc.solver)


def write_run(out: Path, mu, report, sc: Scenario, suffix: str = "") -> None:
    """Report, mu dump, network series, cumulative curves and iteration log."""
    out.mkdir(parents=True, exist_ok=True)
    zeta = report.zeta
    p = mu.marginal(zeta.n_t)
    io.write_report(report, out / f"report{suffix}.txt", {"scenario": sc.name})
    io.write_mu_csv(mu, out / f"mu{suffix}.csv")
    io.write_series_csv(network_series(zeta, p, sc.speed), out / f"series{suffix}.csv")
    io.write_curves_csv(*io.emit_curves(mu, zeta, report.grid), out / f"curves{suffix}.csv")
    io.write_indicator_csv(report, out / f"indicator{suffix}.csv")


def cmd_solve(sc: Scenario, args, solver: str) -> int:
    mu, report = _solve(sc, solver)
    write_run(args.out_dir, mu, report, sc)
    log.info("%s: %d iterations, indicator %.3g, converged=%s", solver, report.iterations,
             report.final_indicator, report.converged)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_compare(sc: Scenario, args) -> int:
    out = args.out_dir
    mu_f, rep_f = _solve(sc, "mfg")
    mu_m, rep_m = _solve(sc, "msa")
    write_run(out, mu_f, rep_f, sc, "_mfg")
    write_run(out, mu_m, rep_m, sc, "_msa")
    io.write_compare_csv(rep_f, rep_m, out / "compare.csv")
    for row in io.compare_rows(rep_f, rep_m):
        print(",".join(io.fmt(v) for v in row))
    return EXIT_OK if rep_f.converged else EXIT_NOT_CONVERGED


def cmd_oracle(sc: Scenario, args) -> int:
    out = args.out_dir
    mu, report = _solve(sc, "mfg")
    write_run(out, mu, report, sc, "_meanfield")
    agents, idx = oracle.sample_agents(mu, args.agents, args.sample_seed, return_index=True)
    arrivals, series = oracle.micro_simulate(agents, sc.speed, sc.grid.dt)
    costs = np.empty(agents.n)
    for g in np.unique(mu.group[idx]).tolist():
        sel = mu.group[idx] == g
        costs[sel] = oracle.schedule_cost(agents.departure_s[sel], arrivals[sel],
                                          agents.desired_arrival_s[sel], sc.prefs.for_class(g),
                                          sc.grid.dt)
    io.write_series_csv(series, out / "series.csv")
    io.write_arrivals_csv(agents.departure_s, arrivals, costs, out / "arrivals.csv")
    mf = accumulation_series(report.zeta, mu.marginal(report.zeta.n_t))
    n = max(len(mf), len(series.accumulation))
    err = float(np.max(np.abs(np.pad(mf, (0, n - len(mf)))
                              - np.pad(series.accumulation, (0, n - len(series.accumulation))))))
    with open(out / "oracle.txt", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"agents={agents.n}\nsample_seed={args.sample_seed}\n"
                 f"sup_accumulation_error={io.fmt(err)}\n")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which is reserved for
        # non-convergence; a bad command line is an input error
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        sc = apply_overrides(load_scenario(args.scenario), args)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(sc, args, args.solver)
        if args.command == "baseline":
            return cmd_solve(sc, args, "msa")
        if args.command == "compare":
            return cmd_compare(sc, args)
        return cmd_oracle(sc, args)
    except (DTUEError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
