"""Day-to-day successive-averages baseline.

Identical to the heuristic loop except that the entries offered for
rescheduling come in a seeded uniformly random order, so the 1/k quota is
spent on arbitrary trips rather than on the worst-off ones.
"""
from __future__ import annotations

from dataclasses import replace

from .equilibrium import SolverOptions, run_solver


def msa_solve(pi, v, prefs, g, opts: SolverOptions = SolverOptions()):
    """Random-order rescheduling with step ``1/k``; returns ``(mu, report)``."""
    return run_solver(pi, v, prefs, g, replace(opts, selection="uniform_random"))
