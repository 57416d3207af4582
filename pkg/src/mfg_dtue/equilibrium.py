"""Discrete mean-field equilibrium: best responses, mass transfer and the
cost-sorted rescheduling heuristic.

The state is a disaggregated in-flow ``mu(tau_d, kappa, tau_a)``: for every
demand cell ``(tau_a, kappa, class)`` the split of its mass over departure
bins.  One solver iteration marginalizes ``mu`` to ``p(tau_d, kappa)``,
solves the characteristic distance, and moves a ``1/k`` share of the demand
(the most expensive trips first) to their best departure bins.

Costs inside the solver are computed with preferences divided by ``alpha``
(``beta/alpha`` and ``gamma/alpha`` rounded to 13 significant digits) and
multiplied back by ``alpha`` for reporting.  This makes every ordering and
argmin independent of a common rescaling of the preferences.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np

from . import _kernels
from .bathtub import (CharacteristicDistance, Grid, InFlowGrid, SpeedFunction,
                      accumulation_series, arrival_times, solve_characteristic,
                      time_bin)
from .cost import (FOC_KINDS, PrefsTable, SchedulingPrefs, as_prefs_table,
                   classify_foc_many)
from .demand import DiscreteDemand
from .errors import ConfigurationError, HorizonOverflowError, ValidationError

log = logging.getLogger(__name__)

SELECTIONS = ("cost_sorted", "uniform_random", "raw_cost")
STEP_RULES = ("one_over_iter",)
_GAP_RTOL = 1e-12  # gaps below this (relative) count as ties


# --------------------------------------------------------------------------
# state containers


class DisaggInFlow:
    """Sparse ``mu[(tau_d, kappa, tau_a)]`` with the trip class kept alongside.

    Entries are stored sorted by ``(tau_a, kappa, group, tau_d)`` with
    duplicates merged, so two equal measures have identical arrays.
    """

    def __init__(self, td, k, ta, group, mass, n_t, n_k, dt, dx):
        td, k, ta, group = (np.asarray(a, dtype=np.int64) for a in (td, k, ta, group))
        mass = np.asarray(mass, dtype=float)
        if np.any(mass < 0):
            raise ValidationError("mu must be nonnegative")
        order = np.lexsort((td, group, k, ta))
        td, k, ta, group, mass = td[order], k[order], ta[order], group[order], mass[order]
        if len(td):
            new = np.ones(len(td), dtype=bool)
            new[1:] = ((td[1:] != td[:-1]) | (k[1:] != k[:-1]) | (ta[1:] != ta[:-1])
                       | (group[1:] != group[:-1]))
            seg = np.cumsum(new) - 1
            mass = np.bincount(seg, weights=mass)
            td, k, ta, group = td[new], k[new], ta[new], group[new]
            keep = mass > 0
            td, k, ta, group, mass = td[keep], k[keep], ta[keep], group[keep], mass[keep]
        for a in (td, k, ta, group, mass):
            a.setflags(write=False)
        self.td, self.k, self.ta, self.group, self.mass = td, k, ta, group, mass
        self.n_t, self.n_k = int(n_t), int(n_k)
        self.dt, self.dx = float(dt), float(dx)

    def __len__(self):
        return len(self.mass)

    @property
    def mu(self) -> Dict[Tuple[int, int, int], float]:
        out: Dict[Tuple[int, int, int], float] = {}
        for a, b, c, m in zip(self.td.tolist(), self.k.tolist(), self.ta.tolist(),
                              self.mass.tolist()):
            out[(a, b, c)] = out.get((a, b, c), 0.0) + m
        return out

    @property
    def total_mass(self):
        return math.fsum(self.mass)

    def marginal(self, n_t: Optional[int] = None) -> InFlowGrid:
        """``p(tau_d, kappa)``: sum over desired arrival bins (and classes)."""
        return InFlowGrid(self.td, self.k, self.mass, n_t or self.n_t, self.n_k, self.dt, self.dx)

    def demand_marginal(self) -> Dict[Tuple[int, int], float]:
        """``sum over tau_d``: should reproduce ``pi(tau_a, kappa)``."""
        out: Dict[Tuple[int, int], float] = {}
        for a, b, m in zip(self.ta.tolist(), self.k.tolist(), self.mass.tolist()):
            out[(a, b)] = out.get((a, b), 0.0) + m
        return out

    def equals(self, other: "DisaggInFlow") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("td", "k", "ta", "group", "mass"))

    def with_horizon(self, n_t: int) -> "DisaggInFlow":
        return DisaggInFlow(self.td, self.k, self.ta, self.group, self.mass, n_t, self.n_k,
                            self.dt, self.dx)


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 500
    tol: float = 5e-3
    epsilon: float = 0.0
    seed: int = 0
    selection: str = "cost_sorted"
    step_rule: str = "one_over_iter"
    horizon_cap_s: Optional[float] = None
    foc_tol: float = 0.1

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValidationError("max_iter must be at least 1")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if not self.epsilon >= 0:
            raise ValidationError("epsilon must be nonnegative")
        if self.selection not in SELECTIONS:
            raise ValidationError(f"unknown selection rule {self.selection!r}")
        if self.step_rule not in STEP_RULES:
            raise ValidationError(f"unknown step rule {self.step_rule!r}")


@dataclass
class EquilibriumReport:
    iterations: int
    indicator_history: np.ndarray
    final_indicator: float
    avg_cost: float
    total_travel_time_s: float
    epsilon_residual_mass: float
    converged: bool
    solver: str = "mfg"
    avg_cost_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    travel_time_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_accumulation_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_density_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_accumulation: float = 0.0
    foc_nonviolating_share: float = float("nan")
    regularity_constant: float = float("nan")
    speed_lipschitz: float = float("nan")
    horizon_s: float = float("nan")
    zeta: Optional[CharacteristicDistance] = field(default=None, repr=False)
    grid: Optional[Grid] = field(default=None, repr=False)

    def summary(self) -> Dict[str, object]:
        """Flat key/value view used by the text report."""
        return {
            "solver": self.solver,
            "iterations": self.iterations,
            "final_indicator": self.final_indicator,
            "avg_cost": self.avg_cost,
            "total_travel_time_s": self.total_travel_time_s,
            "epsilon_residual_mass": self.epsilon_residual_mass,
            "converged": self.converged,
            "max_accumulation": self.max_accumulation,
            "foc_nonviolating_share": self.foc_nonviolating_share,
            "max_inflow_density": (float(self.max_density_history[-1])
                                   if len(self.max_density_history) else 0.0),
            "regularity_constant": self.regularity_constant,
            "speed_lipschitz": self.speed_lipschitz,
            "horizon_s": self.horizon_s,
        }


# --------------------------------------------------------------------------
# per-cell cost machinery


def _round_ratio(x: float) -> float:
    return float(f"{x:.13g}")


class _Cells:
    """Demand cells ``(tau_a, kappa, group)`` with normalized preferences."""

    def __init__(self, ta, k, group, prefs: PrefsTable, dx: float):
        self.ta = np.asarray(ta, dtype=np.int64)
        self.k = np.asarray(k, dtype=np.int64)
        self.group = np.asarray(group, dtype=np.int64)
        self.dx = float(dx)
        self.x = (self.k + 0.5) * self.dx
        keys, per_group = [], {}
        for gid in np.unique(self.group).tolist():
            p = prefs.for_class(gid)
            key = (_round_ratio(p.beta / p.alpha), _round_ratio(p.gamma / p.alpha),
                   p.smooth_scale_s if p.penalty == "smooth" else 0.0)
            if key not in keys:
                keys.append(key)
            per_group[gid] = (keys.index(key), p.alpha)
        self.pref_keys = keys
        lookup_idx = {g: v[0] for g, v in per_group.items()}
        lookup_alpha = {g: v[1] for g, v in per_group.items()}
        self.pidx = np.array([lookup_idx[g] for g in self.group.tolist()], dtype=np.int64)
        self.alpha = np.array([lookup_alpha[g] for g in self.group.tolist()], dtype=float)
        kb = np.array([k_[0] for k_ in keys] or [0.0])
        kg = np.array([k_[1] for k_ in keys] or [0.0])
        ks = np.array([k_[2] for k_ in keys] or [0.0])
        self.nb, self.ng, self.smooth = kb[self.pidx], kg[self.pidx], ks[self.pidx]

    def __len__(self):
        return len(self.ta)


def _penalty(delay, nb, ng, smooth):
    """Normalized schedule penalty; ``smooth > 0`` selects the smooth shape."""
    out = nb * np.maximum(-delay, 0.0) + ng * np.maximum(delay, 0.0)
    m = smooth > 0
    if np.any(m):
        s, u = smooth[m], delay[m] / smooth[m]
        b, g = nb[m], ng[m]
        out = out.copy()
        out[m] = s * ((g - b) / 2.0 * u + (g + b) / math.pi
                      * (u * np.arctan(4.0 * u) - np.log1p(16.0 * u * u) / 8.0))
    return out


def _norm_costs(zeta: CharacteristicDistance, cells: _Cells, ci, td):
    """Normalized cost (cost / alpha) of cells ``ci`` departing in ``td``.

    Returns ``(cost, travel_time)``; both ``inf`` for trips not finishing.
    """
    ci = np.asarray(ci, dtype=np.int64)
    td = np.asarray(td, dtype=np.int64)
    arr = arrival_times(zeta, td, cells.x[ci])
    fin = np.isfinite(arr)
    safe = np.where(fin, arr, 0.0)
    travel = safe - td * zeta.dt
    delay = (time_bin(safe, zeta.dt) - cells.ta[ci]) * zeta.dt
    cost = travel + _penalty(delay, cells.nb[ci], cells.ng[ci], cells.smooth[ci])
    return np.where(fin, cost, np.inf), np.where(fin, travel, np.inf)


def _batch_best_response(zeta: CharacteristicDistance, cells: _Cells, window=None):
    """Best departure bin and normalized cost for every cell.

    For a fixed length the arrival bin ``b(tau_d)`` is nondecreasing in
    ``tau_d``, so candidates arriving early or on time form a prefix and
    late ones a suffix.  On the prefix the cost is
    ``T - beta*dt*b + beta*dt*tau_a`` and on the suffix
    ``T + gamma*dt*b - gamma*dt*tau_a``; running minima of the
    ``tau_a``-free parts answer every cell sharing that length at once.
    Cells with the smooth penalty are minimized exhaustively.
    """
    n_c = len(cells)
    n_t, dt = zeta.n_t, zeta.dt
    lo, hi = (0, n_t - 1) if window is None else window
    lo, hi = max(int(lo), 0), min(int(hi), n_t - 1)
    if hi < lo:
        raise ValidationError("empty departure window")
    best_td = np.full(n_c, -1, dtype=np.int64)

    smooth = cells.smooth > 0
    cand = np.arange(lo, hi + 1)
    for c in np.flatnonzero(smooth).tolist():
        cost, _ = _norm_costs(zeta, cells, np.full(len(cand), c), cand)
        best_td[c] = cand[int(np.argmin(cost))] if np.isfinite(cost.min()) else -1

    lin = np.flatnonzero(~smooth)
    if len(lin):
        n_p = max(len(cells.pref_keys), 1)
        pair = cells.k[lin] * n_p + cells.pidx[lin]
        uniq, rows = np.unique(pair, return_inverse=True)
        rows = np.asarray(rows).ravel()
        order = np.lexsort((cells.ta[lin], rows))
        cidx, rows = lin[order], rows[order]
        row_ptr = np.searchsorted(rows, np.arange(len(uniq) + 1)).astype(np.int64)
        first = row_ptr[:-1]
        out = np.empty(len(cidx), dtype=np.int64)
        _kernels.best_response_rows(zeta.zeta, float(dt), lo, hi, cells.x[cidx[first]],
                                    cells.nb[cidx[first]], cells.ng[cidx[first]], row_ptr,
                                    cells.ta[cidx], out)
        best_td[cidx] = out
    if np.any(best_td < 0):
        raise HorizonOverflowError("no departure of some cell finishes in the horizon")
    cost, _ = _norm_costs(zeta, cells, np.arange(n_c), best_td)
    return best_td, cost


def _gaps(cur, best):
    gap = cur - best
    tie = gap <= _GAP_RTOL * np.maximum(np.abs(best), 1.0)
    return np.where(tie, 0.0, gap)


# --------------------------------------------------------------------------
# public operations


def _cells_of_demand(pi: DiscreteDemand, prefs) -> _Cells:
    return _Cells(pi.cell_ta, pi.cell_k, pi.cell_group, as_prefs_table(prefs), pi.dx)


def free_flow_departure(tau_a, kappa, dx, dt, v_max):
    """Latest bin whose free-flow trip still arrives in bin ``tau_a``."""
    x = (np.asarray(kappa) + 0.5) * dx
    return np.ceil(np.asarray(tau_a) - x / (v_max * dt) - 1e-9).astype(np.int64)


def initial_solution(pi: DiscreteDemand, v: SpeedFunction, g: Optional[Grid] = None) -> DisaggInFlow:
    """Free-flow back-shift: each cell departs so that it would arrive in its
    desired bin at ``v_max``; longer trips leave earlier."""
    n_t = g.n_t if g is not None else pi.n_ta
    td = free_flow_departure(pi.cell_ta, pi.cell_k, pi.dx, pi.dt, v.v_max)
    if np.any(td < 0):
        log.warning("%d demand cells cannot arrive on time from t=0; departing at bin 0",
                    int(np.sum(td < 0)))
        td = np.maximum(td, 0)
    return DisaggInFlow(td, pi.cell_k, pi.cell_ta, pi.cell_group, pi.cell_mass,
                        n_t, pi.n_k, pi.dt, pi.dx)


def best_response(zeta: CharacteristicDistance, kappa: int, tau_a: int, prefs: SchedulingPrefs,
                  window=None, dx: float = 1.0):
    """Exhaustive minimization of the trip cost over departure bins.

    Returns ``(tau_d_star, cost_star)``; ties go to the earliest bin.
    """
    n_t = zeta.n_t
    lo, hi = (0, n_t - 1) if window is None else window
    if lo < 0 or hi >= n_t or hi < lo:
        raise ValidationError(f"window {window} outside the grid [0, {n_t - 1}]")
    cells = _Cells([tau_a], [kappa], [0], as_prefs_table(prefs), dx)
    cand = np.arange(lo, hi + 1)
    cost, _ = _norm_costs(zeta, cells, np.zeros(len(cand), dtype=np.int64), cand)
    j = int(np.argmin(cost))
    if not np.isfinite(cost[j]):
        raise HorizonOverflowError("every candidate departure overflows the horizon")
    return int(cand[j]), float(cost[j] * prefs.alpha)


def best_responses(zeta: CharacteristicDistance, pi: DiscreteDemand, prefs, window=None):
    """Best departure bin and cost for every demand cell of ``pi``."""
    cells = _cells_of_demand(pi, prefs)
    td, cost = _batch_best_response(zeta, cells, window)
    return td, cost * cells.alpha


def demand_transfer(D, pi: DiscreteDemand, n_t: Optional[int] = None) -> DisaggInFlow:
    """Move each demand cell's whole mass to its assigned departure bin.

    ``D`` is a mapping ``(tau_a, kappa) -> tau_d``, a callable of the same
    signature, or an array aligned with ``pi``'s cells.
    """
    if isinstance(D, Mapping):
        td = [D[(a, b)] for a, b in zip(pi.cell_ta.tolist(), pi.cell_k.tolist())]
    elif callable(D):
        td = [D(a, b) for a, b in zip(pi.cell_ta.tolist(), pi.cell_k.tolist())]
    else:
        td = np.asarray(D, dtype=np.int64)
        if td.shape != pi.cell_ta.shape:
            raise ValidationError("decision array does not match the demand cells")
    td = np.asarray(td, dtype=np.int64)
    if np.any(td < 0):
        raise ValidationError("negative departure bin")
    n = max(n_t or 0, pi.n_ta, int(td.max()) + 1 if len(td) else 0)
    return DisaggInFlow(td, pi.cell_k, pi.cell_ta, pi.cell_group, pi.cell_mass,
                        n, pi.n_k, pi.dt, pi.dx)


def _evaluate_mu(mu: DisaggInFlow, zeta: CharacteristicDistance, prefs):
    key = np.stack([mu.ta, mu.k, mu.group])
    uniq, inv = np.unique(key, axis=1, return_inverse=True)
    inv = np.asarray(inv).ravel()
    cells = _Cells(uniq[0], uniq[1], uniq[2], as_prefs_table(prefs), mu.dx)
    _, best = _batch_best_response(zeta, cells)
    cur, _ = _norm_costs(zeta, cells, inv, mu.td)
    return cells, inv, cur, best


def convergence_indicator(mu: DisaggInFlow, zeta: CharacteristicDistance, prefs) -> float:
    """Mass-weighted relative gap between current and best-response costs."""
    _, inv, cur, best = _evaluate_mu(mu, zeta, prefs)
    return float(np.sum(mu.mass * _gaps(cur, best[inv]) / np.maximum(best[inv], 1e-9)))


def epsilon_mfe_check(mu: DisaggInFlow, zeta: CharacteristicDistance, prefs,
                      epsilon: float) -> float:
    """Mass whose cost exceeds its best response by more than ``epsilon``."""
    cells, inv, cur, best = _evaluate_mu(mu, zeta, prefs)
    gap = _gaps(cur, best[inv]) * cells.alpha[inv]
    return float(math.fsum(mu.mass[(gap > 0) & (gap > epsilon)]))


def foc_nonviolating_share(mu: DisaggInFlow, zeta: CharacteristicDistance, prefs,
                           tol: float = 0.1) -> float:
    """Share of departing mass that satisfies the speed-ratio band within ``tol``."""
    table = as_prefs_table(prefs)
    ok = np.zeros(len(mu), dtype=bool)
    for gid in np.unique(mu.group).tolist():
        m = mu.group == gid
        kind, _, _ = classify_foc_many(zeta, mu.td[m], (mu.k[m] + 0.5) * mu.dx, mu.ta[m],
                                       table.for_class(gid), tol)
        ok[m] = kind != FOC_KINDS.index("violating")
    return float(math.fsum(mu.mass[ok]) / math.fsum(mu.mass))


# --------------------------------------------------------------------------
# the solver loop


class _Evaluation:
    """Everything derived from the current mu: zeta, costs, best responses."""

    def __init__(self, zeta, p, cur, travel, best_td, best):
        self.zeta, self.p = zeta, p
        self.cur, self.travel = cur, travel
        self.best_td, self.best = best_td, best


def _solve_drained_mu(e_td, k_of_entry, e_mass, v, g, n_k, cap):
    while True:
        p = InFlowGrid(e_td, k_of_entry, e_mass, g.n_t, n_k, g.dt, g.dx)
        if len(p.td) and p.td.max() >= g.n_t:
            zeta = None
        else:
            zeta = solve_characteristic(p, v, g)
            if zeta.residual_mass == 0.0:
                return zeta, p, g
        if g.horizon_s >= cap:
            raise HorizonOverflowError(
                f"demand does not drain within the horizon cap {cap:.0f} s",
                unfinished_mass=zeta.residual_mass if zeta is not None else float("nan"))
        new_h = min(g.horizon_s * 2.0, cap)
        log.info("extending horizon from %.0f s to %.0f s", g.horizon_s, new_h)
        g = Grid(g.dt, g.dx, new_h, g.n_k)


def run_solver(pi: DiscreteDemand, v: SpeedFunction, prefs, g: Grid, opts: SolverOptions,
               mu0: Optional[DisaggInFlow] = None, callback: Optional[Callable] = None):
    """Shared loop behind :func:`heuristic_solve` and the MSA baseline.

    ``opts.selection`` decides the order in which entries of ``mu`` are
    picked for rescheduling.  ``callback(k, mu, evaluation)`` is invoked after
    every iteration when given.
    """
    g.check_cfl(v)
    if pi.dt != g.dt or pi.dx != g.dx:
        raise ConfigurationError("demand grid resolution differs from the solver grid")
    if pi.n_k > g.n_k:
        g = Grid(g.dt, g.dx, g.horizon_s, pi.n_k)
    if pi.n_cells and pi.cell_ta.max() >= g.n_t:
        raise ConfigurationError("horizon ends before the latest desired arrival")
    table = as_prefs_table(prefs)
    cells = _cells_of_demand(pi, table)
    cap = opts.horizon_cap_s if opts.horizon_cap_s is not None else 4.0 * g.horizon_s
    cap = max(cap, g.horizon_s)
    n_k = g.n_k
    rng = np.random.default_rng(opts.seed)

    start = mu0 if mu0 is not None else initial_solution(pi, v, g)
    # entries: (cell index, tau_d, mass); map mu0 rows to cells of pi
    cell_key = {(a, b, c): i for i, (a, b, c) in enumerate(zip(
        pi.cell_ta.tolist(), pi.cell_k.tolist(), pi.cell_group.tolist()))}
    e_cell = np.array([cell_key[(a, b, c)] for a, b, c in zip(
        start.ta.tolist(), start.k.tolist(), start.group.tolist())], dtype=np.int64)
    e_td = start.td.astype(np.int64)
    e_mass = start.mass.astype(float)
    total = math.fsum(pi.cell_mass)

    def evaluate(g):
        zeta, p, g = _solve_drained_mu(e_td, cells.k[e_cell], e_mass, v, g, n_k, cap)
        cur, travel = _norm_costs(zeta, cells, e_cell, e_td)
        best_td, best = _batch_best_response(zeta, cells)
        return _Evaluation(zeta, p, cur, travel, best_td, best), g

    def indicator(ev):
        b = ev.best[e_cell]
        return float(np.sum(e_mass * _gaps(ev.cur, b) / np.maximum(b, 1e-9)))

    ev, g = evaluate(g)
    hist, cost_hist, tt_hist, acc_hist, dens_hist = [], [], [], [], []
    converged = False
    k = 0
    for k in range(1, opts.max_iter + 1):
        quota = total / k
        order = _selection_order(opts.selection, ev, e_cell, e_td, rng)
        cm = np.cumsum(e_mass[order])
        j = int(np.searchsorted(cm, quota, side="left"))
        take = np.zeros(len(e_mass))
        if j >= len(order):
            take[order] = e_mass[order]
        else:
            take[order[:j]] = e_mass[order[:j]]
            prev = cm[j - 1] if j > 0 else 0.0
            take[order[j]] = min(quota - prev, e_mass[order[j]])
            # a take within rounding of the whole entry moves all of it, so no
            # dust of order 1e-17 is left behind at the old departure
            if e_mass[order[j]] - take[order[j]] <= 1e-12 * total:
                take[order[j]] = e_mass[order[j]]
        target = ev.best_td[e_cell]
        move = (take > 0) & (target != e_td)
        if np.any(move):
            full = move & (take >= e_mass)
            rest = np.where(full, 0.0, e_mass - np.where(move, take, 0.0))
            n_cell = np.concatenate([e_cell, e_cell[move]])
            n_td = np.concatenate([e_td, target[move]])
            n_mass = np.concatenate([rest, take[move]])
            key = n_cell * (1 << 31) + n_td
            uniq, inv = np.unique(key, return_inverse=True)
            summed = np.bincount(inv, weights=n_mass, minlength=len(uniq))
            keep = summed > 0
            e_cell = (uniq >> 31)[keep].astype(np.int64)
            e_td = (uniq & ((1 << 31) - 1))[keep].astype(np.int64)
            e_mass = summed[keep]
        ev, g = evaluate(g)
        ind = indicator(ev)
        hist.append(ind)
        alpha_e = cells.alpha[e_cell]
        cost_hist.append(float(np.dot(e_mass, ev.cur * alpha_e)))
        tt_hist.append(float(pi.n_trips * np.dot(e_mass, ev.travel)))
        acc = _accumulation_max(ev)
        acc_hist.append(acc)
        dens_hist.append(ev.p.max_density())
        if callback is not None:
            callback(k, _to_mu(pi, e_cell, e_td, e_mass, g), ev)
        if ind < opts.tol:
            converged = True
            break

    mu = _to_mu(pi, e_cell, e_td, e_mass, g)
    gap = _gaps(ev.cur, ev.best[e_cell]) * cells.alpha[e_cell]
    eps_mass = float(math.fsum(e_mass[(gap > 0) & (gap > opts.epsilon)]))
    report = EquilibriumReport(
        iterations=k,
        indicator_history=np.array(hist),
        final_indicator=hist[-1],
        avg_cost=cost_hist[-1],
        total_travel_time_s=tt_hist[-1],
        epsilon_residual_mass=min(max(eps_mass, 0.0), 1.0),
        converged=converged,
        solver="msa" if opts.selection == "uniform_random" else "mfg",
        avg_cost_history=np.array(cost_hist),
        travel_time_history=np.array(tt_hist),
        max_accumulation_history=np.array(acc_hist),
        max_density_history=np.array(dens_hist),
        max_accumulation=acc_hist[-1],
        foc_nonviolating_share=foc_nonviolating_share(mu, ev.zeta, table, opts.foc_tol),
        regularity_constant=pi.regularity_constant(),
        speed_lipschitz=v.lipschitz(),
        horizon_s=g.horizon_s,
        zeta=ev.zeta,
        grid=g,
    )
    return mu, report


def _selection_order(selection, ev: _Evaluation, e_cell, e_td, rng):
    """Order in which mu entries are offered for rescheduling.

    ``cost_sorted`` ranks entries by their relative excess cost over the best
    response, largest first.  Ranking by raw cost (``raw_cost``) keeps
    choosing long trips that already sit at their best response and stalls.
    """
    if selection == "uniform_random":
        return rng.permutation(len(e_cell))
    if selection == "raw_cost":
        return np.lexsort((e_td, e_cell, -ev.cur))
    best = ev.best[e_cell]
    rel = _gaps(ev.cur, best) / np.maximum(best, 1e-9)
    return np.lexsort((e_td, e_cell, -rel))


def _accumulation_max(ev: _Evaluation) -> float:
    return float(accumulation_series(ev.zeta, ev.p).max())


def _to_mu(pi, e_cell, e_td, e_mass, g):
    return DisaggInFlow(e_td, pi.cell_k[e_cell], pi.cell_ta[e_cell], pi.cell_group[e_cell],
                        e_mass, g.n_t, g.n_k, g.dt, g.dx)


def heuristic_solve(pi: DiscreteDemand, v: SpeedFunction, prefs, g: Grid,
                    opts: SolverOptions = SolverOptions()):
    """Cost-sorted rescheduling with step ``1/k``; returns ``(mu, report)``."""
    if opts.selection == "uniform_random":
        opts = replace(opts, selection="cost_sorted")
    return run_solver(pi, v, prefs, g, opts)

