"""Finite-n micro-simulation of the departure-time game.

This is a deliberately separate implementation used to validate the
mean-field solver: agents carry their own remaining distance, which every
time step shrinks by ``V(active agents / n) * dt``.  Apart from the speed
function nothing is shared with the solver path, including the cost formula.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bathtub import NetworkSeries, SpeedFunction
from .errors import HorizonOverflowError, ValidationError


@dataclass(frozen=True)
class AgentList:
    """Agents of equal weight ``1/n``: departure (s), length (m), desired arrival (s)."""

    departure_s: np.ndarray
    length_m: np.ndarray
    desired_arrival_s: np.ndarray

    def __post_init__(self):
        arrays = [np.array(a, dtype=float, copy=True) for a in
                  (self.departure_s, self.length_m, self.desired_arrival_s)]
        if not len(arrays[0]) == len(arrays[1]) == len(arrays[2]):
            raise ValidationError("agent arrays must have equal length")
        if len(arrays[0]) == 0:
            raise ValidationError("agent list is empty")
        if np.any(arrays[1] <= 0):
            raise ValidationError("agent trip lengths must be positive")
        if np.any(arrays[0] < 0):
            raise ValidationError("agent departures must be nonnegative")
        for name, a in zip(("departure_s", "length_m", "desired_arrival_s"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return len(self.departure_s)

    def moved(self, i: int, departure_s: float) -> "AgentList":
        dep = self.departure_s.copy()
        dep[i] = departure_s
        return AgentList(dep, self.length_m, self.desired_arrival_s)


@dataclass(frozen=True)
class _Run:
    arrivals: np.ndarray
    probe_arrivals: np.ndarray
    series: NetworkSeries


def _simulate(agents: AgentList, v: SpeedFunction, dt: float, probe_dep, probe_len,
              horizon_cap_s: Optional[float]) -> _Run:
    if not dt > 0:
        raise ValidationError("dt must be positive")
    n = agents.n
    dep = np.concatenate([agents.departure_s, np.asarray(probe_dep, dtype=float)])
    length = np.concatenate([agents.length_m, np.asarray(probe_len, dtype=float)])
    counts = np.r_[np.ones(n, dtype=bool), np.zeros(len(dep) - n, dtype=bool)]
    # agents start moving at the first step boundary at or after departure
    start_step = np.ceil(dep / dt - 1e-9).astype(np.int64)
    order = np.argsort(start_step, kind="stable")
    if horizon_cap_s is None:
        horizon_cap_s = dep.max() + 4.0 * length.max() / v.v_min + 10 * dt
    max_steps = int(math.ceil(horizon_cap_s / dt))

    rem = length.copy()
    arrival = np.full(len(dep), np.inf)
    active = np.zeros(0, dtype=np.int64)
    ptr = 0
    acc, spd, cin, cout = [], [], [], []
    departed = arrived = 0
    step = 0
    while True:
        while ptr < len(order) and start_step[order[ptr]] <= step:
            j = order[ptr]
            active = np.append(active, j)
            departed += int(counts[j])
            ptr += 1
        n_act = int(np.count_nonzero(counts[active]))
        acc.append(n_act / n)
        cin.append(departed / n)
        cout.append(arrived / n)
        if ptr == len(order) and len(active) == 0:
            break
        if step >= max_steps:
            raise HorizonOverflowError(
                f"{len(active)} agents still travelling at the horizon cap {horizon_cap_s:.0f} s",
                unfinished_mass=n_act / n)
        speed = v.scalar(n_act / n)
        spd.append(speed)
        if len(active):
            before = rem[active]
            after = before - speed * dt
            rem[active] = after
            done = after <= 0.0
            if np.any(done):
                idx = active[done]
                arrival[idx] = step * dt + before[done] / speed
                arrived += int(np.count_nonzero(counts[idx]))
                active = active[~done]
        step += 1
    spd.append(v.scalar(acc[-1]))
    series = NetworkSeries(dt, np.array(acc), np.array(spd), np.array(cin), np.array(cout))
    return _Run(arrival[:n], arrival[n:], series)


def micro_simulate(agents: AgentList, v: SpeedFunction, dt: float,
                   horizon_cap_s: Optional[float] = None):
    """Simulate the agents; returns ``(arrival times, NetworkSeries)``.

    Speed during a step is ``V(active count / n)``; with one agent that is
    ``V(1)``.
    """
    run = _simulate(agents, v, dt, [], [], horizon_cap_s)
    return run.arrivals, run.series


def probe_arrivals(agents: AgentList, v: SpeedFunction, dt: float, departures_s: Sequence[float],
                   lengths_m: Sequence[float], horizon_cap_s: Optional[float] = None):
    """Arrival times of zero-weight probe trips travelling among ``agents``."""
    run = _simulate(agents, v, dt, departures_s, lengths_m, horizon_cap_s)
    return run.probe_arrivals


def schedule_cost(departure_s, arrival_s, desired_arrival_s, prefs, dt: float):
    """alpha * travel time + beta * earliness + gamma * lateness, in whole bins."""
    departure_s = np.asarray(departure_s, dtype=float)
    arrival_s = np.asarray(arrival_s, dtype=float)
    got = np.floor(arrival_s / dt + 1e-9)
    want = np.floor(np.asarray(desired_arrival_s, dtype=float) / dt + 1e-9)
    early = np.maximum(want - got, 0.0) * dt
    late = np.maximum(got - want, 0.0) * dt
    return prefs.alpha * (arrival_s - departure_s) + prefs.beta * early + prefs.gamma * late


def _types(agents: AgentList):
    keys = np.stack([agents.departure_s, agents.length_m, agents.desired_arrival_s], axis=1)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def nash_gap(agents: AgentList, v: SpeedFunction, prefs, dt: float,
             candidates: Optional[Sequence[float]] = None, mode: str = "finite",
             horizon_cap_s: Optional[float] = None) -> float:
    """Largest cost reduction any agent obtains by changing its departure alone.

    ``mode='finite'`` re-simulates the population with the agent moved to
    each candidate departure (default: every bin from 0 to the last
    departure plus the longest free-flow trip).  ``mode='probe'`` treats the
    deviator as infinitesimal: a zero-weight probe samples every candidate
    against the unchanged population, which is the deviation notion of the
    mean-field game.  Agents with identical attributes are evaluated once.
    """
    if mode not in ("finite", "probe"):
        raise ValidationError(f"unknown nash_gap mode {mode!r}")
    if candidates is None:
        last = agents.departure_s.max() + agents.length_m.max() / v.v_max
        candidates = np.arange(0, int(math.ceil(last / dt)) + 1) * dt
    candidates = np.asarray(candidates, dtype=float)
    types = _types(agents)
    if mode == "probe":
        # one run carries a probe for every (type, candidate) pair
        m = len(candidates)
        arr = probe_arrivals(agents, v, dt, np.tile(candidates, len(types)),
                             np.repeat(agents.length_m[types], m), horizon_cap_s).reshape(-1, m)
        gap = 0.0
        for row, i in enumerate(types.tolist()):
            alt = schedule_cost(candidates, arr[row], agents.desired_arrival_s[i], prefs, dt)
            hit = np.flatnonzero(candidates == agents.departure_s[i])
            if len(hit):
                own = alt[hit[0]]
            else:
                own = schedule_cost(agents.departure_s[i], probe_arrivals(
                    agents, v, dt, [agents.departure_s[i]], [agents.length_m[i]], horizon_cap_s)[0],
                    agents.desired_arrival_s[i], prefs, dt)
            gap = max(gap, float(own - np.min(alt)))
        return max(gap, 0.0)
    arrivals, _ = micro_simulate(agents, v, dt, horizon_cap_s)
    base = schedule_cost(agents.departure_s, arrivals, agents.desired_arrival_s, prefs, dt)
    gap = 0.0
    for i in types.tolist():
        alt = np.empty(len(candidates))
        for c, d in enumerate(candidates.tolist()):
            arr, _ = micro_simulate(agents.moved(i, d), v, dt, horizon_cap_s)
            alt[c] = schedule_cost(d, arr[i], agents.desired_arrival_s[i], prefs, dt)
        gap = max(gap, float(base[i] - np.min(alt)))
    return max(gap, 0.0)


@dataclass(frozen=True)
class ToyCell:
    """One demand cell of a brute-force instance: all its agents travel together."""

    length_m: float
    desired_arrival_s: float
    agents: int


@dataclass(frozen=True)
class ProfileCheck:
    departures: tuple  # departure bin per cell
    gaps: tuple  # best unilateral (probe) improvement per cell
    best_bins: tuple  # earliest cost-minimizing bin per cell

    @property
    def gap(self) -> float:
        return max(self.gaps)


def check_profile(cells: Sequence[ToyCell], departures: Sequence[int], v: SpeedFunction, prefs,
                  dt: float, n_bins: int, tie_tol: float = 1e-9) -> ProfileCheck:
    """Deviation gaps of every cell when cell ``c`` departs in bin ``departures[c]``.

    Deviations are priced with zero-weight probes over bins ``0..n_bins-1``;
    costs within ``tie_tol`` of the minimum count as ties and the earliest
    such bin is reported as the best response.
    """
    counts = [c.agents for c in cells]
    agents = AgentList(np.repeat(np.asarray(departures, dtype=float) * dt, counts),
                       np.repeat([c.length_m for c in cells], counts),
                       np.repeat([c.desired_arrival_s for c in cells], counts))
    cand = np.arange(n_bins) * dt
    arr = probe_arrivals(agents, v, dt, np.tile(cand, len(cells)),
                         np.repeat([c.length_m for c in cells], n_bins)).reshape(len(cells), n_bins)
    gaps, best = [], []
    for c, cell in enumerate(cells):
        cost = schedule_cost(cand, arr[c], cell.desired_arrival_s, prefs, dt)
        low = float(np.min(cost))
        gaps.append(max(float(cost[departures[c]]) - low, 0.0))
        best.append(int(np.flatnonzero(cost <= low + tie_tol)[0]))
    return ProfileCheck(tuple(int(d) for d in departures), tuple(gaps), tuple(best))


def enumerate_equilibria(cells: Sequence[ToyCell], windows: Sequence[Sequence[int]],
                         v: SpeedFunction, prefs, dt: float, n_bins: int,
                         tol: float = 1e-9):
    """Exhaustive search over joint departure profiles (one bin per cell).

    Returns the checks of every profile in ``product(*windows)`` whose
    largest deviation gap is at most ``tol``, in lexicographic order.
    """
    found = []
    for prof in itertools.product(*windows):
        chk = check_profile(cells, prof, v, prefs, dt, n_bins)
        if chk.gap <= tol:
            found.append(chk)
    return found


def agents_from_mu(mu, n: int) -> AgentList:
    """Deterministic apportionment of ``n`` agents to the entries of ``mu``.

    Each entry gets ``floor(mass * n)`` agents; leftovers go to the largest
    remainders (earliest entry first on ties).  Lengths are bin midpoints
    and desired arrivals the start of the desired bin.
    """
    mass = np.asarray(mu.mass, dtype=float)
    share = mass / mass.sum() * n
    count = np.floor(share + 1e-9).astype(np.int64)
    short = n - int(count.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(share)), -(share - count)))
        count[order[:short]] += 1
    return _expand(mu, np.repeat(np.arange(len(mass)), count))


def sample_agents(mu, n: int, seed: int, return_index: bool = False):
    """``n`` i.i.d. agents drawn from ``mu`` (seeded).

    With ``return_index`` the entry of ``mu`` behind every agent is
    returned as well.
    """
    rng = np.random.default_rng(seed)
    p = np.asarray(mu.mass, dtype=float)
    idx = np.sort(rng.choice(len(p), size=n, p=p / p.sum()))
    agents = _expand(mu, idx)
    return (agents, idx) if return_index else agents


def _expand(mu, idx) -> AgentList:
    return AgentList(mu.td[idx] * mu.dt, (mu.k[idx] + 0.5) * mu.dx, mu.ta[idx] * mu.dt)
