"""Built-in scenarios used by the tests, the CLI and the README examples.

Every builder returns a :class:`Scenario` whose demand is already
discretized on the scenario grid.  Random elements are seeded.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence

import numpy as np

from .bathtub import Grid, SpeedFunction
from .cost import PrefsTable, SchedulingPrefs
from .demand import (DemandProfile, DiscreteDemand, TripClass, discretize_demand,
                     synthesize_demand)
from .equilibrium import SolverOptions


@dataclass(frozen=True)
class Scenario:
    name: str
    profile: DemandProfile
    demand: DiscreteDemand
    speed: SpeedFunction
    prefs: PrefsTable
    grid: Grid
    solver: SolverOptions = field(default_factory=SolverOptions)

    def with_prefs(self, prefs) -> "Scenario":
        if isinstance(prefs, SchedulingPrefs):
            prefs = PrefsTable(prefs)
        return replace(self, prefs=prefs)

    def with_profile(self, profile: DemandProfile) -> "Scenario":
        return replace(self, profile=profile,
                       demand=discretize_demand(profile, self.grid.dt, self.grid.dx,
                                                n_k=self.grid.n_k))


def build(name, profile: DemandProfile, speed: SpeedFunction, prefs, dt: float, dx: float,
          horizon_s: float, solver: Optional[SolverOptions] = None,
          n_k: Optional[int] = None) -> Scenario:
    """Discretize ``profile`` and bundle everything a solver run needs."""
    if isinstance(prefs, SchedulingPrefs):
        prefs = PrefsTable(prefs)
    n_k = n_k or int(np.floor(profile.x_max / dx)) + 1
    grid = Grid(dt, dx, horizon_s, n_k)
    demand = discretize_demand(profile, dt, dx, n_k=n_k)
    return Scenario(name, profile, demand, speed, prefs, grid, solver or SolverOptions())


# ---------------------------------------------------------------- small ones


def pulse_scenario(n_trips: int = 200, seed: int = 0) -> Scenario:
    """Everyone wants to arrive at t = 600 s; lengths 100 to 1500 m."""
    rng = np.random.default_rng(seed)
    lengths = rng.uniform(100.0, 1500.0, n_trips)
    profile = DemandProfile.from_trips(lengths, np.full(n_trips, 600.0), n_trips=n_trips)
    speed = SpeedFunction("greenshields_linear", 10.0, 1.0, 0.5)
    return build("pulse", profile, speed, SchedulingPrefs(1.0, 0.5, 2.0), 1.0, 10.0, 1200.0)


def two_pulse_scenario(n_trips: int = 300, seed: int = 0) -> Scenario:
    """Two desired arrival times 15 minutes apart."""
    rng = np.random.default_rng(seed)
    lengths = rng.uniform(100.0, 2000.0, n_trips)
    arrivals = np.where(rng.random(n_trips) < 0.5, 900.0, 1800.0)
    profile = DemandProfile.from_trips(lengths, arrivals, n_trips=n_trips)
    speed = SpeedFunction("quadratic", 10.0, 1.5, 0.3)
    return build("two_pulse", profile, speed, SchedulingPrefs(1.0, 0.5, 2.0), 1.0, 10.0, 2400.0)


def random_scenario(seed: int = 0, n_trips: int = 400) -> Scenario:
    """Random lengths and desired arrivals, table speed function."""
    rng = np.random.default_rng(seed)
    lengths = rng.uniform(50.0, 2500.0, n_trips)
    arrivals = rng.uniform(600.0, 2400.0, n_trips)
    weights = rng.uniform(0.5, 1.5, n_trips)
    profile = DemandProfile.from_trips(lengths, arrivals, weights / weights.sum(),
                                       n_trips=n_trips)
    speed = SpeedFunction("table", 12.0, 2.0,
                          table=((0.0, 12.0), (0.05, 11.0), (0.15, 7.0), (0.3, 3.0), (0.5, 2.0)))
    return build("random", profile, speed, SchedulingPrefs(1.0, 0.6, 2.5), 1.0, 12.0, 3600.0)


# ---------------------------------------------------------------- benchmark

BENCHMARK_TRIPS = 2000


def benchmark_scenario(n_trips: int = BENCHMARK_TRIPS, seed: int = 2024) -> Scenario:
    """Single-region morning commute with heterogeneous trip lengths.

    Trip lengths are uniform on (0, 3000] m, desired arrivals uniform over a
    20-minute window, the mean speed is a quadratic function of the active
    fraction, and scheduling costs are alpha=1, beta=0.5, gamma=2.
    """
    rng = np.random.default_rng(seed)
    lengths = 3000.0 * (1.0 - rng.random(n_trips))  # (0, 3000]
    arrivals = rng.uniform(2400.0, 3600.0, n_trips)
    profile = DemandProfile.from_trips(lengths, arrivals, n_trips=n_trips)
    speed = SpeedFunction("quadratic", 10.0, 2.0, 0.6)
    return build("benchmark", profile, speed, SchedulingPrefs(1.0, 0.5, 2.0), 1.0, 10.0, 5400.0,
                 SolverOptions(max_iter=500, tol=1e-3), n_k=300)


# ---------------------------------------------------------------- Lyon North

LYON_START_S = 6.5 * 3600.0  # horizon starts at 6:30
LYON_HORIZON_S = 15012.0  # 4.17 h
LYON_VMAX = 13.28
LYON_TRIPS = 11235
LYON_LENGTH_SPREAD_M = 2000.0

# share, trips, mean length (km), window start/end (h:mm), desired arrival
_LYON_TABLE = (
    (0.1373, 1543, 2.53, "6:30", "7:15", "7:00"),
    (0.1384, 1555, 2.58, "7:15", "7:45", "7:30"),
    (0.1542, 1732, 2.55, "7:45", "8:15", "8:00"),
    (0.1830, 2056, 2.65, "8:15", "8:45", "8:30"),
    (0.1505, 1691, 2.63, "8:45", "9:15", "9:00"),
    (0.1182, 1328, 2.70, "9:15", "9:45", "9:30"),
    (0.1184, 1330, 2.63, "9:45", "10:30", "10:30"),
)


def _clock(hm: str) -> float:
    h, m = hm.split(":")
    return int(h) * 3600.0 + int(m) * 60.0 - LYON_START_S


def lyon_classes(spread_m: float = LYON_LENGTH_SPREAD_M) -> Sequence[TripClass]:
    """The seven interior-trip classes of the Lyon North morning peak."""
    return tuple(
        TripClass(share=s, mean_trip_length=km * 1000.0, trip_length_spread=spread_m,
                  desired_arrival=_clock(ta), arrival_window=(_clock(w0), _clock(w1)),
                  count_hint=n)
        for s, n, km, w0, w1, ta in _LYON_TABLE
    )


def lyon_speed() -> SpeedFunction:
    return SpeedFunction("greenshields_linear", LYON_VMAX, 1.5, 0.25)


def lyon_scenario(total_trips: int = LYON_TRIPS, seed: int = 7, dt: float = 1.0,
                  spread_m: float = LYON_LENGTH_SPREAD_M, horizon_s: float = LYON_HORIZON_S,
                  name: str = "lyon") -> Scenario:
    """Synthetic Lyon North demand from published class statistics, k = 5 preferences."""
    profile = synthesize_demand(lyon_classes(spread_m), total_trips, seed)
    dx = LYON_VMAX * dt
    return build(name, profile, lyon_speed(), SchedulingPrefs.from_k(5), dt, dx, horizon_s,
                 SolverOptions(max_iter=300, tol=1e-2, horizon_cap_s=4 * horizon_s))


def lyon_small_scenario(seed: int = 7) -> Scenario:
    """Lyon classes with 1,000 trips on a 4 s grid (fast tests)."""
    return lyon_scenario(total_trips=1000, seed=seed, dt=4.0, name="lyon_small")


# ---------------------------------------------------------------- Nash toys

NASH_TOY_AGENTS = 20  # every toy cell mass is a multiple of 1/20

# lengths (m), desired arrivals (s), cell masses, v_min, capacity
_NASH_TOYS = {
    "toy_three_cells_a": ((1250.0, 550.0, 250.0), (190.0, 170.0, 260.0), (0.5, 0.3, 0.2), 7.0, 0.8),
    "toy_three_cells_b": ((650.0, 1250.0, 350.0), (170.0, 200.0, 250.0), (0.5, 0.3, 0.2), 6.0, 1.0),
    # the only equilibrium keeps one cell on a later bin that ties with its
    # earliest best response
    "toy_tied_best_response": ((550.0, 650.0), (280.0, 250.0), (0.5, 0.5), 5.0, 0.8),
    "toy_two_cells": ((1050.0, 550.0), (290.0, 150.0), (0.6, 0.4), 6.0, 0.8),
    # two pure equilibria exist
    "toy_two_equilibria": ((1150.0, 850.0), (270.0, 230.0), (0.6, 0.4), 7.0, 0.8),
}


def nash_toy_scenario(name: str) -> Scenario:
    """Two or three demand cells on a 10 s / 100 m grid with 60 time bins."""
    lengths, arrivals, masses, v_min, cap = _NASH_TOYS[name]
    profile = DemandProfile.from_trips(lengths, arrivals, masses, n_trips=NASH_TOY_AGENTS)
    speed = SpeedFunction("greenshields_linear", 10.0, v_min, cap)
    return build(name, profile, speed, SchedulingPrefs(1.0, 0.5, 2.0), 10.0, 100.0, 600.0,
                 SolverOptions(max_iter=400, tol=1e-12))


NASH_TOYS = tuple(_NASH_TOYS)

SCENARIOS: Dict[str, object] = {
    "pulse": pulse_scenario,
    "two_pulse": two_pulse_scenario,
    "random": random_scenario,
    "benchmark": benchmark_scenario,
    "lyon": lyon_scenario,
    "lyon_small": lyon_small_scenario,
    **{name: (lambda name=name: nash_toy_scenario(name)) for name in _NASH_TOYS},
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}") from None
