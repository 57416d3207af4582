"""Scheduling costs and first-order optimality checks.

A trip leaving in bin ``tau_d`` with length bin ``kappa`` and desired
arrival bin ``tau_a`` pays ``alpha * T`` for travel time plus ``beta`` per
second of earliness or ``gamma`` per second of lateness.  Earliness and
lateness are measured between the midpoints of the actual and desired
arrival bins, i.e. in whole bins times ``dt``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .bathtub import CharacteristicDistance, arrival_times, time_bin, travel_time_of
from .errors import HorizonOverflowError, ValidationError

PENALTY_SHAPES = ("linear", "smooth")


@dataclass(frozen=True)
class SchedulingPrefs:
    """alpha-beta-gamma preferences (cost per second).

    ``penalty='smooth'`` replaces the kinked schedule penalty by the
    arctan-smoothed work-utility integral; ``smooth_scale_s`` is the time
    unit of its argument.
    """

    alpha: float
    beta: float
    gamma: float
    penalty: str = "linear"
    smooth_scale_s: float = 60.0

    def __post_init__(self):
        if not self.alpha > self.beta > 0:
            raise ValidationError(f"need alpha > beta > 0, got alpha={self.alpha}, beta={self.beta}")
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        if self.penalty not in PENALTY_SHAPES:
            raise ValidationError(f"unknown penalty shape {self.penalty!r}")
        if not self.smooth_scale_s > 0:
            raise ValidationError("smooth_scale_s must be positive")

    @classmethod
    def from_k(cls, k: float, alpha: float = 1.0) -> "SchedulingPrefs":
        """The one-parameter family beta = 0.4 + 0.2k/9, gamma = 1.5 + k/9."""
        return cls(alpha, 0.4 + 0.2 * k / 9.0, 1.5 + k / 9.0)

    def scaled(self, factor: float) -> "SchedulingPrefs":
        return SchedulingPrefs(self.alpha * factor, self.beta * factor, self.gamma * factor,
                               self.penalty, self.smooth_scale_s)

    def schedule_penalty(self, delay_s):
        """Penalty for arriving ``delay_s`` seconds late (negative: early)."""
        d = np.asarray(delay_s, dtype=float)
        if self.penalty == "linear":
            out = self.beta * np.maximum(-d, 0.0) + self.gamma * np.maximum(d, 0.0)
        else:
            s = self.smooth_scale_s
            u = d / s
            out = s * ((self.gamma - self.beta) / 2.0 * u
                       + (self.gamma + self.beta) / math.pi
                       * (u * np.arctan(4.0 * u) - np.log1p(16.0 * u * u) / 8.0))
        return float(out) if np.ndim(delay_s) == 0 else out


@dataclass(frozen=True)
class PrefsTable:
    """Global preferences plus optional per-class overrides."""

    default: SchedulingPrefs
    by_class: Mapping[int, SchedulingPrefs] = field(default_factory=dict)

    def for_class(self, group: int) -> SchedulingPrefs:
        return self.by_class.get(int(group), self.default)

    def scaled(self, factor: float) -> "PrefsTable":
        return PrefsTable(self.default.scaled(factor),
                          {g: p.scaled(factor) for g, p in self.by_class.items()})


def as_prefs_table(prefs) -> PrefsTable:
    if isinstance(prefs, PrefsTable):
        return prefs
    if isinstance(prefs, SchedulingPrefs):
        return PrefsTable(prefs)
    raise TypeError(f"expected SchedulingPrefs or PrefsTable, got {type(prefs).__name__}")


def cost_from_arrival(arrival_s, tau_d, tau_a, dt, prefs: SchedulingPrefs):
    """Vectorized cost given arrival times (``inf`` arrivals give ``inf``)."""
    arrival_s = np.asarray(arrival_s, dtype=float)
    finite = np.isfinite(arrival_s)
    safe = np.where(finite, arrival_s, 0.0)
    travel = safe - np.asarray(tau_d) * dt
    bins = time_bin(safe, dt)
    delay = (bins - np.asarray(tau_a)) * dt
    if prefs.penalty == "linear":
        pen = prefs.beta * np.maximum(-delay, 0.0) + prefs.gamma * np.maximum(delay, 0.0)
    else:
        pen = prefs.schedule_penalty(delay)
    out = np.where(finite, prefs.alpha * travel + pen, np.inf)
    return float(out) if out.ndim == 0 else out


def trip_cost(tau_d: int, kappa: int, tau_a: int, zeta: CharacteristicDistance,
              prefs: SchedulingPrefs, dx: float) -> float:
    """Cost of one trip; raises ``HorizonOverflowError`` if it never arrives."""
    T = travel_time_of(zeta, tau_d, kappa, dx)
    arrival = tau_d * zeta.dt + T
    delay = (int(time_bin(arrival, zeta.dt)) - tau_a) * zeta.dt
    return prefs.alpha * T + prefs.schedule_penalty(delay)


def trip_costs(zeta: CharacteristicDistance, tau_d, x, tau_a, prefs: SchedulingPrefs):
    """Vectorized ``trip_cost`` over arrays of departures/lengths (m)/arrival bins."""
    arr = arrival_times(zeta, tau_d, x)
    return cost_from_arrival(arr, tau_d, tau_a, zeta.dt, prefs)


def optimality_band(prefs: SchedulingPrefs):
    """Admissible range of v(depart) / v(arrive) at an optimal departure."""
    a, b, g = prefs.alpha, prefs.beta, prefs.gamma
    if not a > b:
        raise ValidationError("optimality band needs alpha > beta")
    return a / (a + g), a / (a - b)


@dataclass(frozen=True)
class FocResult:
    kind: str  # early_optimal | late_optimal | ontime_optimal | violating
    ratio: float
    residual: float = 0.0
    timing: str = "ontime"  # early | late | ontime

    @property
    def violating(self):
        return self.kind == "violating"


def _bin_speeds(zeta: CharacteristicDistance):
    if zeta.speeds is not None:
        return zeta.speeds
    return np.diff(zeta.zeta) / zeta.dt


FOC_KINDS = ("early_optimal", "late_optimal", "ontime_optimal", "violating")


def classify_foc_many(zeta: CharacteristicDistance, tau_d, x, tau_a, prefs: SchedulingPrefs,
                      tol: float = 0.1):
    """Vectorized speed-ratio check; returns ``(kind index, ratio, residual)``.

    ``kind index`` points into ``FOC_KINDS``.  A trip counts as early (late)
    only when moving its departure one bin later (earlier) would still
    arrive early (late).  Otherwise the trip sits at the kink between the
    two regimes, where the cost has one-sided slopes and the on-time band
    applies.  Trips whose arrival skips over the desired bin between two
    adjacent departure bins are the common case of such a kink.
    """
    tau_d = np.asarray(tau_d, dtype=np.int64)
    tau_a = np.asarray(tau_a, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    lower, upper = optimality_band(prefs)
    speeds = _bin_speeds(zeta)
    n = len(speeds)
    arr = arrival_times(zeta, tau_d, x)
    if not np.all(np.isfinite(arr)):
        raise HorizonOverflowError("trip does not finish within the horizon")
    ab = time_bin(arr, zeta.dt)
    nxt = time_bin(arrival_times(zeta, np.minimum(tau_d + 1, n - 1), x), zeta.dt)
    prv = time_bin(arrival_times(zeta, np.maximum(tau_d - 1, 0), x), zeta.dt)
    early = (ab < tau_a) & (nxt < tau_a) & (tau_d + 1 < n)
    late = (ab > tau_a) & (prv > tau_a) & (tau_d > 0)
    ratio = speeds[tau_d] / speeds[np.minimum(ab, n - 1)]
    lo = np.where(early, upper, lower) - tol
    hi = np.where(late, lower, upper) + tol
    residual = np.maximum(lo - ratio, 0.0) + np.maximum(ratio - hi, 0.0)
    kind = np.where(early, 0, np.where(late, 1, 2))
    kind = np.where(residual > 0, 3, kind)
    return kind, ratio, residual


def classify_foc(zeta: CharacteristicDistance, tau_d: int, kappa: int, tau_a: int,
                 prefs: SchedulingPrefs, tol: float = 0.1, dx: float = 1.0) -> FocResult:
    """Check the speed-ratio condition at a trip's departure and arrival bins."""
    if not 0 <= tau_d < zeta.n_t:
        raise IndexError(f"departure bin {tau_d} outside the grid")
    kind, ratio, residual = classify_foc_many(zeta, [tau_d], [(kappa + 0.5) * dx], [tau_a],
                                              prefs, tol)
    T = travel_time_of(zeta, tau_d, kappa, dx)
    ab = int(time_bin(tau_d * zeta.dt + T, zeta.dt))
    timing = "early" if ab < tau_a else "late" if ab > tau_a else "ontime"
    return FocResult(FOC_KINDS[int(kind[0])], float(ratio[0]), float(residual[0]), timing)
