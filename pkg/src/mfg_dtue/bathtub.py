"""Generalized bathtub dynamics on a discrete time/length grid.

All active trips share one network speed ``V(c)`` where ``c`` is the active
fraction of demand.  The characteristic distance ``zeta[theta]`` is the
distance a virtual trip departing at time 0 has covered by the start of bin
``theta``; every travel time follows from it by inversion.

Conventions used throughout:

* departures in bin ``tau_d`` leave at ``tau_d * dt``;
* a length bin ``kappa`` is represented by its midpoint ``(kappa + 0.5) * dx``;
* a trip ``(tau_d, kappa)`` is active at bin ``theta >= tau_d`` while
  ``zeta[tau_d] + x_kappa > zeta[theta]``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigurationError, HorizonOverflowError, ValidationError

log = logging.getLogger(__name__)

SPEED_KINDS = ("greenshields_linear", "quadratic", "table")
_BIN_EPS = 1e-9


def time_bin(t, dt):
    """Bin index of time ``t``, robust to round-off just below a bin edge."""
    return np.floor(np.asarray(t) / dt + _BIN_EPS).astype(np.int64)


@dataclass(frozen=True)
class SpeedFunction:
    """Decreasing map from active demand fraction to network speed (m/s)."""

    kind: str
    v_max: float
    v_min: float
    capacity_mass: float = 1.0
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in SPEED_KINDS:
            raise ValidationError(f"unknown speed kind {self.kind!r}; expected one of {SPEED_KINDS}")
        if not self.v_max >= self.v_min > 0:
            raise ValidationError(f"need v_max >= v_min > 0, got v_max={self.v_max}, v_min={self.v_min}")
        if self.kind == "table":
            if not self.table or len(self.table) < 2:
                raise ValidationError("table speed function needs at least two breakpoints")
            m = np.array([b[0] for b in self.table], dtype=float)
            s = np.array([b[1] for b in self.table], dtype=float)
            if m[0] != 0.0 or s[0] != self.v_max:
                raise ValidationError("first table breakpoint must be (0, v_max)")
            if np.any(np.diff(m) <= 0):
                raise ValidationError("table masses must be strictly increasing")
            if np.any(s < self.v_min) or np.any(s > self.v_max):
                raise ValidationError("table speeds must lie in [v_min, v_max]")
            ds = np.diff(s)
            if np.any(ds > 0) or np.any((ds == 0) & (s[:-1] > self.v_min)):
                raise ValidationError("table speeds must be strictly decreasing above v_min")
        elif not self.capacity_mass > 0:
            raise ValidationError("capacity_mass must be positive")

    @property
    def is_constant(self):
        return self.v_max == self.v_min

    @cached_property
    def _table_arrays(self):
        m = np.array([b[0] for b in self.table], dtype=float)
        s = np.array([b[1] for b in self.table], dtype=float)
        return m, s

    def _warn_clamp(self, lo, hi):
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            log.warning("speed function evaluated at mass outside [0, 1] (%g, %g); clamping", lo, hi)

    def scalar(self, mass: float) -> float:
        """Fast path for a single float; same values as ``__call__``."""
        if mass < 0.0 or mass > 1.0:
            self._warn_clamp(mass, mass)
            mass = min(max(mass, 0.0), 1.0)
        if self.v_max == self.v_min:
            return self.v_max
        if self.kind == "greenshields_linear":
            r = min(mass / self.capacity_mass, 1.0)
            v = self.v_max + r * (self.v_min - self.v_max)
        elif self.kind == "quadratic":
            r = 1.0 - min(mass / self.capacity_mass, 1.0)
            v = self.v_min + (self.v_max - self.v_min) * r * r
        else:
            m, s = self._table_arrays
            v = float(np.interp(mass, m, s))
        return min(max(v, self.v_min), self.v_max)

    def __call__(self, mass):
        c = np.asarray(mass, dtype=float)
        if c.size and (c.min() < 0 or c.max() > 1):
            self._warn_clamp(float(c.min()), float(c.max()))
        c = np.clip(c, 0.0, 1.0)
        if self.v_max == self.v_min:
            v = np.full_like(c, self.v_max)
        elif self.kind == "greenshields_linear":
            r = np.minimum(c / self.capacity_mass, 1.0)
            v = self.v_max + r * (self.v_min - self.v_max)
        elif self.kind == "quadratic":
            r = 1.0 - np.minimum(c / self.capacity_mass, 1.0)
            v = self.v_min + (self.v_max - self.v_min) * r * r
        else:
            m, s = self._table_arrays
            v = np.interp(c, m, s)
        v = np.clip(v, self.v_min, self.v_max)
        return float(v) if np.ndim(mass) == 0 else v

    def lipschitz(self) -> float:
        """Lipschitz constant of V on [0, 1]."""
        if self.is_constant:
            return 0.0
        if self.kind == "greenshields_linear":
            return (self.v_max - self.v_min) / self.capacity_mass
        if self.kind == "quadratic":
            return 2.0 * (self.v_max - self.v_min) / self.capacity_mass
        m, s = self._table_arrays
        return float(np.max(np.abs(np.diff(s) / np.diff(m))))


speed_at = SpeedFunction.__call__


@dataclass(frozen=True)
class Grid:
    """Time and length discretization.  ``n_t`` time bins cover the horizon."""

    dt: float
    dx: float
    horizon_s: float
    n_k: int = 0

    def __post_init__(self):
        if not self.dt > 0 or not self.dx > 0:
            raise ConfigurationError("dt and dx must be positive")
        if not self.horizon_s > 0:
            raise ConfigurationError("horizon must be positive")

    @property
    def n_t(self) -> int:
        return int(math.ceil(self.horizon_s / self.dt - _BIN_EPS))

    def check_cfl(self, v: SpeedFunction):
        """A trip may not cross more than one length bin per time step."""
        if self.dx < v.v_max * self.dt * (1 - 1e-12):
            raise ConfigurationError(
                f"CFL-style condition violated: dx={self.dx} < v_max*dt={v.v_max * self.dt}"
            )

    def extended(self, factor=2.0) -> "Grid":
        return Grid(self.dt, self.dx, self.horizon_s * factor, self.n_k)

    def midpoints(self, n_k=None):
        n = self.n_k if n_k is None else n_k
        return (np.arange(n) + 0.5) * self.dx


class InFlowGrid:
    """Departure masses ``p[tau_d, kappa]``.

    Stored sparsely as sorted unique ``(tau_d, kappa)`` entries; ``p`` gives
    the dense ``(n_t, n_k)`` array.
    """

    def __init__(self, td, k, mass, n_t, n_k, dt, dx):
        td = np.asarray(td, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        mass = np.asarray(mass, dtype=float)
        if np.any(mass < 0):
            raise ValidationError("in-flow masses must be nonnegative")
        if len(td) and (td.min() < 0 or k.min() < 0 or k.max() >= n_k):
            raise ValidationError("in-flow entry outside grid")
        key = td * n_k + k
        uniq, inv = np.unique(key, return_inverse=True)
        summed = np.bincount(inv, weights=mass, minlength=len(uniq)) if len(key) else mass
        keep = summed > 0
        self.td = (uniq // n_k)[keep]
        self.k = (uniq % n_k)[keep]
        self.mass = summed[keep]
        for a in (self.td, self.k, self.mass):
            a.setflags(write=False)
        self.n_t = int(n_t)
        self.n_k = int(n_k)
        self.dt = float(dt)
        self.dx = float(dx)

    @classmethod
    def from_dense(cls, p, dt, dx):
        p = np.asarray(p, dtype=float)
        td, k = np.nonzero(p)
        return cls(td, k, p[td, k], p.shape[0], p.shape[1], dt, dx)

    @classmethod
    def empty(cls, n_t, n_k, dt, dx):
        return cls([], [], [], n_t, n_k, dt, dx)

    @cached_property
    def p(self):
        out = np.zeros((max(self.n_t, int(self.td.max()) + 1 if len(self.td) else 0), self.n_k))
        out[self.td, self.k] = self.mass
        out.setflags(write=False)
        return out

    @property
    def total_mass(self):
        return math.fsum(self.mass)

    def length_marginal(self):
        out = np.zeros(self.n_k)
        np.add.at(out, self.k, self.mass)
        return out

    def midpoints(self):
        return (self.k + 0.5) * self.dx

    def max_density(self):
        """Diagnostic for the in-flow regularity cap: max p / (dt*dx)."""
        return float(self.mass.max() / (self.dt * self.dx)) if len(self.mass) else 0.0


@dataclass(frozen=True)
class CharacteristicDistance:
    """``zeta[theta]`` for ``theta = 0..n_t`` plus the speeds that built it.

    ``residual_mass`` is the active mass at the horizon (0 when drained).
    """

    zeta: np.ndarray
    dt: float
    speeds: Optional[np.ndarray] = None
    residual_mass: float = 0.0

    def __post_init__(self):
        z = np.array(self.zeta, dtype=float, copy=True)
        if z.ndim != 1 or len(z) < 1 or not np.all(np.isfinite(z)):
            raise ValidationError("zeta must be a finite 1-D array")
        z.setflags(write=False)
        object.__setattr__(self, "zeta", z)

    @property
    def n_t(self):
        return len(self.zeta) - 1

    @cached_property
    def times(self):
        return np.arange(len(self.zeta)) * self.dt

    def check_invariants(self, v: SpeedFunction, atol=1e-9):
        z = self.zeta
        if z[0] != 0.0:
            raise ValidationError("zeta[0] must be 0")
        inc = np.diff(z)
        if np.any(inc <= 0):
            raise ValidationError("zeta must be strictly increasing")
        if np.any(inc < v.v_min * self.dt - atol) or np.any(inc > v.v_max * self.dt + atol):
            raise ValidationError("zeta increments outside [v_min*dt, v_max*dt]")

    def sup_distance(self, other: "CharacteristicDistance") -> float:
        return float(np.max(np.abs(self.zeta - other.zeta)))


class _Compensated:
    """Neumaier running sum; shared by the forward recursion and Picard map."""

    __slots__ = ("s", "c")

    def __init__(self):
        self.s = 0.0
        self.c = 0.0

    def add(self, x):
        s = self.s
        t = s + x
        if abs(s) >= abs(x):
            self.c += (s - t) + x
        else:
            self.c += (x - t) + s
        self.s = t
        return t + self.c


def compensated_cumsum(increments) -> np.ndarray:
    """``[0, x0, x0+x1, ...]`` with compensated summation."""
    acc = _Compensated()
    out = np.empty(len(increments) + 1)
    out[0] = 0.0
    for i, x in enumerate(increments):
        out[i + 1] = acc.add(float(x))
    return out


def free_flow_zeta(v: SpeedFunction, g: Grid) -> CharacteristicDistance:
    speeds = np.full(g.n_t, v.v_max)
    return CharacteristicDistance(compensated_cumsum(speeds * g.dt), g.dt, speeds)


def _prepare(p: InFlowGrid, g: Grid, v: SpeedFunction):
    g.check_cfl(v)
    if p.dt != g.dt or p.dx != g.dx:
        raise ConfigurationError("in-flow grid resolution differs from the solver grid")
    if len(p.td) and p.td.max() >= g.n_t:
        raise HorizonOverflowError("departure after the end of the horizon",
                                   unfinished_mass=float(p.mass[p.td >= g.n_t].sum()))


def solve_characteristic(p: InFlowGrid, v: SpeedFunction, g: Grid) -> CharacteristicDistance:
    """Exact forward recursion ``zeta[t+1] = zeta[t] + V(active mass at t) * dt``.

    Membership of a bin in the active set only depends on ``zeta[0..t]`` so
    the discrete system is explicit.  The loop itself lives in
    ``_kernels.forward_recursion``.
    """
    _prepare(p, g, v)
    n_t = g.n_t
    x_mid = (np.arange(p.n_k) + 0.5) * g.dx
    starts = np.searchsorted(p.td, np.arange(n_t + 1)).astype(np.int64)
    dep_mass = (np.bincount(p.td, weights=p.mass, minlength=n_t)[:n_t] if len(p.td)
                else np.zeros(n_t))
    tm, ts = v._table_arrays if v.kind == "table" else (np.zeros(1), np.zeros(1))
    zeta, speeds, residual = _kernels.forward_recursion(
        n_t, float(g.dt), starts, p.td, p.mass, x_mid[p.k], dep_mass,
        _kernels.KIND_CODES[v.kind], float(v.v_max), float(v.v_min),
        float(v.capacity_mass), tm, ts)
    return CharacteristicDistance(zeta, g.dt, speeds, float(residual))


def exit_bins(zeta: np.ndarray, p: InFlowGrid, dx: float) -> np.ndarray:
    """First bin at which each entry is no longer active (``n_t + 1`` if never)."""
    h = zeta[p.td] + (p.k + 0.5) * dx
    return np.searchsorted(zeta, h, side="left")


def _active_series(zeta: np.ndarray, p: InFlowGrid, dx: float) -> np.ndarray:
    """Active mass at every bin 0..n_t for an arbitrary (finite) zeta."""
    n = len(zeta)
    if np.all(np.diff(zeta) >= 0):
        e = exit_bins(zeta, p, dx)
        diff = np.zeros(n + 1)
        np.add.at(diff, p.td, p.mass)
        np.add.at(diff, np.minimum(e, n), -p.mass)
        out = np.cumsum(diff)[:n]
        return np.where(out > 0, out, 0.0)
    h = zeta[p.td] + (p.k + 0.5) * dx
    out = np.empty(n)
    for theta in range(n):
        sel = (p.td <= theta) & (h > zeta[theta])
        out[theta] = p.mass[sel].sum()
    return out


def active_mass(zeta: CharacteristicDistance, p: InFlowGrid, theta: int) -> float:
    """Mass of trips active during bin ``theta``."""
    if not 0 <= theta <= zeta.n_t:
        raise IndexError(f"bin {theta} outside [0, {zeta.n_t}]")
    z = zeta.zeta
    sel = p.td <= theta
    h = z[p.td[sel]] + (p.k[sel] + 0.5) * p.dx
    return math.fsum(p.mass[sel][h > z[theta]])


def picard_operator(zeta_in: CharacteristicDistance, p: InFlowGrid, v: SpeedFunction,
                    g: Grid) -> CharacteristicDistance:
    """One application of ``zeta -> dt * cumsum(V(active mass under zeta))``."""
    _prepare(p, g, v)
    if zeta_in.n_t != g.n_t:
        raise ConfigurationError("zeta_in does not span the grid")
    c = _active_series(zeta_in.zeta, p, g.dx)[: g.n_t]
    speeds = v(c)
    return CharacteristicDistance(compensated_cumsum(speeds * g.dt), g.dt, speeds)


def picard_iterate(p: InFlowGrid, v: SpeedFunction, g: Grid, zeta0=None,
                   tol=1e-9, max_iter=200):
    """Iterate the Picard map from ``zeta0`` (default zero).

    Returns the last iterate and the sup-norm increments ``|z_{l+1} - z_l|``.
    """
    z = zeta0 if zeta0 is not None else CharacteristicDistance(np.zeros(g.n_t + 1), g.dt)
    diffs = []
    for _ in range(max_iter):
        nz = picard_operator(z, p, v, g)
        d = nz.sup_distance(z)
        diffs.append(d)
        z = nz
        if d <= tol:
            break
    return z, np.array(diffs)


def invert_distance(zeta: CharacteristicDistance, d):
    """Time at which the virtual trip has covered distance ``d`` (vectorized)."""
    z = zeta.zeta
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise IndexError("negative distance")
    if np.any(d_arr > z[-1]):
        raise HorizonOverflowError(
            f"distance {float(d_arr.max()):.3f} m beyond the horizon ({z[-1]:.3f} m)",
            unfinished_mass=zeta.residual_mass,
        )
    t = np.interp(d_arr, z, zeta.times)
    return float(t) if np.ndim(d) == 0 else t


def arrival_times(zeta: CharacteristicDistance, tau_d, x):
    """Arrival times of trips leaving at bins ``tau_d`` with lengths ``x``;
    ``inf`` where the trip would not finish within the horizon."""
    z = zeta.zeta
    d = z[np.asarray(tau_d)] + np.asarray(x, dtype=float)
    return np.interp(d, z, zeta.times, right=np.inf)


def travel_time_of(zeta: CharacteristicDistance, tau_d: int, kappa: int, dx: float) -> float:
    """Travel time (s) of a trip of length bin ``kappa`` leaving in bin ``tau_d``."""
    if not 0 <= tau_d < zeta.n_t:
        raise IndexError(f"departure bin {tau_d} outside the grid")
    x = (kappa + 0.5) * dx
    return invert_distance(zeta, x + zeta.zeta[tau_d]) - tau_d * zeta.dt


@dataclass(frozen=True)
class NetworkSeries:
    """Per-bin network state at times ``theta * dt``, ``theta = 0..n_t``."""

    dt: float
    accumulation: np.ndarray
    speed: np.ndarray
    cum_inflow: np.ndarray
    cum_outflow: np.ndarray
    remaining_dist: Optional[np.ndarray] = None
    remaining_thetas: Optional[np.ndarray] = None

    @property
    def times(self):
        return np.arange(len(self.accumulation)) * self.dt

    def total_travel_time(self):
        """Integral of accumulation over time (mass-seconds)."""
        return float(np.sum(self.accumulation) * self.dt)


def cumulative_flows(zeta: CharacteristicDistance, p: InFlowGrid):
    """Cumulative departed and arrived mass at every bin ``0..n_t``."""
    z = zeta.zeta
    n = len(z)
    if not len(p.td):
        return np.zeros(n), np.zeros(n)
    dep = np.bincount(p.td, weights=p.mass, minlength=n)[:n]
    e = exit_bins(z, p, p.dx)
    inside = e < n
    ex = np.bincount(e[inside], weights=p.mass[inside], minlength=n)[:n]
    cum_in = np.cumsum(dep)
    return cum_in, np.minimum(np.cumsum(ex), cum_in)


def accumulation_series(zeta: CharacteristicDistance, p: InFlowGrid) -> np.ndarray:
    cum_in, cum_out = cumulative_flows(zeta, p)
    return cum_in - cum_out


def network_series(zeta: CharacteristicDistance, p: InFlowGrid, v: SpeedFunction,
                   thetas: Optional[Sequence[int]] = None) -> NetworkSeries:
    """Accumulation, speed and cumulative in/out flows implied by ``zeta``.

    ``thetas`` selects bins at which the remaining-distance profile
    ``Phi[theta, kappa]`` (active mass with more than ``kappa * dx`` left) is
    tabulated.
    """
    z = zeta.zeta
    cum_in, cum_out = cumulative_flows(zeta, p)
    accumulation = cum_in - cum_out
    phi = None
    if thetas is not None:
        thetas = np.asarray(thetas, dtype=np.int64)
        h = z[p.td] + (p.k + 0.5) * p.dx
        edges = np.arange(p.n_k + 1) * p.dx
        phi = np.zeros((len(thetas), p.n_k + 1))
        for row, th in enumerate(thetas):
            sel = (p.td <= th) & (h > z[th])
            rem = h[sel] - z[th]
            # mass with remaining > edge
            order = np.argsort(rem)
            rem, m = rem[order], p.mass[sel][order]
            tail = np.concatenate([np.cumsum(m[::-1])[::-1], [0.0]])
            idx = np.searchsorted(rem, edges, side="right")
            phi[row] = tail[idx]
    return NetworkSeries(zeta.dt, accumulation, v(accumulation), cum_in, cum_out, phi, thetas)


def solve_drained(p_builder, v: SpeedFunction, g: Grid, horizon_cap_s: Optional[float] = None):
    """Solve ``zeta``, doubling the horizon until all trips have arrived.

    ``p_builder(grid)`` must return the in-flow grid for a given horizon.
    Returns ``(zeta, p, grid)``.
    """
    cap = g.horizon_s if horizon_cap_s is None else max(horizon_cap_s, g.horizon_s)
    while True:
        p = p_builder(g)
        zeta = solve_characteristic(p, v, g)
        if zeta.residual_mass == 0.0:
            return zeta, p, g
        if g.horizon_s >= cap:
            raise HorizonOverflowError(
                f"{zeta.residual_mass:.3g} of demand still travelling at the horizon cap "
                f"{cap:.0f} s", unfinished_mass=zeta.residual_mass)
        new_h = min(g.horizon_s * 2, cap)
        log.info("extending horizon from %.0f s to %.0f s", g.horizon_s, new_h)
        g = Grid(g.dt, g.dx, new_h, g.n_k)
