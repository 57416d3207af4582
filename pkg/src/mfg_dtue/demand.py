"""Travel demand: trip classes, demand profiles and their discretization.

A demand profile is a list of trips ``(length, desired arrival, weight,
class)`` whose weights are mass fractions summing to one.  Discretizing it
on a ``(dt, dx)`` grid yields the cell masses ``pi[tau_a, kappa]`` used by
the equilibrium solvers.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ParseError, ValidationError

LENGTH_KINDS = ("uniform", "constant", "table")
_MASS_RTOL = 1e-12


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TripClass:
    """A group of trips sharing a desired arrival time.

    ``trip_length_spread`` is the half-width of the uniform length
    distribution.  ``length_kind='table'`` draws lengths from
    ``length_table`` with replacement instead.
    """

    share: float
    mean_trip_length: float
    trip_length_spread: float
    desired_arrival: float
    arrival_window: tuple
    count_hint: Optional[int] = None
    length_kind: str = "uniform"
    length_table: Optional[tuple] = None
    arrival_jitter_s: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.share <= 1.0:
            raise ValidationError(f"class share must lie in [0, 1], got {self.share}")
        if not self.mean_trip_length > 0:
            raise ValidationError(f"mean trip length must be positive, got {self.mean_trip_length}")
        if self.trip_length_spread < 0:
            raise ValidationError("trip length spread must be nonnegative")
        start, end = self.arrival_window
        if not start < end:
            raise ValidationError(f"arrival window start must precede its end: {self.arrival_window}")
        if not start <= self.desired_arrival <= end:
            raise ValidationError(
                f"desired arrival {self.desired_arrival} lies outside window {self.arrival_window}"
            )
        if self.length_kind not in LENGTH_KINDS:
            raise ValidationError(f"unknown length kind {self.length_kind!r}")
        if self.length_kind == "table" and not self.length_table:
            raise ValidationError("length_kind='table' needs a non-empty length_table")
        if self.arrival_jitter_s < 0:
            raise ValidationError("arrival jitter must be nonnegative")


@dataclass(frozen=True)
class DemandProfile:
    """Trips as point masses over (trip length, desired arrival time)."""

    lengths: np.ndarray
    desired_arrivals: np.ndarray
    weights: np.ndarray
    class_ids: np.ndarray
    x_min: float
    x_max: float
    t_a_min: float
    t_a_max: float
    n_trips: int = 0

    def __post_init__(self):
        for name in ("lengths", "desired_arrivals", "weights"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "class_ids", _frozen(self.class_ids, dtype=np.int64))
        n = len(self.lengths)
        if n == 0:
            raise ValidationError("demand profile is empty")
        if not (len(self.desired_arrivals) == len(self.weights) == len(self.class_ids) == n):
            raise ValidationError("demand arrays must have equal length")
        if not self.x_min > 0:
            raise ValidationError(f"x_min must be positive, got {self.x_min}")
        if np.any(self.weights < 0):
            raise ValidationError("trip weights must be nonnegative")
        total = math.fsum(self.weights)
        if abs(total - 1.0) > _MASS_RTOL:
            raise ValidationError(f"trip weights sum to {total!r}, expected 1")
        if np.any(self.lengths < self.x_min) or np.any(self.lengths > self.x_max):
            raise ValidationError("trip length outside [x_min, x_max]")
        if np.any(self.desired_arrivals < self.t_a_min) or np.any(self.desired_arrivals > self.t_a_max):
            raise ValidationError("desired arrival outside [t_a_min, t_a_max]")
        if self.n_trips == 0:
            object.__setattr__(self, "n_trips", n)

    def __len__(self):
        return len(self.lengths)

    @classmethod
    def from_trips(cls, lengths, desired_arrivals, weights=None, class_ids=None, n_trips=0):
        """Build a profile whose bounds are the data extents."""
        lengths = np.asarray(lengths, dtype=float)
        arrivals = np.asarray(desired_arrivals, dtype=float)
        if len(lengths) == 0:
            raise ValidationError("demand profile is empty")
        if np.any(lengths <= 0):
            bad = int(np.flatnonzero(lengths <= 0)[0])
            raise ValidationError(f"trip {bad} has nonpositive length {lengths[bad]}")
        if weights is None:
            weights = np.full(len(lengths), 1.0 / len(lengths))
        if class_ids is None:
            class_ids = np.zeros(len(lengths), dtype=np.int64)
        return cls(
            lengths=lengths,
            desired_arrivals=arrivals,
            weights=np.asarray(weights, dtype=float),
            class_ids=np.asarray(class_ids, dtype=np.int64),
            x_min=float(lengths.min()),
            x_max=float(lengths.max()),
            t_a_min=float(arrivals.min()),
            t_a_max=float(arrivals.max()),
            n_trips=n_trips,
        )

    def permuted(self, seed):
        """Same trips in a shuffled order (anonymity checks)."""
        order = np.random.default_rng(seed).permutation(len(self))
        return DemandProfile(
            self.lengths[order], self.desired_arrivals[order], self.weights[order],
            self.class_ids[order], self.x_min, self.x_max, self.t_a_min, self.t_a_max,
            self.n_trips,
        )

    def equals(self, other):
        """Field-by-field equality (arrays compared exactly)."""
        if not isinstance(other, DemandProfile):
            return False
        return (
            np.array_equal(self.lengths, other.lengths)
            and np.array_equal(self.desired_arrivals, other.desired_arrivals)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.class_ids, other.class_ids)
            and (self.x_min, self.x_max, self.t_a_min, self.t_a_max, self.n_trips)
            == (other.x_min, other.x_max, other.t_a_min, other.t_a_max, other.n_trips)
        )


@dataclass(frozen=True)
class DiscreteDemand:
    """Demand cell masses on a ``(dt, dx)`` grid.

    Cells are stored sparsely as parallel arrays ``(tau_a, kappa, group,
    mass)``, sorted by ``(tau_a, kappa, group)``.  ``group`` is the trip
    class; it only matters when preferences differ per class.  ``pi`` is the
    dense ``(n_ta, n_k)`` view summed over groups.
    """

    cell_ta: np.ndarray
    cell_k: np.ndarray
    cell_group: np.ndarray
    cell_mass: np.ndarray
    dt: float
    dx: float
    n_ta: int
    n_k: int
    n_trips: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("cell_ta", "cell_k", "cell_group"):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype=np.int64))
        object.__setattr__(self, "cell_mass", _frozen(self.cell_mass))
        if np.any(self.cell_mass < 0):
            raise ValidationError("cell masses must be nonnegative")
        total = math.fsum(self.cell_mass)
        if abs(total - 1.0) > _MASS_RTOL:
            raise ValidationError(f"discrete demand mass is {total!r}, expected 1")
        if len(self.cell_ta) and (self.cell_ta.min() < 0 or self.cell_ta.max() >= self.n_ta):
            raise ValidationError("arrival bin outside grid")
        if len(self.cell_k) and (self.cell_k.min() < 0 or self.cell_k.max() >= self.n_k):
            raise ValidationError("length bin outside grid")

    @property
    def n_cells(self):
        return len(self.cell_mass)

    @cached_property
    def pi(self):
        grid = np.zeros((self.n_ta, self.n_k))
        np.add.at(grid, (self.cell_ta, self.cell_k), self.cell_mass)
        grid.setflags(write=False)
        return grid

    @property
    def total_mass(self):
        return math.fsum(self.cell_mass)

    def length_marginal(self):
        """Mass per length bin, ``sum over tau_a of pi``."""
        out = np.zeros(self.n_k)
        np.add.at(out, self.cell_k, self.cell_mass)
        return out

    def regularity_constant(self):
        """Diagnostic ``M_m``: largest length-bin mass density (per meter)."""
        return float(self.length_marginal().max() / self.dx)

    def bin_midpoints(self):
        return (np.arange(self.n_k) + 0.5) * self.dx


def synthesize_demand(classes: Sequence[TripClass], total_trips: int, seed: int,
                      x_min: float = 1.0) -> DemandProfile:
    """Draw a synthetic trip list from a class table.

    Each class contributes ``round(share * total_trips)`` trips whose weights
    add up to the class share, so the class mass equals its share exactly.
    Lengths are uniform on ``mean +- spread`` truncated below at ``x_min``.
    """
    if not classes:
        raise ValidationError("no trip classes given")
    shares = [c.share for c in classes]
    if abs(math.fsum(shares) - 1.0) > 1e-9:
        raise ValidationError(f"class shares sum to {math.fsum(shares)!r}, expected 1")
    if total_trips < len(classes):
        raise ValidationError("total_trips must be at least the number of classes")
    if not x_min > 0:
        raise ValidationError(f"x_min must be positive, got {x_min}")

    rng = np.random.default_rng(seed)
    lengths, arrivals, weights, ids = [], [], [], []
    for cid, cls in enumerate(classes, start=1):
        if cls.share == 0:
            continue
        count = max(1, int(round(cls.share * total_trips)))
        if cls.length_kind == "constant":
            x = np.full(count, cls.mean_trip_length)
        elif cls.length_kind == "table":
            x = rng.choice(np.asarray(cls.length_table, dtype=float), size=count, replace=True)
        else:
            lo = max(cls.mean_trip_length - cls.trip_length_spread, x_min)
            hi = cls.mean_trip_length + cls.trip_length_spread
            if hi <= 0 or hi < lo:
                raise ValidationError(f"class {cid}: nonpositive trip length bound")
            x = rng.uniform(lo, hi, size=count) if hi > lo else np.full(count, lo)
        if np.any(x < x_min):
            raise ValidationError(f"class {cid}: trip lengths below x_min={x_min}")
        t = np.full(count, float(cls.desired_arrival))
        if cls.arrival_jitter_s > 0:
            t = t + rng.uniform(-cls.arrival_jitter_s, cls.arrival_jitter_s, size=count)
            t = np.clip(t, *cls.arrival_window)
        lengths.append(x)
        arrivals.append(t)
        weights.append(np.full(count, cls.share / count))
        ids.append(np.full(count, cid, dtype=np.int64))

    w = np.concatenate(weights)
    w = w / math.fsum(w)
    return DemandProfile.from_trips(
        np.concatenate(lengths), np.concatenate(arrivals), w, np.concatenate(ids),
        n_trips=len(w),
    )


CSV_COLUMNS = ("length_m", "desired_arrival_s", "weight", "class_id")


def load_demand_csv(path) -> DemandProfile:
    """Read a demand CSV (``length_m,desired_arrival_s[,weight][,class_id]``)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty demand file")
        header = [h.strip() for h in header]
        for required in CSV_COLUMNS[:2]:
            if required not in header:
                raise ParseError(f"missing column {required!r}", line=1)
        unknown = set(header) - set(CSV_COLUMNS)
        if unknown:
            raise ParseError(f"unknown columns {sorted(unknown)}", line=1)
        col = {name: header.index(name) for name in header}
        lengths, arrivals, weights, ids = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                x = float(row[col["length_m"]])
                t = float(row[col["desired_arrival_s"]])
                w = float(row[col["weight"]]) if "weight" in col else None
                c = int(row[col["class_id"]]) if "class_id" in col else 0
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not math.isfinite(x) or x <= 0:
                raise ValidationError(f"{path}: line {lineno}: nonpositive trip length {x}")
            if not math.isfinite(t):
                raise ValidationError(f"{path}: line {lineno}: non-finite desired arrival")
            if w is not None and (not math.isfinite(w) or w < 0):
                raise ValidationError(f"{path}: line {lineno}: invalid weight {w}")
            lengths.append(x)
            arrivals.append(t)
            weights.append(w)
            ids.append(c)
    if not lengths:
        raise ValidationError(f"{path}: demand file has no trips")
    if "weight" in col:
        w = np.asarray(weights, dtype=float)
        total = math.fsum(w)
        if total <= 0:
            raise ValidationError(f"{path}: weights sum to zero")
        if abs(total - 1.0) > _MASS_RTOL:
            w = w / total
    else:
        w = None
    return DemandProfile.from_trips(lengths, arrivals, w, ids)


def write_demand_csv(profile: DemandProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_COLUMNS)
        for x, t, w, c in zip(profile.lengths, profile.desired_arrivals,
                              profile.weights, profile.class_ids):
            out.writerow((repr(float(x)), repr(float(t)), repr(float(w)), int(c)))


def discretize_demand(profile: DemandProfile, dt: float, dx: float,
                      n_ta: Optional[int] = None, n_k: Optional[int] = None) -> DiscreteDemand:
    """Bin trips into cells ``(floor(t_a/dt), floor(x/dx))``.

    Cell masses are exactly rounded sums (``math.fsum``) so the result does
    not depend on the order of the trip list.
    """
    if not dt > 0 or not dx > 0:
        raise ValidationError(f"dt and dx must be positive, got dt={dt}, dx={dx}")
    ta = np.floor(profile.desired_arrivals / dt).astype(np.int64)
    kk = np.floor(profile.lengths / dx).astype(np.int64)
    if ta.min() < 0:
        raise ValidationError("desired arrival before the start of the horizon")
    n_ta = int(ta.max()) + 1 if n_ta is None else int(n_ta)
    n_k = int(kk.max()) + 1 if n_k is None else int(n_k)
    if ta.max() >= n_ta or kk.max() >= n_k:
        raise ValidationError(
            f"trip outside grid extent: needs {ta.max() + 1} arrival bins and "
            f"{kk.max() + 1} length bins, grid has {n_ta} x {n_k}"
        )
    groups = profile.class_ids
    order = np.lexsort((profile.weights, groups, kk, ta))
    keys = np.stack([ta[order], kk[order], groups[order]], axis=1)
    starts = np.flatnonzero(np.r_[True, np.any(keys[1:] != keys[:-1], axis=1)])
    bounds = np.r_[starts, len(order)]
    w_sorted = profile.weights[order]
    masses = np.array([math.fsum(w_sorted[a:b]) for a, b in zip(bounds[:-1], bounds[1:])])
    keep = masses > 0
    return DiscreteDemand(
        cell_ta=keys[starts, 0][keep],
        cell_k=keys[starts, 1][keep],
        cell_group=keys[starts, 2][keep],
        cell_mass=masses[keep],
        dt=float(dt),
        dx=float(dx),
        n_ta=n_ta,
        n_k=n_k,
        n_trips=profile.n_trips,
    )
