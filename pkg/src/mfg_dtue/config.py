"""Scenario files: INI sections with ``key = value`` pairs.

Grammar (every section and key is optional unless noted)::

    [scenario]
    name = my_run
    base = benchmark          ; start from a built-in scenario

    [demand]
    csv = trips.csv           ; path relative to the scenario file
    total_trips = 2000        ; used with [class.*] sections
    seed = 7

    [class.<label>]           ; inline class table, ids 1, 2, ... in file order
    share = 0.25
    mean_length_m = 2500
    length_spread_m = 2000
    desired_arrival_s = 1800
    window_start_s = 0
    window_end_s = 2700

    [speed]
    kind = quadratic          ; greenshields_linear | quadratic | table
    v_max = 10
    v_min = 2
    capacity = 0.6
    table = 0:12, 0.05:11, 0.3:3   ; kind = table only

    [prefs]
    alpha = 1
    beta = 0.5
    gamma = 2                 ; or: k = 5 for the one-parameter family
    penalty = linear          ; linear | smooth

    [prefs.<class_id>]        ; per-class override, same keys as [prefs]

    [grid]
    dt = 1
    dx = 10                   ; defaults to v_max * dt
    horizon_s = 5400
    horizon_cap_s = 21600

    [solver]
    max_iter = 500
    tol = 5e-3
    epsilon = 0
    seed = 0
    foc_tol = 0.1

Any key can be overridden from the environment as ``DTUE_<SECTION>_<KEY>``
(upper case, dots in section names become underscores), e.g.
``DTUE_SOLVER_MAX_ITER=50`` or ``DTUE_PREFS_3_GAMMA=2.5``.
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .bathtub import SpeedFunction
from .cost import PrefsTable, SchedulingPrefs
from .demand import TripClass, load_demand_csv, synthesize_demand
from .equilibrium import SolverOptions
from .errors import ConfigurationError, ValidationError
from .scenarios import SCENARIOS, Scenario, build

ENV_PREFIX = "DTUE_"

_KNOWN = {
    "scenario": {"name", "base"},
    "demand": {"csv", "total_trips", "seed"},
    "class": {"share", "mean_length_m", "length_spread_m", "desired_arrival_s",
              "window_start_s", "window_end_s", "arrival_jitter_s"},
    "speed": {"kind", "v_max", "v_min", "capacity", "table"},
    "prefs": {"alpha", "beta", "gamma", "k", "penalty", "smooth_scale_s"},
    "grid": {"dt", "dx", "horizon_s", "horizon_cap_s", "n_k"},
    "solver": {"max_iter", "tol", "epsilon", "seed", "foc_tol"},
}


def _env_key(section: str, key: str) -> str:
    return ENV_PREFIX + re.sub(r"[^A-Za-z0-9]", "_", f"{section}_{key}").upper()


def read_config(path, env: Optional[Mapping[str, str]] = None) -> configparser.ConfigParser:
    """Parse ``path`` and apply environment overrides for keys of known sections."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"scenario file not found: {path}")
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    for section in cp.sections():
        kind = section.split(".", 1)[0]
        if kind not in _KNOWN:
            raise ValidationError(f"{path}: unknown section [{section}]")
        unknown = set(cp[section]) - _KNOWN[kind]
        if unknown:
            raise ValidationError(f"{path}: unknown keys {sorted(unknown)} in [{section}]")
    _apply_env(cp, env)
    return cp


def _apply_env(cp: configparser.ConfigParser, env: Optional[Mapping[str, str]]) -> None:
    env = os.environ if env is None else env
    sections = set(cp.sections()) | {"scenario", "demand", "speed", "prefs", "grid", "solver"}
    for section in sorted(sections):
        kind = section.split(".", 1)[0]
        for key in sorted(_KNOWN[kind]):
            value = env.get(_env_key(section, key))
            if value is not None:
                if not cp.has_section(section):
                    cp.add_section(section)
                cp[section][key] = value


def _num(sec, key, default=None, cast=float):
    if sec is None or key not in sec:
        return default
    try:
        return cast(sec[key])
    except ValueError:
        raise ValidationError(f"[{sec.name}] {key}: cannot parse {sec[key]!r}") from None


def _speed(sec, base: Optional[SpeedFunction]) -> SpeedFunction:
    if sec is None:
        if base is None:
            raise ValidationError("missing [speed] section")
        return base
    kind = sec.get("kind", base.kind if base else "greenshields_linear")
    v_max = _num(sec, "v_max", base.v_max if base else None)
    v_min = _num(sec, "v_min", base.v_min if base else None)
    if v_max is None or v_min is None:
        raise ValidationError("[speed] needs v_max and v_min")
    cap = _num(sec, "capacity", base.capacity_mass if base else 1.0)
    table = base.table if base else None
    if "table" in sec:
        try:
            table = tuple(tuple(float(v) for v in pair.split(":"))
                          for pair in sec["table"].split(","))
        except ValueError:
            raise ValidationError(f"[speed] table: cannot parse {sec['table']!r}") from None
    return SpeedFunction(kind, v_max, v_min, cap, table if kind == "table" else None)


def _prefs(sec, base: Optional[SchedulingPrefs]) -> SchedulingPrefs:
    if sec is None:
        if base is None:
            raise ValidationError("missing [prefs] section")
        return base
    penalty = sec.get("penalty", base.penalty if base else "linear")
    scale = _num(sec, "smooth_scale_s", base.smooth_scale_s if base else 60.0)
    if "k" in sec:
        p = SchedulingPrefs.from_k(_num(sec, "k"), _num(sec, "alpha", 1.0))
        return replace(p, penalty=penalty, smooth_scale_s=scale)
    vals = [_num(sec, key, getattr(base, key) if base else None) for key in ("alpha", "beta", "gamma")]
    if any(v is None for v in vals):
        raise ValidationError(f"[{sec.name}] needs alpha, beta and gamma (or k)")
    return SchedulingPrefs(*vals, penalty=penalty, smooth_scale_s=scale)


def scenario_from_config(cp: configparser.ConfigParser, root: Path = Path(".")) -> Scenario:
    """Build and validate a :class:`Scenario` from a parsed file."""
    get = lambda name: cp[name] if cp.has_section(name) else None  # noqa: E731
    head = get("scenario")
    base = None
    if head is not None and "base" in head:
        if head["base"] not in SCENARIOS:
            raise ValidationError(f"unknown base scenario {head['base']!r}; known: {sorted(SCENARIOS)}")
        base = SCENARIOS[head["base"]]()
    name = head.get("name", base.name if base else "scenario") if head is not None else (
        base.name if base else "scenario")

    speed = _speed(get("speed"), base.speed if base else None)
    default = _prefs(get("prefs"), base.prefs.default if base else None)
    by_class = dict(base.prefs.by_class) if base else {}
    for section in cp.sections():
        if section.startswith("prefs."):
            try:
                cid = int(section.split(".", 1)[1])
            except ValueError:
                raise ValidationError(f"[{section}]: class id must be an integer") from None
            by_class[cid] = _prefs(cp[section], default)
    prefs = PrefsTable(default, by_class)

    demand = get("demand")
    classes = [s for s in cp.sections() if s.startswith("class.")]
    if demand is not None and "csv" in demand:
        if classes:
            raise ValidationError("give either [demand] csv or [class.*] sections, not both")
        csv_path = Path(demand["csv"])
        if not csv_path.is_absolute():
            csv_path = root / csv_path
        if not csv_path.is_file():
            raise ValidationError(f"demand file not found: {csv_path}")
        profile = load_demand_csv(csv_path)
    elif classes:
        table = []
        for s in classes:
            sec = cp[s]
            missing = {"share", "mean_length_m", "desired_arrival_s", "window_start_s",
                       "window_end_s"} - set(sec)
            if missing:
                raise ValidationError(f"[{s}] missing keys {sorted(missing)}")
            table.append(TripClass(
                share=_num(sec, "share"), mean_trip_length=_num(sec, "mean_length_m"),
                trip_length_spread=_num(sec, "length_spread_m", 0.0),
                desired_arrival=_num(sec, "desired_arrival_s"),
                arrival_window=(_num(sec, "window_start_s"), _num(sec, "window_end_s")),
                arrival_jitter_s=_num(sec, "arrival_jitter_s", 0.0)))
        total = _num(demand, "total_trips", None, int)
        if total is None:
            raise ValidationError("[demand] total_trips is required with [class.*] sections")
        profile = synthesize_demand(table, total, _num(demand, "seed", 0, int))
    elif base is not None:
        profile = base.profile
    else:
        raise ValidationError("no demand given: use [demand] csv, [class.*] sections or a base")

    grid = get("grid")
    dt = _num(grid, "dt", base.grid.dt if base else 1.0)
    dx = _num(grid, "dx", None)
    if dx is None:
        dx = base.grid.dx if base and dt == base.grid.dt else speed.v_max * dt
    horizon = _num(grid, "horizon_s", base.grid.horizon_s if base else None)
    if horizon is None:
        horizon = float(np.ceil((profile.t_a_max + 1.0) / dt) * dt)
    n_k = _num(grid, "n_k", base.grid.n_k if base and dx == base.grid.dx else None, int)

    sol = get("solver")
    s0 = base.solver if base else SolverOptions()
    cap = _num(grid, "horizon_cap_s", s0.horizon_cap_s)
    solver = SolverOptions(
        max_iter=_num(sol, "max_iter", s0.max_iter, int), tol=_num(sol, "tol", s0.tol),
        epsilon=_num(sol, "epsilon", s0.epsilon), seed=_num(sol, "seed", s0.seed, int),
        horizon_cap_s=cap, foc_tol=_num(sol, "foc_tol", s0.foc_tol))
    sc = build(name, profile, speed, prefs, dt, dx, horizon, solver, n_k=n_k)
    validate_scenario(sc)
    return sc


def validate_scenario(sc: Scenario) -> None:
    """Checks that must hold before any run starts."""
    sc.grid.check_cfl(sc.speed)
    if sc.demand.n_cells == 0:
        raise ValidationError("demand is empty")
    if sc.demand.cell_ta.max() >= sc.grid.n_t:
        raise ConfigurationError(
            f"horizon {sc.grid.horizon_s} s ends before the latest desired arrival")


def load_scenario(path_or_name: str, env: Optional[Mapping[str, str]] = None) -> Scenario:
    """Load a scenario file, or a built-in scenario when no such file exists."""
    path = Path(path_or_name)
    if not path.exists() and path_or_name in SCENARIOS:
        cp = configparser.ConfigParser()
        cp.read_dict({"scenario": {"base": path_or_name}})
        _apply_env(cp, env)
        return scenario_from_config(cp)
    return scenario_from_config(read_config(path, env), path.resolve().parent)
