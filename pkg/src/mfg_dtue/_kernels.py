"""Compiled inner loops: the forward recursion for ``zeta`` and the batched
best-response scan.  Both are sequential scans that numpy cannot express
without materializing large intermediate tables.
"""
from __future__ import annotations

import heapq
import math

import numba
import numpy as np

KIND_CODES = {"greenshields_linear": 0, "quadratic": 1, "table": 2}


@numba.njit(cache=True)
def speed_value(kind, vmax, vmin, cap, tm, ts, mass):
    if mass < 0.0:
        mass = 0.0
    elif mass > 1.0:
        mass = 1.0
    if vmax == vmin:
        return vmax
    if kind == 0:
        r = min(mass / cap, 1.0)
        v = vmax + r * (vmin - vmax)
    elif kind == 1:
        r = 1.0 - min(mass / cap, 1.0)
        v = vmin + (vmax - vmin) * r * r
    else:
        v = np.interp(mass, tm, ts)
    return min(max(v, vmin), vmax)


@numba.njit(cache=True)
def forward_recursion(n_t, dt, starts, td, mass, xs, dep_mass, kind, vmax, vmin, cap, tm, ts):
    """``zeta[t+1] = zeta[t] + V(active(t)) * dt`` with a heap of exit distances.

    Entries are sorted by ``(td, kappa)``, so within one departure bin exit
    thresholds increase and only the next pending entry of each bin sits in
    the heap.  Returns ``(zeta, speeds, residual active mass)``.
    """
    zl = np.zeros(n_t + 1)
    speeds = np.zeros(n_t)
    z = 0.0
    s_sum = 0.0
    s_comp = 0.0
    heap = [(0.0, 0, 0)]
    heap.pop()
    active = 0.0
    n_active = 0
    for theta in range(n_t):
        while len(heap) > 0 and heap[0][0] <= z:
            item = heapq.heappop(heap)
            i = item[1]
            end = item[2]
            active -= mass[i]
            n_active -= 1
            if i + 1 < end:
                heapq.heappush(heap, (zl[td[i + 1]] + xs[i + 1], i + 1, end))
        a = starts[theta]
        b = starts[theta + 1]
        if b > a:
            active += dep_mass[theta]
            n_active += b - a
            heapq.heappush(heap, (z + xs[a], a, b))
        if n_active == 0:
            active = 0.0
        vel = speed_value(kind, vmax, vmin, cap, tm, ts, active if active > 0.0 else 0.0)
        speeds[theta] = vel
        inc = vel * dt
        t = s_sum + inc
        if abs(s_sum) >= abs(inc):
            s_comp += (s_sum - t) + inc
        else:
            s_comp += (inc - t) + s_sum
        s_sum = t
        z = t + s_comp
        zl[theta + 1] = z
    # mass still travelling at the horizon
    r_sum = 0.0
    r_comp = 0.0
    for item in heap:
        i = item[1]
        end = item[2]
        for j in range(i, end):
            h = item[0] if j == i else zl[td[j]] + xs[j]
            if h > z:
                m = mass[j]
                t = r_sum + m
                if abs(r_sum) >= abs(m):
                    r_comp += (r_sum - t) + m
                else:
                    r_comp += (m - t) + r_sum
                r_sum = t
    return zl, speeds, r_sum + r_comp


@numba.njit(cache=True)
def best_response_rows(z, dt, lo, hi, row_x, row_nb, row_ng, row_ptr, cell_ta, out_td):
    """Earliest cost-minimizing departure in ``[lo, hi]`` for every cell.

    Row ``r`` holds cells sharing a length (``row_x``) and normalized
    penalties; its cells are ``row_ptr[r]:row_ptr[r+1]`` (positions into
    ``cell_ta``/``out_td``).  Arrival times reproduce ``np.interp`` on
    ``(zeta, arange(n+1) * dt)`` bit for bit.  ``out_td`` gets ``-1`` when
    no candidate finishes inside the horizon.
    """
    n = len(z) - 1
    cols = hi - lo + 1
    big = n + 2
    T = np.empty(cols)
    b = np.empty(cols, dtype=np.int64)
    me = np.empty(cols)
    ae = np.empty(cols, dtype=np.int64)
    ml = np.empty(cols)
    al = np.empty(cols, dtype=np.int64)
    inf = np.inf
    for r in range(len(row_x)):
        x = row_x[r]
        nbdt = row_nb[r] * dt
        ngdt = row_ng[r] * dt
        j = lo
        for c in range(cols):
            tau = lo + c
            target = z[tau] + x
            while j < n and z[j + 1] <= target:
                j += 1
            if j >= n:
                arr = n * dt if target == z[n] else inf
            else:
                tj = j * dt
                slope = ((j + 1) * dt - tj) / (z[j + 1] - z[j])
                arr = slope * (target - z[j]) + tj
            if arr < inf:
                T[c] = arr - tau * dt
                b[c] = np.int64(math.floor(arr / dt + 1e-9))
            else:
                T[c] = inf
                b[c] = big
        # prefix minima of the early-side cost (earliest argmin)
        for c in range(cols):
            ge = T[c] - nbdt * b[c]
            if c == 0 or ge < me[c - 1]:
                me[c] = ge
                ae[c] = c
            else:
                me[c] = me[c - 1]
                ae[c] = ae[c - 1]
        # suffix minima of the late-side cost (ties move to earlier bins)
        for c in range(cols - 1, -1, -1):
            gl = T[c] + ngdt * b[c]
            if c == cols - 1 or gl <= ml[c + 1]:
                ml[c] = gl
                al[c] = c
            else:
                ml[c] = ml[c + 1]
                al[c] = al[c + 1]
        for q in range(row_ptr[r], row_ptr[r + 1]):
            ta = cell_ta[q]
            s = np.searchsorted(b, ta, side="right")
            ce = me[s - 1] + nbdt * ta if s > 0 else inf
            cl = ml[s] - ngdt * ta if s < cols else inf
            if ce == inf and cl == inf:
                out_td[q] = -1
            elif ce <= cl:
                out_td[q] = lo + ae[s - 1]
            else:
                out_td[q] = lo + al[s]
