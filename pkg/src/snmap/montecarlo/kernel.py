"""Compiled path simulator.

One call simulates one path of the environment and the free level process
and, alongside it, ``K`` barrier-constrained copies ("slots") driven by the
same noise.  Each slot has its own lower/upper barrier (absent, terminating or
reflecting), an optional hitting target and its own histogram window.

Time advances on a grid of cells of length ``S * dt``; each cell's Brownian
increment is the sum of ``S`` standard normals drawn from the Brownian stream,
so a run with ``S = 2`` sees the same Brownian path as a run with ``S = 1`` at
every second grid time.  Environment events (switches, in-state jumps,
killing) occur at exact exponential epochs drawn from the event stream; the
Brownian value at an event is filled in by a Brownian bridge.  Within a step the
running maximum and minimum of the free increment are drawn from their exact
conditional laws given the endpoints, but only when some slot is close enough
to a level for the draw to matter.  The same extremes serve every slot.
"""

import numpy as np
from numba import njit

# path outcomes
HORIZON, EXIT_UP, EXIT_DOWN, HIT, KILLED = 0, 1, 2, 3, 4
# barrier kinds
NONE, TERMINATE, REFLECT = 0, 1, 2
# rows of the per-slot diagnostic array
PINNED, PUSHED, LAYER, TOTAL = 0, 1, 2, 3

_SKIP = 40.0  # level contact with probability below exp(-40) is ignored


@njit(inline="always")
def _sample_ph(g, law, beta_cdf, rates, next_cdf, orders):
    m = orders[law]
    u = g.random()
    p = 0
    while p < m - 1 and u >= beta_cdf[law, p]:
        p += 1
    total = 0.0
    while True:
        total += g.exponential() / rates[law, p]
        u = g.random()
        q = 0
        while q < m and u >= next_cdf[law, p, q]:
            q += 1
        if q >= m:
            return total
        p = q


@njit(inline="always")
def _cell_increment(gb, S, sqdt):
    if S == 1:
        return gb.standard_normal() * sqdt
    s = 0.0
    for _ in range(S):
        s += gb.standard_normal()
    return s * sqdt


@njit(inline="always")
def _near_above(gap, d, thr):
    """Whether a level ``gap >= 0`` above may be reached within the step."""
    return gap <= d or 2.0 * gap * (gap - d) < thr


@njit(inline="always")
def _near_below(gap, d, thr):
    return gap <= -d or 2.0 * gap * (gap + d) < thr


@njit(inline="always")
def _snapshot(extra, k, in_state):
    for jj in range(in_state.size):
        extra[k, TOTAL, 0, jj] = in_state[jj]


@njit(inline="always")
def _window(xf, off, alive, lo, hi, lo_kind, hi_kind, target, has_target,
            track_up, track_down, status):
    """Nearest levels above and below, in coordinates of the free level ``xf``."""
    U = np.inf
    L = -np.inf
    for k in range(off.size):
        if not alive[k]:
            continue
        o = off[k]
        if hi_kind[k] != NONE:
            U = min(U, hi[k] - o)
        if lo_kind[k] != NONE:
            L = max(L, lo[k] - o)
        if has_target[k]:
            tt = target[k] - o
            if xf > tt:
                L = max(L, tt)
            else:
                U = min(U, tt)
    for k in range(status.size):
        if status[k] == 0:
            U = min(U, track_up[k])
            L = max(L, track_down[k])
    return U, L


@njit(cache=True, error_model="numpy")
def run_path(
    gb, ge, ga, p, j0, x0,
    drift, sig, rate, ev_cdf, sw_law, jump_law,
    beta_cdf, ph_rates, next_cdf, orders,
    lo, hi, lo_kind, hi_kind, target, record, bin_lo, bin_w, eps_atom,
    dt, S, horizon, track_up, track_down,
    occ, extra, occ_sum, occ_sq, extra_sum, extra_sq,
    out_code, out_state, out_time, out_level, out_track,
):
    """Simulate path ``p`` started at level ``x0`` in state ``j0``.

    Occupation time is credited at the left point of every step to
    ``occ[slot, state, bin]``.  ``extra[slot, row, side, state]`` collects
    time pinned at a reflecting barrier by bounded-variation motion, the
    length of Brownian steps in which the regulator acted, time within
    ``eps_atom`` of a reflecting barrier (side 0 lower, 1 upper) and total
    lifetime.  Per-path totals are added to the ``*_sum``/``*_sq``
    accumulators under the start state ``j0``.

    ``out_track[p, k]`` records whether the free level reaches ``track_up[k]``
    (1) or goes below ``track_down[k]`` (2) first.
    """
    K = lo.size
    n = sig.size
    n_bins = occ.shape[2]
    n_track = track_up.size
    inv_w = 1.0 / bin_w
    has_target = ~np.isnan(target)
    in_state = np.zeros(n)
    occ[:] = 0.0
    extra[:] = 0.0
    # slot k sits at xf + off[k]; offsets change only through barrier contact
    off = np.zeros(K)
    alive = np.ones(K, np.bool_)
    n_alive = K
    status = np.zeros(n_track, np.int8)
    sqdt = np.sqrt(dt)
    cell = dt * S
    t = 0.0
    xf = x0
    j = j0
    tau_rem = cell
    B_rem = _cell_increment(gb, S, sqdt)
    next_ev = ge.exponential() / rate[j] if rate[j] > 0 else np.inf
    near = np.max(eps_atom) if K > 0 else 0.0

    for k in range(n_track):
        if x0 >= track_up[k]:
            status[k] = 1
        elif x0 < track_down[k]:
            status[k] = 2
    U, L = _window(xf, off, alive, lo, hi, lo_kind, hi_kind, target, has_target,
                   track_up, track_down, status)

    while True:
        h = tau_rem
        kind = 0
        if next_ev - t < h:
            h = next_ev - t
            kind = 1
        if horizon - t <= h:
            h = max(horizon - t, 0.0)
            kind = 2
        if kind == 0:
            dB = B_rem
        else:
            br = h * (tau_rem - h) / tau_rem
            dB = h / tau_rem * B_rem
            if br > 0.0:
                dB += np.sqrt(br) * ge.standard_normal()
            B_rem -= dB
            tau_rem -= h
        s = sig[j]
        s2h = s * s * h
        d = drift[j] * h + s * dB
        thr = _SKIP * s2h
        gap_u = U - xf
        gap_l = xf - L
        need_r = gap_u < near or _near_above(gap_u, d, thr)
        need_f = gap_l < near or _near_below(gap_l, d, thr)

        if not (need_r or need_f):
            # every slot moves with the free level
            if h > 0.0:
                for k in range(K):
                    if alive[k] and record[k]:
                        u = (xf + off[k] - bin_lo[k]) * inv_w[k]
                        if u > -1e-9:
                            b = int(u)
                            if b < n_bins:
                                occ[k, j, b] += h
                            elif u <= n_bins * (1.0 + 1e-12):
                                occ[k, j, n_bins - 1] += h
        else:
            # extremes of the free increment over the step
            rise = max(d, 0.0)
            fall = min(d, 0.0)
            if s2h > 0.0:
                if need_r:
                    rise = 0.5 * (d + np.sqrt(d * d - 2.0 * s2h * np.log(1.0 - ga.random())))
                if need_f:
                    fall = 0.5 * (d - np.sqrt(d * d - 2.0 * s2h * np.log(1.0 - ga.random())))
            for k in range(K):
                if not alive[k]:
                    continue
                yk = xf + off[k]
                code = -1
                pin = 0.0
                push_up = 0.0
                push_dn = 0.0
                hk = hi_kind[k]
                lk = lo_kind[k]
                if hk != NONE:
                    over = yk + rise - hi[k]
                    if hk == TERMINATE:
                        if over >= 0.0:
                            code = EXIT_UP
                    elif over > 0.0:
                        push_up = over
                        if s2h <= 0.0:
                            # bounded variation: held at the barrier for the rest of the step
                            pin = h * over / d
                if code < 0 and lk != NONE:
                    under = lo[k] - (yk + fall)
                    if lk == TERMINATE:
                        if under >= 0.0:
                            code = EXIT_DOWN
                    elif under > 0.0:
                        push_dn = under
                if code < 0 and has_target[k]:
                    if yk + fall <= target[k] <= yk + rise:
                        code = HIT

                if record[k] and h > 0.0:
                    u = (yk - bin_lo[k]) * inv_w[k]
                    if u > -1e-9:
                        b = int(u)
                        if b < n_bins:
                            occ[k, j, b] += h - pin
                        elif u <= n_bins * (1.0 + 1e-12):
                            occ[k, j, n_bins - 1] += h - pin
                    if pin > 0.0:
                        extra[k, PINNED, 1, j] += pin
                    elif push_up > 0.0:
                        extra[k, PUSHED, 1, j] += h
                    if push_dn > 0.0:
                        extra[k, PUSHED, 0, j] += h
                    if hk == REFLECT and yk >= hi[k] - eps_atom[k]:
                        extra[k, LAYER, 1, j] += h
                    if lk == REFLECT and yk <= lo[k] + eps_atom[k]:
                        extra[k, LAYER, 0, j] += h

                y1 = yk + d - push_up + push_dn
                if hk == REFLECT and y1 > hi[k]:
                    y1 = hi[k]
                if lk == REFLECT and y1 < lo[k]:
                    y1 = lo[k]
                off[k] = y1 - (xf + d)
                if code >= 0:
                    _snapshot(extra, k, in_state)
                    extra[k, TOTAL, 0, j] += h
                    alive[k] = False
                    n_alive -= 1
                    out_code[k, p] = code
                    out_state[k, p] = j
                    out_time[k, p] = t + h
                    out_level[k, p] = y1

            for k in range(n_track):
                if status[k] == 0:
                    up = xf + rise >= track_up[k]
                    dn = xf + fall < track_down[k]
                    if up and dn:
                        # both levels touched within one step: order by the bridge end
                        status[k] = 1 if d > 0 else 2
                    elif up:
                        status[k] = 1
                    elif dn:
                        status[k] = 2
            U, L = _window(xf + d, off, alive, lo, hi, lo_kind, hi_kind, target, has_target,
                           track_up, track_down, status)
        xf += d
        t += h
        in_state[j] += h

        if n_alive == 0:
            break
        if kind == 2:
            _close(alive, off, xf, HORIZON, j, t, p, out_code, out_state, out_time, out_level)
            break
        if kind == 0:
            tau_rem = cell
            B_rem = _cell_increment(gb, S, sqdt)
            continue

        # environment event: kill, switch (possibly with a jump) or in-state jump
        u = ge.random()
        row = ev_cdf[j]
        e = 0
        while e < row.size - 1 and u >= row[e]:
            e += 1
        if e == 0:
            _close(alive, off, xf, KILLED, j, t, p, out_code, out_state, out_time, out_level)
            break
        size = 0.0
        if e <= n:
            law = sw_law[j, e - 1]
            j = e - 1
            if law >= 0:
                size = _sample_ph(ge, law, beta_cdf, ph_rates, next_cdf, orders)
        else:
            size = _sample_ph(ge, jump_law[j], beta_cdf, ph_rates, next_cdf, orders)
        if size > 0.0:
            xf -= size
            for k in range(n_track):
                if status[k] == 0 and xf < track_down[k]:
                    status[k] = 2
            for k in range(K):
                if not alive[k]:
                    continue
                yk = xf + off[k]
                if lo_kind[k] == TERMINATE and yk <= lo[k]:
                    _snapshot(extra, k, in_state)
                    alive[k] = False
                    n_alive -= 1
                    out_code[k, p] = EXIT_DOWN
                    out_state[k, p] = j
                    out_time[k, p] = t
                    out_level[k, p] = yk
                elif lo_kind[k] == REFLECT and yk < lo[k]:
                    off[k] = lo[k] - xf
            if n_alive == 0:
                break
            U, L = _window(xf, off, alive, lo, hi, lo_kind, hi_kind, target, has_target,
                           track_up, track_down, status)
        next_ev = t + ge.exponential() / rate[j] if rate[j] > 0 else np.inf

    for k in range(n_track):
        out_track[p, k] = status[k]
    for k in range(K):
        code = out_code[k, p]
        if code == HORIZON or code == KILLED:
            _snapshot(extra, k, in_state)
        if record[k]:
            for jj in range(n):
                for b in range(n_bins):
                    v = occ[k, jj, b]
                    if v != 0.0:
                        occ_sum[k, j0, jj, b] += v
                        occ_sq[k, j0, jj, b] += v * v
        for r in range(extra.shape[1]):
            for side in range(2):
                for jj in range(n):
                    v = extra[k, r, side, jj]
                    if v != 0.0:
                        extra_sum[k, r, side, j0, jj] += v
                        extra_sq[k, r, side, j0, jj] += v * v


@njit(inline="always")
def _close(alive, off, xf, code, j, t, p, out_code, out_state, out_time, out_level):
    for k in range(alive.size):
        if alive[k]:
            alive[k] = False
            out_code[k, p] = code
            out_state[k, p] = j
            out_time[k, p] = t
            out_level[k, p] = xf + off[k]
