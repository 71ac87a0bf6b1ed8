"""Compiled inner loops for the per-unit power subproblems.

A *unit* is one subcarrier (traditional scheme) or one subcarrier pair (IA
scheme).  Gains are 3x3 arrays ``g[j, m]``: normalized power gain from BS
``j`` to the selected user of cell ``m``.  The per-unit objective is

    f = sum_m w[m] * scale * log2(1 + SINR_m) - lam[m] * p[m]

with ``scale = 1/N``.
"""

import numpy as np
from numba import njit

LN2 = np.log(2.0)


@njit(cache=True)
def unit_rates(g, p, scale, out):
    for m in range(3):
        interf = 1.0
        for j in range(3):
            if j != m:
                interf += p[j] * g[j, m]
        out[m] = scale * np.log2(1.0 + p[m] * g[m, m] / interf)


@njit(cache=True)
def unit_objective(g, w, lam, p, scale):
    f = 0.0
    for m in range(3):
        interf = 1.0
        for j in range(3):
            if j != m:
                interf += p[j] * g[j, m]
        f += w[m] * scale * np.log2(1.0 + p[m] * g[m, m] / interf) - lam[m] * p[m]
    return f


@njit(cache=True)
def _coord_terms(g, w, p, m, c):
    """Constants of the scalar objective in p[m] with the other powers fixed."""
    A = 1.0
    for j in range(3):
        if j != m:
            A += p[j] * g[j, m]
    o1 = (m + 1) % 3
    o2 = (m + 2) % 3
    # victim j: rate term c*w_j*[ln(B_j + S_j + e_j x) - ln(B_j + e_j x)]
    B1 = 1.0 + p[o2] * g[o2, o1]
    B2 = 1.0 + p[o1] * g[o1, o2]
    S1 = p[o1] * g[o1, o1]
    S2 = p[o2] * g[o2, o2]
    e1 = g[m, o1]
    e2 = g[m, o2]
    c1 = c * w[o1]
    c2 = c * w[o2]
    return A, B1, S1, e1, c1, B2, S2, e2, c2


@njit(cache=True)
def _phi(x, a, gm, A, lam, B1, S1, e1, c1, B2, S2, e2, c2):
    v = a * np.log(A + gm * x) - lam * x
    if S1 > 0.0:
        v += c1 * (np.log(B1 + S1 + e1 * x) - np.log(B1 + e1 * x))
    if S2 > 0.0:
        v += c2 * (np.log(B2 + S2 + e2 * x) - np.log(B2 + e2 * x))
    return v


@njit(cache=True)
def _dphi(x, a, gm, A, lam, B1, S1, e1, c1, B2, S2, e2, c2):
    d = a * gm / (A + gm * x) - lam
    if S1 > 0.0 and e1 > 0.0:
        d -= c1 * S1 * e1 / ((B1 + e1 * x) * (B1 + S1 + e1 * x))
    if S2 > 0.0 and e2 > 0.0:
        d -= c2 * S2 * e2 / ((B2 + e2 * x) * (B2 + S2 + e2 * x))
    return d


@njit(cache=True)
def _d2phi(x, a, gm, A, B1, S1, e1, c1, B2, S2, e2, c2):
    t = A + gm * x
    d = -a * gm * gm / (t * t)
    if S1 > 0.0 and e1 > 0.0:
        u, v = B1 + e1 * x, B1 + S1 + e1 * x
        d += c1 * S1 * e1 * e1 * (u + v) / (u * u * v * v)
    if S2 > 0.0 and e2 > 0.0:
        u, v = B2 + e2 * x, B2 + S2 + e2 * x
        d += c2 * S2 * e2 * e2 * (u + v) / (u * u * v * v)
    return d


@njit(cache=True)
def _bracketed_root(lo, hi, a, gm, A, lam, B1, S1, e1, c1, B2, S2, e2, c2):
    """Root of the derivative in [lo, hi] given d(lo) > 0 >= d(hi); Newton with bisection fallback."""
    x = hi
    for _ in range(200):
        d = _dphi(x, a, gm, A, lam, B1, S1, e1, c1, B2, S2, e2, c2)
        if d > 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= 1e-13 * hi:
            break
        dd = _d2phi(x, a, gm, A, B1, S1, e1, c1, B2, S2, e2, c2)
        xn = x - d / dd if dd != 0.0 else 0.5 * (lo + hi)
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        x = xn
    return 0.5 * (lo + hi)


@njit(cache=True)
def coord_update(g, w, lam, cap, p, m, c):
    """Maximize the objective over p[m] in [0, cap[m]] with the other powers fixed.

    Candidates are zero and the current value, plus the largest stationary point
    below the interference-free water level (no stationary point lies above
    it).  Never decreases the objective.
    """
    a = c * w[m]
    gm = g[m, m]
    A, B1, S1, e1, c1, B2, S2, e2, c2 = _coord_terms(g, w, p, m, c)
    lm = lam[m]
    cur = p[m]
    if a <= 0.0 or gm <= 0.0 or cap[m] <= 0.0:
        hi = 0.0
    elif lm > 0.0:
        hi = min(cap[m], a / lm - A / gm)
    else:
        hi = cap[m]
    best_x = cur
    best_v = _phi(cur, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2)
    v0 = _phi(0.0, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2)
    if v0 > best_v:
        best_x, best_v = 0.0, v0
    if hi > 0.0:
        star = -1.0
        dh = _dphi(hi, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2)
        if dh >= 0.0:
            star = hi
        else:
            d0 = _dphi(0.0, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2)
            if d0 > 0.0:
                star = _bracketed_root(0.0, hi, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2)
            else:
                # derivative negative at both ends; look for an interior ascent region
                x = hi
                lo_found = -1.0
                for _ in range(40):
                    dd = _d2phi(x, a, gm, A, B1, S1, e1, c1, B2, S2, e2, c2)
                    if dd >= 0.0:
                        break
                    xn = x - _dphi(x, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2) / dd
                    if xn <= 0.0 or x - xn <= 1e-13 * x:
                        break
                    if _dphi(xn, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2) > 0.0:
                        lo_found = xn
                        break
                    x = xn
                if lo_found < 0.0:
                    x = hi
                    for _ in range(12):
                        x *= 0.25
                        if _dphi(x, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2) > 0.0:
                            lo_found = x
                            break
                if lo_found > 0.0:
                    # the ascent region ends at the first sign change to the right
                    top = hi
                    if x > lo_found and _dphi(x, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2) <= 0.0:
                        top = x
                    star = _bracketed_root(lo_found, top, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2)
        if star >= 0.0:
            vs = _phi(star, a, gm, A, lm, B1, S1, e1, c1, B2, S2, e2, c2)
            if vs > best_v:
                best_x, best_v = star, vs
    p[m] = best_x


@njit(cache=True)
def coord_ascent(g, w, lam, cap, p, scale, max_sweeps, tol, history):
    """Cyclic coordinate ascent in place on ``p``; returns (objective, sweeps).

    ``history[s]`` receives the objective after sweep ``s`` (``history[0]``
    is the starting value), so it must hold ``max_sweeps + 1`` entries.
    """
    c = scale / LN2
    f = unit_objective(g, w, lam, p, scale)
    history[0] = f
    sweeps = 0
    for s in range(max_sweeps):
        for m in range(3):
            coord_update(g, w, lam, cap, p, m, c)
        fn = unit_objective(g, w, lam, p, scale)
        sweeps = s + 1
        history[sweeps] = fn
        done = fn - f < tol
        f = max(f, fn)
        if done:
            break
    return f, sweeps


@njit(cache=True)
def best_of_starts(g, w, lam, cap, scale, max_sweeps, tol, warm, out_p):
    """Multi-start coordinate ascent: all-zero, each single-BS corner at its cap, optional warm start."""
    history = np.empty(max_sweeps + 1)
    p = np.empty(3)
    best = -np.inf
    n_starts = 4 if warm[0] < 0.0 else 5
    for s in range(n_starts):
        if s < 4:
            for m in range(3):
                p[m] = 0.0
            if s > 0:
                p[s - 1] = cap[s - 1]
        else:
            for m in range(3):
                p[m] = min(max(warm[m], 0.0), cap[m])
        f, _ = coord_ascent(g, w, lam, cap, p, scale, max_sweeps, tol, history)
        if f > best:
            best = f
            for m in range(3):
                out_p[m] = p[m]
    return best


@njit(cache=True)
def solve_units(gains, weights, eligible, lam, cap, scale, max_sweeps, tol, warm_t, warm_p, out_t, out_p, out_f):
    """Per unit: pick the eligible triple maximizing the multi-start objective.

    gains: (U, T, 3, 3); weights: (U, T, 3); eligible: (U, T) bool.
    ``warm_t[u] >= 0`` adds ``warm_p[u]`` as an extra start for that triple.
    Ties go to the lowest triple index.
    """
    U, T = eligible.shape
    pt = np.empty(3)
    nowarm = np.full(3, -1.0)
    for u in range(U):
        best = -np.inf
        out_t[u] = -1
        for t in range(T):
            if not eligible[u, t]:
                continue
            warm = warm_p[u] if warm_t[u] == t else nowarm
            f = best_of_starts(gains[u, t], weights[u, t], lam, cap, scale, max_sweeps, tol, warm, pt)
            if f > best:
                best = f
                out_t[u] = t
                for m in range(3):
                    out_p[u, m] = pt[m]
        out_f[u] = best if out_t[u] >= 0 else 0.0
        if out_t[u] < 0:
            for m in range(3):
                out_p[u, m] = 0.0


@njit(cache=True)
def batch_rates(gains, idx, p, scale, out):
    """Rates for the chosen triple of each unit: gains (U, T, 3, 3), idx (U,), p (U, 3)."""
    for u in range(idx.shape[0]):
        if idx[u] < 0:
            for m in range(3):
                out[u, m] = 0.0
        else:
            unit_rates(gains[u, idx[u]], p[u], scale, out[u])


@njit(cache=True)
def solve_units_pruned(gains, weights, eligible, bound, lam, cap, scale, max_sweeps, tol, warm_t, warm_p, out_t, out_p, out_f):
    """Same result as ``solve_units``, visiting candidates by decreasing upper bound.

    ``bound[u, t]`` must dominate every objective value the candidate can
    reach; once it falls below the incumbent the remaining candidates are
    skipped.  Equal values still resolve to the lowest triple index.
    """
    U, T = eligible.shape
    pt = np.empty(3)
    nowarm = np.full(3, -1.0)
    for u in range(U):
        order = np.argsort(-bound[u])
        best = -np.inf
        out_t[u] = -1
        for i in range(T):
            t = order[i]
            if not eligible[u, t]:
                continue
            if bound[u, t] < best:
                break
            warm = warm_p[u] if warm_t[u] == t else nowarm
            f = best_of_starts(gains[u, t], weights[u, t], lam, cap, scale, max_sweeps, tol, warm, pt)
            if f > best or (f == best and t < out_t[u]):
                best = f
                out_t[u] = t
                for m in range(3):
                    out_p[u, m] = pt[m]
        out_f[u] = best if out_t[u] >= 0 else 0.0
        if out_t[u] < 0:
            for m in range(3):
                out_p[u, m] = 0.0
