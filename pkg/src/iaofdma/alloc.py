"""Rate evaluation, per-unit subproblems and the dual master loop.

The weighted-sum-rate problem with per-BS power budgets is solved in the
dual domain: for fixed prices ``lam`` the problem splits into independent
per-unit subproblems (a unit is a subcarrier or a subcarrier pair), and an
ellipsoid method searches over ``lam >= 0``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
MAX_SWEEPS = 100
SWEEP_TOL = 1e-9
FEAS_TOL = 1e-6


@dataclass
class LinkGains:
    """Normalized power gains for one unit; ``g[j, m]`` is BS ``j`` to the user of cell ``m``."""

    g: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        if self.g.shape != (3, 3):
            raise ValueError("link gains must be 3x3")
        if np.any(self.g < 0) or not np.all(np.isfinite(self.g)):
            raise ValueError("link gains must be finite and nonnegative")


def _gain_array(gains) -> np.ndarray:
    return gains.g if isinstance(gains, LinkGains) else LinkGains(gains).g


def sinr_and_rate(gains, powers, n_subcarriers: int, m: int) -> tuple[float, float]:
    """SINR of cell ``m``'s user and its rate ``log2(1 + sinr) / N`` in bps/Hz."""
    g = _gain_array(gains)
    p = np.asarray(powers, dtype=float)
    if np.any(p < 0):
        raise ValueError("powers must be nonnegative")
    interference = 1.0 + sum(p[j] * g[j, m] for j in range(3) if j != m)
    sinr = p[m] * g[m, m] / interference
    return float(sinr), float(np.log2(1.0 + sinr) / n_subcarriers)


def unit_rates(g: np.ndarray, p: np.ndarray, scale: float) -> np.ndarray:
    """Vectorized per-cell rates for gains ``(..., 3, 3)`` and powers ``(..., 3)``."""
    signal = p * np.diagonal(g, axis1=-2, axis2=-1)
    total = 1.0 + np.einsum("...j,...jm->...m", p, g)
    return scale * np.log2(1.0 + signal / (total - signal))


def waterfilling_power(g_eff, weight, lam, n_subcarriers: int, cap=np.inf):
    """Interference-free optimum ``max(0, w / (lam N ln2) - 1 / g)``, clipped to ``cap``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("lambda must be > 0 (the power would be unbounded)")
    g_eff = np.asarray(g_eff, dtype=float)
    with np.errstate(divide="ignore"):
        level = np.asarray(weight, dtype=float) / (lam * n_subcarriers * LN2) - 1.0 / g_eff
    p = np.minimum(np.maximum(level, 0.0), cap)
    return p if p.ndim else float(p)


def _as3(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    return np.full(3, float(arr)) if arr.ndim == 0 else arr.astype(float).copy()


def optimize_powers_fixed_users(gains, weights, lam, p_cap, n_subcarriers: int, warm=None, return_history=False):
    """Multi-start cyclic coordinate ascent on one unit's ``f = sum w r - lam p``.

    Each coordinate step maximizes exactly over ``[0, p_cap[m]]``; starts
    are all-zero and each single-BS corner at its cap (plus ``warm`` when
    given).  Returns ``(powers, f)``; with ``return_history`` also the
    per-sweep objective trace of the best start.
    """
    g = _gain_array(gains)
    w, lam, cap = _as3(weights), _as3(lam), _as3(p_cap)
    if np.any(lam < 0):
        raise ValueError("lambda must be nonnegative")
    if np.any(lam == 0) and not np.all(np.isfinite(cap[lam == 0])):
        raise ValueError("a zero price needs a finite power cap")
    scale = 1.0 / n_subcarriers
    warm_arr = np.full(3, -1.0) if warm is None else np.clip(np.asarray(warm, dtype=float), 0.0, cap)
    out = np.empty(3)
    f = _kernels.best_of_starts(g, w, lam, cap, scale, MAX_SWEEPS, SWEEP_TOL, warm_arr, out)
    if not return_history:
        return out, float(f)
    hist = np.empty(MAX_SWEEPS + 1)
    traces = []
    starts = [np.zeros(3)] + [np.where(np.arange(3) == m, cap, 0.0) for m in range(3)]
    if warm is not None:
        starts.append(warm_arr)
    for s in starts:
        p = s.copy()
        fs, n = _kernels.coord_ascent(g, w, lam, cap, p, scale, MAX_SWEEPS, SWEEP_TOL, hist)
        traces.append((fs, hist[: n + 1].copy()))
    return out, float(f), max(traces, key=lambda x: x[0])[1]


def all_triples(n_users) -> np.ndarray:
    """Lexicographic list of user triples ``(k1, k2, k3)``; ``n_users`` may differ per cell."""
    if np.isscalar(n_users):
        n_users = (n_users,) * 3
    return np.array(list(itertools.product(*[range(k) for k in n_users])), dtype=np.int64).reshape(-1, 3)


def triple_gains(G: np.ndarray, triples: np.ndarray) -> np.ndarray:
    """Gather ``(U, T, 3, 3)`` link gains from per-user gains ``G[j, m, k, U]``."""
    cols = [G[:, m, triples[:, m], :] for m in range(3)]  # each (3, T, U)
    return np.stack(cols, axis=-1).transpose(2, 1, 0, 3)


def triple_weights(weights: np.ndarray, triples: np.ndarray, n_units: int) -> np.ndarray:
    w = np.stack([weights[m][triples[:, m]] for m in range(3)], axis=-1)  # (T, 3)
    return np.broadcast_to(w, (n_units,) + w.shape)


def per_sc_subproblem(G, weights, lam, p_cap, n_subcarriers: int):
    """Best user triple and powers for one subcarrier by exhaustive enumeration.

    ``G[j, m, k]`` holds the normalized gains from BS ``j`` to user ``k`` of
    cell ``m``; ``weights[m][k]`` the user weights.  Ties go to the
    lexicographically smallest triple.  Returns ``((k1, k2, k3), powers, f)``.
    """
    G = np.asarray(G, dtype=float)
    K = G.shape[2]
    triples = all_triples(K)
    w = np.asarray(weights, dtype=float).reshape(3, -1)
    problem = UnitProblem(triple_gains(G[..., None], triples), triple_weights(w, triples, 1), triples, n_subcarriers, prune=False)
    sol = problem.solve(_as3(lam), _as3(p_cap))
    t = int(sol.triple[0])
    return tuple(int(k) for k in triples[t]), sol.powers[0].copy(), float(sol.values[0])


@dataclass
class UnitSolution:
    triple: np.ndarray  # (U,) index into the problem's triple table, -1 if none eligible
    powers: np.ndarray  # (U, 3)
    values: np.ndarray  # (U,) f_n


class UnitProblem:
    """Independent per-unit subproblems sharing one set of prices.

    ``gains`` is ``(U, T, 3, 3)``: for unit ``u`` and candidate triple ``t``
    the link gains ``g[j, m]``.  ``eligible`` masks candidates per unit.
    ``prune`` skips candidates whose interference-free bound cannot beat
    the incumbent; the winner is unchanged.
    """

    def __init__(self, gains, weights, triples, n_subcarriers, eligible=None, prune=True):
        self.gains = np.ascontiguousarray(gains, dtype=float)
        U, T = self.gains.shape[:2]
        self.weights = np.ascontiguousarray(np.broadcast_to(weights, (U, T, 3)), dtype=float)
        self.triples = np.asarray(triples, dtype=np.int64)
        self.scale = 1.0 / n_subcarriers
        self.n_subcarriers = n_subcarriers
        self.eligible = np.ones((U, T), dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)
        self.prune = prune
        self._direct = np.ascontiguousarray(np.diagonal(self.gains, axis1=-2, axis2=-1))

    @property
    def n_units(self) -> int:
        return self.gains.shape[0]

    def solve(self, lam, cap, warm: UnitSolution | None = None) -> UnitSolution:
        U = self.n_units
        out_t = np.empty(U, dtype=np.int64)
        out_p = np.empty((U, 3))
        out_f = np.empty(U)
        if warm is None:
            warm_t, warm_p = np.full(U, -1, dtype=np.int64), np.zeros((U, 3))
        else:
            warm_t, warm_p = np.ascontiguousarray(warm.triple, dtype=np.int64), np.ascontiguousarray(warm.powers)
        lam = np.ascontiguousarray(lam, dtype=float)
        cap = np.ascontiguousarray(cap, dtype=float)
        if self.prune:
            bound = self.upper_bound(lam, cap)
            _kernels.solve_units_pruned(
                self.gains, self.weights, self.eligible, bound, lam, cap, self.scale,
                MAX_SWEEPS, SWEEP_TOL, warm_t, warm_p, out_t, out_p, out_f,
            )
        else:
            _kernels.solve_units(
                self.gains, self.weights, self.eligible, lam, cap, self.scale,
                MAX_SWEEPS, SWEEP_TOL, warm_t, warm_p, out_t, out_p, out_f,
            )
        return UnitSolution(out_t, out_p, out_f)

    def upper_bound(self, lam, cap) -> np.ndarray:
        """Interference-free value of every candidate, an upper bound on its objective."""
        return interference_free_value(self._direct, self.weights, lam, cap, self.scale)

    def rates(self, triple, powers) -> np.ndarray:
        out = np.empty((self.n_units, 3))
        _kernels.batch_rates(self.gains, np.asarray(triple, dtype=np.int64), np.ascontiguousarray(powers), self.scale, out)
        return out

    def utility(self, triple, powers) -> np.ndarray:
        idx = np.asarray(triple, dtype=np.int64)
        w = self.weights[np.arange(self.n_units), np.maximum(idx, 0)]
        return np.sum(w * self.rates(idx, powers), axis=1)

    def users(self, triple) -> np.ndarray:
        idx = np.asarray(triple)
        out = self.triples[np.maximum(idx, 0)].copy()
        out[idx < 0] = -1
        return out

    def waterfill_gains(self) -> tuple[np.ndarray, np.ndarray]:
        """Best interference-free gain per (unit, cell) and its weight, for price initialization."""
        score = self.weights * self._direct
        score = np.where(self.eligible[..., None], score, -np.inf)
        t = np.argmax(score, axis=1)  # (U, 3)
        u = np.arange(self.n_units)[:, None]
        m = np.arange(3)[None, :]
        g = np.where(np.isfinite(score[u, t, m]), self._direct[u, t, m], 0.0)
        return g, self.weights[u, t, m]


def interference_free_value(direct, weights, lam, cap, scale):
    """sum_m max_p [w scale log2(1 + p g) - lam p] over p in [0, cap]; shapes (..., 3)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        level = np.where(lam > 0, weights * scale / (LN2 * np.where(lam > 0, lam, 1.0)), np.inf)
        p = np.where(direct > 0, np.clip(level - 1.0 / direct, 0.0, cap), 0.0)
    val = weights * scale * np.log2(1.0 + p * direct) - lam * p
    return val.sum(axis=-1)


class PerfectIAProblem(UnitProblem):
    """IA pairs with residual interference ignored: closed-form water-filling per cell."""

    def solve(self, lam, cap, warm=None) -> UnitSolution:
        d = self._direct
        with np.errstate(divide="ignore", invalid="ignore"):
            level = np.where(lam > 0, self.weights * self.scale / (LN2 * np.where(lam > 0, lam, 1.0)), np.inf)
            p = np.where(d > 0, np.clip(level - 1.0 / d, 0.0, cap), 0.0)
        f = np.sum(self.weights * self.scale * np.log2(1.0 + p * d) - lam * p, axis=-1)
        f = np.where(self.eligible, f, -np.inf)
        t = np.argmax(f, axis=1)
        u = np.arange(self.n_units)
        ok = np.isfinite(f[u, t])
        return UnitSolution(np.where(ok, t, -1), np.where(ok[:, None], p[u, t], 0.0), np.where(ok, f[u, t], 0.0))

    def rates(self, triple, powers) -> np.ndarray:
        idx = np.asarray(triple, dtype=np.int64)
        d = self._direct[np.arange(self.n_units), np.maximum(idx, 0)]
        r = self.scale * np.log2(1.0 + powers * d)
        r[idx < 0] = 0.0
        return r


class CompositeProblem:
    """Several unit problems priced by the same ``lam`` and sharing the per-BS budgets."""

    def __init__(self, parts):
        self.parts = list(parts)
        self.n_subcarriers = self.parts[0].n_subcarriers
        self._bounds = np.cumsum([0] + [p.n_units for p in self.parts])

    @property
    def n_units(self) -> int:
        return int(self._bounds[-1])

    def _split(self, arr):
        return [arr[a:b] for a, b in zip(self._bounds[:-1], self._bounds[1:])]

    def solve(self, lam, cap, warm=None) -> UnitSolution:
        warms = [None] * len(self.parts)
        if warm is not None:
            warms = [UnitSolution(t, p, f) for t, p, f in zip(self._split(warm.triple), self._split(warm.powers), self._split(warm.values))]
        sols = [part.solve(lam, cap, w) for part, w in zip(self.parts, warms)]
        return UnitSolution(*(np.concatenate([getattr(s, k) for s in sols]) for k in ("triple", "powers", "values")))

    def rates(self, triple, powers):
        return np.concatenate([p.rates(t, q) for p, t, q in zip(self.parts, self._split(triple), self._split(powers))])

    def utility(self, triple, powers):
        return np.concatenate([p.utility(t, q) for p, t, q in zip(self.parts, self._split(triple), self._split(powers))])

    def users(self, triple):
        return np.concatenate([p.users(t) for p, t in zip(self.parts, self._split(triple))])

    def waterfill_gains(self):
        gs, ws = zip(*(p.waterfill_gains() for p in self.parts))
        return np.concatenate(gs), np.concatenate(ws)


@dataclass
class DualState:
    lam: np.ndarray
    dual_value: float
    subgradient: np.ndarray
    iterations: int = 0
    history: list = field(default_factory=list)  # (lam, f(lam), best primal so far)


@dataclass
class Allocation:
    """Feasible primal allocation: per-unit user triple (indices per cell) and powers."""

    triple: np.ndarray  # (U,) index into the problem's candidate table
    users: np.ndarray  # (U, 3), -1 for an unused unit
    powers: np.ndarray  # (U, 3)
    rates: np.ndarray  # (U, 3)
    utility: float

    def power_used(self) -> np.ndarray:
        return self.powers.sum(axis=0)


def price_guess(problem, budget) -> np.ndarray:
    """Per-BS price of interference-free weighted water-filling with the best user on each unit."""
    g, w = problem.waterfill_gains()
    scale = 1.0 / problem.n_subcarriers
    lam = np.empty(3)
    for m in range(3):
        lam[m] = waterfill_price(g[:, m], w[:, m], budget[m], scale)
    finite = lam[np.isfinite(lam) & (lam > 0)]
    fallback = finite.max() if finite.size else 1.0
    return np.where(np.isfinite(lam) & (lam > 0), lam, fallback)


def waterfill_price(g, w, budget, scale, rtol=1e-10) -> float:
    """Price ``lam`` at which ``sum (w scale / (lam ln2) - 1/g)^+`` equals ``budget`` (bisection)."""
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    ok = (g > 0) & (w > 0)
    if budget <= 0 or not ok.any():
        return np.inf
    g, w = g[ok], w[ok]

    def used(lam):
        return np.maximum(w * scale / (lam * LN2) - 1.0 / g, 0.0).sum()

    hi = np.max(w * g) * scale / LN2  # at or above this price nothing is used
    lo = hi
    while used(lo) < budget:
        lo *= 0.5
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if used(mid) > budget:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1 < rtol:
            break
    return float(np.sqrt(lo * hi))


def rescale_to_budget(powers: np.ndarray, budget) -> np.ndarray:
    """Scale each BS's powers down uniformly when its total exceeds the budget."""
    used = powers.sum(axis=0)
    budget = np.asarray(budget, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(used > budget, budget / used, 1.0)
    return powers * factor


@dataclass
class DualResult:
    state: DualState
    allocation: Allocation
    gap: float
    converged: bool


def dual_master(
    problem,
    budget,
    tol: float = 1e-3,
    gap_tol: float = 1e-4,
    max_iter: int = 300,
    box_scale: float = 2.0,
    warm: Allocation | None = None,
    lam0=None,
    gap_flag: float = 0.05,
) -> DualResult:
    """Ellipsoid search over the per-BS prices ``lam >= 0``.

    The initial ellipsoid is the ball circumscribing the box
    ``[0, box_scale * lam0]^3`` where ``lam0`` is the interference-free
    water-filling price.  Each step cuts with the subgradient
    ``P_tot - sum_n p^n(lam)`` (or a positivity cut when the center has a
    negative entry).  Every visited ``lam`` also yields a primal candidate:
    its allocation with each over-budget BS scaled back to its budget.  The
    best candidate (and ``warm``, if given and feasible) is reported.

    Stops when the largest semi-axis falls below ``tol * max(lam0)``, the
    relative gap between the best dual value and best primal value falls
    below ``gap_tol``, or after ``max_iter`` steps.
    """
    budget = _as3(budget)
    cap = budget.copy()
    n = 3
    U = problem.n_units
    lam0 = price_guess(problem, budget) if lam0 is None else _as3(lam0)
    center = 0.5 * box_scale * lam0
    E = np.diag((center * np.sqrt(n)) ** 2)
    axis_tol = tol * lam0.max()

    best_primal = -np.inf
    best_alloc = None
    if warm is not None and np.all(warm.power_used() <= budget * (1 + FEAS_TOL)):
        best_primal, best_alloc = warm.utility, warm
    incumbent = None if warm is None else UnitSolution(warm.triple, warm.powers, np.zeros(U))

    best_dual, best_lam, best_sub = np.inf, center.copy(), np.zeros(3)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        if np.any(center < 0):
            g = np.where(center == center.min(), -1.0, 0.0)
            g /= np.linalg.norm(g)
        else:
            sol = problem.solve(center, cap, incumbent)
            used = sol.powers.sum(axis=0)
            f = float(sol.values.sum() + center @ budget)
            sub = budget - used
            primal_p = rescale_to_budget(sol.powers, budget)
            primal = float(problem.utility(sol.triple, primal_p).sum())
            if primal > best_primal:
                best_primal = primal
                best_alloc = Allocation(sol.triple, problem.users(sol.triple), primal_p, problem.rates(sol.triple, primal_p), primal)
                incumbent = UnitSolution(sol.triple, primal_p, np.zeros(U))
            if f < best_dual:
                best_dual, best_lam, best_sub = f, center.copy(), sub
            history.append((center.copy(), f, best_primal))
            if best_dual - best_primal <= gap_tol * max(abs(best_dual), 1e-300):
                break
            if not np.any(sub):
                break
            g = sub
        Eg = E @ g
        gEg = float(g @ Eg)
        if gEg <= 0:
            break
        step = Eg / np.sqrt(gEg)
        center = center - step / (n + 1)
        E = n * n / (n * n - 1.0) * (E - 2.0 / (n + 1) * np.outer(step, step))
        E = 0.5 * (E + E.T)
        if np.sqrt(np.max(np.linalg.eigvalsh(E))) <= axis_tol:
            break

    if best_alloc is None:
        zero = np.zeros((U, 3))
        t = np.full(U, -1, dtype=np.int64)
        best_alloc = Allocation(t, problem.users(t), zero, zero.copy(), 0.0)
        best_primal = 0.0
    if not np.isfinite(best_dual):
        best_dual = best_primal
    gap = (best_dual - best_primal) / abs(best_dual) if best_dual != 0 else 0.0
    converged = gap <= gap_flag
    if not converged:
        log.info("dual master stopped with relative gap %.3g after %d iterations", gap, it)
    state = DualState(best_lam, best_dual, best_sub, it, history)
    return DualResult(state, best_alloc, float(gap), converged)
