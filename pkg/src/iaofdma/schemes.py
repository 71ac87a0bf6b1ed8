"""End-to-end allocation schemes: traditional, IA-based, hybrid and OFP.

Every scheme returns a :class:`SchemeResult` whose allocation is stored per
*unit*: a unit is either one subcarrier or one subcarrier pair.  Pair units
carry their precoders and receive filters so rates can be recomputed from
the raw channel tensor.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import alloc
from .alloc import LN2, CompositeProblem, PerfectIAProblem, UnitProblem
from .channel import CIR, CNIR, N_CELLS, ChannelTensor, UserLayout
from .ia import build_paired_channels, distributed_ia_batch, pair_subcarriers

SCHEMES = ("traditional", "ia_perfect", "ia_ri", "hybrid", "ofp")


@dataclass
class IAParams:
    max_iters: int = 50
    leakage_tol: float = 1e-8
    n_starts: int = 1
    seed: int = 0
    preselect: bool = False  # keep only the top-2 users per cell and pair


@dataclass
class DualParams:
    tol: float = 1e-3
    gap_tol: float = 1e-4
    max_iter: int = 300
    box_scale: float = 2.0


@dataclass
class SchemeResult:
    scheme: str
    sum_rate: float
    per_user_rates: np.ndarray  # (3, K)
    power_used: np.ndarray  # (3,)
    budget: np.ndarray
    dual_gap: float
    converged: bool
    unit_subcarriers: np.ndarray  # (U, 2); second entry -1 for single-subcarrier units
    users: np.ndarray  # (U, 3); -1 where the cell is idle
    powers: np.ndarray  # (U, 3)
    precoders: np.ndarray | None = None  # (U, 3, 2), NaN for single-subcarrier units
    filters: np.ndarray | None = None
    ignore_residual: bool = False
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    allocation: alloc.Allocation | None = None  # solver-level allocation, reusable as a warm start


@dataclass(frozen=True)
class SubbandPartition:
    ia_subcarriers: np.ndarray  # Phi
    trad_subcarriers: np.ndarray  # Phi'
    ia_pairs: np.ndarray  # (|Phi~|, 2) subcarrier pairs (i, i + N/2)


def build_subband_partition(n_subcarriers: int, ia_fraction: float = 1 / 6) -> SubbandPartition:
    """IA subband: the first ``floor(N/6)`` subcarriers of each half of the band."""
    N = n_subcarriers
    if N < 6:
        raise ValueError("the hybrid partition needs at least 6 subcarriers")
    if N % 2:
        raise ValueError("the hybrid partition needs an even number of subcarriers")
    f = int(np.floor(N * ia_fraction))
    half = N // 2
    first = np.arange(f)
    phi = np.concatenate([first, first + half])
    rest = np.setdiff1d(np.arange(N), phi)
    return SubbandPartition(phi, rest, np.stack([first, first + half], axis=1))


def _weights(tensor: ChannelTensor, weights) -> np.ndarray:
    K = tensor.dims.users_per_cell
    if weights is None:
        return np.ones((N_CELLS, K))
    w = np.asarray(weights, dtype=float)
    return np.broadcast_to(w, (N_CELLS, K)).copy()


def _budget(tensor: ChannelTensor, budget) -> np.ndarray:
    b = tensor.dims.power_budget if budget is None else budget
    return alloc._as3(b)


def dominated_users(G: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Mask ``(3, K, U)`` of users that another user of the same cell dominates on that unit.

    User ``a`` dominates ``b`` when it has at least the direct gain and
    weight of ``b`` and at most its gain from every interfering BS.  Among
    identical users the lowest index survives.
    """
    K = G.shape[2]
    out = np.zeros((N_CELLS, K, G.shape[3]), dtype=bool)
    for m in range(N_CELLS):
        others = [j for j in range(N_CELLS) if j != m]
        d = G[m, m]  # (K, U)
        x = G[others, m]  # (2, K, U)
        w = weights[m][:, None]
        # [a, b, U]: a at least as good as b everywhere
        geq = (d[:, None] >= d[None, :]) & np.all(x[:, :, None] <= x[:, None, :], axis=0) & (w[:, None] >= w[None, :])
        strict = (d[:, None] > d[None, :]) | np.any(x[:, :, None] < x[:, None, :], axis=0) | (w[:, None] > w[None, :])
        lower = (np.arange(K)[:, None] < np.arange(K)[None, :])[..., None]
        dom = geq & (strict | lower)
        dom[np.arange(K), np.arange(K)] = False
        out[m] = dom.any(axis=0)
    return out


def traditional_problem(tensor: ChannelTensor, weights=None, subcarriers=None, user_mask=None, prune=True) -> UnitProblem:
    """Per-subcarrier problem over ``subcarriers`` (default: all), users restricted by ``user_mask`` (3, K)."""
    w = _weights(tensor, weights)
    N, K = tensor.dims.n_subcarriers, tensor.dims.users_per_cell
    sc = np.arange(N) if subcarriers is None else np.asarray(subcarriers)
    G = tensor.power_gains()[..., sc]
    triples = alloc.all_triples(K)
    eligible = np.ones((len(sc), len(triples)), dtype=bool)
    if user_mask is not None:
        ok = np.all([np.asarray(user_mask)[m][triples[:, m]] for m in range(N_CELLS)], axis=0)
        eligible &= ok[None, :]
    if prune:
        dom = dominated_users(G, w)
        for m in range(N_CELLS):
            eligible &= ~dom[m][triples[:, m]].T
    prob = UnitProblem(alloc.triple_gains(G, triples), alloc.triple_weights(w, triples, len(sc)), triples, N,
                       eligible=eligible, prune=prune)
    prob.unit_subcarriers = np.stack([sc, np.full(len(sc), -1)], axis=1)
    return prob


def _preselected(direct_pair: np.ndarray, allowed=None, keep: int = 2) -> np.ndarray:
    """Mask (3, K, P) of the ``keep`` allowed users per cell with the largest mean direct gain on each pair."""
    score = np.mean(np.abs(direct_pair) ** 2, axis=-1)  # (3, K, P)
    if allowed is not None:
        score = np.where(np.asarray(allowed)[..., None], score, -np.inf)
    order = np.argsort(-score, axis=1, kind="stable")
    mask = np.zeros(score.shape, dtype=bool)
    np.put_along_axis(mask, order[:, :keep], True, axis=1)
    return mask


def ia_problem(
    tensor: ChannelTensor,
    weights=None,
    mode: str = "with_ri",
    ia: IAParams | None = None,
    pairs=None,
    user_mask=None,
    ia_cache: dict | None = None,
) -> UnitProblem:
    """Per-pair problem over the effective channels from distributed IA.

    ``pairs`` restricts to a subset of pair indices of the ``(n, n + N/2)``
    pairing.  IA results depend only on the channels, so they are cached in
    ``ia_cache`` (keyed by pair index and triple) when given.
    """
    if mode not in ("perfect", "with_ri"):
        raise ValueError(f"unknown IA mode {mode!r}")
    ia = ia or IAParams()
    w = _weights(tensor, weights)
    N, K = tensor.dims.n_subcarriers, tensor.dims.users_per_cell
    pairing = pair_subcarriers(N)
    pair_idx = np.arange(pairing.n_pairs) if pairs is None else np.asarray(pairs)
    paired = build_paired_channels(tensor, pairing)[:, :, :, pair_idx, :]  # (3, 3, K, P, 2)
    triples = alloc.all_triples(K)
    P, T = len(pair_idx), len(triples)
    eligible = np.ones((P, T), dtype=bool)
    if user_mask is not None:
        ok = np.all([np.asarray(user_mask)[m][triples[:, m]] for m in range(N_CELLS)], axis=0)
        eligible &= ok[None, :]
    if ia.preselect:
        direct = np.stack([paired[m, m] for m in range(N_CELLS)])  # (3, K, P, 2)
        sel = _preselected(direct, user_mask)
        for m in range(N_CELLS):
            eligible &= sel[m][triples[:, m]].T

    precoders = np.full((P, T, N_CELLS, 2), np.nan, dtype=complex)
    filters = np.full((P, T, N_CELLS, 2), np.nan, dtype=complex)
    leakage = np.full((P, T), np.nan)
    cache = {} if ia_cache is None else ia_cache
    todo = [(p, t) for p, t in zip(*np.nonzero(eligible)) if (int(pair_idx[p]), int(t)) not in cache]
    if todo:
        pi = np.array([p for p, _ in todo])
        ti = np.array([t for _, t in todo])
        H = np.empty((len(todo), N_CELLS, N_CELLS, 2), dtype=complex)
        for m in range(N_CELLS):
            H[:, :, m, :] = paired[:, m, triples[ti, m], pi, :].transpose(1, 0, 2)
        res = distributed_ia_batch(H, ia.max_iters, ia.leakage_tol, ia.n_starts, ia.seed)
        for b, (p, t) in enumerate(todo):
            cache[(int(pair_idx[p]), int(t))] = (res.precoders[b], res.filters[b], res.leakage[b], res.iterations[b])
    iters = np.zeros((P, T), dtype=int)
    for p, t in zip(*np.nonzero(eligible)):
        precoders[p, t], filters[p, t], leakage[p, t], iters[p, t] = cache[(int(pair_idx[p]), int(t))]

    # effective gains |u_m H_{j m} v_j|^2 / sigma^2 for every candidate
    H_all = np.empty((P, T, N_CELLS, N_CELLS, 2), dtype=complex)
    for m in range(N_CELLS):
        H_all[:, :, :, m, :] = paired[:, m, triples[:, m], :, :].transpose(2, 1, 0, 3)
    eff = np.einsum("ptmc,ptjmc,ptjc->ptjm", np.nan_to_num(filters), H_all, np.nan_to_num(precoders))
    gains = np.abs(eff) ** 2 / tensor.dims.noise_variance
    gains[~eligible] = 0.0

    cls = PerfectIAProblem if mode == "perfect" else UnitProblem
    prob = cls(gains, alloc.triple_weights(w, triples, P), triples, N, eligible=eligible, prune=True)
    prob.unit_subcarriers = pairing.pairs[pair_idx]
    prob.precoders = precoders
    prob.filters = filters
    prob.leakage = leakage
    prob.ia_iterations = iters
    return prob


def _finish(name, tensor, problem, dual, weights, budget, started, ignore_residual=False, diagnostics=None) -> SchemeResult:
    a = dual.allocation
    K = tensor.dims.users_per_cell
    per_user = np.zeros((N_CELLS, K))
    for m in range(N_CELLS):
        ok = a.users[:, m] >= 0
        np.add.at(per_user[m], a.users[ok, m], a.rates[ok, m])
    parts = problem.parts if isinstance(problem, CompositeProblem) else [problem]
    unit_sc = np.concatenate([p.unit_subcarriers for p in parts])
    pre = np.full((len(unit_sc), N_CELLS, 2), np.nan, dtype=complex)
    fil = pre.copy()
    leak = []
    offset = 0
    for p in parts:
        U = p.n_units
        if hasattr(p, "precoders"):
            t = a.triple[offset:offset + U]
            ok = t >= 0
            rows = np.arange(U)[ok]
            pre[offset + rows] = p.precoders[rows, t[ok]]
            fil[offset + rows] = p.filters[rows, t[ok]]
            leak.extend(p.leakage[rows, t[ok]].tolist())
        offset += U
    diag = {"dual_iterations": dual.state.iterations, "dual_value": dual.state.dual_value, "lambda": dual.state.lam.tolist()}
    if leak:
        diag["ia_leakage_mean"] = float(np.mean(leak))
        diag["ia_leakage_max"] = float(np.max(leak))
    diag.update(diagnostics or {})
    has_pairs = bool(np.any(unit_sc[:, 1] >= 0))
    return SchemeResult(
        scheme=name,
        sum_rate=float(a.utility),
        per_user_rates=per_user,
        power_used=a.power_used(),
        budget=budget,
        dual_gap=dual.gap,
        converged=dual.converged,
        unit_subcarriers=unit_sc,
        users=a.users,
        powers=a.powers,
        precoders=pre if has_pairs else None,
        filters=fil if has_pairs else None,
        ignore_residual=ignore_residual,
        diagnostics=diag,
        wall_time=time.perf_counter() - started,
        allocation=a,
    )


def _solve(problem, budget, dual: DualParams | None, warm):
    dual = dual or DualParams()
    warm_alloc = warm.allocation if isinstance(warm, SchemeResult) else warm
    return alloc.dual_master(problem, budget, tol=dual.tol, gap_tol=dual.gap_tol, max_iter=dual.max_iter,
                             box_scale=dual.box_scale, warm=warm_alloc)


def run_traditional(tensor: ChannelTensor, weights=None, budget=None, dual: DualParams | None = None,
                    warm=None, problem=None, prune=True) -> SchemeResult:
    """Per-subcarrier user selection and power allocation under per-BS budgets."""
    started = time.perf_counter()
    budget = _budget(tensor, budget)
    problem = problem or traditional_problem(tensor, weights, prune=prune)
    res = _solve(problem, budget, dual, warm)
    return _finish("traditional", tensor, problem, res, weights, budget, started)


def run_ia(tensor: ChannelTensor, weights=None, budget=None, mode: str = "with_ri", ia: IAParams | None = None,
           dual: DualParams | None = None, warm=None, problem=None, ia_cache=None) -> SchemeResult:
    """IA-based allocation over the pairs ``(n, n + N/2)``.

    ``mode="perfect"`` drops the residual interference (water-filling powers
    on the effective direct gains); ``mode="with_ri"`` keeps it.
    """
    started = time.perf_counter()
    budget = _budget(tensor, budget)
    problem = problem or ia_problem(tensor, weights, mode, ia, ia_cache=ia_cache)
    res = _solve(problem, budget, dual, warm)
    name = "ia_perfect" if mode == "perfect" else "ia_ri"
    return _finish(name, tensor, problem, res, weights, budget, started, ignore_residual=(mode == "perfect"))


def hybrid_problem(tensor: ChannelTensor, layout: UserLayout, weights=None, ia: IAParams | None = None,
                   ia_mode: str = "with_ri", partition: SubbandPartition | None = None, prune=True, ia_cache=None):
    """IA on the CIR subband pairs and per-subcarrier allocation on the rest, one shared budget.

    A subband whose region is empty in some cell falls back to the
    traditional allocation over its subcarriers with every user eligible.
    """
    N = tensor.dims.n_subcarriers
    part = partition or build_subband_partition(N)
    labels = np.asarray(layout.region_labels)
    cir = labels == CIR
    cnir = labels == CNIR
    fallback = {"ia_fallback": False, "trad_fallback": False}
    parts = []
    if len(part.ia_pairs):
        if np.all(cir.any(axis=1)):
            parts.append(ia_problem(tensor, weights, ia_mode, ia, pairs=part.ia_pairs[:, 0], user_mask=cir, ia_cache=ia_cache))
        else:
            fallback["ia_fallback"] = True
            parts.append(traditional_problem(tensor, weights, part.ia_subcarriers, prune=prune))
    if len(part.trad_subcarriers):
        if np.all(cnir.any(axis=1)):
            parts.append(traditional_problem(tensor, weights, part.trad_subcarriers, user_mask=cnir, prune=prune))
        else:
            fallback["trad_fallback"] = True
            parts.append(traditional_problem(tensor, weights, part.trad_subcarriers, prune=prune))
    prob = CompositeProblem(parts)
    prob.fallback = fallback
    return prob


def run_hybrid(tensor: ChannelTensor, layout: UserLayout, weights=None, budget=None, ia: IAParams | None = None,
               dual: DualParams | None = None, warm=None, problem=None, ia_mode: str = "with_ri",
               partition: SubbandPartition | None = None, ia_cache=None) -> SchemeResult:
    started = time.perf_counter()
    budget = _budget(tensor, budget)
    problem = problem or hybrid_problem(tensor, layout, weights, ia, ia_mode, partition, ia_cache=ia_cache)
    res = _solve(problem, budget, dual, warm)
    return _finish("hybrid", tensor, problem, res, weights, budget, started,
                   ignore_residual=(ia_mode == "perfect"), diagnostics=dict(problem.fallback))


def ofp_blocks(n_subcarriers: int) -> list[np.ndarray]:
    """Cell ``m`` owns subcarriers ``[m * floor(N/3), (m + 1) * floor(N/3))``; the remainder goes to cell 3."""
    b = n_subcarriers // 3
    return [np.arange(0, b), np.arange(b, 2 * b), np.arange(2 * b, n_subcarriers)]


def run_ofp(tensor: ChannelTensor, weights=None, budget=None, rtol: float = 1e-8) -> SchemeResult:
    """Orthogonal frequency partition: each cell serves its own third of the band alone."""
    started = time.perf_counter()
    w = _weights(tensor, weights)
    budget = _budget(tensor, budget)
    N, K = tensor.dims.n_subcarriers, tensor.dims.users_per_cell
    G = tensor.power_gains()
    users = np.full((N, N_CELLS), -1)
    powers = np.zeros((N, N_CELLS))
    rates = np.zeros((N, N_CELLS))
    lam = np.zeros(N_CELLS)
    for m, block in enumerate(ofp_blocks(N)):
        if not len(block):
            continue
        score = w[m][:, None] * G[m, m][:, block]  # (K, |block|)
        k = np.argmax(score, axis=0)
        g = G[m, m, k, block]
        wk = w[m][k]
        users[block, m] = k
        p, lam[m] = weighted_waterfill(g, wk, budget[m], N, rtol)
        powers[block, m] = p
        rates[block, m] = np.log2(1.0 + p * g) / N
    utility = float(np.sum(np.where(users >= 0, w[np.arange(N_CELLS), np.maximum(users, 0)], 0.0) * rates))
    per_user = np.zeros((N_CELLS, K))
    for m in range(N_CELLS):
        ok = users[:, m] >= 0
        np.add.at(per_user[m], users[ok, m], rates[ok, m])
    return SchemeResult(
        scheme="ofp", sum_rate=utility, per_user_rates=per_user, power_used=powers.sum(axis=0), budget=budget,
        dual_gap=0.0, converged=True, unit_subcarriers=np.stack([np.arange(N), np.full(N, -1)], axis=1),
        users=users, powers=powers, diagnostics={"lambda": lam.tolist()}, wall_time=time.perf_counter() - started,
    )


def weighted_waterfill(g, w, budget: float, n_subcarriers: int, rtol: float = 1e-8):
    """Powers ``(w / (lam N ln2) - 1/g)^+`` with ``lam`` bisected so they sum to ``budget``."""
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    if budget <= 0 or not np.any((g > 0) & (w > 0)):
        return np.zeros_like(g), np.inf
    lam = alloc.waterfill_price(g, w, budget, 1.0 / n_subcarriers, rtol=rtol * 1e-2)
    with np.errstate(divide="ignore"):
        p = np.where((g > 0) & (w > 0), np.maximum(w / (lam * n_subcarriers * LN2) - 1.0 / g, 0.0), 0.0)
    used = p.sum()
    if used > budget:
        p *= budget / used
    return p, lam


def recompute_sum_rate(tensor: ChannelTensor, result: SchemeResult, weights=None) -> float:
    """Weighted sum-rate rebuilt from the raw channel tensor and the stored allocation."""
    w = _weights(tensor, weights)
    h = tensor.gains
    sigma2 = tensor.dims.noise_variance
    N = tensor.dims.n_subcarriers
    total = 0.0
    for u, (n1, n2) in enumerate(result.unit_subcarriers):
        users = result.users[u]
        p = result.powers[u]
        active = users >= 0
        g = np.zeros((N_CELLS, N_CELLS))
        for m in range(N_CELLS):
            if not active[m]:
                continue
            for j in range(N_CELLS):
                if n2 < 0:
                    g[j, m] = abs(h[j, m, users[m], n1]) ** 2 / sigma2
                else:
                    uvec = result.filters[u, m]
                    hd = np.array([h[j, m, users[m], n1], h[j, m, users[m], n2]])
                    g[j, m] = abs(np.sum(uvec * hd * result.precoders[u, j])) ** 2 / sigma2
        if result.ignore_residual and n2 >= 0:
            g = np.diag(np.diag(g))
        for m in range(N_CELLS):
            if not active[m]:
                continue
            interf = 1.0 + sum(p[j] * g[j, m] for j in range(N_CELLS) if j != m and active[j])
            total += w[m, users[m]] * np.log2(1.0 + p[m] * g[m, m] / interf) / N
    return float(total)
