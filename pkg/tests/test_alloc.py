import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iaofdma import alloc
from iaofdma.alloc import (
    LN2,
    LinkGains,
    UnitProblem,
    dual_master,
    optimize_powers_fixed_users,
    per_sc_subproblem,
    sinr_and_rate,
    waterfilling_power,
)
from iaofdma.channel import SystemDims, gen_symmetric_channels, make_rng
from iaofdma.schemes import traditional_problem

from oracles import grid_power_oracle, joint_grid_two_subcarriers, objective, single_cell_waterfill


def random_gains(seed, cross=1.0):
    rng = make_rng(seed)
    g = rng.exponential(1.0, (3, 3)) * 10
    off = ~np.eye(3, dtype=bool)
    g[off] *= cross
    return g


def test_sinr_and_rate_example():
    g = np.zeros((3, 3))
    g[0, 0] = 4.0
    sinr, rate = sinr_and_rate(g, [1, 0, 0], 64, 0)
    assert sinr == 4.0
    assert rate == pytest.approx(np.log2(5) / 64, rel=1e-15)


def test_sinr_zero_power_and_no_interference():
    g = random_gains(0)
    assert sinr_and_rate(g, [0, 1, 1], 8, 0)[1] == 0.0
    gd = np.diag(np.diag(g))
    p = [0.3, 2.0, 1.0]
    assert sinr_and_rate(gd, p, 8, 1)[0] == p[1] * g[1, 1]


def test_link_gains_validation():
    with pytest.raises(ValueError):
        LinkGains(np.full((3, 3), -1.0))
    with pytest.raises(ValueError):
        LinkGains(np.ones((2, 2)))
    with pytest.raises(ValueError):
        sinr_and_rate(np.ones((3, 3)), [-1, 0, 0], 4, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 50), st.floats(0, 50), st.integers(0, 2))
def test_rate_monotone_in_own_power(seed, a, b, m):
    g = random_gains(seed)
    p = make_rng(seed + 1).random(3) * 10
    lo, hi = sorted([a, b])
    p_lo, p_hi = p.copy(), p.copy()
    p_lo[m], p_hi[m] = lo, hi
    assert sinr_and_rate(g, p_hi, 4, m)[1] >= sinr_and_rate(g, p_lo, 4, m)[1]


def test_waterfilling_examples():
    N = 16
    assert waterfilling_power(2.0, 1.0, 1.0 / (N * LN2), N) == pytest.approx(0.5, abs=1e-15)
    assert waterfilling_power(0.1, 1.0, 10.0, N) == 0.0
    lam = 0.01
    assert waterfilling_power(3.0, 2.0, 2 * lam, N) == waterfilling_power(3.0, 1.0, lam, N)
    with pytest.raises(ValueError):
        waterfilling_power(1.0, 1.0, 0.0, N)


def test_huge_price_shuts_down():
    p, f = optimize_powers_fixed_users(random_gains(1), np.ones(3), np.full(3, 1e6), np.full(3, 10.0), 4)
    assert np.all(p == 0) and f == 0.0


def test_decoupled_unit_matches_waterfilling():
    g = np.diag([3.0, 0.5, 8.0])
    lam = np.array([0.02, 0.05, 0.01])
    cap = np.array([10.0, 10.0, 0.5])
    p, _ = optimize_powers_fixed_users(g, np.ones(3), lam, cap, 4)
    expected = [waterfilling_power(g[m, m], 1.0, lam[m], 4, cap[m]) for m in range(3)]
    np.testing.assert_allclose(p, expected, atol=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_fixed_users_near_grid_oracle(seed):
    N = 16
    g = random_gains(seed)
    lam = np.full(3, 0.1) / N
    cap = np.full(3, 10.0)
    w = np.ones(3)
    _, f = optimize_powers_fixed_users(g, w, lam, cap, N)
    best, _ = grid_power_oracle(g, w, lam, cap, N, points=200)
    assert f >= best - 1e-3


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-3, 1.0), st.floats(0.1, 20.0))
def test_coordinate_ascent_is_monotone(seed, lam_scale, cap):
    g = random_gains(seed, cross=make_rng(seed).random())
    lam = make_rng(seed + 7).random(3) * lam_scale
    _, f, hist = optimize_powers_fixed_users(g, np.ones(3), lam, np.full(3, cap), 1, return_history=True)
    assert np.all(np.diff(hist) >= -1e-12)
    assert f == pytest.approx(hist[-1], abs=1e-12)


def test_zero_price_needs_finite_cap():
    with pytest.raises(ValueError):
        optimize_powers_fixed_users(random_gains(0), np.ones(3), [0, 1, 1], [np.inf, 1, 1], 4)


def test_single_triple_reduces_to_fixed_users():
    G = random_gains(2)[:, :, None]
    lam, cap = np.full(3, 0.05), np.full(3, 5.0)
    k, p, f = per_sc_subproblem(G, np.ones((3, 1)), lam, cap, 4)
    p2, f2 = optimize_powers_fixed_users(G[..., 0], np.ones(3), lam, cap, 4)
    assert k == (0, 0, 0)
    np.testing.assert_allclose(p, p2)
    assert f == f2


def test_dominant_users_selected():
    G = np.zeros((3, 3, 3))
    for m in range(3):
        G[m, m, :] = 1.0
        G[m, m, 2 - m] = 10.0
    k, _, _ = per_sc_subproblem(G, np.ones((3, 3)), np.full(3, 0.01), np.full(3, 10.0), 1)
    assert k == (2, 1, 0)


def test_ties_go_to_lexicographic_first():
    G = np.zeros((3, 3, 2))
    for m in range(3):
        G[m, m] = 2.0
    k, _, _ = per_sc_subproblem(G, np.ones((3, 2)), np.full(3, 0.01), np.full(3, 10.0), 1)
    assert k == (0, 0, 0)


@pytest.mark.parametrize("seed", range(2))
def test_per_sc_winner_matches_grid_enumeration(seed):
    rng = make_rng(seed)
    G = rng.exponential(1.0, (3, 3, 2)) * 5
    lam, cap = np.full(3, 0.05), np.full(3, 4.0)
    _, _, f = per_sc_subproblem(G, np.ones((3, 2)), lam, cap, 1)
    best = max(
        grid_power_oracle(_gather(G, (a, b, c)), np.ones(3), lam, cap, 1, points=80)[0]
        for a in range(2) for b in range(2) for c in range(2)
    )
    assert f >= best - 1e-3


def _gather(G, triple):
    return np.array([[G[j, m, triple[m]] for m in range(3)] for j in range(3)])


def test_dominance_pruning_keeps_the_optimum():
    t = gen_symmetric_channels(SystemDims(16, 4), 1.0, seed=3)
    lam, cap = np.full(3, 0.02), np.full(3, 50.0)
    full = traditional_problem(t, prune=False).solve(lam, cap)
    fast = traditional_problem(t, prune=True).solve(lam, cap)
    np.testing.assert_allclose(fast.values, full.values, rtol=1e-9, atol=1e-12)


def test_bound_pruning_same_winner():
    t = gen_symmetric_channels(SystemDims(16, 3), 0.3, seed=4)
    prob = traditional_problem(t, prune=False)
    lam, cap = np.full(3, 0.03), np.full(3, 30.0)
    a = prob.solve(lam, cap)
    prob.prune = True
    b = prob.solve(lam, cap)
    np.testing.assert_array_equal(a.triple, b.triple)
    np.testing.assert_allclose(a.values, b.values)


def test_unit_problem_upper_bound_dominates():
    t = gen_symmetric_channels(SystemDims(8, 2), 1.0, seed=5)
    prob = traditional_problem(t, prune=False)
    lam, cap = np.full(3, 0.05), np.full(3, 20.0)
    sol = prob.solve(lam, cap)
    bound = prob.upper_bound(lam, cap)
    assert np.all(bound[np.arange(prob.n_units), sol.triple] >= sol.values - 1e-12)


def _dual_run(seed=0, N=16, K=2, h=1.0, P=160.0):
    t = gen_symmetric_channels(SystemDims(N, K), h, seed=seed)
    prob = traditional_problem(t)
    return prob, dual_master(prob, P, tol=1e-4, gap_tol=0.0)


def test_dual_weak_duality_over_history():
    _, res = _dual_run()
    best_primal = res.allocation.utility
    for lam, f, _ in res.state.history:
        assert np.all(lam >= 0)
        assert f >= best_primal - 1e-9


def test_dual_reported_allocation_feasible():
    prob, res = _dual_run(seed=1)
    assert np.all(res.allocation.powers >= 0)
    assert np.all(res.allocation.power_used() <= 160.0 * (1 + 1e-6))
    assert res.state.dual_value >= res.allocation.utility
    np.testing.assert_allclose(prob.utility(res.allocation.triple, res.allocation.powers).sum(), res.allocation.utility, rtol=1e-12)


def test_dual_complementary_slackness():
    _, res = _dual_run(seed=2, N=32)
    lam = res.state.lam
    slack = lam * res.state.subgradient
    assert np.all(np.abs(slack) <= 1e-3 * res.state.dual_value)


def test_zero_budget():
    t = gen_symmetric_channels(SystemDims(4, 2), 1.0, seed=0)
    res = dual_master(traditional_problem(t), 0.0)
    assert res.allocation.utility == 0.0
    assert np.all(res.allocation.powers == 0)


def test_single_cell_decoupled_waterfilling_n4():
    t = gen_symmetric_channels(SystemDims(4, 1), 0.0, seed=6)
    P = 3.0
    res = dual_master(traditional_problem(t), P, tol=1e-9, gap_tol=1e-12)
    G = t.power_gains()
    expected = sum(single_cell_waterfill(G[m, m, 0], P, 4) for m in range(3))
    assert res.allocation.utility == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("seed", range(2))
def test_n2_k1_matches_joint_grid(seed):
    t = gen_symmetric_channels(SystemDims(2, 1), 1.0, seed=seed)
    P = 20.0
    res = dual_master(traditional_problem(t), P, tol=1e-6, gap_tol=1e-6)
    best = joint_grid_two_subcarriers(t.power_gains()[:, :, 0, :], np.full(3, P))
    assert res.allocation.utility >= best * 0.99


def test_objective_oracle_agrees_with_kernel():
    g = random_gains(9)
    p = np.array([0.5, 1.5, 3.0])
    lam = np.array([0.1, 0.2, 0.3])
    from iaofdma import _kernels

    assert _kernels.unit_objective(g, np.ones(3), lam, p, 0.25) == pytest.approx(objective(g, np.ones(3), lam, p, 4), rel=1e-13)


def test_all_triples_lexicographic():
    t = alloc.all_triples(2)
    assert t.tolist()[:3] == [[0, 0, 0], [0, 0, 1], [0, 1, 0]]
    assert len(alloc.all_triples((1, 2, 3))) == 6


def test_rescale_to_budget():
    p = np.array([[1.0, 2.0, 0.0], [3.0, 2.0, 0.0]])
    out = alloc.rescale_to_budget(p, [2.0, 10.0, 1.0])
    np.testing.assert_allclose(out.sum(axis=0), [2.0, 4.0, 0.0])


def test_unit_problem_rejects_nothing_eligible():
    g = np.ones((2, 1, 3, 3))
    prob = UnitProblem(g, np.ones(3), np.zeros((1, 3), dtype=int), 2, eligible=np.zeros((2, 1), bool))
    sol = prob.solve(np.full(3, 0.1), np.full(3, 1.0))
    assert np.all(sol.triple == -1) and np.all(sol.powers == 0)
