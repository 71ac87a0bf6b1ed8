import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from iaofdma.channel import (
    CIR,
    CNIR,
    ChannelTensor,
    SystemDims,
    UserLayout,
    bs_triangle,
    classify_regions,
    gen_heterogeneous_channels,
    gen_symmetric_channels,
    pathloss_channels,
    trial_seed,
)


@pytest.mark.parametrize("n", [0, 3, -2])
def test_dims_reject_bad_subcarrier_count(n):
    with pytest.raises(ValueError):
        SystemDims(n, 2)


def test_dims_reject_bad_values():
    with pytest.raises(ValueError):
        SystemDims(4, 0)
    with pytest.raises(ValueError):
        SystemDims(4, 1, noise_variance=0)
    with pytest.raises(ValueError):
        SystemDims(4, 1, power_budget=(1, -1, 1))


def test_tensor_rejects_nonfinite_and_bad_shape():
    dims = SystemDims(2, 1)
    with pytest.raises(ValueError):
        ChannelTensor(np.zeros((3, 3, 1, 4), complex), dims)
    bad = np.zeros((3, 3, 1, 2), complex)
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ChannelTensor(bad, dims)


def test_zero_cross_gain_gives_exact_zero_cross_links():
    t = gen_symmetric_channels(SystemDims(8, 2), 0.0, seed=3)
    for j in range(3):
        for m in range(3):
            if j != m:
                assert np.all(t.gains[j, m] == 0)
    assert np.all(t.gains[0, 0] != 0)


def test_symmetric_direct_mean_near_one():
    # 3 cells x 4 users x 64 SCs = 768 exponential samples; the mean lands in 1 +- 0.1
    t = gen_symmetric_channels(SystemDims(64, 4), 1.0, seed=11)
    direct = np.concatenate([np.abs(t.gains[m, m]).ravel() ** 2 for m in range(3)])
    assert direct.size == 768
    assert abs(direct.mean() - 1.0) <= 0.1


def test_symmetric_is_deterministic():
    dims = SystemDims(16, 3)
    a = gen_symmetric_channels(dims, 0.5, seed=42)
    b = gen_symmetric_channels(dims, 0.5, seed=42)
    assert a.gains.tobytes() == b.gains.tobytes()
    c = gen_symmetric_channels(dims, 0.5, seed=43)
    assert not np.array_equal(a.gains, c.gains)


@pytest.mark.parametrize("h", [1.0, 0.1])
def test_symmetric_variances_within_three_standard_errors(h):
    t = gen_symmetric_channels(SystemDims(256, 8), h, seed=5)
    p = np.abs(t.gains) ** 2
    for j in range(3):
        for m in range(3):
            x = p[j, m].ravel()
            target = 1.0 if j == m else h
            # |h|^2 is exponential with mean target, so its std equals its mean
            assert abs(x.mean() - target) <= 3 * target / np.sqrt(x.size)


def test_trial_seed_depends_on_both_inputs():
    assert trial_seed(1, 2) == trial_seed(1, 2)
    assert len({trial_seed(1, t) for t in range(100)}) == 100
    assert trial_seed(1, 2) != trial_seed(2, 1)


def test_bs_triangle_is_equilateral_with_side_d():
    bs = bs_triangle(1.7)
    d = [np.linalg.norm(bs[i] - bs[(i + 1) % 3]) for i in range(3)]
    np.testing.assert_allclose(d, 1.7, rtol=1e-12)
    np.testing.assert_allclose(bs.mean(axis=0), 0.0, atol=1e-12)


def test_heterogeneous_rejects_bad_geometry():
    dims = SystemDims(4, 1)
    with pytest.raises(ValueError):
        gen_heterogeneous_channels(dims, cell_radius=0)
    with pytest.raises(ValueError):
        gen_heterogeneous_channels(dims, inter_site_distance=-1)


def test_heterogeneous_users_inside_serving_disc():
    _, lay = gen_heterogeneous_channels(SystemDims(4, 50), cell_radius=2.0, seed=9)
    d = lay.distances()
    for m in range(3):
        assert np.all(d[m, m] <= 2.0 + 1e-12)
    assert np.array_equal(lay.region_labels, classify_regions(lay, 0.5))


def test_heterogeneous_pathloss_mean():
    # normalized by d^-2 the power gains are unit-mean exponential
    t, lay = gen_heterogeneous_channels(SystemDims(4096, 2), seed=21)
    d = lay.distances()
    scaled = np.abs(t.gains) ** 2 * d[..., None] ** 2
    for j in range(3):
        for m in range(3):
            for k in range(2):
                assert abs(scaled[j, m, k].mean() - 1.0) <= 0.1


def test_heterogeneous_normalized_gains_are_exponential_ks():
    t, lay = gen_heterogeneous_channels(SystemDims(2048, 2), seed=2)
    x = (np.abs(t.gains) ** 2 * lay.distances()[..., None] ** 2).ravel()
    assert x.size >= 10_000
    assert stats.kstest(x, "expon").pvalue > 0.01


def test_alpha_zero_matches_unit_symmetric_statistics():
    t, _ = gen_heterogeneous_channels(SystemDims(1024, 4), pathloss_exponent=0.0, seed=4)
    p = np.abs(t.gains) ** 2
    assert abs(p.mean() - 1.0) <= 3 / np.sqrt(p.size)


def test_equidistant_users_have_identical_gain_distributions():
    # user 0 of cell 0 and user 1 of cell 1 both sit at the centroid
    dims = SystemDims(4096, 2)
    _, lay = gen_heterogeneous_channels(dims, seed=8)
    lay.user_positions[0, 0] = lay.centroid()
    lay.user_positions[1, 1] = lay.centroid()
    t = pathloss_channels(lay, dims, 2.0, seed=9)
    for j in range(3):
        a = np.abs(t.gains[j, 0, 0]) ** 2
        b = np.abs(t.gains[j, 1, 1]) ** 2
        assert stats.ks_2samp(a, b).pvalue > 0.01


def test_user_at_centroid_is_cir():
    bs = bs_triangle(1.2)
    users = np.tile(bs.mean(axis=0), (3, 1, 1))
    lay = UserLayout(bs, users, 1.0)
    assert np.all(classify_regions(lay, 0.5) == CIR)
    assert np.all(classify_regions(lay, 0.0) == CNIR)


def test_classify_rejects_out_of_range_fraction():
    _, lay = gen_heterogeneous_channels(SystemDims(2, 1))
    with pytest.raises(ValueError):
        classify_regions(lay, 1.5)


def test_region_counts_match_straight_line_recomputation():
    dims = SystemDims(2, 12)
    _, lay = gen_heterogeneous_channels(dims, cell_radius=1.0, inter_site_distance=1.2, seed=77)
    labels = classify_regions(lay, 0.5)
    cx = sum(p[0] for p in lay.bs_positions) / 3
    cy = sum(p[1] for p in lay.bs_positions) / 3
    expected = 0
    for m in range(3):
        for k in range(12):
            x, y = lay.user_positions[m, k]
            if ((x - cx) ** 2 + (y - cy) ** 2) ** 0.5 <= 0.5:
                expected += 1
    assert int(np.sum(labels == CIR)) == expected


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0))
def test_rho_monotone_growth_of_cir_set(rho):
    _, lay = gen_heterogeneous_channels(SystemDims(2, 12), seed=1)
    small = classify_regions(lay, rho) == CIR
    large = classify_regions(lay, min(1.0, rho + 0.1)) == CIR
    assert np.all(large | ~small)
