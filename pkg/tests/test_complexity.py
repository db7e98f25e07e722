"""Complexity scoring and budget sampling against naive and statistical oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from conftest import naive_covariance, naive_texture
from lidarsplat.complexity import (
    CURVATURE_MAX,
    AllocationConfig,
    allocation_probabilities,
    compute_complexity_field,
    curvature,
    local_covariance,
    normalize_scores,
    sample_budget,
    sample_indices,
    texture_complexity,
)
from lidarsplat.pointcloud import PointCloud
from lidarsplat.synth import cube_scene, plane_cloud, plane_interior_mask


def test_allocation_config_validates_alpha_beta():
    with pytest.raises(ValueError, match="alpha \\+ beta"):
        AllocationConfig(alpha=0.7, beta=0.5)
    AllocationConfig(alpha=0.7, beta=0.3)  # fine


# ---------------------------------------------------------------------------
# local covariance
# ---------------------------------------------------------------------------


def test_covariance_of_coincident_points_is_zero():
    cloud = PointCloud(np.zeros((4, 3)))
    np.testing.assert_array_equal(local_covariance(cloud, [0, 1, 2]), np.zeros((3, 3)))


def test_covariance_two_point_hand_case():
    cloud = PointCloud(np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
    np.testing.assert_array_equal(local_covariance(cloud, [0, 1]), np.diag([2.0, 0.0, 0.0]))


def test_covariance_matches_naive_two_pass():
    rng = np.random.default_rng(0)
    pos = rng.standard_normal((64, 3))
    cloud = PointCloud(pos)
    mine = local_covariance(cloud, np.arange(64))
    ref = naive_covariance(pos)
    np.testing.assert_allclose(mine, ref, atol=1e-12, rtol=0)
    assert np.all(np.linalg.eigvalsh(mine) > -1e-12)


def test_covariance_rejects_degenerate_neighborhood():
    cloud = PointCloud(np.zeros((3, 3)))
    with pytest.raises(ValueError, match="degenerate"):
        local_covariance(cloud, [0])


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------


def test_curvature_hand_cases():
    eps = 1e-12
    assert curvature(np.diag([0.0, 1.0, 1.0]), eps) == pytest.approx(0.0, abs=1e-8)
    assert curvature(np.eye(3), eps) == pytest.approx(1.0 / (3.0 + eps), abs=1e-12)
    assert curvature(np.diag([1.0, 1.0, 2.0]), eps) == pytest.approx(1.0 / (4.0 + eps), abs=1e-8)


def test_curvature_rejects_asymmetric():
    bad = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        curvature(bad)


def test_curvature_range_on_random_covariances():
    rng = np.random.default_rng(2)
    for _ in range(300):
        a = rng.standard_normal((3, 3))
        value = curvature(a @ a.T)
        assert 0.0 <= value <= CURVATURE_MAX + 1e-9


# ---------------------------------------------------------------------------
# texture
# ---------------------------------------------------------------------------


def test_texture_uniform_is_zero():
    assert texture_complexity(np.full((8, 3), 0.3)) == 0.0


def test_texture_black_white_split_is_quarter():
    colors = np.vstack([np.zeros((4, 3)), np.ones((4, 3))])
    assert texture_complexity(colors) == pytest.approx(0.25, abs=1e-15)


def test_texture_matches_naive_variance():
    rng = np.random.default_rng(5)
    colors = rng.random((64, 3))
    assert texture_complexity(colors) == pytest.approx(naive_texture(colors), abs=1e-12)


def test_texture_rejects_empty():
    with pytest.raises(ValueError):
        texture_complexity(np.zeros((0, 3)))


# ---------------------------------------------------------------------------
# normalization and probabilities
# ---------------------------------------------------------------------------


def test_normalize_hand_cases():
    np.testing.assert_array_equal(normalize_scores(np.array([2.0, 4.0, 6.0])), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(normalize_scores(np.full(5, 3.3)), np.zeros(5))
    np.testing.assert_array_equal(normalize_scores(np.array([0.0, 1.0 / 3.0])), [0.0, 1.0])


def test_normalize_rejects_nonfinite():
    with pytest.raises(ValueError):
        normalize_scores(np.array([1.0, np.inf]))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
@settings(max_examples=100, deadline=None)
def test_normalize_always_in_unit_interval(values):
    out = normalize_scores(np.array(values))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_probabilities_trivial_cases():
    cfg = AllocationConfig()
    n = 6
    uniform = allocation_probabilities(np.full(n, 0.4), np.full(n, 0.4), cfg)
    np.testing.assert_allclose(uniform, np.full(n, 1.0 / n), atol=1e-15)

    cfg_a = AllocationConfig(alpha=1.0, beta=0.0)
    probs = allocation_probabilities(np.array([0.2, 0.8]), None, cfg_a)
    np.testing.assert_allclose(probs, [0.2, 0.8], atol=1e-15)

    sym = allocation_probabilities(np.array([1.0, 0.0]), np.array([0.0, 1.0]), cfg)
    np.testing.assert_allclose(sym, [0.5, 0.5], atol=1e-15)


def test_probabilities_zero_scores_fall_back_to_uniform():
    cfg = AllocationConfig()
    probs = allocation_probabilities(np.zeros(4), np.zeros(4), cfg)
    np.testing.assert_array_equal(probs, np.full(4, 0.25))


def test_probabilities_reject_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        allocation_probabilities(np.zeros(3), np.zeros(4), AllocationConfig())


def test_probabilities_invariant_under_raw_rescaling():
    # min-max normalization precedes the blend, so positive rescaling of the
    # raw scores cannot change the distribution
    rng = np.random.default_rng(1)
    raw_k = rng.random(40)
    raw_t = rng.random(40)
    cfg = AllocationConfig()
    base = allocation_probabilities(normalize_scores(raw_k), normalize_scores(raw_t), cfg)
    scaled = allocation_probabilities(
        normalize_scores(137.0 * raw_k), normalize_scores(0.003 * raw_t), cfg
    )
    np.testing.assert_allclose(base, scaled, atol=1e-12)
    assert base.sum() == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# field computation
# ---------------------------------------------------------------------------


def test_plane_interior_curvature_is_tiny():
    cloud = plane_cloud(side_points=32)
    field = compute_complexity_field(cloud, AllocationConfig(k=16))
    interior = plane_interior_mask(cloud, extent=1.0, margin=0.3)
    assert field.curvature[interior].max() < 1e-6
    assert field.texture is None


def test_cube_edges_score_higher_than_faces():
    scene = cube_scene(side_points=16)
    field = compute_complexity_field(scene.cloud, AllocationConfig(k=16))
    band = scene.edge_band(2.0)
    assert np.median(field.curvature[band]) >= 3.0 * np.median(field.curvature[~band])


def test_chunked_scoring_is_bitwise_identical():
    rng = np.random.default_rng(4)
    cloud = PointCloud(rng.standard_normal((5000, 3)), colors=rng.random((5000, 3)))
    cfg = AllocationConfig(k=24)
    whole = compute_complexity_field(cloud, cfg, chunk_size=5000)
    chunked = compute_complexity_field(cloud, cfg, chunk_size=1000)
    np.testing.assert_array_equal(whole.curvature, chunked.curvature)
    np.testing.assert_array_equal(whole.texture, chunked.texture)
    np.testing.assert_array_equal(whole.probabilities, chunked.probabilities)


# ---------------------------------------------------------------------------
# budget sampling
# ---------------------------------------------------------------------------


def test_sample_full_budget_returns_whole_cloud():
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.standard_normal((20, 3)))
    probs = rng.random(20)
    probs /= probs.sum()
    sub = sample_budget(cloud, probs, 20, seed=1)
    np.testing.assert_array_equal(np.sort(sub.positions, axis=0), np.sort(cloud.positions, axis=0))


def test_sample_degenerate_distribution():
    cloud = PointCloud(np.arange(9.0).reshape(3, 3))
    for seed in range(20):
        sub = sample_budget(cloud, np.array([1.0, 0.0, 0.0]), 1, seed=seed)
        np.testing.assert_array_equal(sub.positions[0], cloud.positions[0])


def test_sample_zero_prob_only_when_needed():
    probs = np.array([0.5, 0.5, 0.0, 0.0])
    for seed in range(10):
        two = sample_indices(probs, 2, seed)
        assert set(two.tolist()) == {0, 1}
    three = sample_indices(probs, 3, seed=0)
    assert set(three.tolist()) >= {0, 1}


def test_sample_budget_bounds():
    cloud = PointCloud(np.arange(9.0).reshape(3, 3))
    with pytest.raises(ValueError):
        sample_budget(cloud, np.full(3, 1 / 3), 4, seed=0)
    with pytest.raises(ValueError):
        sample_budget(cloud, np.full(3, 1 / 3), 0, seed=0)


def test_sample_deterministic_under_seed():
    rng = np.random.default_rng(9)
    probs = rng.random(500)
    probs /= probs.sum()
    a = sample_indices(probs, 100, seed=123)
    b = sample_indices(probs, 100, seed=123)
    np.testing.assert_array_equal(a, b)
    c = sample_indices(probs, 100, seed=124)
    assert not np.array_equal(a, c)


def test_uniform_sampling_frequencies_pass_chi_square():
    # 10k repeated draws of M=N/2 under uniform probabilities: per-point
    # selection counts should be uniform at the 0.01 significance level
    n, m, runs = 40, 20, 10_000
    probs = np.full(n, 1.0 / n)
    counts = np.zeros(n)
    for seed in range(runs):
        counts[sample_indices(probs, m, seed)] += 1
    _, pvalue = chisquare(counts)
    assert pvalue > 0.01


def test_weighted_sampling_is_monotone_in_probability():
    # higher-probability points should be selected more often
    n, m, runs = 30, 10, 4000
    probs = np.linspace(1, 10, n)
    probs /= probs.sum()
    counts = np.zeros(n)
    for seed in range(runs):
        counts[sample_indices(probs, m, seed)] += 1
    low = counts[:10].mean()
    high = counts[-10:].mean()
    assert high > 2.0 * low
