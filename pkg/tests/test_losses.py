"""Laplacian confidence weighting, depth/photometric losses, SSIM vs reference."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity as skimage_ssim

from lidarsplat.cameras import DepthMap
from lidarsplat.losses import (
    ConfidenceMap,
    LossWeights,
    confidence_weights,
    depth_loss,
    l1_rgb,
    laplacian,
    psnr,
    ssim,
    total_loss,
)


# ---------------------------------------------------------------------------
# laplacian
# ---------------------------------------------------------------------------


def test_laplacian_constant_image_is_zero():
    np.testing.assert_array_equal(laplacian(np.full((8, 8), 0.7)), np.zeros((8, 8)))


def test_laplacian_linear_ramp_interior_zero():
    x = np.tile(np.arange(10.0), (10, 1))
    lap = laplacian(x)
    np.testing.assert_array_equal(lap[1:-1, 1:-1], np.zeros((8, 8)))


def test_laplacian_single_bright_pixel():
    img = np.zeros((7, 7))
    img[3, 3] = 1.0
    lap = laplacian(img)
    assert lap[3, 3] == -4.0
    for v, u in ((2, 3), (4, 3), (3, 2), (3, 4)):
        assert lap[v, u] == 1.0


def test_laplacian_rgb_uses_luminance():
    rgb = np.zeros((5, 5, 3))
    rgb[2, 2] = (1.0, 1.0, 1.0)
    lap = laplacian(rgb)
    assert lap[2, 2] == pytest.approx(-4.0)


def test_laplacian_rejects_empty():
    with pytest.raises(ValueError):
        laplacian(np.zeros((0, 0)))


# ---------------------------------------------------------------------------
# confidence weights
# ---------------------------------------------------------------------------


def test_confidence_constant_image_all_ones():
    valid = np.ones((6, 6), bool)
    conf = confidence_weights(np.full((6, 6, 3), 0.4), valid)
    np.testing.assert_array_equal(conf.weights, np.ones((6, 6)))


def test_confidence_argmax_pixel_gets_zero():
    rng = np.random.default_rng(0)
    img = rng.random((16, 16, 3))
    valid = np.ones((16, 16), bool)
    conf = confidence_weights(img, valid)
    lap = np.abs(laplacian(img))
    v, u = np.unravel_index(np.argmax(lap), lap.shape)
    assert conf.weights[v, u] == 0.0
    assert conf.weights.min() >= 0.0 and conf.weights.max() <= 1.0


def test_confidence_half_max_gets_half():
    img = np.zeros((9, 9))
    img[2, 2] = 1.0  # |lap| = 4 at the spike
    img[6, 6] = 0.5  # |lap| = 2
    conf = confidence_weights(img, np.ones((9, 9), bool))
    assert conf.weights[2, 2] == 0.0
    assert conf.weights[6, 6] == 0.5


def test_confidence_max_over_valid_set_only():
    img = np.zeros((9, 9))
    img[2, 2] = 1.0  # strong edge, but masked out
    img[6, 6] = 0.25
    valid = np.ones((9, 9), bool)
    valid[:4] = False
    conf = confidence_weights(img, valid)
    assert conf.weights[6, 6] == 0.0  # argmax within the valid set


def test_confidence_requires_valid_pixel():
    with pytest.raises(ValueError, match="valid"):
        confidence_weights(np.zeros((4, 4)), np.zeros((4, 4), bool))


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_confidence_always_unit_interval(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((12, 12, 3))
    valid = rng.random((12, 12)) > 0.3
    if not valid.any():
        valid[0, 0] = True
    conf = confidence_weights(img, valid)
    on = conf.weights[valid]
    assert on.min() >= 0.0 and on.max() <= 1.0


# ---------------------------------------------------------------------------
# depth loss
# ---------------------------------------------------------------------------


def _dm(depth, valid):
    return DepthMap(depth=np.asarray(depth, float), valid=np.asarray(valid, bool))


def test_depth_loss_zero_when_equal():
    depth = np.full((4, 4), 2.0)
    valid = np.ones((4, 4), bool)
    conf = ConfidenceMap(weights=np.ones((4, 4)), valid=valid)
    assert depth_loss(_dm(depth, valid), _dm(depth, valid), conf) == 0.0


def test_depth_loss_single_pixel():
    valid = np.zeros((2, 2), bool)
    valid[0, 0] = True
    lidar = _dm([[2.0, 0], [0, 0]], valid)
    rendered = _dm([[1.5, 0], [0, 0]], valid)
    conf = ConfidenceMap(weights=np.ones((2, 2)), valid=valid)
    assert depth_loss(lidar, rendered, conf) == 0.5


def test_depth_loss_two_pixel_hand_case():
    valid = np.array([[True, True]])
    lidar = _dm([[3.0, 4.0]], valid)
    rendered = _dm([[2.0, 2.0]], valid)
    conf = ConfidenceMap(weights=np.array([[1.0, 0.5]]), valid=valid)
    # (1*1 + 0.5*2)/2
    assert depth_loss(lidar, rendered, conf) == pytest.approx(1.0, abs=1e-12)


def test_depth_loss_uses_joint_validity():
    lidar = _dm([[2.0, 3.0]], np.array([[True, True]]))
    rendered = _dm([[2.5, 0.0]], np.array([[True, False]]))
    conf = ConfidenceMap(weights=np.ones((1, 2)), valid=np.array([[True, True]]))
    assert depth_loss(lidar, rendered, conf) == pytest.approx(0.5)


def test_depth_loss_empty_intersection_returns_zero(caplog):
    lidar = _dm([[2.0]], np.array([[True]]))
    rendered = _dm([[0.0]], np.array([[False]]))
    conf = ConfidenceMap(weights=np.ones((1, 1)), valid=np.array([[True]]))
    with caplog.at_level("WARNING"):
        assert depth_loss(lidar, rendered, conf) == 0.0
    assert "no jointly valid" in caplog.text


def test_depth_loss_rejects_resolution_mismatch():
    a = _dm(np.ones((2, 2)), np.ones((2, 2), bool))
    b = _dm(np.ones((3, 3)), np.ones((3, 3), bool))
    conf = ConfidenceMap(weights=np.ones((2, 2)), valid=np.ones((2, 2), bool))
    with pytest.raises(ValueError, match="mismatch"):
        depth_loss(a, b, conf)


def test_depth_loss_scales_linearly_with_weights():
    rng = np.random.default_rng(1)
    valid = np.ones((8, 8), bool)
    lidar = _dm(rng.uniform(1, 3, (8, 8)), valid)
    rendered = _dm(rng.uniform(1, 3, (8, 8)), valid)
    w = rng.random((8, 8))
    full = depth_loss(lidar, rendered, ConfidenceMap(weights=w, valid=valid))
    half = depth_loss(lidar, rendered, ConfidenceMap(weights=0.5 * w, valid=valid))
    assert half == pytest.approx(0.5 * full, rel=1e-12)


# ---------------------------------------------------------------------------
# photometric losses
# ---------------------------------------------------------------------------


def test_l1_cases():
    assert l1_rgb(np.zeros((4, 4, 3)), np.zeros((4, 4, 3))) == 0.0
    assert l1_rgb(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 1.0
    assert l1_rgb(np.full((4, 4, 3), 0.5), np.zeros((4, 4, 3))) == 0.5
    with pytest.raises(ValueError):
        l1_rgb(np.zeros((2, 2)), np.zeros((3, 3)))


def test_ssim_identity_and_symmetry():
    rng = np.random.default_rng(0)
    a = rng.random((24, 24, 3))
    b = rng.random((24, 24, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)


def test_ssim_matches_reference_implementation():
    rng = np.random.default_rng(7)
    a = rng.random((32, 32))
    b = np.clip(a + 0.1, 0.0, 1.0)
    ref = skimage_ssim(
        a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
        use_sample_covariance=False, win_size=11,
    )
    assert ssim(a, b) == pytest.approx(ref, abs=1e-4)


def test_ssim_rgb_matches_reference_channel_mean():
    rng = np.random.default_rng(8)
    a = rng.random((20, 20, 3))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    ref = np.mean(
        [
            skimage_ssim(
                a[..., c], b[..., c], data_range=1.0, gaussian_weights=True,
                sigma=1.5, use_sample_covariance=False, win_size=11,
            )
            for c in range(3)
        ]
    )
    assert ssim(a, b) == pytest.approx(ref, abs=1e-4)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError, match="11"):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_psnr_cases():
    a = np.full((4, 4), 0.5)
    assert psnr(a, a) == float("inf")
    b = a + 0.1
    assert psnr(a, b) == pytest.approx(10.0 * np.log10(1.0 / 0.01), abs=1e-9)


# ---------------------------------------------------------------------------
# total objective
# ---------------------------------------------------------------------------


def test_total_loss_cases():
    w = LossWeights(lambda_depth=1.0, lambda_rgb=0.0, lambda_ssim=0.0)
    assert total_loss(0.0, 0.0, 0.0, w) == 0.0
    assert total_loss(0.0, 0.0, 0.5, w) == 0.5
    w2 = LossWeights(lambda_depth=0.0, lambda_rgb=0.8, lambda_ssim=0.2)
    assert total_loss(1.0, 1.0, 0.0, w2) == pytest.approx(1.0)


def test_total_loss_normal_term_only_when_supplied():
    w = LossWeights(lambda_depth=0.0, lambda_rgb=0.0, lambda_ssim=0.0, lambda_normal=0.01)
    assert total_loss(1.0, 1.0, 1.0, w) == 0.0
    assert total_loss(1.0, 1.0, 1.0, w, normal=2.0) == pytest.approx(0.02)


def test_total_loss_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        total_loss(np.nan, 0.0, 0.0, LossWeights())


def test_loss_weights_must_be_nonnegative():
    with pytest.raises(ValueError):
        LossWeights(lambda_depth=-1.0)
