import numpy as np
import pytest

from cosod.errors import ContractError
from cosod.segmenter.crf import CrfConfig, SpatialKernel, dense_crf, unary_from_mask

import oracles


def _two_tone(h=16, w=16, edge=8, shift=1):
    img = np.zeros((h, w, 3), np.uint8)
    img[:, edge:] = 255
    mask = np.zeros((h, w), bool)
    mask[:, edge - shift:] = True
    return img, mask


def _brute(img, mask, cfg):
    return oracles.dense_crf_bruteforce(
        img, mask, cfg.theta_gamma, cfg.theta_alpha, cfg.theta_beta,
        cfg.w_smooth, cfg.w_appearance, cfg.iterations, cfg.unary_fg_prob,
    )


def test_snaps_to_color_edge_like_bruteforce():
    img, mask = _two_tone()
    cfg = CrfConfig()
    got = dense_crf(img, mask, cfg)
    assert np.array_equal(got, _brute(img, mask, cfg))
    assert got[:, 8:].all() and not got[:, :8].any()


def test_noisy_image_against_bruteforce(rng):
    img, mask = _two_tone(12, 12, 6, 2)
    img = np.clip(img.astype(int) + rng.integers(-20, 21, img.shape), 0, 255).astype(np.uint8)
    cfg = CrfConfig(iterations=5)
    got = dense_crf(img, mask, cfg)
    want = _brute(img, mask, cfg)
    assert np.mean(got != want) <= 0.02


def test_marginals_are_distributions():
    img, mask = _two_tone()
    _, history = dense_crf(img, mask, CrfConfig(iterations=4), return_marginals=True)
    assert len(history) == 4
    for q in history:
        assert q.shape == (2, 16, 16)
        assert np.max(np.abs(q.sum(axis=0) - 1)) < 1e-12 and q.min() >= 0


def test_uniform_image_has_no_edge_to_hold_a_minority_blob():
    img = np.full((20, 20, 3), 100, np.uint8)
    mask = np.zeros((20, 20), bool)
    mask[5:15, 5:15] = True
    out = dense_crf(img, mask)
    assert np.array_equal(out, _brute(img, mask, CrfConfig()))
    assert not out.any()


def test_certain_unary_keeps_mask():
    img, mask = _two_tone()
    assert np.array_equal(dense_crf(img, mask, CrfConfig(unary_fg_prob=1.0)), mask)


def test_zero_iterations_is_identity():
    img, mask = _two_tone()
    assert np.array_equal(dense_crf(img, mask, CrfConfig(iterations=0)), mask)


def test_unary_encoding():
    u = unary_from_mask(np.array([[True, False]]), 0.9)
    assert u[1, 0, 0] == pytest.approx(-np.log(0.9)) and u[0, 0, 0] == pytest.approx(-np.log(0.1))


def test_spatial_kernel_normalization_on_constant():
    k = SpatialKernel((80, 80), 3.0)
    out = k(np.ones((1, 80, 80)))[0]
    assert out[40, 40] == pytest.approx(1.0, abs=1e-6)


def test_grayscale_and_validation():
    img, mask = _two_tone()
    assert dense_crf(img[..., 0], mask).shape == mask.shape
    with pytest.raises(ContractError):
        dense_crf(img, mask[:-1])
    with pytest.raises(ContractError):
        CrfConfig(unary_fg_prob=0.5)
