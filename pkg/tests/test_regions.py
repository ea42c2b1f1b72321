import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cosod.errors import ContractError
from cosod.segmenter.regions import (
    RefineConfig,
    area_downsample,
    connected_components,
    cosine,
    refine_regions,
)

import oracles


def _as_sets(comps):
    return [set(zip(*np.nonzero(c))) for c in comps]


def _instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    grid = int(rng.integers(2, 5))
    side = grid * int(rng.integers(2, 5))
    masks = [rng.random((side, side)) < rng.uniform(0.05, 0.5) for _ in range(n)]
    feats = rng.standard_normal((n, int(rng.integers(2, 6)), grid, grid))
    # a shared direction so some regions clear the similarity threshold
    feats += 2.0 * rng.standard_normal((1, feats.shape[1], 1, 1))
    return masks, feats


@pytest.mark.parametrize("connectivity", [4, 8])
def test_components_match_flood_fill(rng, connectivity):
    for _ in range(20):
        m = rng.random((9, 11)) < 0.4
        got = _as_sets(connected_components(m, connectivity))
        want = oracles.flood_fill_components(m, connectivity)
        assert got == want


def test_diagonal_pixels_join_only_under_8():
    m = np.array([[1, 0], [0, 1]], bool)
    assert len(connected_components(m, 8)) == 1
    assert len(connected_components(m, 4)) == 2


def test_area_downsample_matches_loops(rng):
    for shape, grid in (((8, 8), (4, 4)), ((10, 7), (3, 2)), ((5, 9), (5, 3))):
        m = rng.random(shape) < 0.5
        assert np.allclose(area_downsample(m, grid), oracles.area_downsample_loops(m, *grid), atol=1e-12)


def test_area_downsample_preserves_fraction(rng):
    m = rng.random((12, 18)) < 0.3
    assert area_downsample(m, (4, 6)).mean() == pytest.approx(m.mean())


@pytest.mark.parametrize("seed", range(15))
def test_refine_matches_pseudo_code(seed):
    masks, feats = _instance(seed)
    got = refine_regions(masks, feats, RefineConfig())
    want = oracles.refine_regions_transcribed(masks, feats)
    assert all(np.array_equal(a, b) for a, b in zip(got.masks, want))


@given(st.integers(0, 2**31 - 1), st.booleans())
def test_output_is_union_of_input_components(seed, keep_best):
    masks, feats = _instance(seed)
    res = refine_regions(masks, feats, RefineConfig(keep_best_on_empty=keep_best))
    for m, r, kept in zip(masks, res.masks, res.kept):
        assert not np.any(r & ~m)
        rebuilt = np.zeros_like(m)
        for c, k in zip(connected_components(m), kept):
            if k:
                rebuilt |= c
        assert np.array_equal(rebuilt, r)
        if m.any() and keep_best:
            assert r.any()


def test_orthogonal_region_removed():
    feats = np.zeros((2, 2, 2, 2))
    feats[:, 0] = 1.0
    feats[1, :, 1, 1] = [0.0, 1.0]
    masks = [np.zeros((4, 4), bool), np.zeros((4, 4), bool)]
    masks[0][:2, :2] = True
    masks[1][:2, :2] = True
    masks[1][3:, 3:] = True  # lies on the orthogonal patch, not touching the first block
    res = refine_regions(masks, feats)
    assert np.array_equal(res.masks[0], masks[0])
    assert res.masks[1][:2, :2].all() and not res.masks[1][3:, 3:].any()
    assert res.kept[1] == [True, False]


def test_single_region_group_keeps_itself(rng):
    feats = rng.standard_normal((1, 3, 2, 2))
    m = np.zeros((4, 4), bool)
    m[1:3, 1:3] = True
    res = refine_regions([m], feats)
    assert res.scores[0][0] == pytest.approx(1.0) and np.array_equal(res.masks[0], m)


def test_all_empty_group():
    res = refine_regions([np.zeros((4, 4), bool)] * 2, np.ones((2, 3, 2, 2)))
    assert res.empty_group and not any(m.any() for m in res.masks)


def test_keep_best_on_empty_toggle():
    feats = np.zeros((2, 2, 1, 2))
    feats[0, :, 0, 0] = [1, 0]
    feats[1, :, 0, 1] = [0, 1]
    masks = [np.array([[True, False]]), np.array([[False, True]])]
    strict = refine_regions(masks, feats, RefineConfig(d_f_th=0.99, keep_best_on_empty=False))
    lenient = refine_regions(masks, feats, RefineConfig(d_f_th=0.99, keep_best_on_empty=True))
    assert not any(m.any() for m in strict.masks)
    assert all(np.array_equal(a, b) for a, b in zip(lenient.masks, masks))


def test_cosine_zero_vector():
    assert cosine(np.zeros(3), np.ones(3)) == 0.0


def test_validation():
    with pytest.raises(ContractError):
        RefineConfig(connectivity=6)
    with pytest.raises(ContractError):
        refine_regions([np.zeros((2, 2))], np.zeros((2, 1, 1, 1)))
