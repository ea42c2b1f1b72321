import numpy as np
import pytest

from cosod.correspondence import init_head_params
from cosod.errors import ContractError
from cosod.segmenter import SegmentConfig, dump_intermediates, segment_group
from cosod.synthetic import make_group


@pytest.fixture
def group_and_feats(rng):
    group = make_group(0, n_images=3, size=(32, 40), seed=5)
    feats = rng.standard_normal((3, 8, 4, 5))
    return group, feats, init_head_params(8, seed=0, dtype=np.float64, b_bar=0.3)


def test_outputs_align_with_images(group_and_feats):
    group, feats, params = group_and_feats
    res = segment_group(group, feats, params, SegmentConfig())
    for key in ("masks", "S", "M", "G", "R"):
        items = getattr(res, key)
        assert len(items) == 3 and all(a.shape == s for a, s in zip(items, group.sizes))
    assert all(m.dtype == bool for m in res.masks)


def test_all_stages_off_is_fixed_threshold(group_and_feats):
    group, feats, params = group_and_feats
    res = segment_group(group, feats, params, SegmentConfig(enable_cat=False, enable_rfc=False, enable_crf=False))
    for m, g, r, final in zip(res.M, res.G, res.R, res.masks):
        assert np.array_equal(g, m >= 0.5) and np.array_equal(r, g) and np.array_equal(final, g)
    assert res.thresholds == [0.5] * 3 and res.refine is None


def test_cat_uses_checkpoint_b_bar(group_and_feats):
    group, feats, params = group_and_feats
    res = segment_group(group, feats, params, SegmentConfig(enable_rfc=False, enable_crf=False))
    for m, th in zip(res.M, res.thresholds):
        c = m[m >= m.mean()].mean()
        assert th == pytest.approx(min(max(0.5 + (1 - c) - 0.3, 0.05), 0.95))


def test_refined_masks_are_subsets(group_and_feats):
    group, feats, params = group_and_feats
    res = segment_group(group, feats, params, SegmentConfig(enable_crf=False))
    assert all(not np.any(r & ~g) for g, r in zip(res.G, res.R))


def test_feature_count_mismatch(group_and_feats):
    group, feats, params = group_and_feats
    with pytest.raises(ContractError):
        segment_group(group, feats[:2], params)


def test_dump_names(tmp_path, group_and_feats):
    group, feats, params = group_and_feats
    res = segment_group(group, feats, params, SegmentConfig(enable_crf=False))
    paths = dump_intermediates(res, group.stems, tmp_path)
    assert sorted(p.name for p in paths) == sorted(f"{s}.{k}.png" for s in group.stems for k in "SMGR")
