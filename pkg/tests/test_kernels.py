import numpy as np
import pytest

from cosod import _fallback, kernels

import oracles

compiled = pytest.importorskip("cosod._kernels", reason="compiled extension not built")


@pytest.mark.parametrize("d", [2, 5])
def test_lattice_backends_agree(rng, d):
    feats = rng.random((300, d)) * 4
    vals = rng.random((300, 2))
    a = _fallback.lattice_filter(vals, *_fallback.build_lattice(feats))
    b = compiled.lattice_filter(vals, *compiled.build_lattice(feats))
    assert np.max(np.abs(a - b)) < 1e-10


@pytest.mark.parametrize("connectivity", [4, 8])
def test_label_backends_agree(rng, connectivity):
    m = rng.random((50, 60)) < 0.4
    la, na = _fallback.label_components(m, connectivity)
    lb, nb = compiled.label_components(m, connectivity)
    assert na == nb and np.array_equal(la, lb)


@pytest.mark.parametrize("d,floor", [(2, 0.99), (5, 0.95)])
def test_lattice_tracks_exact_gaussian(rng, d, floor):
    feats = rng.random((300, d)) * 4
    vals = rng.random((300, 1))
    approx = kernels.lattice_filter(vals, *kernels.build_lattice(feats))[:, 0]
    d2 = ((feats[:, None] - feats[None]) ** 2).sum(-1)
    exact = (np.exp(-d2 / 2) @ vals)[:, 0]
    assert np.corrcoef(approx, exact)[0, 1] > floor


def test_lattice_is_linear(rng):
    feats = rng.random((80, 3)) * 3
    lat = kernels.build_lattice(feats)
    a, b = rng.random((80, 1)), rng.random((80, 1))
    lhs = kernels.lattice_filter(2 * a + b, *lat)
    rhs = 2 * kernels.lattice_filter(a, *lat) + kernels.lattice_filter(b, *lat)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_labels_ordered_like_flood_fill(rng):
    m = rng.random((12, 15)) < 0.45
    labels, count = kernels.label_components(m, 8)
    comps = oracles.flood_fill_components(m, 8)
    assert count == len(comps)
    for i, comp in enumerate(comps, start=1):
        assert set(zip(*np.nonzero(labels == i))) == comp


def test_empty_mask_has_no_labels():
    labels, count = kernels.label_components(np.zeros((3, 3), bool))
    assert count == 0 and not labels.any()


def test_backend_name():
    assert kernels.BACKEND in ("compiled", "python")
