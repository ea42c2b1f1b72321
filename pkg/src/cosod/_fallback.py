"""Pure numpy/scipy implementations of the compiled kernels in ``_kernels.pyx``.

Both modules expose the same three functions with identical semantics:

``build_lattice(features)``
    Embed (N, d) scaled features in the permutohedral lattice. Returns
    ``(offsets, weights, neighbors)`` with offsets int32 (N, d+1) vertex ids,
    weights float64 (N, d+1) barycentric weights and neighbors int32
    (d+1, M, 2) blur neighbor ids (-1 when absent).

``lattice_filter(values, offsets, weights, neighbors, reverse=False)``
    Approximate Gaussian filtering of (N, V) values: splat, blur along every
    lattice axis, slice.

``label_components(mask, connectivity)``
    Connected components of a binary (H, W) mask; labels 1..L in order of each
    component's first pixel in scanline order. Returns ``(labels, L)``.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def _canonical(d: int) -> np.ndarray:
    c = np.empty((d + 1, d + 1), dtype=np.int64)
    for r in range(d + 1):
        c[r, : d + 1 - r] = r
        c[r, d + 1 - r :] = r - (d + 1)
    return c


class _KeyCodec:
    """Packs integer key rows into int64 scalars (mixed radix) so 1-D sorting applies."""

    def __init__(self, rows: np.ndarray, margin: int):
        self.lo = rows.min(axis=0) - margin
        span = rows.max(axis=0) + margin - self.lo + 1
        self.radix = np.ones(rows.shape[1], dtype=np.int64)
        total = 1
        for i in range(rows.shape[1] - 1, -1, -1):
            self.radix[i] = total
            total *= int(span[i])
        self.ok = total < 2**62
        self.hi = self.lo + span - 1

    def encode(self, rows: np.ndarray) -> np.ndarray:
        inside = np.all((rows >= self.lo) & (rows <= self.hi), axis=1)
        codes = ((rows - self.lo) * self.radix).sum(axis=1)
        return np.where(inside, codes, -1)


def _unique_rows(rows: np.ndarray, codec: _KeyCodec):
    if codec.ok:
        codes, inv = np.unique(codec.encode(rows), return_inverse=True)
        first = np.zeros(len(codes), dtype=np.int64)
        first[inv.ravel()] = np.arange(len(rows))
        return rows[first], codes, inv.ravel()
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    return uniq, None, inv.ravel()


def _lookup(table: np.ndarray, codes, queries: np.ndarray, codec: _KeyCodec) -> np.ndarray:
    """Row index of each query row in ``table`` (unique rows), -1 if absent."""
    if codes is not None:
        q = codec.encode(queries)
        pos = np.clip(np.searchsorted(codes, q), 0, len(codes) - 1)
        return np.where((codes[pos] == q) & (q >= 0), pos, -1)
    allrows = np.concatenate([table, queries], axis=0)
    _, inv = np.unique(allrows, axis=0, return_inverse=True)
    inv = inv.ravel()
    where = np.full(inv.max() + 1, -1, dtype=np.int64)
    where[inv[: len(table)]] = np.arange(len(table))
    return where[inv[len(table):]]


def build_lattice(features):
    f = np.ascontiguousarray(features, dtype=np.float64)
    n, d = f.shape
    inv_std = np.sqrt(2.0 / 3.0) * (d + 1)
    scale = inv_std / np.sqrt((np.arange(d) + 1.0) * (np.arange(d) + 2.0))
    cf = f * scale

    # elevate onto the plane x . 1 = 0 in d+1 dimensions
    suffix = np.zeros((n, d + 1))
    suffix[:, :d] = np.cumsum(cf[:, ::-1], axis=1)[:, ::-1]
    elevated = np.empty((n, d + 1))
    elevated[:, 0] = suffix[:, 0]
    j = np.arange(1, d + 1)
    elevated[:, 1:] = suffix[:, 1:] - j * cf

    # nearest remainder-0 lattice point, then the enclosing simplex
    down = 1.0 / (d + 1)
    rd = np.floor(elevated * down + 0.5)
    rem0 = rd * (d + 1)
    total = rd.sum(axis=1).astype(np.int64)
    diff = elevated - rem0
    rank = np.zeros((n, d + 1), dtype=np.int64)
    for i in range(d + 1):
        for k in range(i + 1, d + 1):
            gt = diff[:, i] < diff[:, k]
            rank[:, i] += gt
            rank[:, k] += ~gt
    rank += total[:, None]
    low = rank < 0
    high = rank > d
    rank[low] += d + 1
    rem0[low] += d + 1
    rank[high] -= d + 1
    rem0[high] -= d + 1

    bary = np.zeros((n, d + 2))
    v = (elevated - rem0) * down
    rows = np.arange(n)
    for i in range(d + 1):
        bary[rows, d - rank[:, i]] += v[:, i]
        bary[rows, d - rank[:, i] + 1] -= v[:, i]
    bary[:, 0] += 1.0 + bary[:, d + 1]

    canon = _canonical(d)
    rem0i = rem0.astype(np.int64)
    keys = np.empty((n, d + 1, d), dtype=np.int64)
    for r in range(d + 1):
        keys[:, r, :] = rem0i[:, :d] + canon[r][rank[:, :d]]
    flat = keys.reshape(-1, d)
    codec = _KeyCodec(flat, margin=d + 1)
    uniq, codes, inv = _unique_rows(flat, codec)
    offsets = inv.reshape(n, d + 1).astype(np.int32)
    weights = np.ascontiguousarray(bary[:, : d + 1])

    m = len(uniq)
    neighbors = np.empty((d + 1, m, 2), dtype=np.int32)
    for axis in range(d + 1):
        n1 = uniq - 1
        n2 = uniq + 1
        if axis < d:
            n1[:, axis] = uniq[:, axis] + d
            n2[:, axis] = uniq[:, axis] - d
        found = _lookup(uniq, codes, np.concatenate([n1, n2], axis=0), codec)
        neighbors[axis, :, 0] = found[:m]
        neighbors[axis, :, 1] = found[m:]
    return offsets, weights, neighbors


def lattice_filter(values, offsets, weights, neighbors, reverse=False):
    values = np.ascontiguousarray(values, dtype=np.float64)
    n, nv = values.shape
    d1 = offsets.shape[1]
    m = neighbors.shape[1]
    idx = offsets.ravel().astype(np.int64) + 1
    grid = np.zeros((m + 1, nv))
    for c in range(nv):
        w = (weights * values[:, c : c + 1]).ravel()
        grid[:, c] = np.bincount(idx, weights=w, minlength=m + 1)
    axes = range(d1 - 1, -1, -1) if reverse else range(d1)
    for axis in axes:
        nb = neighbors[axis].astype(np.int64) + 1
        new = grid.copy()
        new[1:] = grid[1:] + 0.5 * (grid[nb[:, 0]] + grid[nb[:, 1]])
        grid = new
    alpha = 1.0 / (1.0 + 2.0 ** (-(d1 - 1)))
    out = np.zeros((n, nv))
    for r in range(d1):
        out += weights[:, r : r + 1] * grid[offsets[:, r].astype(np.int64) + 1]
    return out * alpha


def label_components(mask, connectivity=8):
    mask = np.asarray(mask).astype(bool)
    if connectivity == 8:
        structure = np.ones((3, 3), dtype=bool)
    elif connectivity == 4:
        structure = ndimage.generate_binary_structure(2, 1)
    else:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, count = ndimage.label(mask, structure=structure)
    if count == 0:
        return labels.astype(np.int32), 0
    flat = labels.ravel()
    fg = np.flatnonzero(flat)
    first = np.full(count + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[fg], fg)
    order = np.argsort(first[1:], kind="stable") + 1
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order] = np.arange(1, count + 1, dtype=np.int32)
    return remap[labels], int(count)
