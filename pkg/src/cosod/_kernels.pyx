# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled permutohedral lattice and connected-component kernels.

Semantics match ``cosod._fallback`` exactly; see that module for the contract.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, pow
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline size_t _hash(const int* key, int d) noexcept nogil:
    cdef size_t k = 0
    cdef int i
    for i in range(d):
        k += <size_t>(<long long>key[i])
        k *= 2531011
    return k


cdef inline int _find(int* table, size_t mask, int* keys, int d, const int* key,
                      int* m, bint insert) noexcept nogil:
    cdef size_t h = _hash(key, d) & mask
    cdef int e, i
    cdef bint same
    while True:
        e = table[h]
        if e == -1:
            if not insert:
                return -1
            for i in range(d):
                keys[m[0] * d + i] = key[i]
            table[h] = m[0]
            m[0] += 1
            return m[0] - 1
        same = True
        for i in range(d):
            if keys[e * d + i] != key[i]:
                same = False
                break
        if same:
            return e
        h = (h + 1) & mask


def build_lattice(features):
    cdef double[:, ::1] f = np.ascontiguousarray(features, dtype=np.float64)
    cdef int n = f.shape[0]
    cdef int d = f.shape[1]
    cdef size_t cap = 1
    while cap < <size_t>(2 * n * (d + 1) + 1):
        cap <<= 1
    cdef size_t hmask = cap - 1

    table_arr = np.full(cap, -1, dtype=np.int32)
    keys_arr = np.empty(max(n * (d + 1), 1) * d, dtype=np.int32)
    offsets_arr = np.empty((n, d + 1), dtype=np.int32)
    weights_arr = np.empty((n, d + 1), dtype=np.float64)
    cdef int[::1] table = table_arr
    cdef int[::1] keys = keys_arr
    cdef int[:, ::1] offsets = offsets_arr
    cdef double[:, ::1] weights = weights_arr

    cdef double* scale = <double*>malloc(d * sizeof(double))
    cdef double* elevated = <double*>malloc((d + 1) * sizeof(double))
    cdef double* rem0 = <double*>malloc((d + 1) * sizeof(double))
    cdef double* bary = <double*>malloc((d + 2) * sizeof(double))
    cdef int* rank = <int*>malloc((d + 1) * sizeof(int))
    cdef int* key = <int*>malloc((d + 1) * sizeof(int))
    cdef int* canonical = <int*>malloc((d + 1) * (d + 1) * sizeof(int))

    cdef double inv_std = sqrt(2.0 / 3.0) * (d + 1)
    cdef double down = 1.0 / (d + 1)
    cdef double sm, cf, rd, di, v
    cdef int i, j, k, r, total, m = 0

    for i in range(d):
        scale[i] = inv_std / sqrt((i + 1.0) * (i + 2.0))
    for r in range(d + 1):
        for j in range(d + 1 - r):
            canonical[r * (d + 1) + j] = r
        for j in range(d + 1 - r, d + 1):
            canonical[r * (d + 1) + j] = r - (d + 1)

    try:
        with nogil:
            for k in range(n):
                sm = 0.0
                for j in range(d, 0, -1):
                    cf = f[k, j - 1] * scale[j - 1]
                    elevated[j] = sm - j * cf
                    sm = sm + cf
                elevated[0] = sm

                total = 0
                for i in range(d + 1):
                    rd = floor(elevated[i] * down + 0.5)
                    rem0[i] = rd * (d + 1)
                    total = total + <int>rd
                for i in range(d + 1):
                    rank[i] = 0
                for i in range(d):
                    di = elevated[i] - rem0[i]
                    for j in range(i + 1, d + 1):
                        if di < elevated[j] - rem0[j]:
                            rank[i] += 1
                        else:
                            rank[j] += 1
                for i in range(d + 1):
                    rank[i] += total
                    if rank[i] < 0:
                        rank[i] += d + 1
                        rem0[i] += d + 1
                    elif rank[i] > d:
                        rank[i] -= d + 1
                        rem0[i] -= d + 1

                for i in range(d + 2):
                    bary[i] = 0.0
                for i in range(d + 1):
                    v = (elevated[i] - rem0[i]) * down
                    bary[d - rank[i]] += v
                    bary[d - rank[i] + 1] -= v
                bary[0] += 1.0 + bary[d + 1]

                for r in range(d + 1):
                    for i in range(d):
                        key[i] = <int>rem0[i] + canonical[r * (d + 1) + rank[i]]
                    offsets[k, r] = _find(&table[0], hmask, &keys[0], d, key, &m, True)
                    weights[k, r] = bary[r]

        neighbors_arr = np.empty((d + 1, m, 2), dtype=np.int32)
        if m > 0:
            _fill_neighbors(neighbors_arr, table, hmask, keys, d, m)
    finally:
        free(scale); free(elevated); free(rem0); free(bary)
        free(rank); free(key); free(canonical)
    return offsets_arr, weights_arr, neighbors_arr


cdef void _fill_neighbors(int[:, :, ::1] nbrs, int[::1] table, size_t hmask,
                          int[::1] keys, int d, int m):
    cdef int* n1 = <int*>malloc((d + 1) * sizeof(int))
    cdef int* n2 = <int*>malloc((d + 1) * sizeof(int))
    cdef int axis, i, k, dummy = m
    with nogil:
        for axis in range(d + 1):
            for i in range(m):
                for k in range(d):
                    n1[k] = keys[i * d + k] - 1
                    n2[k] = keys[i * d + k] + 1
                if axis < d:
                    n1[axis] = keys[i * d + axis] + d
                    n2[axis] = keys[i * d + axis] - d
                nbrs[axis, i, 0] = _find(&table[0], hmask, &keys[0], d, n1, &dummy, False)
                nbrs[axis, i, 1] = _find(&table[0], hmask, &keys[0], d, n2, &dummy, False)
    free(n1)
    free(n2)


def lattice_filter(values, offsets, weights, neighbors, reverse=False):
    cdef double[:, ::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef int[:, ::1] off = np.ascontiguousarray(offsets, dtype=np.int32)
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef int[:, :, ::1] nb = np.ascontiguousarray(neighbors, dtype=np.int32)
    cdef int n = vals.shape[0]
    cdef int nv = vals.shape[1]
    cdef int d1 = off.shape[1]
    cdef int m = nb.shape[1]

    grid_a = np.zeros((m + 1, nv), dtype=np.float64)
    grid_b = np.zeros((m + 1, nv), dtype=np.float64)
    out_arr = np.zeros((n, nv), dtype=np.float64)
    cdef double[:, ::1] g = grid_a
    cdef double[:, ::1] g2 = grid_b
    cdef double[:, ::1] tmp
    cdef double[:, ::1] out = out_arr
    cdef int i, r, c, o, a, step, axis, i1, i2
    cdef double wt
    cdef double alpha = 1.0 / (1.0 + pow(2.0, -(d1 - 1)))
    cdef bint rev = bool(reverse)

    with nogil:
        for i in range(n):
            for r in range(d1):
                o = off[i, r] + 1
                wt = w[i, r]
                for c in range(nv):
                    g[o, c] += wt * vals[i, c]
        for step in range(d1):
            axis = d1 - 1 - step if rev else step
            for i in range(m):
                i1 = nb[axis, i, 0] + 1
                i2 = nb[axis, i, 1] + 1
                for c in range(nv):
                    g2[i + 1, c] = g[i + 1, c] + 0.5 * (g[i1, c] + g[i2, c])
            tmp = g
            g = g2
            g2 = tmp
        for i in range(n):
            for r in range(d1):
                o = off[i, r] + 1
                wt = w[i, r] * alpha
                for c in range(nv):
                    out[i, c] += wt * g[o, c]
    return out_arr


cdef inline int _root(int* parent, int x) noexcept nogil:
    cdef int r = x, nxt
    while parent[r] != r:
        r = parent[r]
    while parent[x] != r:
        nxt = parent[x]
        parent[x] = r
        x = nxt
    return r


cdef inline int _union(int* parent, int a, int b) noexcept nogil:
    a = _root(parent, a)
    b = _root(parent, b)
    if a < b:
        parent[b] = a
        return a
    parent[a] = b
    return b


def label_components(mask, int connectivity=8):
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    cdef cnp.uint8_t[:, ::1] mk = np.ascontiguousarray(np.asarray(mask).astype(bool), dtype=np.uint8)
    cdef int h = mk.shape[0]
    cdef int w = mk.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] lab = labels_arr
    cdef int* parent = <int*>malloc((h * w + 2) * sizeof(int))
    cdef int* final = <int*>malloc((h * w + 2) * sizeof(int))
    cdef int y, x, cur, nl, next_label = 1, count = 0
    cdef bint eight = connectivity == 8
    try:
        with nogil:
            for y in range(h):
                for x in range(w):
                    if not mk[y, x]:
                        continue
                    cur = 0
                    if x > 0 and lab[y, x - 1]:
                        cur = lab[y, x - 1]
                    if y > 0:
                        if lab[y - 1, x]:
                            cur = _union(parent, cur, lab[y - 1, x]) if cur else lab[y - 1, x]
                        if eight:
                            if x > 0 and lab[y - 1, x - 1]:
                                cur = _union(parent, cur, lab[y - 1, x - 1]) if cur else lab[y - 1, x - 1]
                            if x + 1 < w and lab[y - 1, x + 1]:
                                cur = _union(parent, cur, lab[y - 1, x + 1]) if cur else lab[y - 1, x + 1]
                    if cur == 0:
                        parent[next_label] = next_label
                        final[next_label] = 0
                        cur = next_label
                        next_label += 1
                    lab[y, x] = cur
            for y in range(h):
                for x in range(w):
                    if lab[y, x]:
                        nl = _root(parent, lab[y, x])
                        if final[nl] == 0:
                            count += 1
                            final[nl] = count
                        lab[y, x] = final[nl]
    finally:
        free(parent)
        free(final)
    return labels_arr, count
