# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Two-pass union-find connected-component labelling (8-connectivity)."""
import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int32_t i32
ctypedef cnp.int64_t i64


cdef inline i32 _find(i32[::1] parent, i32 x) noexcept nogil:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


cdef inline i32 _union(i32[::1] parent, i32 a, i32 b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
        return a
    if b < a:
        parent[a] = b
    return b


def label_components(const unsigned char[:, ::1] mask):
    """Label 8-connected foreground regions of a 2-D ``uint8`` mask.

    Returns ``(labels, stats)``. Labels are numbered from 1 in raster order of
    each component's first pixel; ``stats[k]`` holds
    ``(area, x0, y0, x1, y1)`` for label ``k + 1`` with exclusive upper bounds.
    """
    cdef Py_ssize_t H = mask.shape[0]
    cdef Py_ssize_t W = mask.shape[1]
    labels_arr = np.zeros((H, W), dtype=np.int32)
    cdef i32[:, ::1] labels = labels_arr
    parent_arr = np.zeros(H * ((W + 1) // 2) + 2, dtype=np.int32)
    cdef i32[::1] parent = parent_arr
    cdef i32 next_label = 1
    cdef i32 cur, nb
    cdef Py_ssize_t y, x

    with nogil:
        for y in range(H):
            for x in range(W):
                if mask[y, x] == 0:
                    continue
                cur = 0
                if x > 0 and labels[y, x - 1]:
                    cur = labels[y, x - 1]
                if y > 0:
                    if x > 0 and labels[y - 1, x - 1]:
                        nb = labels[y - 1, x - 1]
                        cur = nb if cur == 0 else _union(parent, cur, nb)
                    if labels[y - 1, x]:
                        nb = labels[y - 1, x]
                        cur = nb if cur == 0 else _union(parent, cur, nb)
                    if x + 1 < W and labels[y - 1, x + 1]:
                        nb = labels[y - 1, x + 1]
                        cur = nb if cur == 0 else _union(parent, cur, nb)
                if cur == 0:
                    cur = next_label
                    parent[cur] = cur
                    next_label += 1
                labels[y, x] = cur

    # Final ids follow raster order of first pixel, matching the fallback.
    remap_arr = np.zeros(next_label, dtype=np.int32)
    cdef i32[::1] remap = remap_arr
    stats_arr = np.zeros((next_label, 5), dtype=np.int64)
    cdef i64[:, ::1] stats = stats_arr
    cdef i32 n = 0
    cdef i32 root, lab

    with nogil:
        for y in range(H):
            for x in range(W):
                lab = labels[y, x]
                if lab == 0:
                    continue
                root = _find(parent, lab)
                if remap[root] == 0:
                    n += 1
                    remap[root] = n
                    stats[n - 1, 1] = x
                    stats[n - 1, 2] = y
                    stats[n - 1, 3] = x + 1
                    stats[n - 1, 4] = y + 1
                lab = remap[root]
                labels[y, x] = lab
                stats[lab - 1, 0] += 1
                if x < stats[lab - 1, 1]:
                    stats[lab - 1, 1] = x
                if x + 1 > stats[lab - 1, 3]:
                    stats[lab - 1, 3] = x + 1
                stats[lab - 1, 4] = y + 1

    return labels_arr, stats_arr[:n].copy()
