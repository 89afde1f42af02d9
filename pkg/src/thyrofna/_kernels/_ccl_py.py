"""Pure-Python connected-component labelling over row runs.

Union-find runs over horizontal foreground runs rather than pixels, so the
Python-level loop scales with the number of runs. Output is identical to the
compiled kernel.
"""
from __future__ import annotations

import numpy as np


def _row_runs(row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.concatenate(([0], row.astype(np.int8), [0]))
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def label_components(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = np.asarray(mask) != 0
    H, W = mask.shape
    parent: list[int] = []
    run_y: list[int] = []
    run_s: list[int] = []
    run_e: list[int] = []

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(a: int, b: int) -> None:
        a, b = find(a), find(b)
        if a < b:
            parent[b] = a
        elif b < a:
            parent[a] = b

    prev_lo = prev_hi = 0
    for y in range(H):
        starts, ends = _row_runs(mask[y])
        lo = len(parent)
        j = prev_lo
        for s, e in zip(starts.tolist(), ends.tolist()):
            idx = len(parent)
            parent.append(idx)
            run_y.append(y)
            run_s.append(s)
            run_e.append(e)
            # 8-connectivity: previous-row run [s', e') touches [s, e) iff s' <= e and s <= e'.
            while j < prev_hi and run_e[j] < s:
                j += 1
            k = j
            while k < prev_hi and run_s[k] <= e:
                union(idx, k)
                k += 1
        prev_lo, prev_hi = lo, len(parent)

    labels = np.zeros((H, W), dtype=np.int32)
    remap: dict[int, int] = {}
    stats: list[list[int]] = []
    for idx in range(len(parent)):
        root = find(idx)
        lab = remap.get(root)
        y, s, e = run_y[idx], run_s[idx], run_e[idx]
        if lab is None:
            lab = remap[root] = len(stats) + 1
            stats.append([0, s, y, e, y + 1])
        st = stats[lab - 1]
        st[0] += e - s
        st[1] = min(st[1], s)
        st[3] = max(st[3], e)
        st[4] = y + 1
        labels[y, s:e] = lab
    return labels, np.asarray(stats, dtype=np.int64).reshape(-1, 5)
