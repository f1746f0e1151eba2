"""Kuhn-Munkres assignment on rectangular cost matrices plus affinity gating."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Matching:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_rows: list[int] = field(default_factory=list)
    unmatched_cols: list[int] = field(default_factory=list)

    def total(self, matrix: np.ndarray) -> float:
        return float(sum(matrix[r, c] for r, c in self.pairs))

    def row_to_col(self) -> dict[int, int]:
        return dict(self.pairs)


def _hungarian_rows_le_cols(cost: np.ndarray) -> np.ndarray:
    """Shortest-augmenting-path Hungarian method for n <= m.

    Returns ``col_of_row`` (length n). Rows are inserted in index order and
    the next column is picked by ``argmin`` (lowest index on ties), which makes
    the result deterministic.
    """
    n, m = cost.shape
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    # p[j]: 1-based row assigned to column j (0 = free); column 0 is the virtual root
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def solve_min_cost(cost) -> Matching:
    """Maximum-cardinality matching of minimum total cost."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a 2-D matrix, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        return Matching([], list(range(n)), list(range(m)))

    if n <= m:
        col_of_row = _hungarian_rows_le_cols(cost)
        pairs = [(r, int(c)) for r, c in enumerate(col_of_row)]
    else:
        row_of_col = _hungarian_rows_le_cols(cost.T)
        pairs = sorted((int(r), c) for c, r in enumerate(row_of_col))
    rows = {r for r, _ in pairs}
    cols = {c for _, c in pairs}
    return Matching(
        pairs,
        [r for r in range(n) if r not in rows],
        [c for c in range(m) if c not in cols],
    )


def match_by_affinity(aff, min_affinity: float) -> Matching:
    """Hungarian on ``1 - aff`` followed by a gate on the matched affinities.

    Pairs with affinity below ``min_affinity`` are dropped. With a gate of
    exactly 0, zero-affinity pairs are dropped as well so that boxes with no
    overlap never count as matched.
    """
    aff = np.asarray(aff, dtype=np.float64)
    raw = solve_min_cost(1.0 - aff)
    n, m = aff.shape
    keep = []
    for r, c in raw.pairs:
        a = aff[r, c]
        if a < min_affinity or (min_affinity == 0 and a <= 0):
            continue
        keep.append((r, c))
    rows = {r for r, _ in keep}
    cols = {c for _, c in keep}
    return Matching(
        keep,
        [r for r in range(n) if r not in rows],
        [c for c in range(m) if c not in cols],
    )
