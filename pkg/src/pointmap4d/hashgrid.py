"""Uniform spatial hash grid for nearest-neighbor queries on point clouds."""

from __future__ import annotations

import itertools

import numpy as np

_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)
_CHUNK = 2048


class SpatialHashGrid:
    """Bucket points into cubic cells keyed by their integer cell coordinates.

    Cell keys are linearized and kept sorted, so a bucket lookup is a binary
    search.  A nearest-neighbor query inspects the 27 cells around the query;
    any point outside that block is at least ``cell_size`` away, which makes
    the search exact whenever the best candidate lies within ``cell_size``.
    Queries that cannot be settled that way fall back to brute force.
    """

    def __init__(self, points: np.ndarray, cell_size: float):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {points.shape}")
        if not (cell_size > 0 and np.isfinite(cell_size)):
            raise ValueError(f"cell_size must be positive and finite, got {cell_size}")
        self.points = points
        self.cell_size = float(cell_size)
        cells = np.floor(points / self.cell_size).astype(np.int64)
        self.origin = cells.min(axis=0) if len(points) else np.zeros(3, dtype=np.int64)
        self.dims = (cells.max(axis=0) - self.origin + 1) if len(points) else np.ones(3, dtype=np.int64)
        keys = self._linear(cells - self.origin)
        self.order = np.argsort(keys, kind="stable")
        self.sorted_keys = keys[self.order]

    def _linear(self, c):
        return (c[..., 0] * self.dims[1] + c[..., 1]) * self.dims[2] + c[..., 2]

    def nearest(self, queries: np.ndarray, radius: float = np.inf, exclude_self: bool = False):
        """Index and distance of the nearest stored point for each query.

        Returns ``(idx, dist)`` with ``idx = -1`` and ``dist = inf`` where no
        point lies within ``radius``.  Equal distances resolve to the lowest
        index.  With ``exclude_self`` the queries must be the stored points
        themselves and each query skips its own index.
        """
        queries = np.asarray(queries, dtype=np.float64)
        m = len(queries)
        best = np.full(m, np.inf)
        best_idx = np.full(m, -1, dtype=np.int64)
        if m == 0 or len(self.points) == 0:
            return best_idx, best
        own = np.arange(m) if exclude_self else None
        qcell = np.floor(queries / self.cell_size).astype(np.int64) - self.origin
        for off in _OFFSETS:
            c = qcell + off
            inside = np.all((c >= 0) & (c < self.dims), axis=1)
            key = self._linear(np.where(inside[:, None], c, 0))
            start = np.searchsorted(self.sorted_keys, key, side="left")
            stop = np.searchsorted(self.sorted_keys, key, side="right")
            count = np.where(inside, stop - start, 0)
            for k in range(int(count.max(initial=0))):
                has = count > k
                qi = np.nonzero(has)[0]
                cand = self.order[start[qi] + k]
                if own is not None:
                    keep = cand != own[qi]
                    qi, cand = qi[keep], cand[keep]
                d = np.linalg.norm(self.points[cand] - queries[qi], axis=1)
                better = (d < best[qi]) | ((d == best[qi]) & (cand < best_idx[qi]))
                best[qi[better]] = d[better]
                best_idx[qi[better]] = cand[better]

        unsettled = np.nonzero((best > self.cell_size) & (radius > self.cell_size))[0]
        if unsettled.size:
            bi, bd = self._brute(queries[unsettled], unsettled if exclude_self else None)
            best[unsettled], best_idx[unsettled] = bd, bi

        far = best > radius
        best_idx[far] = -1
        best[far] = np.inf
        return best_idx, best

    def _brute(self, queries, own=None):
        idx = np.empty(len(queries), dtype=np.int64)
        dist = np.empty(len(queries))
        for s in range(0, len(queries), _CHUNK):
            q = queries[s : s + _CHUNK]
            d = np.linalg.norm(q[:, None, :] - self.points[None, :, :], axis=-1)
            if own is not None:
                d[np.arange(len(q)), own[s : s + _CHUNK]] = np.inf
            j = np.argmin(d, axis=1)  # first occurrence = lowest index on ties
            idx[s : s + _CHUNK] = j
            dist[s : s + _CHUNK] = d[np.arange(len(q)), j]
        return idx, dist


def default_cell_size(points: np.ndarray) -> float:
    """Cell edge for surface-like clouds: bounding-box diagonal over sqrt(N)."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 1.0
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    return diag / np.sqrt(len(points)) if diag > 0 else 1.0


def median_nn_spacing(points: np.ndarray) -> float:
    """Median distance from each point to its nearest other point."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        raise ValueError("need at least two points to measure spacing")
    grid = SpatialHashGrid(points, default_cell_size(points))
    _, d = grid.nearest(points, exclude_self=True)
    return float(np.median(d))
