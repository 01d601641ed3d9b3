"""Torus geometry and spatial hash grid for range queries.

The playground is a square with periodic boundary conditions.  The grid
bins positions into cells of the query radius, so a radius query only
has to inspect the 3x3 cell neighborhood (torus-wrapped).  Results are
exact: candidates are filtered by the true wrapped distance.
"""

from __future__ import annotations

import numpy as np


def wrap_delta(a: np.ndarray, b: np.ndarray, side: float) -> np.ndarray:
    """Shortest signed displacement from a to b on a ring of length side."""
    d = (b - a) % side
    return np.where(d >= side / 2, d - side, d)


def torus_distance(ax, ay, bx, by, side: float) -> np.ndarray:
    dx = wrap_delta(np.asarray(ax, dtype=np.float64), np.asarray(bx, dtype=np.float64), side)
    dy = wrap_delta(np.asarray(ay, dtype=np.float64), np.asarray(by, dtype=np.float64), side)
    return np.sqrt(dx * dx + dy * dy)


class SpatialGrid:
    """Cell index over a fixed set of points on the torus."""

    def __init__(self, ids: np.ndarray, x: np.ndarray, y: np.ndarray,
                 side: float, cell: float):
        if cell <= 0 or side <= 0:
            raise ValueError("side and cell size must be positive")
        self.side = float(side)
        self.cell = float(cell)
        self.ncell = max(1, int(side // cell))
        self.ids = np.asarray(ids, dtype=np.int64)
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        cx = np.minimum((self.x / self.cell).astype(np.int64), self.ncell - 1)
        cy = np.minimum((self.y / self.cell).astype(np.int64), self.ncell - 1)
        flat = cx * self.ncell + cy
        self._order = np.argsort(flat, kind="stable")
        self._sorted_cells = flat[self._order]
        self._starts = np.searchsorted(self._sorted_cells, np.arange(self.ncell * self.ncell))
        self._ends = np.searchsorted(self._sorted_cells, np.arange(self.ncell * self.ncell), side="right")

    def query_radius(self, qx: np.ndarray, qy: np.ndarray, radius: float,
                     exclude: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """All (query row, point id) pairs within radius, torus metric.

        ``exclude`` gives one id per query row to omit (a point is never
        its own neighbor).  Pairs come back sorted by (row, id).
        """
        qx = np.asarray(qx, dtype=np.float64)
        qy = np.asarray(qy, dtype=np.float64)
        nq = len(qx)
        if nq == 0 or len(self.ids) == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        qcx = np.minimum((qx / self.cell).astype(np.int64), self.ncell - 1)
        qcy = np.minimum((qy / self.cell).astype(np.int64), self.ncell - 1)

        rows_out = []
        ids_out = []
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                cells = ((qcx + ox) % self.ncell) * self.ncell + (qcy + oy) % self.ncell
                starts = self._starts[cells]
                counts = self._ends[cells] - starts
                total = int(counts.sum())
                if total == 0:
                    continue
                # expand [start, start+count) ranges into flat candidate indices
                rows = np.repeat(np.arange(nq, dtype=np.int64), counts)
                offs = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
                cand = self._order[np.repeat(starts, counts) + offs]
                d = torus_distance(qx[rows], qy[rows], self.x[cand], self.y[cand], self.side)
                keep = d <= radius
                if exclude is not None:
                    keep &= self.ids[cand] != exclude[rows]
                rows_out.append(rows[keep])
                ids_out.append(self.ids[cand[keep]])
        if not rows_out:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        rows = np.concatenate(rows_out)
        ids = np.concatenate(ids_out)
        # cells can repeat when the grid is narrower than 3 cells; dedup
        if self.ncell < 3:
            key = rows * (int(self.ids.max()) + 2) + ids
            _, uniq = np.unique(key, return_index=True)
            rows, ids = rows[uniq], ids[uniq]
        order = np.lexsort((ids, rows))
        return rows[order], ids[order]


def brute_force_radius(ids, x, y, qx, qy, radius, side,
                       exclude=None) -> tuple[np.ndarray, np.ndarray]:
    """O(n*q) reference for query_radius; exact same contract."""
    ids = np.asarray(ids, dtype=np.int64)
    rows_out, ids_out = [], []
    for r in range(len(np.asarray(qx))):
        d = torus_distance(qx[r], qy[r], x, y, side)
        keep = d <= radius
        if exclude is not None:
            keep &= ids != exclude[r]
        sel = ids[keep]
        rows_out.append(np.full(len(sel), r, dtype=np.int64))
        ids_out.append(np.sort(sel))
    if not rows_out:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(rows_out), np.concatenate(ids_out)
