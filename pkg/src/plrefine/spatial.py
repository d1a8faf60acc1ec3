"""Exact k-nearest-neighbour search and the bird's-eye-view confidence raster.

The index wraps a scipy kd-tree but guarantees brute-force-identical results:
distances are recomputed with numpy and ties are broken by lower point index,
so queries are deterministic and directly comparable to a linear scan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud
from .laser import LaserScan2D


@dataclass(frozen=True, eq=False)
class KdIndex:
    """Exact nearest-neighbour index over 2D or 3D points."""

    dimension: int
    points: np.ndarray  # (n, dimension) copy of the indexed coordinates
    tree: cKDTree

    def __len__(self) -> int:
        return self.points.shape[0]


def _coords(points) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.points
    if isinstance(points, LaserScan2D):
        return points.points
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


def build_index(points, dim: int) -> KdIndex:
    """Index the given points for exact k-NN queries.

    For dim=2 the z coordinate of 3D input points is ignored. Raises
    ValueError for an empty input.
    """
    if dim not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {dim}")
    arr = _coords(points)
    if arr.shape[0] == 0:
        raise ValueError("cannot build an index over an empty point set")
    if arr.shape[1] < dim:
        raise ValueError(f"points have {arr.shape[1]} coordinates, need {dim}")
    coords = np.array(arr[:, :dim], dtype=float)
    if not np.all(np.isfinite(coords)):
        raise ValueError("indexed points must be finite")
    coords.flags.writeable = False
    return KdIndex(dimension=dim, points=coords, tree=cKDTree(coords))


def knn(index: KdIndex, query, k: int):
    """The k nearest indexed points to ``query`` by Euclidean distance.

    Returns (indices, distances) sorted by ascending distance, ties broken by
    lower point index. If k exceeds the population, all points are returned.
    Extra query coordinates beyond the index dimension are ignored.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=float).reshape(-1)[: index.dimension]
    if q.shape[0] != index.dimension:
        raise ValueError(f"query needs {index.dimension} coordinates")
    n = len(index)
    kk = min(k, n)
    d, _ = index.tree.query(q, k=kk)
    dmax = float(np.max(d))
    # Gather every point that could participate in the top-k (the slack covers
    # last-ulp differences between tree-internal and numpy distances), then
    # rank by numpy-computed distance with index tie-breaking.
    radius = dmax * (1.0 + 1e-9) + 1e-12
    cand = np.asarray(index.tree.query_ball_point(q, radius), dtype=int)
    dist = np.linalg.norm(index.points[cand] - q, axis=1)
    order = np.lexsort((cand, dist))[:kk]
    return cand[order], dist[order]


def knn_batch(index: KdIndex, queries, k: int):
    """Vectorized k-NN for many queries.

    Returns (indices, distances) of shape (m, kk) with kk = min(k, n), each
    row ascending. Exact in distances; ties between equidistant points follow
    the tree's internal order (use knn() when tie order matters).
    """
    qs = np.asarray(queries, dtype=float)
    qs = qs.reshape(-1, qs.shape[-1])[:, : index.dimension]
    kk = min(k, len(index))
    d, i = index.tree.query(qs, k=kk)
    if kk == 1:
        d = d.reshape(-1, 1)
        i = i.reshape(-1, 1)
    return i, d


@dataclass(frozen=True, eq=False)
class ConfidenceGrid:
    """Bird's-eye-view raster of proximity-to-scan scores in [0, 1].

    Cell (i, j) covers the square with corner (origin_x + i*cell,
    origin_y + j*cell); values are stored at cell centers as values[j, i].
    """

    origin_x: float
    origin_y: float
    cell: float
    width: int
    height: int
    values: np.ndarray  # (height, width)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.height, self.width):
            raise ValueError(
                f"values shape {vals.shape} != (height, width) "
                f"({self.height}, {self.width})"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("confidence values must be finite")
        if np.any(vals < 0) or np.any(vals > 1):
            raise ValueError("confidence values must lie in [0, 1]")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


def build_confidence_grid(
    scan: LaserScan2D,
    sigma: float = 0.2,
    cell: float = 0.1,
    padding: float | None = None,
) -> ConfidenceGrid:
    """Gaussian-kernel proximity raster over the scan's xy footprint.

    Each cell center q scores max over scan points p of
    exp(-|q - p|^2 / (2 sigma^2)); taking the max (not a sum) keeps scores in
    [0, 1] so they read as an object-boundary likelihood. The grid covers the
    scan bounding box expanded by ``padding`` (default 3 sigma).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if cell <= 0:
        raise ValueError("cell size must be positive")
    if len(scan) == 0:
        raise ValueError("cannot build a confidence grid from an empty scan")
    if padding is None:
        padding = 3.0 * sigma
    xy = scan.points[:, :2]
    xmin, ymin = xy.min(axis=0) - padding
    xmax, ymax = xy.max(axis=0) + padding
    width = int(np.ceil((xmax - xmin) / cell)) + 1
    height = int(np.ceil((ymax - ymin) / cell)) + 1
    cx = xmin + (np.arange(width) + 0.5) * cell
    cy = ymin + (np.arange(height) + 0.5) * cell
    gx, gy = np.meshgrid(cx, cy)
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    # max_p exp(-d_p^2 / 2s^2) = exp(-dmin^2 / 2s^2): one NN query per cell.
    dmin, _ = cKDTree(xy).query(centers)
    values = np.exp(-(dmin**2) / (2.0 * sigma**2)).reshape(height, width)
    return ConfidenceGrid(
        origin_x=float(xmin),
        origin_y=float(ymin),
        cell=float(cell),
        width=width,
        height=height,
        values=values,
    )


def sample_confidence(grid: ConfidenceGrid, x, y):
    """Bilinear interpolation of the grid at world coordinates (x, y).

    Accepts scalars or equal-shape arrays; queries outside the grid return 0
    (cells beyond the raster contribute a value of 0 to the interpolation).
    """
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    scalar = x_arr.ndim == 0 and y_arr.ndim == 0
    shape = np.broadcast(x_arr, y_arr).shape
    gx = np.atleast_1d((x_arr - grid.origin_x) / grid.cell - 0.5)
    gy = np.atleast_1d((y_arr - grid.origin_y) / grid.cell - 0.5)
    gx, gy = np.broadcast_arrays(gx, gy)
    i0 = np.floor(gx).astype(int)
    j0 = np.floor(gy).astype(int)
    fx = gx - i0
    fy = gy - j0
    out = np.zeros(gx.shape)
    for di, dj, w in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < grid.width) & (jj >= 0) & (jj < grid.height)
        vals = np.zeros_like(out)
        vals[ok] = grid.values[jj[ok], ii[ok]]
        out = out + w * vals
    if scalar:
        return float(out[0])
    return out.reshape(shape)
