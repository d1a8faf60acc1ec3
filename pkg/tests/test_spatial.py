import numpy as np
import pytest

from plrefine.laser import LaserScan2D
from plrefine.spatial import (
    build_confidence_grid,
    build_index,
    knn,
    knn_batch,
    sample_confidence,
)


def brute_force_knn(points, query, k):
    """Independent oracle: full scan, sorted by (distance, index)."""
    pts = np.asarray(points, dtype=float)
    q = np.asarray(query, dtype=float)
    dist = np.linalg.norm(pts - q, axis=1)
    order = np.lexsort((np.arange(len(pts)), dist))[: min(k, len(pts))]
    return order, dist[order]


class TestKnn:
    def test_single_point_always_returned(self):
        index = build_index(np.array([[1.0, 2.0, 3.0]]), 3)
        idx, dist = knn(index, [5.0, 5.0, 5.0], 4)
        assert list(idx) == [0]

    def test_duplicates_both_returned_at_distance_zero(self):
        index = build_index(np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]]), 3)
        idx, dist = knn(index, [1.0, 1.0, 0.0], 2)
        assert sorted(idx) == [0, 1]
        assert np.allclose(dist, 0.0)
        # tie broken by lower index first
        assert list(idx) == [0, 1]

    def test_query_at_indexed_point(self):
        rng = np.random.default_rng(31)
        pts = rng.normal(size=(50, 3))
        index = build_index(pts, 3)
        idx, dist = knn(index, pts[17], 1)
        assert idx[0] == 17
        assert dist[0] == 0.0

    def test_k_equals_population_returns_all_sorted(self):
        rng = np.random.default_rng(32)
        pts = rng.normal(size=(20, 2))
        index = build_index(pts, 2)
        idx, dist = knn(index, [0.3, -0.2], 20)
        assert len(idx) == 20
        assert np.all(np.diff(dist) >= 0)
        assert sorted(idx) == list(range(20))

    @pytest.mark.parametrize("dim", [2, 3])
    @pytest.mark.parametrize("k", [1, 9, 1000])
    def test_random_queries_match_brute_force(self, dim, k):
        rng = np.random.default_rng(33 + dim)
        pts = rng.uniform(-5, 5, size=(1000, dim))
        index = build_index(pts, dim)
        for _ in range(100):
            q = rng.uniform(-6, 6, size=dim)
            got_idx, got_dist = knn(index, q, k)
            exp_idx, exp_dist = brute_force_knn(pts, q, k)
            assert np.array_equal(got_idx, exp_idx)
            assert np.max(np.abs(got_dist - exp_dist)) < 1e-12

    def test_grid_points_with_exact_ties(self):
        # a lattice forces exactly-equal distances; tie order must be by index
        xs, ys = np.meshgrid(np.arange(5.0), np.arange(5.0))
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
        index = build_index(pts, 2)
        got_idx, got_dist = knn(index, [2.0, 2.0], 5)
        exp_idx, exp_dist = brute_force_knn(pts, [2.0, 2.0], 5)
        assert np.array_equal(got_idx, exp_idx)
        assert np.array_equal(got_dist, exp_dist)

    def test_2d_index_ignores_z(self):
        pts = np.array([[0.0, 0.0, 100.0], [3.0, 0.0, 0.0]])
        index = build_index(pts, 2)
        idx, dist = knn(index, [0.5, 0.0, -50.0], 1)
        assert idx[0] == 0
        assert np.isclose(dist[0], 0.5)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            build_index(np.zeros((0, 3)), 3)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(35)
        pts = rng.normal(size=(300, 3))
        index = build_index(pts, 3)
        qs = rng.normal(size=(40, 3))
        bidx, bdist = knn_batch(index, qs, 7)
        for i, q in enumerate(qs):
            sidx, sdist = knn(index, q, 7)
            assert np.array_equal(np.sort(bidx[i]), np.sort(sidx))
            assert np.max(np.abs(np.sort(bdist[i]) - sdist)) < 1e-12


class TestConfidenceGrid:
    def make_scan(self, pts):
        arr = np.asarray(pts, dtype=float)
        return LaserScan2D(points=arr, mount_height=arr[0, 2])

    def test_peak_at_scan_point(self):
        # padding of 1.5 cells puts the scan point exactly on a cell center
        scan = self.make_scan([[1.25, 1.25, 1.2]])
        grid = build_confidence_grid(scan, sigma=0.2, cell=0.5, padding=0.75)
        assert grid.values.max() == 1.0

    def test_peak_bound_for_point_anywhere_in_cell(self):
        # a cell containing a scan point scores at least the corner-distance bound
        scan = self.make_scan([[1.23, 0.97, 1.2]])
        cell, sigma = 0.5, 0.2
        grid = build_confidence_grid(scan, sigma=sigma, cell=cell, padding=1.0)
        bound = np.exp(-((cell * np.sqrt(2) / 2) ** 2) / (2 * sigma**2))
        assert grid.values.max() >= bound

    def test_value_at_distance_sigma(self):
        # exp(-1/2) = 0.6065306597...
        scan = self.make_scan([[0.0, 0.0, 1.2]])
        grid = build_confidence_grid(scan, sigma=0.25, cell=0.01, padding=1.0)
        got = sample_confidence(grid, 0.25, 0.0)
        assert abs(got - 0.6065306597126334) < 1e-3

    def test_value_beyond_five_sigma(self):
        scan = self.make_scan([[0.0, 0.0, 1.2]])
        grid = build_confidence_grid(scan, sigma=0.2, cell=0.05, padding=1.2)
        got = sample_confidence(grid, 5.5 * 0.2, 0.0)
        assert got < 4e-6

    def test_sample_at_cell_center_returns_cell_value(self):
        scan = self.make_scan([[0.0, 0.0, 1.2], [1.0, 0.5, 1.2]])
        grid = build_confidence_grid(scan, sigma=0.3, cell=0.1)
        i, j = 3, 4
        x = grid.origin_x + (i + 0.5) * grid.cell
        y = grid.origin_y + (j + 0.5) * grid.cell
        assert np.isclose(sample_confidence(grid, x, y), grid.values[j, i])

    def test_sample_outside_grid_is_zero(self):
        scan = self.make_scan([[0.0, 0.0, 1.2]])
        grid = build_confidence_grid(scan, sigma=0.2, cell=0.1)
        assert sample_confidence(grid, 50.0, 50.0) == 0.0
        assert sample_confidence(grid, -50.0, 0.0) == 0.0

    def test_bilinear_midpoint_is_average(self):
        scan = self.make_scan([[0.0, 0.0, 1.2], [2.0, 0.0, 1.2]])
        grid = build_confidence_grid(scan, sigma=0.4, cell=0.25)
        i, j = 2, 3
        x0 = grid.origin_x + (i + 0.5) * grid.cell
        y = grid.origin_y + (j + 0.5) * grid.cell
        a = grid.values[j, i]
        b = grid.values[j, i + 1]
        got = sample_confidence(grid, x0 + grid.cell / 2, y)
        assert np.isclose(got, (a + b) / 2)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(36)
        pts = np.column_stack([rng.uniform(-3, 3, (40, 2)), np.full(40, 1.2)])
        scan = self.make_scan(pts)
        grid = build_confidence_grid(scan, sigma=0.2, cell=0.1)
        assert grid.values.min() >= 0.0
        assert grid.values.max() <= 1.0

    def test_monotone_falloff_from_isolated_point(self):
        scan = self.make_scan([[0.0, 0.0, 1.2]])
        grid = build_confidence_grid(scan, sigma=0.3, cell=0.05, padding=1.5)
        radii = np.linspace(0.0, 1.2, 25)
        vals = np.array([sample_confidence(grid, r, 0.0) for r in radii])
        # non-increasing within one cell of discretization slack
        assert np.all(np.diff(vals) <= 1e-9)

    def test_empty_scan_rejected(self):
        scan = LaserScan2D(points=np.zeros((0, 3)), mount_height=1.2)
        with pytest.raises(ValueError):
            build_confidence_grid(scan, sigma=0.2, cell=0.1)

    def test_bad_parameters_rejected(self):
        scan = self.make_scan([[0.0, 0.0, 1.2]])
        with pytest.raises(ValueError):
            build_confidence_grid(scan, sigma=0.0, cell=0.1)
        with pytest.raises(ValueError):
            build_confidence_grid(scan, sigma=0.2, cell=0.0)
