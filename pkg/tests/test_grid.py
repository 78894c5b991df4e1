import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial import cKDTree

from datamdp.blackbox import StateBox
from datamdp.errors import InvalidParameter
from datamdp.grid import Grid, build_grid, deflate

SQUARE = StateBox((-0.5, -0.5), (0.5, 0.5))


class TestBuildGrid:
    def test_twenty_by_twenty(self):
        g = build_grid(SQUARE, (20, 20))
        np.testing.assert_allclose(g.widths, [0.05, 0.05])
        assert g.n_cells == 400
        assert g.eta == pytest.approx(np.hypot(0.05, 0.05))
        assert round(g.eta, 4) == 0.0707

    def test_single_cell(self):
        g = build_grid(StateBox((0.0,), (1.0,)), (1,))
        np.testing.assert_array_equal(g.centers, [[0.5]])
        assert g.eta == 1.0

    def test_ten_by_ten_eta(self):
        assert round(build_grid(SQUARE, (10, 10)).eta, 4) == 0.1414

    def test_zero_count(self):
        with pytest.raises(InvalidParameter):
            build_grid(SQUARE, (0, 3))

    def test_round_trip(self):
        g = build_grid(SQUARE, (7, 3))
        assert Grid.from_dict(g.to_dict()) == g


class TestProject:
    def test_containing_center(self):
        g = build_grid(SQUARE, (10, 10))
        p = g.project([0.14, -0.44])
        np.testing.assert_allclose(p.point, [0.15, -0.45], atol=1e-15)
        assert not p.absorbing

    def test_half_open_boundary(self):
        g = build_grid(StateBox((-0.5,), (0.5,)), (10,))
        p = g.project([0.1])
        lo, hi = g.cell_bounds(int(p.index))
        assert lo[0] == 0.1 and hi[0] == pytest.approx(0.2)
        assert p.point[0] == pytest.approx(0.15)

    def test_last_cell_closed(self):
        g = build_grid(StateBox((-0.5,), (0.5,)), (10,))
        assert int(g.project([0.5]).index) == 9

    def test_out_of_box(self):
        g = build_grid(SQUARE, (10, 10))
        p = g.project([0.6, 0.0])
        assert p.absorbing and int(p.index) == g.absorbing and np.all(np.isnan(p.point))

    def test_projection_bound_on_many_points(self, rng):
        g = build_grid(SQUARE, (13, 7))
        x = rng.uniform(-0.5, 0.5, size=(100_000, 2))
        d = np.linalg.norm(g.project(x).point - x, axis=1)
        assert d.max() <= g.eta

    def test_idempotent_on_representatives(self):
        g = build_grid(StateBox((0.0, -1.0, 2.0), (1.0, 1.0, 3.0)), (3, 4, 2))
        p = g.project(g.centers)
        np.testing.assert_array_equal(p.index, np.arange(g.n_cells))
        np.testing.assert_array_equal(p.point, g.centers)

    @given(st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=2), st.integers(1, 9), st.integers(1, 9))
    def test_exactly_one_cell_contains(self, x, k1, k2):
        g = build_grid(SQUARE, (k1, k2))
        x = np.array(x)
        hits = []
        for i in range(g.n_cells):
            lo, hi = g.cell_bounds(i)
            last = np.array([m == k - 1 for m, k in zip(np.unravel_index(i, g.counts), g.counts)])
            upper_ok = np.where(last, x <= hi, x < hi)
            if np.all(x >= lo) and np.all(upper_ok):
                hits.append(i)
        assert hits == [int(g.project(x).index)]

    @given(st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=2), st.integers(1, 12), st.integers(1, 12))
    def test_center_is_nearest_representative(self, x, k1, k2):
        g = build_grid(SQUARE, (k1, k2))
        d = np.linalg.norm(g.centers - np.array(x), axis=1)
        assert np.linalg.norm(g.project(x).point - x) <= d.min() + 1e-12


class TestDeflate:
    def test_whole_set_unchanged(self):
        d = deflate(SQUARE, 0.1, SQUARE)
        np.testing.assert_array_equal(d.lo, [-0.5, -0.5])
        np.testing.assert_array_equal(d.hi, [0.5, 0.5])

    def test_zero_eps_identity(self):
        phi = StateBox((-0.3, -0.2), (0.1, 0.3))
        d = deflate(phi, 0.0, SQUARE)
        np.testing.assert_array_equal(d.lo, phi.lo_array)

    def test_empty_flagged(self):
        assert deflate(StateBox((-0.1,), (0.1,)), 0.2, StateBox((-1.0,), (1.0,))).empty

    def test_inner_box_against_pointwise_distance(self):
        phi = StateBox((-0.3, -0.3), (0.3, 0.3))
        eps = 0.1
        d = deflate(phi, eps, SQUARE)
        np.testing.assert_allclose(d.lo, [-0.2, -0.2])
        np.testing.assert_allclose(d.hi, [0.2, 0.2])
        # oracle: distance from test points to a dense sample of X \ phi
        h = 0.0025
        ax = np.arange(-0.5, 0.5 + h / 2, h)
        pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
        outside = pts[~phi.contains(pts)]
        tree = cKDTree(outside)
        test = np.stack(np.meshgrid(np.linspace(-0.3, 0.3, 61), np.linspace(-0.3, 0.3, 61),
                                    indexing="ij"), -1).reshape(-1, 2)
        dist, _ = tree.query(test)
        clear = np.abs(dist - eps) > 2 * h
        np.testing.assert_array_equal(d.contains(test)[clear], (dist >= eps)[clear])
