"""Tests for dataset loading, sorting, and the hinge basis."""

import numpy as np
import pytest

from acdcreg.data import (
    Dataset,
    Permutation,
    hinge_design,
    hinge_matrix_sorted,
    load_csv,
    sort_index,
)


# -----------------------------------------------------------------------
# csv loading
# -----------------------------------------------------------------------


class TestLoadCsv:
    def test_two_row_parse(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("a,b,y\n1,2,3\n4,5,6\n")
        ds = load_csv(path, "y")
        assert ds.n == 2 and ds.p == 2
        assert ds.names == ("a", "b")
        np.testing.assert_array_equal(ds.y, [3.0, 6.0])
        np.testing.assert_array_equal(ds.X, [[1.0, 2.0], [4.0, 5.0]])

    def test_missing_response_column(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="response column not found"):
            load_csv(path, "y")

    def test_nan_cell_named_in_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,y\n1,NaN\n")
        with pytest.raises(ValueError) as err:
            load_csv(path, "y")
        assert "row 1" in str(err.value)
        assert "'y'" in str(err.value)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,y\nfoo,2\n")
        with pytest.raises(ValueError, match="row 1"):
            load_csv(path, "y")

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,y\n1,2,3\n4,5\n")
        with pytest.raises(ValueError, match="ragged"):
            load_csv(path, "y")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            load_csv(path, "y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValueError, match="no such file"):
            load_csv(tmp_path / "nope.csv", "y")


# -----------------------------------------------------------------------
# dataset container
# -----------------------------------------------------------------------


class TestDataset:
    def test_basic_shape_checks(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((3, 2)), np.ones(4))
        with pytest.raises(ValueError):
            Dataset(np.ones(3), np.ones(3))
        with pytest.raises(ValueError):
            Dataset(np.array([[1.0], [np.inf]]), np.ones(2))

    def test_default_names(self):
        ds = Dataset(np.ones((2, 3)), np.zeros(2))
        assert ds.names == ("x1", "x2", "x3")
        assert ds.column_index("x2") == 1

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((2, 2)), np.zeros(2), names=("a", "a"))

    def test_subset_keeps_order(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.standard_normal((5, 4)), rng.standard_normal(5))
        sub = ds.subset([2, 0])
        assert sub.names == ("x3", "x1")
        np.testing.assert_array_equal(sub.X[:, 0], ds.X[:, 2])

    def test_arrays_read_only(self):
        ds = Dataset(np.ones((2, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            ds.X[0, 0] = 9.0


# -----------------------------------------------------------------------
# sorting
# -----------------------------------------------------------------------


class TestSortIndex:
    def test_plain_sort(self):
        ds = Dataset(np.array([[3.0], [1.0], [2.0]]), np.zeros(3))
        perm = sort_index(ds, 0)
        np.testing.assert_array_equal(perm.order, [1, 2, 0])

    def test_stable_ties(self):
        ds = Dataset(np.array([[1.0], [1.0], [2.0]]), np.zeros(3))
        perm = sort_index(ds, 0)
        np.testing.assert_array_equal(perm.order, [0, 1, 2])

    def test_singleton(self):
        ds = Dataset(np.array([[5.0]]), np.zeros(1))
        np.testing.assert_array_equal(sort_index(ds, 0).order, [0])

    def test_out_of_range(self):
        ds = Dataset(np.ones((2, 2)), np.zeros(2))
        with pytest.raises(IndexError):
            sort_index(ds, 2)

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(17)
        order = rng.permutation(10)
        perm = Permutation(order, coordinate=0)
        inv = perm.inverse()
        np.testing.assert_array_equal(order[inv], np.arange(10))


# -----------------------------------------------------------------------
# hinge basis
# -----------------------------------------------------------------------


class TestHingeBasis:
    def test_sorted_raw_values(self):
        raw = hinge_matrix_sorted(np.array([0.0, 1.0, 3.0]))
        np.testing.assert_array_equal(raw, [[0.0, 0.0], [1.0, 0.0],
                                            [3.0, 2.0]])

    def test_centered_values(self):
        ds = Dataset(np.array([[0.0], [1.0], [3.0]]), np.zeros(3))
        design = hinge_design(ds, 0)
        expected = np.array([[-4 / 3, -2 / 3], [-1 / 3, -2 / 3],
                             [5 / 3, 4 / 3]])
        np.testing.assert_allclose(design.centered, expected, atol=1e-15)

    def test_constant_column_degenerates_to_zero(self):
        ds = Dataset(np.array([[2.0], [2.0], [2.0]]), np.zeros(3))
        design = hinge_design(ds, 0)
        assert np.all(design.raw == 0.0)
        assert np.all(design.centered == 0.0)

    def test_rows_follow_original_sample_order(self):
        """Row i of the design must belong to sample i, not sort position i."""
        rng = np.random.default_rng(23)
        x = rng.standard_normal(12)
        ds = Dataset(x[:, None], np.zeros(12))
        design = hinge_design(ds, 0)
        perm = sort_index(ds, 0)
        sorted_rows = hinge_matrix_sorted(x[perm.order])
        np.testing.assert_allclose(design.raw[perm.order], sorted_rows,
                                   atol=1e-15)

    def test_column_means_removed(self):
        rng = np.random.default_rng(29)
        ds = Dataset(rng.standard_normal((30, 1)), np.zeros(30))
        design = hinge_design(ds, 0)
        np.testing.assert_allclose(design.centered.mean(axis=0), 0.0,
                                   atol=1e-14)

    def test_curvature_weights_reproduce_convex_values(self):
        """Nonnegative curvature weights give convex centered values."""
        rng = np.random.default_rng(31)
        x = np.sort(rng.standard_normal(15))
        ds = Dataset(x[:, None], np.zeros(15))
        design = hinge_design(ds, 0)
        w = rng.uniform(0.0, 1.0, size=14)
        f = design.centered @ w
        slopes = np.diff(f) / np.diff(x)
        assert np.all(np.diff(slopes) >= -1e-12)
        assert abs(f.sum()) <= 1e-12 * max(1.0, np.abs(f).max())
