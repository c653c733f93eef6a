from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose, assert_array_equal

from mcholkf.errors import CapacityError
from mcholkf.factors import PrecisionFactors, dump_factors


def make_factors(n, rng, density=0.4, floor=1e-10):
    """Random strictly-lower T and positive D.

    Entries are kept small: unit triangular matrices with large dense
    subdiagonals have exponentially ill-conditioned inverses, which would
    make roundtrip tolerances meaningless.
    """
    mask = np.tril(rng.random((n, n)) < density, k=-1)
    lower = sp.csr_matrix(np.where(mask, 0.3 * rng.standard_normal((n, n)), 0.0))
    d = rng.uniform(0.2, 3.0, n)
    return PrecisionFactors(lower, d, variance_floor=floor)


def two_by_two():
    # T = [[1, 0], [-2, 1]], D = [1, 1]
    lower = sp.csr_matrix(([-2.0], ([1], [0])), shape=(2, 2))
    return PrecisionFactors(lower, [1.0, 1.0])


class TestConstruction:
    def test_rejects_diagonal_entries(self):
        bad = sp.csr_matrix(np.eye(3))
        with pytest.raises(ValueError, match="strictly lower"):
            PrecisionFactors(bad, np.ones(3))

    def test_rejects_upper_entries(self):
        bad = sp.csr_matrix(([1.0], ([0], [2])), shape=(3, 3))
        with pytest.raises(ValueError, match="strictly lower"):
            PrecisionFactors(bad, np.ones(3))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            PrecisionFactors(sp.csr_matrix((3, 3)), np.ones(2))

    def test_rejects_nonpositive_floor(self):
        with pytest.raises(ValueError, match="floor"):
            PrecisionFactors(sp.csr_matrix((2, 2)), np.ones(2), variance_floor=0.0)

    def test_floor_applied(self):
        f = PrecisionFactors(sp.csr_matrix((2, 2)), [1.0, 1e-14], variance_floor=1e-10)
        assert_array_equal(f.variances, [1.0, 1e-10])

    def test_explicit_zeros_kept(self):
        lower = sp.csr_matrix(([0.0], ([2], [1])), shape=(3, 3))
        f = PrecisionFactors(lower, np.ones(3))
        assert f.lower.nnz == 1


class TestPrecisionApply:
    def test_identity_t_scalar(self):
        f = PrecisionFactors(sp.csr_matrix((1, 1)), [2.0])
        assert_allclose(f.precision_apply(np.array([1.0])), [0.5])

    def test_two_by_two(self):
        f = two_by_two()
        assert_allclose(f.precision_apply(np.array([1.0, 0.0])), [5.0, -2.0])

    def test_matrix_argument(self):
        f = two_by_two()
        out = f.precision_apply(np.eye(2))
        assert_allclose(out, [[5.0, -2.0], [-2.0, 1.0]])

    def test_matches_dense(self):
        rng = np.random.default_rng(5)
        for n in (1, 2, 7, 33, 64):
            f = make_factors(n, rng)
            m = f.dense_precision()
            v = rng.standard_normal(n)
            assert_allclose(f.precision_apply(v), m @ v, rtol=1e-12, atol=1e-12)


class TestCovarianceApply:
    def test_identity_t_scalar(self):
        f = PrecisionFactors(sp.csr_matrix((1, 1)), [4.0])
        assert_allclose(f.covariance_apply(np.array([1.0])), [4.0])

    def test_two_by_two(self):
        assert_allclose(two_by_two().covariance_apply(np.array([1.0, 0.0])), [1.0, 2.0])

    def test_inverse_of_precision(self):
        rng = np.random.default_rng(11)
        for n in (2, 9, 40):
            f = make_factors(n, rng)
            v = rng.standard_normal(n)
            assert_allclose(f.covariance_apply(f.precision_apply(v)), v, rtol=1e-9)

    def test_sparse_path_matches_dense(self):
        rng = np.random.default_rng(17)
        f = make_factors(20, rng)
        v = rng.standard_normal((20, 3))
        dense = f.covariance_apply(v)
        sparse = f.covariance_apply(v, dense_limit=0)
        assert_allclose(sparse, dense, rtol=1e-13, atol=1e-13)


class TestSqrtSolve:
    def test_scalar(self):
        f = PrecisionFactors(sp.csr_matrix((1, 1)), [9.0])
        assert_allclose(f.sqrt_solve(np.eye(1)), [[3.0]])

    def test_two_by_two(self):
        assert_allclose(two_by_two().sqrt_solve(np.eye(2)), [[1.0, 0.0], [2.0, 1.0]])

    def test_square_root_reproduces_covariance(self):
        rng = np.random.default_rng(23)
        for n in (3, 12, 30):
            f = make_factors(n, rng)
            x = f.sqrt_solve(np.eye(n))
            cov = f.covariance_apply(np.eye(n))
            assert_allclose(x @ x.T, cov, rtol=1e-10, atol=1e-12)

    def test_sparse_path_matches_dense(self):
        rng = np.random.default_rng(29)
        f = make_factors(25, rng)
        rhs = rng.standard_normal((25, 4))
        assert_allclose(
            f.sqrt_solve(rhs, dense_limit=0), f.sqrt_solve(rhs), rtol=1e-13, atol=1e-13
        )

    def test_vector_rhs(self):
        f = two_by_two()
        out = f.sqrt_solve(np.array([1.0, 0.0]))
        assert out.shape == (2,)
        assert_allclose(out, [1.0, 2.0])


class TestDensePrecision:
    def test_two_by_two_value(self):
        assert_allclose(two_by_two().dense_precision(), [[5.0, -2.0], [-2.0, 1.0]])

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            f = make_factors(int(rng.integers(2, 50)), rng)
            m = f.dense_precision()
            assert_array_equal(m, m.T)

    def test_positive_definite(self):
        rng = np.random.default_rng(37)
        for _ in range(10):
            f = make_factors(int(rng.integers(1, 40)), rng)
            np.linalg.cholesky(f.dense_precision())  # raises if not SPD

    def test_capacity_error(self):
        rng = np.random.default_rng(41)
        f = make_factors(10, rng)
        with pytest.raises(CapacityError, match="cap"):
            f.dense_precision(cap=9)

    def test_oracle_construction(self):
        # independent route: explicit T^T D^-1 T with dense numpy
        rng = np.random.default_rng(43)
        f = make_factors(15, rng)
        t = f.lower.toarray() + np.eye(15)
        oracle = t.T @ np.diag(1.0 / f.variances) @ t
        assert_allclose(f.dense_precision(), oracle, rtol=1e-12, atol=1e-12)


class TestDump:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(47)
        f = make_factors(8, rng)
        t_path = tmp_path / "T_subdomain0.txt"
        d_path = tmp_path / "D_subdomain0.txt"
        dump_factors(f, t_path, d_path)

        rows, cols, vals = [], [], []
        for line in t_path.read_text().splitlines():
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
        t = np.zeros((8, 8))
        t[rows, cols] = vals
        assert_array_equal(t, f.lower.toarray() + np.eye(8))

        d = np.array([float(s) for s in d_path.read_text().split()])
        assert_array_equal(d, f.variances)

    def test_diagonal_present_for_empty_rows(self, tmp_path):
        f = PrecisionFactors(sp.csr_matrix((3, 3)), np.ones(3))
        t_path = tmp_path / "T.txt"
        dump_factors(f, t_path, tmp_path / "D.txt")
        lines = t_path.read_text().splitlines()
        assert lines == ["0 0 1", "1 1 1", "2 2 1"]
