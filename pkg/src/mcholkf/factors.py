"""Sparse precision factors B^-1 = T^T D^-1 T.

T is unit lower triangular with the unit diagonal kept implicit: only the
strictly lower entries (the negated regression coefficients) are stored, in
CSR with sorted column indices. D holds the positive residual variances,
floored at ``variance_floor``. The factored form supports matrix-free
application of the precision and of the covariance it implies, a square-root
solve, and a capped densification.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import spsolve_triangular

from .errors import CapacityError
from .validation import as_float_array, ensure_finite

DENSE_SOLVE_LIMIT = 4096


class PrecisionFactors:
    """Factored inverse covariance estimate for one (sub)domain.

    Parameters
    ----------
    lower : scipy sparse matrix, shape (n, n)
        Strictly lower triangular part of T (entries -beta_jq). Explicit
        zeros are kept: the stored pattern is the regression structure.
    variances : array, shape (n,)
        Residual variances D; values below ``variance_floor`` are raised
        to the floor.
    variance_floor : float
        Positive lower bound on D.
    """

    def __init__(self, lower, variances, variance_floor: float = 1e-10):
        if variance_floor <= 0:
            raise ValueError(f"variance_floor must be positive, got {variance_floor}")
        lower = sp.csr_matrix(lower, copy=True)
        if lower.shape[0] != lower.shape[1]:
            raise ValueError(f"T must be square, got shape {lower.shape}")
        lower.sum_duplicates()
        lower.sort_indices()
        coo = lower.tocoo()
        if np.any(coo.col >= coo.row):
            raise ValueError("T must be strictly lower triangular (unit diagonal is implicit)")
        ensure_finite(lower.data, "T entries")

        d = as_float_array(variances, "variances", ndim=1)
        ensure_finite(d, "variances")
        if d.size != lower.shape[0]:
            raise ValueError(
                f"variances length {d.size} does not match T dimension {lower.shape[0]}"
            )

        self.lower = lower
        self.variances = np.maximum(d, variance_floor)
        self.variance_floor = float(variance_floor)
        self._lower_t = lower.T.tocsr()
        self._unit_lower = None
        self._dense_unit_lower = None

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def unit_lower(self) -> sp.csr_matrix:
        """T with its unit diagonal made explicit."""
        if self._unit_lower is None:
            full = (self.lower + sp.identity(self.n, format="csr")).tocsr()
            full.sort_indices()
            self._unit_lower = full
        return self._unit_lower

    def _dense_t(self, limit: int) -> np.ndarray | None:
        if self.n > limit:
            return None
        if self._dense_unit_lower is None:
            self._dense_unit_lower = self.unit_lower.toarray()
        return self._dense_unit_lower

    def precision_apply(self, v: np.ndarray) -> np.ndarray:
        """Apply T^T D^-1 T without densifying."""
        v = as_float_array(v, "v")
        if v.shape[0] != self.n:
            raise ValueError(f"v has leading dimension {v.shape[0]}, expected {self.n}")
        w = v + self.lower @ v
        if w.ndim == 1:
            w = w / self.variances
        else:
            w = w / self.variances[:, None]
        return w + self._lower_t @ w

    def covariance_apply(self, v: np.ndarray, dense_limit: int = DENSE_SOLVE_LIMIT) -> np.ndarray:
        """Apply the implied covariance T^-1 D T^-T."""
        v = as_float_array(v, "v")
        if v.shape[0] != self.n:
            raise ValueError(f"v has leading dimension {v.shape[0]}, expected {self.n}")
        squeeze = v.ndim == 1
        b = v[:, None] if squeeze else v
        td = self._dense_t(dense_limit)
        if td is not None:
            z = solve_triangular(td, b, lower=True, trans="T", unit_diagonal=True)
            z *= self.variances[:, None]
            out = solve_triangular(td, z, lower=True, unit_diagonal=True)
        else:
            upper = self.unit_lower.T.tocsr()
            z = spsolve_triangular(upper, b, lower=False, unit_diagonal=True)
            z *= self.variances[:, None]
            out = spsolve_triangular(self.unit_lower, z, lower=True, unit_diagonal=True)
        return out[:, 0] if squeeze else out

    def sqrt_solve(self, rhs: np.ndarray, dense_limit: int = DENSE_SOLVE_LIMIT) -> np.ndarray:
        """Solve T X = D^{1/2} rhs by forward substitution in label order.

        With rhs = I the columns of X form a square root of the implied
        covariance: X X^T = T^-1 D T^-T.
        """
        rhs = as_float_array(rhs, "rhs")
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has leading dimension {rhs.shape[0]}, expected {self.n}")
        squeeze = rhs.ndim == 1
        b = rhs[:, None] if squeeze else rhs
        b = np.sqrt(self.variances)[:, None] * b
        td = self._dense_t(dense_limit)
        if td is not None:
            out = solve_triangular(td, b, lower=True, unit_diagonal=True)
        else:
            out = spsolve_triangular(self.unit_lower, b, lower=True, unit_diagonal=True)
        return out[:, 0] if squeeze else out

    def dense_precision(self, cap: int = DENSE_SOLVE_LIMIT) -> np.ndarray:
        """Materialize T^T D^-1 T. Exactly symmetric; refuses n > cap."""
        if self.n > cap:
            raise CapacityError(
                f"dense precision of dimension {self.n} exceeds cap {cap}"
            )
        t = self.unit_lower.toarray()
        c = t / np.sqrt(self.variances)[:, None]
        m = c.T @ c
        return (m + m.T) * 0.5


def dump_factors(factors: PrecisionFactors, t_path, d_path) -> None:
    """Write T as 'row col value' triplets and D one value per line.

    The implicit unit diagonal is written explicitly so the files alone
    reconstruct the factors.
    """
    t = factors.lower.tocoo()
    order = np.lexsort((t.col, t.row))
    entries = {}
    for r, c, v in zip(t.row[order], t.col[order], t.data[order]):
        entries.setdefault(int(r), []).append((int(c), float(v)))
    with open(t_path, "w") as fh:
        for r in range(factors.n):
            for c, v in entries.get(r, []):
                fh.write(f"{r} {c} {v:.17g}\n")
            fh.write(f"{r} {r} 1\n")
    with open(d_path, "w") as fh:
        for v in factors.variances:
            fh.write(f"{v:.17g}\n")
