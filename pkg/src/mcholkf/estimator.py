"""Precision estimation by componentwise regression.

Each state component is regressed on the box members with strictly smaller
labels; the negated coefficients fill one row of T and the residual variance
one entry of D. Regressions use a rank-revealing minimum-norm least-squares
solve (SVD with a relative cutoff), so collinear or rank-deficient
predecessor sets are handled without pivoting choices.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigurationError
from .factors import PrecisionFactors
from .geometry import GridGeometry, predecessors
from .validation import as_float_array, as_index_array, center_rows, ensure_finite

RANK_TOLERANCE = 1e-8
VARIANCE_FLOOR = 1e-10
MEAN_ZERO_RTOL = 1e-10


def regression_solve(X_pred, target, rank_tol: float = RANK_TOLERANCE) -> np.ndarray:
    """Minimum-norm least squares fit of target on the rows of X_pred.

    Solves min_beta || target - X_pred^T beta ||_2, returning the
    minimum-norm solution. Singular values below rank_tol times the largest
    are treated as zero; a zero predictor block yields a zero vector.
    """
    X_pred = as_float_array(X_pred, "X_pred", ndim=2)
    target = as_float_array(target, "target", ndim=1)
    if X_pred.shape[1] != target.size:
        raise ValueError(
            f"X_pred has {X_pred.shape[1]} columns but target has {target.size} entries"
        )
    if X_pred.shape[0] == 0:
        return np.zeros(0)
    beta, _ = _svd_solve(X_pred[None, :, :], target[None, :], rank_tol)
    return beta[0]


def _svd_solve(A: np.ndarray, y: np.ndarray, rank_tol: float):
    """Batched minimum-norm solve of X^T beta = y for stacked X = A[k].

    A has shape (k, p, m), y has shape (k, m). Returns (beta, residual) with
    shapes (k, p) and (k, m). Each item solves the same problem as a single
    SVD-based solve on its slice, so batching does not change results.
    """
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    smax = s[:, :1]
    tol = rank_tol * smax
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_s = np.where((s >= tol) & (s > 0), 1.0 / s, 0.0)
    proj = np.einsum("krm,km->kr", vt, y)
    beta = np.einsum("kpr,kr->kp", u, proj * inv_s)
    residual = y - np.einsum("kpm,kp->km", A, beta)
    return beta, residual


def fit_factors(
    U,
    geometry: GridGeometry,
    zeta: int,
    local_order=None,
    *,
    variance_floor: float = VARIANCE_FLOOR,
    rank_tol: float = RANK_TOLERANCE,
) -> PrecisionFactors:
    """Estimate T and D from the perturbation matrix U.

    Parameters
    ----------
    U : array, shape (n_local, Nens)
        Mean-removed ensemble perturbations; row i belongs to global
        component local_order[i].
    geometry : GridGeometry
        Global grid; predecessor sets are computed here and then mapped
        into local positions.
    zeta : int
        Localization radius.
    local_order : array of global labels, optional
        Strictly increasing; defaults to the whole domain. Predecessors
        falling outside local_order are dropped (they are unavailable to
        this subdomain).

    Returns
    -------
    PrecisionFactors
        The stored pattern of row j is exactly the mapped predecessor set
        of component j, including coefficients that come out zero.
    """
    U = as_float_array(U, "U", ndim=2)
    ensure_finite(U, "U")
    n, nens = U.shape
    if nens < 2:
        raise ConfigurationError(f"ensemble size must be at least 2, got {nens}")
    if local_order is None:
        local_order = np.arange(geometry.nstate, dtype=np.intp)
    local_order = as_index_array(local_order, "local_order")
    if local_order.size != n:
        raise ValueError(
            f"U has {n} rows but local_order has {local_order.size} entries"
        )
    if local_order.size and local_order[-1] >= geometry.nstate:
        raise ValueError("local_order contains labels outside the geometry")
    if zeta < 0:
        raise ValueError(f"zeta must be nonnegative, got {zeta}")

    sums = np.abs(U.sum(axis=1))
    norms = np.linalg.norm(U, axis=1)
    if np.any(sums > MEAN_ZERO_RTOL * norms + 1e-300):
        worst = int(np.argmax(sums - MEAN_ZERO_RTOL * norms))
        raise ValueError(
            f"U rows must be mean-removed; row {worst} sums to {U[worst].sum():.3e}"
        )

    # Predecessor positions, grouped by count so each group runs one
    # batched SVD instead of n tiny Python-level solves.
    pred_pos: list[np.ndarray] = []
    groups: dict[int, list[int]] = {}
    for j in range(n):
        preds = predecessors(geometry, int(local_order[j]), zeta)
        idx = np.searchsorted(local_order, preds)
        keep = (idx < n) & (local_order[np.minimum(idx, n - 1)] == preds)
        pos = idx[keep].astype(np.intp)
        pred_pos.append(pos)
        groups.setdefault(pos.size, []).append(j)

    denom = nens - 1
    d = np.empty(n)
    row_data: list[np.ndarray] = [None] * n

    for p in sorted(groups):
        members = groups[p]
        if p == 0:
            rows = U[members]
            d[members] = np.einsum("km,km->k", rows, rows) / denom
            for j in members:
                row_data[j] = np.zeros(0)
            continue
        a = np.stack([U[pred_pos[j]] for j in members])
        y = U[members]
        beta, resid = _svd_solve(a, y, rank_tol)
        d[members] = np.einsum("km,km->k", resid, resid) / denom
        for k, j in enumerate(members):
            row_data[j] = -beta[k]

    counts = np.array([pos.size for pos in pred_pos], dtype=np.intp)
    indptr = np.concatenate(([0], np.cumsum(counts)))
    indices = (
        np.concatenate(pred_pos) if n else np.zeros(0, dtype=np.intp)
    )
    data = np.concatenate(row_data) if n else np.zeros(0)
    lower = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    return PrecisionFactors(lower, d, variance_floor=variance_floor)


class ModifiedCholeskyPrecision(BaseEstimator):
    """Sparse precision estimator with a fixed localization pattern.

    Fits B^-1 = T^T D^-1 T from samples, where T's sparsity follows the
    grid's predecessor structure at radius zeta. Follows the usual
    estimator conventions: samples are rows, features are the grid
    components in label order.

    Parameters
    ----------
    geometry : GridGeometry
        Grid the features live on.
    zeta : int, default 1
        Localization radius.
    local_order : array of global labels, optional
        Fit a subdomain slice: features correspond to these labels.
    variance_floor : float, default 1e-10
        Lower bound applied to the residual variances.
    rank_tol : float, default 1e-8
        Relative singular-value cutoff of the regression solver.
    dense_cap : int, default 4096
        Largest dimension get_precision will densify.

    Attributes
    ----------
    factors_ : PrecisionFactors
    location_ : ndarray, the fitted feature means
    n_features_in_ : int
    """

    def __init__(
        self,
        geometry: GridGeometry = None,
        zeta: int = 1,
        local_order=None,
        variance_floor: float = VARIANCE_FLOOR,
        rank_tol: float = RANK_TOLERANCE,
        dense_cap: int = 4096,
    ):
        self.geometry = geometry
        self.zeta = zeta
        self.local_order = local_order
        self.variance_floor = variance_floor
        self.rank_tol = rank_tol
        self.dense_cap = dense_cap

    def fit(self, X, y=None):
        if self.geometry is None:
            raise ValueError("geometry must be provided")
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        expected = (
            self.geometry.nstate
            if self.local_order is None
            else len(self.local_order)
        )
        if X.shape[1] != expected:
            raise ValueError(
                f"X has {X.shape[1]} features, geometry/local_order expects {expected}"
            )
        self.location_ = X.mean(axis=0)
        u = center_rows(X.T.copy())
        self.factors_ = fit_factors(
            u,
            self.geometry,
            self.zeta,
            local_order=self.local_order,
            variance_floor=self.variance_floor,
            rank_tol=self.rank_tol,
        )
        self.n_features_in_ = X.shape[1]
        return self

    def get_precision(self) -> np.ndarray:
        check_is_fitted(self, "factors_")
        return self.factors_.dense_precision(cap=self.dense_cap)

    def transform(self, X) -> np.ndarray:
        """Whiten samples: map x to D^-1/2 T (x - location).

        Under the fitted model the transformed features are decorrelated
        with unit variance.
        """
        check_is_fitted(self, "factors_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        dev = (X - self.location_).T
        z = dev + self.factors_.lower @ dev
        z /= np.sqrt(self.factors_.variances)[:, None]
        return z.T
