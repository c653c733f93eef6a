"""Analysis kernels: stochastic precision-form updates and LETKF.

Two routes compute the same stochastic analysis: the primal form solves in
state space with the estimated precision, the dual form solves in
observation space through the square root of the implied covariance. They
are kept as genuinely separate code paths. The LETKF kernel is the
deterministic pointwise baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg

from . import rng
from .errors import NumericalError
from .factors import PrecisionFactors
from .geometry import GridGeometry, local_box
from .validation import as_float_array, as_index_array, ensure_finite

CG_RTOL = 1e-9
EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class EnsembleState:
    """Ensemble matrix (components by members) with a role tag."""

    X: np.ndarray
    role: str = "background"

    def __post_init__(self):
        x = as_float_array(self.X, "X", ndim=2)
        ensure_finite(x, "X")
        if self.role not in ("background", "analysis"):
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "X", x)

    @property
    def nstate(self) -> int:
        return self.X.shape[0]

    @property
    def nens(self) -> int:
        return self.X.shape[1]

    def mean(self) -> np.ndarray:
        return self.X.mean(axis=1)

    def perturbations(self) -> np.ndarray:
        return self.X - self.X.mean(axis=1, keepdims=True)


@dataclass(frozen=True)
class ObservationNetwork:
    """Pointwise observations: indices into the state, diagonal R, values."""

    obs_indices: np.ndarray
    r_diag: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        idx = as_index_array(self.obs_indices, "obs_indices")
        r = as_float_array(self.r_diag, "r_diag", ndim=1)
        y = as_float_array(self.y, "y", ndim=1)
        ensure_finite(r, "r_diag")
        ensure_finite(y, "y")
        if not (idx.size == r.size == y.size):
            raise ValueError(
                f"inconsistent lengths: {idx.size} indices, {r.size} variances, {y.size} values"
            )
        if np.any(r <= 0):
            raise ValueError("r_diag must be strictly positive")
        object.__setattr__(self, "obs_indices", idx)
        object.__setattr__(self, "r_diag", r)
        object.__setattr__(self, "y", y)

    @property
    def nobs(self) -> int:
        return self.obs_indices.size

    def project(self, v: np.ndarray) -> np.ndarray:
        """Apply H: select the observed components."""
        return v[self.obs_indices]


def restrict_network(
    net: ObservationNetwork, members: np.ndarray
) -> tuple[ObservationNetwork, np.ndarray]:
    """Restrict a network to the observations falling inside `members`.

    Returns the restricted network, with obs_indices rewritten as positions
    into `members`, and the rows of the parent network that survived (for
    slicing a matching Ys).
    """
    members = as_index_array(members, "members")
    idx = np.searchsorted(members, net.obs_indices)
    safe = np.minimum(idx, max(members.size - 1, 0))
    inside = (
        (idx < members.size) & (members[safe] == net.obs_indices)
        if members.size
        else np.zeros(net.nobs, dtype=bool)
    )
    rows = np.flatnonzero(inside)
    local = ObservationNetwork(
        obs_indices=idx[inside],
        r_diag=net.r_diag[inside],
        y=net.y[inside],
    )
    return local, rows


@dataclass(frozen=True)
class PerturbedObservations:
    """Observation ensemble Ys with its seeding provenance."""

    Ys: np.ndarray
    seed: int
    cycle: int

    def __post_init__(self):
        ys = as_float_array(self.Ys, "Ys", ndim=2)
        ensure_finite(ys, "Ys")
        object.__setattr__(self, "Ys", ys)


def perturb_observations(
    net: ObservationNetwork, nens: int, seed: int, cycle: int = 0
) -> PerturbedObservations:
    """Draw the observation ensemble y + N(0, R) for one cycle.

    The noise matrix is drawn in one pass in observation-major order from
    the (seed, cycle) stream, so the result is independent of how the
    domain is later decomposed or scheduled; subdomains slice rows of Ys.
    """
    if nens < 1:
        raise ValueError(f"nens must be positive, got {nens}")
    g = rng.stream(seed, cycle, rng.TAG_OBS_PERTURB)
    noise = g.standard_normal((net.nobs, nens))
    ys = net.y[:, None] + np.sqrt(net.r_diag)[:, None] * noise
    return PerturbedObservations(Ys=ys, seed=int(seed), cycle=int(cycle))


def _check_analysis_inputs(Xb: EnsembleState, factors: PrecisionFactors,
                           net: ObservationNetwork, Ys: np.ndarray) -> np.ndarray:
    if factors.n != Xb.nstate:
        raise ValueError(
            f"factors dimension {factors.n} does not match state dimension {Xb.nstate}"
        )
    if net.nobs and net.obs_indices[-1] >= Xb.nstate:
        raise ValueError("observation indices exceed the state dimension")
    Ys = as_float_array(Ys, "Ys", ndim=2)
    if Ys.shape != (net.nobs, Xb.nens):
        raise ValueError(
            f"Ys has shape {Ys.shape}, expected {(net.nobs, Xb.nens)}"
        )
    return Ys


def analysis_primal(
    Xb: EnsembleState,
    factors: PrecisionFactors,
    net: ObservationNetwork,
    Ys: np.ndarray,
    *,
    dense_cap: int = 4096,
    cg_rtol: float = CG_RTOL,
) -> EnsembleState:
    """State-space analysis: Xa = Xb + [B^-1 + H^T R^-1 H]^-1 H^T R^-1 (Ys - H Xb).

    Solved densely by Cholesky when the dimension is at most dense_cap,
    otherwise by conjugate gradients on the matrix-free precision operator
    (relative residual cg_rtol, at most 10 n iterations).
    """
    Ys = _check_analysis_inputs(Xb, factors, net, Ys)
    if net.nobs == 0:
        return EnsembleState(Xb.X.copy(), role="analysis")

    obs = net.obs_indices
    rinv = 1.0 / net.r_diag
    innovations = Ys - Xb.X[obs]
    rhs = np.zeros_like(Xb.X)
    rhs[obs] = innovations * rinv[:, None]

    n = Xb.nstate
    if n <= dense_cap:
        a = factors.dense_precision(cap=dense_cap)
        a[obs, obs] += rinv
        try:
            dx = cho_solve(cho_factor(a, lower=True), rhs)
        except LinAlgError as exc:
            raise NumericalError(f"primal analysis solve failed: {exc}") from exc
    else:
        def matvec(v):
            out = factors.precision_apply(v)
            out[obs] += v[obs] * rinv
            return out

        op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
        dx = np.empty_like(rhs)
        maxiter = 10 * n
        for j in range(rhs.shape[1]):
            b = rhs[:, j]
            if not b.any():
                dx[:, j] = 0.0
                continue
            sol, info = cg(op, b, rtol=cg_rtol, atol=0.0, maxiter=maxiter)
            if info != 0:
                res = np.linalg.norm(matvec(sol) - b) / np.linalg.norm(b)
                raise NumericalError(
                    f"primal CG failed for member {j}: info={info}, rel residual {res:.3e}"
                )
            dx[:, j] = sol

    return EnsembleState(Xb.X + dx, role="analysis")


def analysis_dual(
    Xb: EnsembleState,
    factors: PrecisionFactors,
    net: ObservationNetwork,
    Ys: np.ndarray,
) -> EnsembleState:
    """Observation-space analysis through the covariance square root.

    With T X = D^{1/2} I and V = H X, the update is
    Xa = Xb + X V^T (R + V V^T)^-1 (Ys - H Xb), which matches the primal
    route by Sherman-Morrison-Woodbury.
    """
    Ys = _check_analysis_inputs(Xb, factors, net, Ys)
    if net.nobs == 0:
        return EnsembleState(Xb.X.copy(), role="analysis")

    obs = net.obs_indices
    x = factors.sqrt_solve(np.eye(factors.n))
    v = x[obs]
    g = v @ v.T
    g[np.arange(net.nobs), np.arange(net.nobs)] += net.r_diag
    innovations = Ys - Xb.X[obs]
    try:
        w = cho_solve(cho_factor(g, lower=True), innovations)
    except LinAlgError as exc:
        raise NumericalError(f"dual observation-space solve failed: {exc}") from exc
    dx = x @ (v.T @ w)
    return EnsembleState(Xb.X + dx, role="analysis")


def letkf_analysis_point(
    center: int,
    Ub: np.ndarray,
    xb_mean: np.ndarray,
    net_box: ObservationNetwork,
    inflation: float = 1.0,
) -> np.ndarray:
    """Analysis row of one grid point from its local box.

    Parameters
    ----------
    center : int
        Row of the analyzed point within the box arrays.
    Ub : array (box size, Nens)
        Background perturbations of the box members.
    xb_mean : array (box size,)
        Background mean of the box members.
    net_box : ObservationNetwork
        Observations inside the box; obs_indices are box-row positions.
    inflation : float
        Multiplicative spread inflation (1 = none).

    Returns the analysis ensemble row (length Nens) of the center point.
    """
    Ub = as_float_array(Ub, "Ub", ndim=2)
    nbox, nens = Ub.shape
    if nens < 2:
        raise ValueError(f"ensemble size must be at least 2, got {nens}")
    if not 0 <= center < nbox:
        raise ValueError(f"center row {center} outside box of {nbox} members")
    if inflation <= 0:
        raise ValueError(f"inflation must be positive, got {inflation}")

    if net_box.nobs == 0:
        # No constraints: the weights collapse to sqrt(inflation) I.
        return xb_mean[center] + np.sqrt(inflation) * Ub[center]

    z = Ub[net_box.obs_indices]
    rinv = 1.0 / net_box.r_diag
    m = z.T @ (z * rinv[:, None])
    m = (m + m.T) * 0.5
    m[np.arange(nens), np.arange(nens)] += (nens - 1) / inflation

    lam, q = np.linalg.eigh(m)
    if lam[0] < EIG_FLOOR:
        raise NumericalError(
            f"analysis weight matrix lost positive definiteness (min eig {lam[0]:.3e})"
        )
    innov = net_box.y - xb_mean[net_box.obs_indices]
    zri = z.T @ (innov * rinv)
    wa = q @ ((q.T @ zri) / lam)
    sqrt_wa = (q * np.sqrt((nens - 1) / lam)) @ q.T
    return xb_mean[center] + Ub[center] @ (wa[:, None] + sqrt_wa)


def letkf_analysis_global(
    Xb: EnsembleState,
    geometry: GridGeometry,
    net: ObservationNetwork,
    zeta: int,
    inflation: float = 1.0,
) -> EnsembleState:
    """Apply the point kernel at every grid component."""
    if Xb.nstate != geometry.nstate:
        raise ValueError(
            f"state dimension {Xb.nstate} does not match geometry {geometry.nstate}"
        )
    if net.nobs and net.obs_indices[-1] >= geometry.nstate:
        raise ValueError("observation indices exceed the state dimension")
    xb_mean = Xb.mean()
    u = Xb.X - xb_mean[:, None]
    out = Xb.X.copy()
    for c in range(geometry.nstate):
        box = local_box(geometry, c, zeta).members
        net_box, _ = restrict_network(net, box)
        if net_box.nobs == 0 and inflation == 1.0:
            continue  # unconstrained point: keep the background row exactly
        pos = int(np.searchsorted(box, c))
        try:
            out[c] = letkf_analysis_point(
                pos, u[box], xb_mean[box], net_box, inflation
            )
        except NumericalError as exc:
            raise NumericalError(f"component {c}: {exc}") from exc
    return EnsembleState(out, role="analysis")
