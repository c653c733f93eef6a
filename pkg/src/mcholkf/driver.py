"""Domain-decomposed assimilation driver.

Each cycle: decompose the grid, hand every subdomain its slice of the
background, observations, and the globally pre-generated observation
ensemble, run estimation and analysis per subdomain with no communication,
and merge the interior rows back. Worker threads only change scheduling,
never inputs, so results are bitwise independent of the worker count; BLAS
pools are pinned to one thread inside the parallel region for the same
reason.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigurationError, ConsistencyError
from .estimator import fit_factors
from .geometry import GridGeometry, Subdomain, decompose, local_box
from .kernels import (
    EnsembleState,
    ObservationNetwork,
    analysis_dual,
    analysis_primal,
    letkf_analysis_point,
    perturb_observations,
    restrict_network,
)
from .models import ModelHandle, propagate
from .validation import center_rows

METHODS = ("enkf_mc_primal", "enkf_mc_dual", "letkf")

TIMINGS_HEADER = "cycle,method,delta,workers,t_estimation_max,t_analysis_max,t_merge,t_total"


@dataclass(frozen=True)
class AssimilationConfig:
    """Per-run analysis settings."""

    zeta: int = 1
    delta: int = 1
    workers: int = 1
    method: str = "enkf_mc_primal"
    inflation: float = 1.0
    seed: int = 0
    dense_cap: int = 4096

    def __post_init__(self):
        if self.zeta < 0:
            raise ConfigurationError(f"zeta must be nonnegative, got {self.zeta}")
        if self.delta < 1:
            raise ConfigurationError(f"delta must be at least 1, got {self.delta}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be at least 1, got {self.workers}")
        if self.method not in METHODS:
            raise ConfigurationError(
                f"unknown method {self.method!r}; choose from {METHODS}"
            )
        if self.inflation <= 0:
            raise ConfigurationError(f"inflation must be positive, got {self.inflation}")
        if self.dense_cap < 1:
            raise ConfigurationError(f"dense_cap must be positive, got {self.dense_cap}")


@dataclass(frozen=True)
class CycleReport:
    """Wall-clock accounting of one assimilation cycle."""

    cycle: int
    method: str
    delta: int
    workers: int
    t_estimation: np.ndarray  # per subdomain, seconds
    t_analysis: np.ndarray    # per subdomain, seconds
    t_merge: float
    t_total: float

    @property
    def t_estimation_max(self) -> float:
        return float(self.t_estimation.max()) if self.t_estimation.size else 0.0

    @property
    def t_analysis_max(self) -> float:
        return float(self.t_analysis.max()) if self.t_analysis.size else 0.0

    def csv_row(self) -> str:
        return (
            f"{self.cycle},{self.method},{self.delta},{self.workers},"
            f"{self.t_estimation_max:.6f},{self.t_analysis_max:.6f},"
            f"{self.t_merge:.6f},{self.t_total:.6f}"
        )


def merge_interiors(
    template: EnsembleState, pieces: list[tuple[Subdomain, np.ndarray]]
) -> EnsembleState:
    """Write each subdomain's interior analysis rows into a global state.

    Halo rows of the local analyses are discarded. Every interior index
    must be written exactly once; duplicates or gaps raise ConsistencyError.
    """
    out = template.X.copy()
    counts = np.zeros(template.nstate, dtype=np.intp)
    for sd, local in pieces:
        local = np.asarray(local, dtype=np.float64)
        if local.shape != (sd.n_local, template.nens):
            raise ValueError(
                f"subdomain {sd.id}: local analysis has shape {local.shape}, "
                f"expected {(sd.n_local, template.nens)}"
            )
        out[sd.interior] = local[sd.interior_positions()]
        counts[sd.interior] += 1
    if np.any(counts != 1):
        dup = np.flatnonzero(counts > 1)
        missing = np.flatnonzero(counts == 0)
        raise ConsistencyError(
            f"interiors must cover each index exactly once: "
            f"{dup.size} duplicated, {missing.size} missing"
        )
    return EnsembleState(out, role="analysis")


def _letkf_local(
    Xb_local: np.ndarray,
    interior_pos: np.ndarray,
    members: np.ndarray,
    geometry: GridGeometry,
    net_local: ObservationNetwork,
    zeta: int,
    inflation: float,
) -> np.ndarray:
    """Pointwise analyses of one subdomain's interior, from local data only."""
    xb_mean = Xb_local.mean(axis=1)
    u = Xb_local - xb_mean[:, None]
    out = Xb_local.copy()
    for pos in interior_pos:
        center = int(members[pos])
        box = local_box(geometry, center, zeta).members
        bpos = np.searchsorted(members, box)
        if np.any(bpos >= members.size) or np.any(members[bpos] != box):
            raise ConsistencyError(
                f"local box of component {center} reaches outside interior+halo"
            )
        net_box, _ = restrict_network(net_local, bpos)
        if net_box.nobs == 0 and inflation == 1.0:
            continue  # out already holds the background row, bit for bit
        cpos = int(np.searchsorted(bpos, pos))
        out[pos] = letkf_analysis_point(
            cpos, u[bpos], xb_mean[bpos], net_box, inflation
        )
    return out


def assimilate_parallel(
    Xb: EnsembleState,
    net: ObservationNetwork,
    cfg: AssimilationConfig,
    geometry: GridGeometry,
    *,
    Ys: np.ndarray | None = None,
    cycle: int = 0,
) -> tuple[EnsembleState, CycleReport]:
    """Run one analysis cycle over the decomposed domain.

    Ys is the globally pre-generated observation ensemble for this cycle;
    when omitted (and the method needs it) it is generated here from
    (cfg.seed, cycle). LETKF ignores Ys.
    """
    t_start = time.perf_counter()
    if Xb.nstate != geometry.nstate:
        raise ValueError(
            f"state dimension {Xb.nstate} does not match geometry {geometry.nstate}"
        )
    if Xb.nens < 2:
        raise ConfigurationError(f"ensemble size must be at least 2, got {Xb.nens}")
    if net.nobs and net.obs_indices[-1] >= geometry.nstate:
        raise ValueError("observation indices exceed the state dimension")

    needs_ys = cfg.method in ("enkf_mc_primal", "enkf_mc_dual")
    if needs_ys:
        if Ys is None:
            Ys = perturb_observations(net, Xb.nens, cfg.seed, cycle).Ys
        Ys = np.asarray(Ys, dtype=np.float64)
        if Ys.shape != (net.nobs, Xb.nens):
            raise ValueError(
                f"Ys has shape {Ys.shape}, expected {(net.nobs, Xb.nens)}"
            )

    subdomains = decompose(geometry, cfg.delta, cfg.zeta)

    # Slice every task's inputs up front, in subdomain id order; workers
    # receive only copies of their interior+halo rows.
    tasks = []
    for sd in subdomains:
        members = sd.local_order
        xb_local = Xb.X[members]
        net_local, rows = restrict_network(net, members)
        ys_local = Ys[rows] if needs_ys else None
        tasks.append((sd, members, xb_local, net_local, ys_local))

    def run_one(task):
        sd, members, xb_local, net_local, ys_local = task
        if cfg.method == "letkf":
            t0 = time.perf_counter()
            local = _letkf_local(
                xb_local,
                sd.interior_positions(),
                members,
                geometry,
                net_local,
                cfg.zeta,
                cfg.inflation,
            )
            return 0.0, time.perf_counter() - t0, local
        t0 = time.perf_counter()
        u = center_rows(xb_local)
        factors = fit_factors(u, geometry, cfg.zeta, local_order=members)
        t1 = time.perf_counter()
        state = EnsembleState(xb_local, role="background")
        if cfg.method == "enkf_mc_primal":
            xa = analysis_primal(state, factors, net_local, ys_local, dense_cap=cfg.dense_cap)
        else:
            xa = analysis_dual(state, factors, net_local, ys_local)
        return t1 - t0, time.perf_counter() - t1, xa.X

    with threadpool_limits(limits=1):
        if cfg.workers == 1:
            results = [run_one(t) for t in tasks]
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(run_one, tasks))

    t_merge0 = time.perf_counter()
    pieces = [(sd, local) for (sd, *_), (_, _, local) in zip(tasks, results)]
    xa = merge_interiors(Xb, pieces)
    t_merge = time.perf_counter() - t_merge0

    report = CycleReport(
        cycle=int(cycle),
        method=cfg.method,
        delta=cfg.delta,
        workers=cfg.workers,
        t_estimation=np.array([r[0] for r in results]),
        t_analysis=np.array([r[1] for r in results]),
        t_merge=t_merge,
        t_total=time.perf_counter() - t_start,
    )
    return xa, report


def propagate_ensemble(
    model: ModelHandle, X: np.ndarray, window: float | None = None, workers: int = 1
) -> np.ndarray:
    """Propagate every ensemble member; columns are independent."""
    X = np.asarray(X, dtype=np.float64)
    if model.kind == "identity":
        return X.copy()
    cols = range(X.shape[1])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: propagate(model, X[:, j], window), cols))
    else:
        results = [propagate(model, X[:, j], window) for j in cols]
    return np.column_stack(results)


@dataclass
class FilterResult:
    """Outcome of a multi-cycle run: per-cycle analyses and reports, plus
    the final propagated background (X0 itself for an empty schedule)."""

    analyses: list[EnsembleState]
    reports: list[CycleReport]
    final: EnsembleState


def run_filter(
    X0: EnsembleState,
    model: ModelHandle,
    schedule: list[tuple[float, ObservationNetwork]],
    cfg: AssimilationConfig,
) -> FilterResult:
    """Alternate analysis and propagation over a schedule of cycles.

    Each schedule entry is (window, network): the network is assimilated,
    then the analysis is propagated through the window to become the next
    background.
    """
    x = X0
    analyses: list[EnsembleState] = []
    reports: list[CycleReport] = []
    for k, (window, net) in enumerate(schedule):
        ys = None
        if cfg.method in ("enkf_mc_primal", "enkf_mc_dual"):
            ys = perturb_observations(net, x.nens, cfg.seed, k).Ys
        xa, report = assimilate_parallel(
            x, net, cfg, model.geometry, Ys=ys, cycle=k
        )
        analyses.append(xa)
        reports.append(report)
        x = EnsembleState(
            propagate_ensemble(model, xa.X, window, workers=cfg.workers),
            role="background",
        )
    return FilterResult(analyses=analyses, reports=reports, final=x)
