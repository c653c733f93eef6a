"""Twin-experiment harness: configs, spin-up, scoring, and artifacts.

A run manufactures its own truth: a reference trajectory generates noisy
observations on a fixed lattice, a perturbed ensemble assimilates them with
each requested method, and RMSE against the reference is written per cycle
alongside wall-clock timings and a config echo.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import models, rng
from .driver import (
    METHODS,
    TIMINGS_HEADER,
    AssimilationConfig,
    CycleReport,
    propagate_ensemble,
    run_filter,
)
from .errors import ConfigurationError
from .geometry import GridGeometry, _labels
from .kernels import EnsembleState, ObservationNetwork
from .models import ModelHandle, propagate
from .validation import as_float_array

R_FLOOR = 1e-8
SPINUP_NOISE_FLOOR = 1e-24

RMSE_HEADER = "cycle,method,rmse_paper,rmse_normalized"
SWEEP_HEADER = "param,value,method,rmse_paper,rmse_normalized"
FREE_RUN = "free_run"

RMSE_FILE = "rmse.csv"
TIMINGS_FILE = "timings.csv"
CONFIG_ECHO_FILE = "config_echo.txt"
SWEEP_FILE = "sweep_summary.csv"


@dataclass
class ExperimentConfig:
    """Flat description of one twin experiment."""

    model: str = "lorenz96"
    nx: int = 40
    ny: int = 1
    ordering: str = "row_major"
    boundary: str = ""
    nens: int = 20
    cycles: int = 10
    obs_fraction: float = 0.5
    bg_factor: float = 0.05
    obs_noise_factor: float = 0.01
    zeta: int = 2
    delta: int = 4
    workers: int = 1
    methods: tuple[str, ...] = ("enkf_mc_primal", "letkf")
    inflation: float = 1.0
    seed: int = 0
    dense_cap: int = 4096
    window: float = 0.05
    dt: float = 0.005
    forcing: float = 8.0
    ux: float = 1.0
    uy: float = 0.5
    kappa: float = 0.05
    spinup_window: float = 0.4
    out_dir: str = "."

    def validate(self) -> "ExperimentConfig":
        if self.model not in models.MODEL_KINDS:
            raise ConfigurationError(f"unknown model {self.model!r}")
        if not 0 < self.obs_fraction <= 1:
            raise ConfigurationError(
                f"obs_fraction must be in (0, 1], got {self.obs_fraction}"
            )
        if self.cycles < 0:
            raise ConfigurationError(f"cycles must be nonnegative, got {self.cycles}")
        if self.nens < 2:
            raise ConfigurationError(f"nens must be at least 2, got {self.nens}")
        if not self.methods:
            raise ConfigurationError("methods must not be empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(
                    f"unknown method {m!r}; choose from {METHODS}"
                )
        if self.window <= 0 or self.dt <= 0:
            raise ConfigurationError(
                f"window and dt must be positive, got {self.window}, {self.dt}"
            )
        if self.bg_factor < 0 or self.obs_noise_factor < 0:
            raise ConfigurationError("noise factors must be nonnegative")
        if self.spinup_window < 0:
            raise ConfigurationError(
                f"spinup_window must be nonnegative, got {self.spinup_window}"
            )
        return self


_INT_KEYS = {"nx", "ny", "nens", "cycles", "zeta", "delta", "workers", "seed", "dense_cap"}
_FLOAT_KEYS = {
    "obs_fraction", "bg_factor", "obs_noise_factor", "inflation",
    "window", "dt", "forcing", "ux", "uy", "kappa", "spinup_window",
}
_STR_KEYS = {"model", "ordering", "boundary", "out_dir"}


def _parse_value(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    if key in _STR_KEYS:
        return raw
    if key == "methods":
        return tuple(m.strip() for m in raw.split(",") if m.strip())
    raise ConfigurationError(f"unknown config key {key!r}")


def parse_config_text(text: str) -> dict:
    """Parse flat key=value lines; '#' starts a comment; unknown keys error."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        values[key] = _parse_value(key, raw.strip())
    return values


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file and apply overrides (e.g. CLI flags) on top."""
    values = parse_config_text(Path(path).read_text())
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            values[key] = _parse_value(key, str(val)) if isinstance(val, str) else val
    cfg = ExperimentConfig(**values)
    return cfg.validate()


def build_geometry(cfg: ExperimentConfig) -> GridGeometry:
    if cfg.model == "lorenz96":
        kind = "ring1d"
    elif cfg.model == "advdiff2d":
        kind = "grid2d"
    else:
        kind = "ring1d" if cfg.ny == 1 else "grid2d"
    boundary = cfg.boundary
    if not boundary and cfg.model == "advdiff2d":
        boundary = "periodic"
    return GridGeometry(
        kind=kind, nx=cfg.nx, ny=cfg.ny, ordering=cfg.ordering, boundary=boundary
    )


def build_model(cfg: ExperimentConfig, geometry: GridGeometry) -> ModelHandle:
    steps = _window_steps(cfg.window, cfg.dt)
    if cfg.model == "lorenz96":
        return models.lorenz96_model(
            geometry, forcing=cfg.forcing, dt=cfg.dt, steps_per_window=steps
        )
    if cfg.model == "advdiff2d":
        return models.advdiff2d_model(
            geometry,
            velocity=(cfg.ux, cfg.uy),
            diffusivity=cfg.kappa,
            dt=cfg.dt,
            steps_per_window=steps,
        )
    return models.identity_model(geometry)


def _window_steps(window: float, dt: float) -> int:
    ratio = window / dt
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(
            f"window {window} is not a positive integer multiple of dt {dt}"
        )
    return steps


ATTRACTOR_SETTLE = 4.0


def initial_reference(cfg: ExperimentConfig, geometry: GridGeometry) -> np.ndarray:
    """Deterministic on-attractor state the truth trajectory starts from.

    The chaotic ring model is seeded near its unstable uniform state and
    settled onto the attractor first; perturbing during that transient
    would amplify errors far beyond the configured background factor.
    """
    g = rng.stream(cfg.seed, 0, rng.TAG_INIT)
    if cfg.model == "lorenz96":
        seed_state = cfg.forcing * (1.0 + 0.01 * g.standard_normal(geometry.nstate))
        model = models.lorenz96_model(
            geometry, forcing=cfg.forcing, dt=cfg.dt, steps_per_window=1
        )
        return propagate(model, seed_state, ATTRACTOR_SETTLE)
    if cfg.model == "advdiff2d":
        ph = g.uniform(0.0, 2.0 * np.pi, size=4)
        ry = np.arange(geometry.ny) / geometry.ny
        rx = np.arange(geometry.nx) / geometry.nx
        u = (
            1.5
            + 0.7 * np.sin(2 * np.pi * rx + ph[0])[None, :]
            * np.cos(2 * np.pi * ry + ph[1])[:, None]
            + 0.4 * np.cos(4 * np.pi * rx + ph[2])[None, :]
            + 0.3 * np.sin(4 * np.pi * ry + ph[3])[:, None]
        )
        if geometry.ordering == "row_major":
            return u.reshape(-1)
        return u.T.reshape(-1)
    return g.standard_normal(geometry.nstate)


def observation_lattice(geometry: GridGeometry, p: float) -> np.ndarray:
    """Uniform-stride lattice observing roughly ceil(p * nstate) components.

    Rings use stride round(1/p); 2D grids use stride round(1/sqrt(p)) along
    each axis. p = 1 observes everything.
    """
    if not 0 < p <= 1:
        raise ConfigurationError(f"obs_fraction must be in (0, 1], got {p}")
    if geometry.ny == 1:
        stride = max(1, round(1.0 / p))
        return np.arange(0, geometry.nstate, stride, dtype=np.intp)
    stride = max(1, round(1.0 / math.sqrt(p)))
    rows = np.arange(0, geometry.ny, stride)
    cols = np.arange(0, geometry.nx, stride)
    return _labels(geometry, rows, cols)


def build_observation_network(
    geometry: GridGeometry,
    p: float,
    xref: np.ndarray,
    noise_factor: float,
    seed: int,
    cycle: int = 0,
) -> ObservationNetwork:
    """Observe the reference on the stride lattice with relative noise.

    Each observation gets variance max((noise_factor * value)^2, r_floor)
    and a value drawn from N(truth, variance) on the (seed, cycle) stream.
    """
    xref = as_float_array(xref, "xref", ndim=1)
    if xref.size != geometry.nstate:
        raise ValueError(
            f"xref has {xref.size} entries, geometry has {geometry.nstate}"
        )
    idx = observation_lattice(geometry, p)
    truth = xref[idx]
    r_diag = np.maximum((noise_factor * truth) ** 2, R_FLOOR)
    g = rng.stream(seed, cycle, rng.TAG_OBS_NOISE)
    y = truth + np.sqrt(r_diag) * g.standard_normal(idx.size)
    return ObservationNetwork(obs_indices=idx, r_diag=r_diag, y=y)


def spin_up(
    model: ModelHandle,
    xref0: np.ndarray,
    factor: float,
    nens: int,
    seed: int,
    window: float,
) -> tuple[np.ndarray, EnsembleState]:
    """Manufacture an initial background ensemble near the attractor.

    Four stages: perturb the reference componentwise with
    N(0, (factor*|x_i|)^2 + floor) noise, propagate one long window to
    restore model consistency, perturb again per member, and propagate each
    member a second window. The unperturbed reference is propagated through
    both windows; its endpoint is the truth at assimilation start.

    Returns (reference at start, background ensemble).
    """
    xref0 = as_float_array(xref0, "xref0", ndim=1)
    if nens < 2:
        raise ConfigurationError(f"nens must be at least 2, got {nens}")
    n = xref0.size

    g_ref = rng.stream(seed, 0, rng.TAG_SPINUP_REFERENCE)
    std0 = np.sqrt((factor * np.abs(xref0)) ** 2 + SPINUP_NOISE_FLOOR)
    xb_hat = xref0 + std0 * g_ref.standard_normal(n)

    xb = propagate(model, xb_hat, window)
    xref_mid = propagate(model, xref0, window)

    g_mem = rng.stream(seed, 0, rng.TAG_SPINUP_MEMBERS)
    std1 = np.sqrt((factor * np.abs(xb)) ** 2 + SPINUP_NOISE_FLOOR)
    members = xb[:, None] + std1[:, None] * g_mem.standard_normal((n, nens))

    x0 = np.column_stack(
        [propagate(model, members[:, j], window) for j in range(nens)]
    )
    xref_start = propagate(model, xref_mid, window)
    return xref_start, EnsembleState(x0, role="background")


@dataclass
class RmseSeries:
    """Per-cycle and aggregate reference errors, in both conventions.

    ``paper`` is sqrt(e_k^T e_k) per cycle with aggregate
    sqrt(mean_k e_k^T e_k); ``normalized`` divides each squared error by
    the state dimension first.
    """

    paper: np.ndarray
    normalized: np.ndarray
    aggregate_paper: float
    aggregate_normalized: float


def rmse(xref_series, xa_series) -> RmseSeries:
    refs = [as_float_array(x, "xref", ndim=1) for x in xref_series]
    anas = [as_float_array(x, "xa", ndim=1) for x in xa_series]
    if len(refs) != len(anas):
        raise ValueError(
            f"series lengths differ: {len(refs)} references, {len(anas)} analyses"
        )
    if not refs:
        raise ValueError("rmse needs at least one cycle")
    nstate = refs[0].size
    sq = np.array([np.sum((a - r) ** 2) for r, a in zip(refs, anas)])
    return RmseSeries(
        paper=np.sqrt(sq),
        normalized=np.sqrt(sq / nstate),
        aggregate_paper=float(np.sqrt(sq.mean())),
        aggregate_normalized=float(np.sqrt(sq.mean() / nstate)),
    )


@dataclass
class TwinResult:
    out_dir: Path
    rmse: dict[str, RmseSeries]
    reports: dict[str, list[CycleReport]]
    files: list[Path] = field(default_factory=list)


def _echo_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in sorted(dataclasses.fields(cfg), key=lambda f: f.name):
        val = getattr(cfg, f.name)
        if f.name == "methods":
            val = ",".join(val)
        lines.append(f"{f.name}={val}")
    return "\n".join(lines) + "\n"


def run_twin_experiment(cfg: ExperimentConfig) -> TwinResult:
    """Run every requested method against one manufactured truth.

    Writes rmse.csv (per cycle and method, free run included), timings.csv,
    and a config echo into cfg.out_dir. Partial outputs are removed if the
    run fails.
    """
    cfg.validate()
    if cfg.cycles < 1:
        raise ConfigurationError("run_twin_experiment needs at least one cycle")
    geometry = build_geometry(cfg)
    model = build_model(cfg, geometry)

    xref0 = initial_reference(cfg, geometry)
    xref_start, x0 = spin_up(
        model, xref0, cfg.bg_factor, cfg.nens, cfg.seed, cfg.spinup_window
    )

    refs = [xref_start]
    for _ in range(cfg.cycles - 1):
        refs.append(propagate(model, refs[-1], cfg.window))

    schedule = []
    for k in range(cfg.cycles):
        net = build_observation_network(
            geometry, cfg.obs_fraction, refs[k], cfg.obs_noise_factor, cfg.seed, k
        )
        schedule.append((cfg.window, net))

    series: dict[str, RmseSeries] = {}
    reports: dict[str, list[CycleReport]] = {}
    for method in cfg.methods:
        acfg = AssimilationConfig(
            zeta=cfg.zeta,
            delta=cfg.delta,
            workers=cfg.workers,
            method=method,
            inflation=cfg.inflation,
            seed=cfg.seed,
            dense_cap=cfg.dense_cap,
        )
        result = run_filter(x0, model, schedule, acfg)
        series[method] = rmse(refs, [a.mean() for a in result.analyses])
        reports[method] = result.reports

    free = x0.X
    free_means = []
    for k in range(cfg.cycles):
        free_means.append(free.mean(axis=1))
        if k + 1 < cfg.cycles:
            free = propagate_ensemble(model, free, cfg.window, workers=cfg.workers)
    series[FREE_RUN] = rmse(refs, free_means)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        rmse_path = out_dir / RMSE_FILE
        with open(rmse_path, "w") as fh:
            written.append(rmse_path)
            fh.write(RMSE_HEADER + "\n")
            for method in (*cfg.methods, FREE_RUN):
                s = series[method]
                for k in range(cfg.cycles):
                    fh.write(
                        f"{k},{method},"
                        f"{float(s.paper[k])!r},{float(s.normalized[k])!r}\n"
                    )

        timings_path = out_dir / TIMINGS_FILE
        with open(timings_path, "w") as fh:
            written.append(timings_path)
            fh.write(TIMINGS_HEADER + "\n")
            for method in cfg.methods:
                for report in reports[method]:
                    fh.write(report.csv_row() + "\n")

        echo_path = out_dir / CONFIG_ECHO_FILE
        echo_path.write_text(_echo_config(cfg))
        written.append(echo_path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise

    return TwinResult(out_dir=out_dir, rmse=series, reports=reports, files=written)


SWEEP_PARAMS = ("zeta", "delta", "workers")


@dataclass
class SweepResult:
    path: Path
    rows: list[str]
    results: dict[int, TwinResult]


def run_sweep(cfg: ExperimentConfig, param: str, values) -> SweepResult:
    """Re-run the experiment for each value of one decomposition knob.

    Each value runs in out_dir/<param>_<value>; aggregate accuracy lands in
    out_dir/sweep_summary.csv with one row per (value, method).
    """
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(
            f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}"
        )
    values = [int(v) for v in values]
    if not values:
        raise ConfigurationError("sweep needs at least one value")

    base = Path(cfg.out_dir)
    rows = []
    results: dict[int, TwinResult] = {}
    for value in values:
        sub = replace(cfg, **{param: value}, out_dir=str(base / f"{param}_{value}"))
        res = run_twin_experiment(sub)
        results[value] = res
        for method in (*cfg.methods, FREE_RUN):
            s = res.rmse[method]
            rows.append(
                f"{param},{value},{method},"
                f"{s.aggregate_paper!r},{s.aggregate_normalized!r}"
            )

    base.mkdir(parents=True, exist_ok=True)
    path = base / SWEEP_FILE
    with open(path, "w") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
    return SweepResult(path=path, rows=rows, results=results)
