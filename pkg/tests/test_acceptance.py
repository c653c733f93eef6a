"""Acceptance gate: eight end-to-end checks of the package's core claims.

Each test prints one `[criterion N] PASS/SKIP` line (visible with -s or -rP)
and covers: (1) equivalence of the two stochastic analysis routes, (2) the
dense-limit covariance oracle, (3) exactness of the factor sparsity pattern,
(4) bitwise reproducibility across worker counts, (5) correctness of the
deterministic transform baseline, (6) accuracy benefit of assimilation over
a free run, (7) thread scaling of the decomposed analysis, and (8) the
accuracy-versus-radius sweep artifact.
"""

from __future__ import annotations

import os
import time

import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_array_equal

from mcholkf.estimator import fit_factors
from mcholkf.factors import PrecisionFactors
from mcholkf.geometry import GridGeometry, predecessors
from mcholkf.harness import (
    FREE_RUN,
    RMSE_FILE,
    SWEEP_FILE,
    SWEEP_HEADER,
    TIMINGS_FILE,
    ExperimentConfig,
    run_sweep,
    run_twin_experiment,
)
from mcholkf.kernels import (
    EnsembleState,
    ObservationNetwork,
    analysis_dual,
    analysis_primal,
    letkf_analysis_global,
    perturb_observations,
)
from mcholkf.validation import center_rows


def random_geometry(rng, max_state):
    if rng.random() < 0.5:
        n = int(rng.integers(2, max_state + 1))
        return GridGeometry(
            kind="ring1d",
            nx=n,
            boundary=str(rng.choice(["periodic", "clipped"])),
        )
    nx = int(rng.integers(2, 9))
    ny = int(rng.integers(1, max(2, max_state // nx) + 1))
    while nx * ny > max_state:
        ny -= 1
    return GridGeometry(
        kind="grid2d",
        nx=nx,
        ny=max(ny, 1),
        ordering=str(rng.choice(["row_major", "column_major"])),
        boundary=str(rng.choice(["periodic", "clipped"])),
    )


def random_factors(rng, g, zeta):
    """Well-conditioned factors on the exact predecessor pattern."""
    rows, cols, vals = [], [], []
    for j in range(g.nstate):
        pred = predecessors(g, j, zeta)
        rows.extend([j] * len(pred))
        cols.extend(pred)
        vals.extend(rng.uniform(-0.3, 0.3, len(pred)))
    lower = sp.csr_matrix(
        (vals, (rows, cols)), shape=(g.nstate, g.nstate)
    )
    return PrecisionFactors(lower, rng.uniform(0.5, 2.0, g.nstate))


def test_criterion_1_stochastic_route_equivalence():
    """State-space and observation-space analyses agree to 1e-8."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for trial in range(200):
        g = random_geometry(rng, 64)
        n = g.nstate
        nens = int(rng.choice([4, 16, 64]))
        zeta = int(rng.integers(0, 4))
        xb = EnsembleState(rng.standard_normal((n, nens)) + 1.0)
        factors = random_factors(rng, g, zeta)
        nobs = int(rng.integers(0, min(n, 32) + 1))
        idx = np.sort(rng.choice(n, size=nobs, replace=False))
        net = ObservationNetwork(
            obs_indices=idx,
            r_diag=rng.uniform(0.1, 2.0, nobs),
            y=rng.standard_normal(nobs),
        )
        ys = perturb_observations(net, nens, seed=trial).Ys
        a = analysis_primal(xb, factors, net, ys)
        b = analysis_dual(xb, factors, net, ys)
        rel = np.linalg.norm(b.X - a.X) / np.linalg.norm(a.X)
        worst = max(worst, rel)
        assert rel <= 1e-8, f"trial {trial}: relative gap {rel:.3e}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"[criterion 1] PASS - 200 instances, worst relative gap "
          f"{worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_dense_limit_recovers_sample_covariance():
    """Full-neighborhood factors invert to the sample covariance."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(20):
        g = random_geometry(rng, 16)
        n = g.nstate
        u = center_rows(rng.standard_normal((n, 64)))
        factors = fit_factors(u, g, zeta=n)
        sample = u @ u.T / 63
        implied = factors.covariance_apply(np.eye(n))
        rel = np.linalg.norm(implied - sample) / np.linalg.norm(sample)
        worst = max(worst, rel)
        assert rel <= 1e-8
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    print(f"[criterion 2] PASS - 20 dense-limit cases, worst relative "
          f"Frobenius error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_3_factor_pattern_matches_neighborhood_predecessors():
    """Stored sparsity equals the predecessor sets: no fill, no drops."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    for _ in range(50):
        g = random_geometry(rng, 48)
        zeta = int(rng.integers(0, 5))
        nens = int(rng.integers(3, 12))
        u = center_rows(rng.standard_normal((g.nstate, nens)))
        csr = fit_factors(u, g, zeta).lower
        for j in range(g.nstate):
            stored = np.sort(csr.indices[csr.indptr[j]:csr.indptr[j + 1]])
            assert_array_equal(stored, predecessors(g, j, zeta))
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    print(f"[criterion 3] PASS - 50 random (geometry, radius) pairs, "
          f"pattern exact, {elapsed:.1f}s")


def test_criterion_4_worker_count_bitwise_reproducibility(tmp_path):
    """A decomposed 2D twin experiment is bit-identical for 1/2/8 workers."""
    t0 = time.perf_counter()
    texts = {}
    for workers in (1, 2, 8):
        cfg = ExperimentConfig(
            model="advdiff2d", nx=32, ny=32, nens=10, cycles=4,
            obs_fraction=0.25, zeta=2, delta=8, workers=workers,
            methods=("enkf_mc_primal", "letkf"), window=0.05, dt=0.05,
            spinup_window=0.5, seed=5, out_dir=str(tmp_path / f"w{workers}"),
        )
        run_twin_experiment(cfg)
        texts[workers] = (tmp_path / f"w{workers}" / RMSE_FILE).read_bytes()
    assert texts[1] == texts[2]
    assert texts[1] == texts[8]
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"[criterion 4] PASS - rmse.csv bit-identical across workers "
          f"1/2/8 on a 32x32 grid, {elapsed:.1f}s")


def etkf_reference(X, obs, r, y, inflation):
    """Text-book dense transform update, written independently."""
    n, m = X.shape
    xm = X.mean(axis=1)
    u = X - xm[:, None]
    z = u[obs]
    a = (m - 1) / inflation * np.eye(m) + z.T @ (z / r[:, None])
    lam, q = np.linalg.eigh(a)
    wa = q @ ((q.T @ (z.T @ ((y - xm[obs]) / r))) / lam)
    w = (q * np.sqrt((m - 1) / lam)) @ q.T
    return xm[:, None] + u @ (wa[:, None] + w)


def test_criterion_5_transform_baseline_correctness():
    """Zero obs-space spread is an exact fixed point; tiny instances match
    a brute-force dense transform oracle."""
    t0 = time.perf_counter()

    # dyadic ensemble so means and perturbations are exact floats
    xm = np.array([1.0, 2.5, -0.75, 0.5, 3.0, -1.25])
    u = np.array(
        [
            [0.5, -0.5, 0.25, -0.25],
            [0.0, 0.0, 0.0, 0.0],      # observed, zero spread
            [0.25, 0.25, -0.25, -0.25],
            [-0.5, 0.5, -0.125, 0.125],
            [0.0, 0.0, 0.0, 0.0],      # observed, zero spread
            [0.125, -0.125, 0.5, -0.5],
        ]
    )
    xb = EnsembleState(xm[:, None] + u)
    net = ObservationNetwork(
        obs_indices=np.array([1, 4]),
        r_diag=np.array([0.25, 1.0]),
        y=np.array([99.0, -99.0]),  # any innovation: zero spread ignores it
    )
    g = GridGeometry(kind="ring1d", nx=6)
    out = letkf_analysis_global(xb, g, net, zeta=2, inflation=1.0)
    assert_array_equal(out.X, xb.X)

    rng = np.random.default_rng(105)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(3, 17))
        nens = int(rng.integers(3, 12))
        nobs = int(rng.integers(1, n + 1))
        geometry = GridGeometry(kind="ring1d", nx=n)
        x = rng.standard_normal((n, nens)) + 0.5
        obs = np.sort(rng.choice(n, size=nobs, replace=False))
        r = rng.uniform(0.2, 1.5, nobs)
        y = rng.standard_normal(nobs)
        inflation = float(rng.choice([1.0, 1.3]))
        state = EnsembleState(x)
        net = ObservationNetwork(obs, r, y)
        got = letkf_analysis_global(state, geometry, net, n, inflation).X
        want = etkf_reference(x, obs, r, y, inflation)
        rel = np.linalg.norm(got - want) / np.linalg.norm(want)
        worst = max(worst, rel)
        assert rel <= 1e-8
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"[criterion 5] PASS - exact fixed point and oracle agreement "
          f"(worst {worst:.2e}), {elapsed:.1f}s")


def test_criterion_6_assimilation_beats_free_run(tmp_path):
    """Default ring scenario: analysis error under half the free-run error
    over the second half of the run."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig(
        cycles=50, methods=("enkf_mc_primal",), out_dir=str(tmp_path)
    )
    res = run_twin_experiment(cfg)
    tail = slice(25, None)
    analysis = float(np.mean(res.rmse["enkf_mc_primal"].normalized[tail]))
    free = float(np.mean(res.rmse[FREE_RUN].normalized[tail]))
    assert analysis < 0.5 * free, f"analysis {analysis:.4f} vs free {free:.4f}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"[criterion 6] PASS - last-25-cycle analysis error {analysis:.4f} "
          f"= {analysis / free:.3f} x free run ({free:.4f}), {elapsed:.1f}s")


def test_criterion_7_thread_scaling(tmp_path):
    """Eight workers cut wall time on a 128x128 decomposition; requires
    at least eight cores to be meaningful."""
    t0 = time.perf_counter()
    totals = {}
    texts = {}
    for workers in (1, 8):
        cfg = ExperimentConfig(
            model="advdiff2d", nx=128, ny=128, nens=40, cycles=2,
            obs_fraction=0.25, zeta=3, delta=64, workers=workers,
            methods=("enkf_mc_primal",), window=0.05, dt=0.05,
            spinup_window=0.25, seed=7, out_dir=str(tmp_path / f"w{workers}"),
        )
        run_twin_experiment(cfg)
        rows = (tmp_path / f"w{workers}" / TIMINGS_FILE).read_text().splitlines()[1:]
        totals[workers] = sum(float(r.split(",")[-1]) for r in rows)
        texts[workers] = (tmp_path / f"w{workers}" / RMSE_FILE).read_bytes()
    assert texts[1] == texts[8], "worker count changed the numbers"
    ratio = totals[8] / totals[1]
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    cores = os.cpu_count() or 1
    if cores < 8:
        print(f"[criterion 7] SKIP - needs >= 8 cores, this machine has "
              f"{cores}; measured ratio {ratio:.3f} ({elapsed:.1f}s)")
        pytest.skip(
            f"thread-scaling bar needs an 8-core machine, found {cores} "
            f"(measured 8-vs-1 wall ratio {ratio:.3f}; numbers bitwise equal)"
        )
    assert ratio <= 0.6, f"8-worker wall time ratio {ratio:.3f} > 0.6"
    print(f"[criterion 7] PASS - 8-vs-1 worker wall ratio {ratio:.3f} "
          f"<= 0.6, {elapsed:.1f}s")


def test_criterion_8_radius_sweep_artifact(tmp_path):
    """The radius sweep emits a complete accuracy table for both methods."""
    t0 = time.perf_counter()
    values = [0, 1, 2, 3, 5]
    cfg = ExperimentConfig(
        cycles=10,
        methods=("enkf_mc_primal", "letkf"),
        out_dir=str(tmp_path),
    )
    run_sweep(cfg, "zeta", values)
    lines = (tmp_path / SWEEP_FILE).read_text().splitlines()
    assert lines[0] == SWEEP_HEADER
    assert len(lines) == 1 + len(values) * (len(cfg.methods) + 1)
    seen = set()
    for line in lines[1:]:
        param, value, method, agg_paper, agg_norm = line.split(",")
        assert param == "zeta"
        assert np.isfinite(float(agg_paper)) and np.isfinite(float(agg_norm))
        seen.add((int(value), method))
        assert (tmp_path / f"zeta_{value}" / RMSE_FILE).exists()
    expected = {
        (v, m) for v in values for m in (*cfg.methods, FREE_RUN)
    }
    assert seen == expected
    elapsed = time.perf_counter() - t0
    print(f"[criterion 8] PASS - complete radius sweep over {values} for "
          f"both methods plus free run, {elapsed:.1f}s")
