"""Acceptance gate: every quantitative guarantee runs here.

Each check prints one ``[acceptance N] ...: PASS`` or ``FAIL`` line (run
with ``pytest tests/test_acceptance.py -s`` to see them as they happen).
The checks are ordered; the sandwich-structure check reuses the fits from
the three study checks before it.
"""

import csv
import json
import math
import time

import numpy as np
import pytest

from conftest import make_panel, make_theta
from randsum import (
    PanelSeries,
    SimulationConfig,
    UnitDistribution,
    fit,
    loss,
    loss_gradient,
    resolve,
    ring_width_to_bai,
    run_mc_study,
    scenario1_study_config,
    simulate_panel,
    softplus,
    softplus_deriv,
    softplus_inverse,
    write_panel_csv,
)
from randsum.cli import main
from randsum.dataio import RawTreeSeries

_STASH = {}


def _report(number, label, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance {number}] {label}: {status}{suffix}")


def test_gradient_matches_finite_differences_on_random_panels():
    rng = np.random.default_rng(2026)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        K = int(rng.integers(1, 6))
        T = int(rng.integers(10, 51))
        p = int(rng.integers(0, 3))
        m = int(rng.integers(0, 11))
        panel = make_panel(rng, K=K, T=T, p=p, m=m)
        theta = make_theta(rng, K=K, p=p, m=m)
        grad = loss_gradient(panel, theta)
        flat = theta.to_array()
        for i in range(theta.dim):
            h = 1e-6 * max(1.0, abs(flat[i]))
            up, dn = flat.copy(), flat.copy()
            up[i] += h
            dn[i] -= h
            fd = (
                loss(panel, theta.from_array(up, K, p, m))
                - loss(panel, theta.from_array(dn, K, p, m))
            ) / (2 * h)
            worst = max(worst, abs(grad[i] - fd) / max(1.0, abs(fd)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 30.0
    _report(1, "analytic gradient matches central differences on 50 random panels",
            ok, f"worst rel err {worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-6
    assert elapsed < 30.0


def _link_grid():
    cases = [(0.0, -30.0), (1e-4, -18.0), (0.5, -10.0), (3.0, -8.0)]
    return [(delta, np.linspace(lo, 30.0, 250)) for delta, lo in cases]


def test_link_identities_on_a_thousand_point_grid():
    start = time.perf_counter()
    worst_round = 0.0
    worst_ident = 0.0
    bound_ok = True
    n_points = 0
    for delta, xs in _link_grid():
        n_points += xs.size
        lam = softplus(delta, xs)
        worst_round = max(worst_round, np.max(np.abs(softplus_inverse(delta, lam) - xs)))
        bound_ok = bound_ok and bool(np.all(lam > np.log1p(delta)))
        d_eta, d_delta = softplus_deriv(delta, xs)
        worst_ident = max(worst_ident, np.max(np.abs(d_eta + (1.0 + delta) * d_delta - 1.0)))
    elapsed = time.perf_counter() - start
    ok = n_points == 1000 and worst_round < 1e-10 and bound_ok and worst_ident < 1e-12 and elapsed < 1.0
    _report(2, "link roundtrip, lower bound, and derivative identity on a 1000-point grid",
            ok, f"roundtrip {worst_round:.2e}, identity {worst_ident:.2e}, {elapsed:.2f}s")
    assert n_points == 1000
    assert worst_round < 1e-10
    assert bound_ok
    assert worst_ident < 1e-12
    assert elapsed < 1.0


def _sum_draws(unit_dist, lam, n, R, seed):
    gen = np.random.default_rng(seed)
    return unit_dist.draw(gen, lam, R * n).reshape(R, n).sum(axis=1)


def test_simulated_moments_match_the_mean_and_variance_laws():
    lam, n, R = 2.0, 3, 100_000
    start = time.perf_counter()
    families = [
        ("exponential units", UnitDistribution(), 12.0, 910),
        ("gamma units", UnitDistribution(family="gamma", gamma_shape=2.0), 3.0, 911),
    ]
    mean_ok, var_ok = True, True
    details = []
    for label, dist, var_target, seed in families:
        y = _sum_draws(dist, lam, n, R, seed)
        se = y.std(ddof=1) / math.sqrt(R)
        mean_ok = mean_ok and abs(y.mean() - n * lam) < 4 * se
        rel = abs(y.var(ddof=1) - var_target) / var_target
        var_ok = var_ok and rel < 0.10
        details.append(f"{label} var err {rel:.3f}")
    # the lognormal mean law holds too; its variance has its own checks below
    y = _sum_draws(UnitDistribution(family="lognormal", sigma=0.5), lam, n, R, 912)
    se = y.std(ddof=1) / math.sqrt(R)
    mean_ok = mean_ok and abs(y.mean() - n * lam) < 4 * se
    elapsed = time.perf_counter() - start
    ok = mean_ok and var_ok and elapsed < 10.0
    _report(3, "simulated moments match the stated mean and variance laws",
            ok, "; ".join(details) + f", {elapsed:.1f}s")
    assert mean_ok
    assert var_ok
    assert elapsed < 10.0


@pytest.mark.xfail(
    strict=True,
    reason="the quoted lognormal variance target 3*2^4*(e^0.25 - 1) = 13.633 uses the "
    "fourth power of the mean; draws from a lognormal with mean 2 have sum variance "
    "3*2^2*(e^0.25 - 1) = 3.408, so no simulator can land within 10% of 13.633. "
    "The companion check validates the consistent value.",
)
def test_lognormal_variance_as_quoted():
    lam, n, R = 2.0, 3, 100_000
    quoted = n * lam**4 * math.expm1(0.25)
    y = _sum_draws(UnitDistribution(family="lognormal", sigma=0.5), lam, n, R, 912)
    rel = abs(y.var(ddof=1) - quoted) / quoted
    ok = rel < 0.10
    _report(3, f"lognormal variance as quoted ({quoted:.3f})", ok,
            f"simulated {y.var(ddof=1):.3f}, rel err {rel:.2f}")
    assert ok


def test_lognormal_variance_consistent_value():
    lam, n, R = 2.0, 3, 100_000
    target = n * lam**2 * math.expm1(0.25)
    y = _sum_draws(UnitDistribution(family="lognormal", sigma=0.5), lam, n, R, 912)
    rel = abs(y.var(ddof=1) - target) / target
    ok = rel < 0.10
    _report(3, f"lognormal variance, consistent value ({target:.3f})", ok,
            f"simulated {y.var(ddof=1):.3f}, rel err {rel:.3f}")
    assert ok


def test_long_panel_fit_recovers_the_generating_coefficients():
    start = time.perf_counter()
    res = resolve(scenario1_study_config(K=20, T=400, seed=11))
    panel = simulate_panel(res)
    result = fit(panel)
    truth = res.theta_true.to_array()
    got = result.theta_hat.to_array()
    # the (alpha, beta) block sits after delta and the 20 intercepts
    err = float(np.max(np.abs(got[21:] - truth[21:])))
    elapsed = time.perf_counter() - start
    ok = result.converged and err < 0.15 and elapsed < 120.0
    _report(4, "long-panel fit recovers the generating coefficients",
            ok, f"max err {err:.4f}, {elapsed:.1f}s")
    _STASH["consistency_fit"] = result
    assert result.converged
    assert err < 0.15
    assert elapsed < 120.0


def test_replication_study_lands_in_the_reported_bands():
    start = time.perf_counter()
    study = run_mc_study(scenario1_study_config(K=5, T=50, seed=2024), reps=100, jobs=4)
    elapsed = time.perf_counter() - start
    row = next(r for r in study.rows if r["parameter"] == "alpha[1]")
    mean_ok = 0.467 <= row["eqml_mean"] <= 0.667
    tse_ok = 0.03 <= row["tse_mean"] <= 0.09
    ok = mean_ok and tse_ok and elapsed < 600.0
    _report(5, "replication study lands in the reported coefficient and error bands",
            ok, f"mean {row['eqml_mean']:.4f}, tse {row['tse_mean']:.4f}, {elapsed:.0f}s")
    _STASH["band_study"] = study
    assert mean_ok
    assert tse_ok
    assert elapsed < 600.0


def test_wald_intervals_cover_the_autoregressive_coefficient():
    start = time.perf_counter()
    study = run_mc_study(scenario1_study_config(K=10, T=200, seed=31), reps=200, jobs=4)
    elapsed = time.perf_counter() - start
    row = next(r for r in study.rows if r["parameter"] == "alpha[1]")
    ok = 0.90 <= row["coverage"] <= 1.00 and elapsed < 900.0
    _report(6, "Wald intervals cover the autoregressive coefficient",
            ok, f"coverage {row['coverage']:.3f} over {row['n_converged']} fits, {elapsed:.0f}s")
    _STASH["coverage_study"] = study
    assert 0.90 <= row["coverage"] <= 1.00
    assert elapsed < 900.0


def test_sandwich_structure_on_every_converged_fit():
    if not {"consistency_fit", "band_study", "coverage_study"} <= _STASH.keys():
        pytest.skip("requires the three study checks to have run first")
    worst_asym = 0.0
    worst_eig = 0.0
    tse_ok = True
    n_checked = 0
    for study_key in ("band_study", "coverage_study"):
        for record in _STASH[study_key].records:
            if not record.converged:
                continue
            n_checked += 1
            worst_asym = max(worst_asym, record.j_asymmetry, record.v_asymmetry)
            worst_eig = min(worst_eig, record.v_min_eigenvalue)
            tse_ok = tse_ok and record.covariance_available and bool(np.all(record.tse > 0))
    result = _STASH["consistency_fit"]
    if result.converged:
        n_checked += 1
        worst_asym = max(
            worst_asym,
            float(np.max(np.abs(result.j_hat - result.j_hat.T))),
            float(np.max(np.abs(result.v_hat - result.v_hat.T))),
        )
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(result.v_hat)[0]))
        tse_ok = tse_ok and result.covariance_available and bool(np.all(result.tse > 0))
    ok = worst_asym <= 1e-10 and worst_eig > -1e-8 and tse_ok
    _report(7, "sandwich pieces symmetric, PSD, and positive on every converged fit",
            ok, f"{n_checked} fits, asym {worst_asym:.1e}, min eig {worst_eig:.1e}")
    assert worst_asym <= 1e-10
    assert worst_eig > -1e-8
    assert tse_ok


def test_basal_area_increments_telescope():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        widths = rng.uniform(0.05, 4.0, size=rng.integers(1, 80))
        tree = RawTreeSeries("s", "t", np.arange(1900, 1900 + widths.size), widths)
        bai = ring_width_to_bai(tree)
        outer = widths.sum() / 10.0
        worst = max(worst, abs(bai.sum() - math.pi * outer**2) / (math.pi * outer**2))
    two_ring = ring_width_to_bai(
        RawTreeSeries("s", "t", np.array([2000, 2001]), np.array([10.0, 10.0]))
    )
    exact = two_ring[0] == math.pi and two_ring[1] == 3.0 * math.pi
    ok = worst < 1e-10 and exact
    _report(8, "basal-area increments telescope to the outer-disk area",
            ok, f"worst rel err {worst:.1e}")
    assert worst < 1e-10
    assert exact


def test_longer_panels_extend_shorter_ones_bit_exactly():
    short = simulate_panel(resolve(scenario1_study_config(K=5, T=50, seed=7)))
    long = simulate_panel(resolve(scenario1_study_config(K=5, T=100, seed=7)))
    cols = short.p + 50
    ok = (
        np.array_equal(long.y[:, :cols], short.y)
        and np.array_equal(long.n[:, :cols], short.n)
        and np.array_equal(long.x[:, :50, :], short.x)
        and np.array_equal(long.years[:cols], short.years)
    )
    _report(9, "longer panels extend shorter ones bit-exactly under one seed", ok)
    assert ok


def test_model_ranking_prefers_the_spec_without_null_interactions(tmp_path):
    no_inter = tmp_path / "no_interactions.json"
    no_inter.write_text(json.dumps(
        {"name": "no_interactions", "p": 1, "covariates": ["x1", "x2", "x3", "x4"]}
    ))
    with_inter = tmp_path / "with_interactions.json"
    with_inter.write_text(json.dumps(
        {"name": "with_interactions", "p": 1,
         "covariates": ["x1", "x2", "x3", "x4", "x5", "x6", "x7"]}
    ))
    panel_path = tmp_path / "panel.csv"
    ranking_path = tmp_path / "ranking.csv"

    start = time.perf_counter()
    wins = 0
    for i in range(100):
        cfg = SimulationConfig(
            scenario="scenario1",
            K=2,
            T=60,
            delta=0.5,
            alpha=(0.6,),
            beta=(0.8, -0.6, 0.4, -0.3, 0.0, 0.0, 0.0),
            burn_in=200,
            seed=5000 + i,
        )
        write_panel_csv(simulate_panel(cfg), panel_path)
        rc = main([
            "compare", "--panel", str(panel_path),
            "--specs", str(no_inter), str(with_inter),
            "--out", str(ranking_path), "--no-figures",
        ])
        assert rc == 0
        with open(ranking_path, newline="") as handle:
            first = next(csv.DictReader(handle))
        if first["model"] == "no_interactions":
            wins += 1
    elapsed = time.perf_counter() - start
    ok = wins >= 80
    _report(10, "model ranking prefers the spec without null interaction columns",
            ok, f"{wins}/100 runs, {elapsed:.0f}s")
    assert wins >= 80


def test_worker_count_never_changes_the_study_table(tmp_path, monkeypatch):
    monkeypatch.delenv("RANDSUM_SEED", raising=False)
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({
        "scenario": "scenario1", "K": 2, "T": 30, "delta": 0.5,
        "alpha": [0.6], "beta": [1.0, -0.5], "burn_in": 200, "seed": 321,
    }))
    serial = tmp_path / "serial.csv"
    parallel = tmp_path / "parallel.csv"
    rc1 = main(["mc-study", "--config", str(config_path), "--reps", "8",
                "--out", str(serial), "--jobs", "1", "--no-figures"])
    rc2 = main(["mc-study", "--config", str(config_path), "--reps", "8",
                "--out", str(parallel), "--jobs", "8", "--no-figures"])
    ok = rc1 == 0 and rc2 == 0 and serial.read_bytes() == parallel.read_bytes()
    _report(11, "worker count never changes the study table bytes", ok)
    assert rc1 == 0 and rc2 == 0
    assert serial.read_bytes() == parallel.read_bytes()
