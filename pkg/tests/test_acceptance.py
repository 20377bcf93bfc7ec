"""Acceptance criteria 1-11.

Each test records a single PASS/FAIL line (printed in the terminal summary)
before asserting. The Monte Carlo studies are shared through session
fixtures so that every study runs once per session.
"""

import dataclasses
import time

import numpy as np
import pytest

from quantbreak.asymptotics import check_normality, compare_break_law, sample_limit_law
from quantbreak.changepoint import brute_force_changepoints, fit_k_changepoints
from quantbreak.core import Dataset, check_loss, get_model, knight_terms, mono_molecular
from quantbreak.estimator import FitConfig, smoothed_loss, smoothed_loss_grad
from quantbreak.io import dumps, load_config
from quantbreak.simulation import McReport, run_selection_study, run_table_study

pytestmark = pytest.mark.acceptance

MONO = mono_molecular()


def _scenario(name, **changes):
    cfg = load_config(name)
    return cfg, dataclasses.replace(cfg.scenario, **changes)


def _table_study(name, n_reps, methods, threads=1, **changes):
    cfg, spec = _scenario(name, **changes)
    start = time.perf_counter()
    out = run_table_study(spec, n_reps, methods=methods, constraints=cfg.constraints,
                          config=cfg.fit, threads=threads)
    return out, time.perf_counter() - start


def _selection_studies(threads=1):
    cfg, gauss = _scenario("table4.cfg", error_law="normal")
    cauchy = dataclasses.replace(gauss, error_law="cauchy")
    common = dict(sel=cfg.selection, constraints=cfg.constraints, config=cfg.fit, threads=threads)
    return {
        "normal": run_selection_study(gauss, 100, methods=("quantile",), **common),
        "cauchy": run_selection_study(cauchy, 100, methods=("quantile", "ls"), **common),
    }


@pytest.fixture(scope="session")
def table1_normal():
    return _table_study("table1.cfg", 100, ("quantile",))


@pytest.fixture(scope="session")
def table1_cauchy():
    return _table_study("table1.cfg", 100, ("quantile", "ls"), error_law="cauchy")[0]


@pytest.fixture(scope="session")
def table3_normal():
    return _table_study("table3.cfg", 200, ("quantile",))[0]["quantile"]


@pytest.fixture(scope="session")
def table4():
    return _selection_studies()


def _first(report: McReport, n: int) -> McReport:
    return McReport(report.method, report.scenario, report.k, report.seeds[:n], report.fits[:n],
                    failures=[f for f in report.failures if f[0] < n])


def _fmt(v):
    return np.array2string(np.asarray(v, float), precision=3)


def test_1_table1_quantile_normal(table1_normal, record):
    reports, elapsed = table1_normal
    rep = reports["quantile"]
    med, means = rep.break_medians, rep.phi_means
    ok = (17 <= med[0] <= 21 and 82 <= med[1] <= 86
          and np.all(np.abs(np.subtract(means[1], (0.99, -0.5))) <= 0.1)
          and elapsed <= 1800 and not rep.flagged)
    record("1 Table 1 quantile/normal", ok,
           f"median breaks {med}, mean phi2 {_fmt(means[1])}, {elapsed:.0f}s, "
           f"{len(rep.failures)} failures")
    assert ok


def test_2_table1_cauchy_contrast(table1_cauchy, record):
    q, ls = table1_cauchy["quantile"], table1_cauchy["ls"]
    mean_q, sd_q, sd_ls = q.phi_means[1], q.phi_sds[1][0], ls.phi_sds[1][0]
    ok = (np.all(np.abs(np.subtract(mean_q, (0.98, -0.48))) <= 0.3)
          and sd_q < 1 and sd_ls > 3 and not (q.flagged or ls.flagged))
    record("2 Table 1 Cauchy robustness", ok,
           f"quantile mean phi2 {_fmt(mean_q)} (median {_fmt(np.median([f.phis[1] for f in q.fits_at_k()], axis=0))}), "
           f"quantile sd {sd_q:.3f}, LS sd {sd_ls:.3f}")
    assert ok


def test_3_table3_quantile_normal(table3_normal, record):
    rep = _first(table3_normal, 100)
    med, means, sds = rep.break_medians, np.array(rep.phi_means), np.array(rep.phi_sds)
    truth = np.array(rep.scenario.true_phis)
    ok = (97 <= med[0] <= 101 and 197 <= med[1] <= 201
          and np.all(np.abs(means - truth) <= 0.05) and np.all(sds[0] <= 0.12))
    record("3 Table 3 quantile/normal", ok,
           f"median breaks {med}, max |mean - truth| {np.abs(means - truth).max():.3f}, "
           f"sd phi1 {_fmt(sds[0])}")
    assert ok


def test_4_table4_selection(table4, record):
    qn = table4["normal"]["quantile"].selection_freqs
    qc = table4["cauchy"]["quantile"].selection_freqs
    lc = table4["cauchy"]["ls"].selection_freqs
    ok = qn[1] >= 85 and qc[1] >= 78 and lc[0] >= 45
    record("4 Table 4 selection", ok,
           f"quantile/normal {qn}, quantile/Cauchy {qc}, LS/Cauchy {lc}")
    assert ok


def test_5_dp_matches_brute_force(record):
    rng = np.random.default_rng(2024)
    cfg = FitConfig(n_multistart=2, refine=False, max_restarts=1)
    mismatches, start = [], time.perf_counter()
    for i in range(50):
        n = int(rng.integers(16, 41))
        k = int(rng.integers(0, 3))
        x = rng.normal(1, 1, n)
        phase = np.minimum(np.arange(n) * 3 // n, k)
        phis = np.array([(0.5, 1.0), (1.0, -0.5), (2.5, 1.0)])[phase]
        y = phis[:, 0] - np.exp(-phis[:, 1] * x) + rng.standard_t(3, n) * 0.5
        data = Dataset(x, y)
        tau = float(rng.choice([0.25, 0.5, 0.75]))
        dp = fit_k_changepoints(MONO, data, k, tau, config=cfg)
        bf = brute_force_changepoints(MONO, data, k, tau, config=cfg)
        if dp.breaks != bf.breaks or abs(dp.total_loss - bf.total_loss) > 1e-9:
            mismatches.append((i, dp.breaks, bf.breaks))
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed <= 120
    record("5 DP equals exhaustive search", ok, f"{len(mismatches)} mismatches in 50 instances, {elapsed:.1f}s")
    assert ok


def test_6_knight_identity(record):
    rng = np.random.default_rng(6)
    failures = 0
    for _ in range(1000):
        n = 20
        data = Dataset(rng.normal(1, 1, n), np.zeros(n))
        tau = rng.uniform(0.05, 0.95)
        phi0 = rng.uniform(-2, 2, 2)
        phi = np.clip(phi0 + rng.normal(scale=0.5, size=2), -2, 2)
        eps = [rng.normal(size=n), rng.laplace(size=n), rng.standard_cauchy(n)][rng.integers(3)]
        kt = knight_terms(MONO, data, phi, phi0, tau, eps)
        if not (abs(kt.g_total - kt.w - kt.z) <= 1e-10 and kt.z >= 0):
            failures += 1
    record("6 Knight identity", failures == 0, f"{failures} failures in 1000 configurations")
    assert failures == 0


def test_7_loss_contraction(record):
    rng = np.random.default_rng(7)
    a = rng.standard_cauchy(10_000) * 10
    b = a + rng.standard_cauchy(10_000)
    tau = rng.uniform(0, 1, 10_000)
    tau = np.where(tau == 0, 0.5, tau)
    lhs = np.abs(np.array([check_loss(ai, ti) - check_loss(bi, ti) for ai, bi, ti in zip(a, b, tau)]))
    failures = int(np.sum(lhs > np.abs(a - b) * (1 + 1e-12)))
    record("7 check-loss contraction", failures == 0, f"{failures} failures in 10000 pairs")
    assert failures == 0


def test_8_gradients(record):
    rng = np.random.default_rng(8)

    def close(g, fd):
        return np.allclose(g, fd, rtol=1e-4, atol=1e-7 * (1 + np.abs(fd).max()))

    bad_smooth = 0
    for _ in range(100):
        n = 25
        x = rng.normal(1, 1, n)
        data = Dataset(x, MONO(x, (0.5, 1.0)) + rng.normal(size=n))
        phi, tau, h = rng.uniform(-2, 2, 2), rng.uniform(0.1, 0.9), rng.uniform(0.05, 1)
        g = smoothed_loss_grad(MONO, data, phi, tau, h)
        fd = np.array([(smoothed_loss(MONO, data, phi + e, tau, h)
                        - smoothed_loss(MONO, data, phi - e, tau, h)) / 2e-6 for e in np.eye(2) * 1e-6])
        bad_smooth += not close(g, fd)
    bad_models = {}
    for name in ("mono_molecular", "linear"):
        m = get_model(name)
        bad = 0
        for _ in range(100):
            x = rng.normal(1, 1, (1, m.dim_x))
            phi = rng.uniform(-3, 3, m.dim_phi)
            fd = np.array([(m.eval(x, phi + e)[0] - m.eval(x, phi - e)[0]) / 2e-6
                           for e in np.eye(m.dim_phi) * 1e-6])
            bad += not close(m.grad(x, phi)[0], fd)
        bad_models[name] = bad
    ok = bad_smooth == 0 and not any(bad_models.values())
    record("8 gradient checks", ok, f"smoothed loss {bad_smooth}/100 off, models {bad_models}")
    assert ok


def test_9_asymptotic_normality(table3_normal, record):
    res = check_normality(table3_normal, MONO, table3_normal.scenario, 2, "true")
    ok = bool(np.all(res.ks_per_coord < 0.12) and res.cov_error < 0.3)
    record("9 asymptotic normality", ok,
           f"KS {_fmt(res.ks_per_coord)}, covariance error {res.cov_error:.3f}, "
           f"{res.standardized.shape[0]} replications")
    assert ok


def test_10_limit_law(table3_normal, record):
    law = sample_limit_law(MONO, table3_normal.scenario, 1, J=10, n_draws=10_000, seed=10)
    cmp = compare_break_law(table3_normal, law, 1)
    ok = cmp.distance <= 0.15
    record("10 break limit law", ok,
           f"total variation {cmp.distance:.3f}, off-grid mass {cmp.outside_mass:.3f}")
    assert ok


def test_11_determinism(table1_normal, table4, record):
    again, _ = _table_study("table1.cfg", 100, ("quantile",), threads=2)
    same1 = dumps(again["quantile"].to_dict()) == dumps(table1_normal[0]["quantile"].to_dict())
    sel_again = _selection_studies(threads=2)
    same4 = all(dumps(sel_again[law][m].to_dict()) == dumps(table4[law][m].to_dict())
                for law in table4 for m in table4[law])
    ok = same1 and same4
    record("11 determinism across thread counts", ok,
           f"criterion 1 report identical: {same1}; criterion 4 reports identical: {same4}")
    assert ok


def test_break_localization_does_not_widen(table1_normal, table3_normal, record):
    def med_abs(rep):
        b = np.array([f.breaks for f in rep.fits_at_k()])
        return np.median(np.abs(b - np.array(rep.scenario.true_breaks)), axis=0)

    small = med_abs(table1_normal[0]["quantile"])
    large = med_abs(_first(table3_normal, 100))
    ok = bool(np.all(small <= 2) and np.all(large <= small + 1))
    record("extra: break localization", ok, f"median |error| n=100 {small}, n=300 {large}")
    assert ok


def test_limit_law_distance_shrinks_with_n(table1_normal, table3_normal, record):
    rep100 = table1_normal[0]["quantile"]
    d100 = compare_break_law(rep100, sample_limit_law(MONO, rep100.scenario, 1, 10, 10_000, seed=10), 1)
    d300 = compare_break_law(table3_normal,
                             sample_limit_law(MONO, table3_normal.scenario, 1, 10, 10_000, seed=10), 1)
    ok = d300.distance <= d100.distance + 0.05
    record("extra: limit-law distance vs n", ok,
           f"n=100 {d100.distance:.3f}, n=300 {d300.distance:.3f}")
    assert ok
