import numpy as np
import pytest
from scipy import linalg

from quantbreak.asymptotics import (BreakLaw, argmin_on_grid, check_normality, compare_break_law,
                                    empirical_break_law, normality_stats, sample_limit_law,
                                    sample_limit_process, total_variation, true_f0, z_process)
from quantbreak.changepoint import SegmentedFit
from quantbreak.core import Dataset, check_loss, mono_molecular
from quantbreak.estimator import FitConfig, fit_quantile, gradient_gram
from quantbreak.simulation import McReport, ScenarioSpec, generate, make_rng

MONO = mono_molecular()
TABLE1 = ScenarioSpec(n=100, true_breaks=(20, 85), true_phis=((0.5, 1.0), (1.0, -0.5), (2.5, 1.0)),
                      seed=5)


class TestLimitProcess:
    def test_equal_phases_give_flat_process(self):
        z = z_process(MONO, (1.0, 0.5), (1.0, 0.5), 0.5, "normal", 6, make_rng(0), n_draws=50)
        assert np.all(z == 0)
        assert np.all(argmin_on_grid(z) == 0)

    def test_tie_break_order(self):
        # columns are j = 0, -1, 1, -2, 2
        z = np.array([[1.0, 0.0, 0.0, 0.0, 0.0],
                      [1.0, 1.0, 0.0, 0.0, 0.0],
                      [1.0, 1.0, 1.0, 0.0, 0.0],
                      [0.0, 0.0, 0.0, 0.0, 0.0]])
        np.testing.assert_array_equal(argmin_on_grid(z), [-1, 1, -2, 0])

    def test_zero_at_origin_and_single_draw(self):
        s = sample_limit_process(MONO, TABLE1, 1, 5, make_rng(3))
        assert s.z_values[0] == 0.0
        assert sorted(s.z_values) == list(range(-5, 6))
        assert s.z_values[s.argmin_j] == min(s.z_values.values())

    def test_matches_direct_sums(self):
        # recompute the same draws with explicit loops over observations
        J, left, right, tau = 4, np.array([1.0, -0.5]), np.array([2.5, 1.0]), 0.3
        z = z_process(MONO, left, right, tau, "laplace", J, make_rng(9), n_draws=3)
        rng = make_rng(9)
        cols = {}
        for sign, own, other in [(1, right, left), (-1, left, right)]:
            x = rng.normal(1, 1, size=(3 * J, 1)).reshape(3, J)
            eps = rng.laplace(0, 1, (3, J))
            for j in range(1, J + 1):
                vals = np.zeros(3)
                for i in range(j):
                    g_own = own[0] - np.exp(-own[1] * x[:, i])
                    g_other = other[0] - np.exp(-other[1] * x[:, i])
                    vals += check_loss(eps[:, i] - g_other + g_own, tau) - check_loss(eps[:, i], tau)
                cols[sign * j] = vals
        order = [0, -1, 1, -2, 2, -3, 3, -4, 4]
        for c, j in enumerate(order):
            expected = np.zeros(3) if j == 0 else cols[j]
            np.testing.assert_allclose(z[:, c], expected, atol=1e-12)
        # consecutive differences are single loss differences
        steps = np.diff(z[:, [0, 2, 4, 6, 8]], axis=1)
        assert np.all(np.isfinite(steps))

    def test_origin_is_largest_atom(self):
        law = sample_limit_law(MONO, TABLE1, 2, J=10, n_draws=10_000, seed=1)
        assert law.pmf[10] == law.pmf.max()
        assert law.pmf.sum() == pytest.approx(1.0)

    def test_self_consistency(self):
        a = sample_limit_law(MONO, TABLE1, 1, J=10, n_draws=10_000, seed=11)
        b = sample_limit_law(MONO, TABLE1, 1, J=10, n_draws=10_000, seed=12)
        assert total_variation(a, b) <= 0.05

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            sample_limit_law(MONO, TABLE1, 3, J=5, n_draws=10)
        with pytest.raises(ValueError):
            sample_limit_law(MONO, TABLE1, 1, J=0, n_draws=10)


class TestBreakLawComparison:
    def test_distance_properties(self):
        s = np.arange(-3, 4)
        p = BreakLaw(s, np.array([0, .1, .2, .4, .2, .1, 0]))
        q = BreakLaw(s, np.array([.1, .1, .1, .4, .1, .1, .1]))
        assert total_variation(p, p) == 0
        assert total_variation(p, q) == total_variation(q, p) == pytest.approx(0.2)
        r = BreakLaw(s, p.pmf * 0.5, outside_mass=0.5)
        assert total_variation(p, r) == pytest.approx(0.5)

    def _report(self, errors):
        fits = [SegmentedFit(2, (20 + e, 85), [np.zeros(2)] * 3, 0.0) for e in errors]
        return McReport("quantile", TABLE1, 2, list(range(len(errors))), fits)

    def test_empirical_law_and_outside_mass(self):
        mc = self._report([0, 0, 1, -2, 9, -9, 0, 0, 0, 1])
        law = empirical_break_law(mc, 1, 3)
        assert law.outside_mass == pytest.approx(0.2)
        assert law.pmf[3] == pytest.approx(0.5)
        same = BreakLaw(law.support, law.pmf)
        cmp = compare_break_law(mc, same, 1)
        assert cmp.distance == pytest.approx(0.1)
        assert not cmp.flagged
        wide = compare_break_law(self._report([9] * 3 + [0] * 7), same, 1)
        assert wide.flagged

    def test_csv(self):
        text = BreakLaw(np.arange(-1, 2), np.array([.25, .5, .25])).to_csv()
        assert text.splitlines() == ["j,pmf", "-1,0.25", "0,0.5", "1,0.25"]


class TestNormality:
    def test_exact_normals_pass_thresholds(self):
        res = normality_stats(np.random.default_rng(0).standard_normal((200, 2)))
        assert np.all(res.ks_per_coord < 0.12)
        assert res.cov_error < 0.3

    def test_pipeline_inverts_injected_normals(self):
        spec = ScenarioSpec(n=120, true_breaks=(40, 80), true_phis=TABLE1.true_phis, seed=20)
        z = np.random.default_rng(1).standard_normal((30, 2))
        tau, f0 = 0.5, true_f0(spec)
        fits = []
        for rep in range(30):
            data, _ = generate(spec.for_replication(rep))
            sigma = gradient_gram(MONO, data, (40, 80), spec.true_phis[1])
            inv_root = np.linalg.inv(np.real(linalg.sqrtm(sigma)))
            phi2 = np.array(spec.true_phis[1]) + inv_root @ z[rep] * np.sqrt(tau * (1 - tau)) / (
                f0 * np.sqrt(40))
            fits.append(SegmentedFit(2, (40, 80), [np.zeros(2), phi2, np.zeros(2)], 0.0))
        mc = McReport("quantile", spec, 2, [spec.seed + r for r in range(30)], fits)
        res = check_normality(mc, MONO, spec, 2, "true")
        np.testing.assert_allclose(res.standardized, z, atol=1e-9)
        assert len(res.to_csv().splitlines()) == 31
        assert set(res.to_dict()) == {"ks_per_coord", "cov_error", "n_reps"}

    def test_bad_phase(self):
        mc = McReport("quantile", TABLE1, 2, [5], [SegmentedFit(2, (20, 85), [np.zeros(2)] * 3, 0.0)])
        with pytest.raises(ValueError):
            check_normality(mc, MONO, TABLE1, 4)

    def test_tau_variance_ratio_at_equal_density(self):
        # uniform errors have the same density at every quantile, so only the
        # tau(1 - tau) factor separates the two levels: ratio 0.1875 / 0.25
        rng = np.random.default_rng(2)
        cfg = FitConfig(n_multistart=1, refine=False, max_restarts=1)
        est = {0.25: [], 0.5: []}
        for _ in range(300):
            x = rng.normal(1, 1, 150)
            y = MONO(x, (1.0, 0.5)) + rng.uniform(-1, 1, 150)
            for tau in est:
                est[tau].append(fit_quantile(MONO, Dataset(x, y), tau=tau, config=cfg).phi_hat)
        ratio = np.var(est[0.25], axis=0) / np.var(est[0.5], axis=0)
        np.testing.assert_allclose(ratio, 0.75, rtol=0.3)
