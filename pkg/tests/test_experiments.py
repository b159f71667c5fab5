"""Seeded study harness: support recipe, Monte Carlo, landscape, isotonic fit."""

import numpy as np
import pytest

from psfunmix import (
    ExperimentConfig,
    InputError,
    certify,
    landscape,
    lorentz,
    min_separation,
    monte_carlo,
)
from psfunmix.experiments import (
    _sphere_point,
    _trial_init,
    isotonic_nonincreasing,
    write_plot_spec,
)

FAST = dict(
    T=4.0,
    N=401,
    theta_star=(0.2, 0.1),
    counts=(2, 2),
    Delta_list=(0.5,),
    trials=4,
    distance_bins=4,
    distance_min=1e-4,
    distance_max=0.5,
    seed=7,
    landscape_resolution=7,
    lipschitz_samples=2,
)


class TestConfigDerived:
    def test_support_recipe_interleaves_modalities(self):
        config = ExperimentConfig(**FAST)
        support = config.support(0.5)
        # spike k of modality i sits at (i + k*p) * Delta
        assert support.locations == ((0.0, 1.0), (0.5, 1.5))
        assert min_separation(support) == pytest.approx(0.5)

    def test_default_amplitudes_scale_inversely_with_count(self):
        config = ExperimentConfig(**{**FAST, "counts": (4, 2)})
        params = config.params()
        np.testing.assert_allclose(params.eta, [0.25] * 4 + [0.5] * 2)

    def test_explicit_amplitudes_override(self):
        config = ExperimentConfig(**{**FAST, "eta_star": (1.0, 2.0, 3.0, 4.0)})
        np.testing.assert_allclose(config.params().eta, [1.0, 2.0, 3.0, 4.0])


class TestSpherePoint:
    def test_on_the_infinity_sphere(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = _sphere_point(rng, 5, 0.3)
            assert np.max(np.abs(x)) == pytest.approx(0.3)
            assert np.all(np.abs(x) <= 0.3 + 1e-15)

    def test_trial_init_is_deterministic_and_in_domain(self):
        config = ExperimentConfig(**FAST)
        params = config.params()
        fam = lorentz()
        a = _trial_init(config, params, fam, bin_index=2, trial=1, distance=0.15)
        b = _trial_init(config, params, fam, bin_index=2, trial=1, distance=0.15)
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.eta, b.eta)
        c = _trial_init(config, params, fam, bin_index=2, trial=2, distance=0.15)
        assert np.any(a.theta != c.theta)
        # a distance larger than theta_min forces the sign-flip projection
        big = _trial_init(config, params, fam, bin_index=0, trial=0, distance=0.15)
        assert np.all(big.theta >= fam.theta_min)


@pytest.fixture(scope="module")
def curve():
    return monte_carlo(ExperimentConfig(**FAST), Delta=0.5)


class TestMonteCarlo:
    def test_reruns_bitwise_identical(self, curve, tmp_path):
        again = monte_carlo(ExperimentConfig(**FAST), Delta=0.5)
        np.testing.assert_array_equal(curve.successes, again.successes)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        curve.export_csv(p1)
        again.export_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_tiny_distances_always_recover(self, curve):
        assert curve.rates[0] == 1.0

    def test_csv_layout(self, curve, tmp_path):
        path = tmp_path / "curve.csv"
        curve.export_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "distance,trials,successes,rate,epsilon0"
        assert len(lines) == 1 + FAST["distance_bins"]

    def test_threaded_run_matches_serial(self, curve):
        threaded = monte_carlo(ExperimentConfig(**{**FAST, "threads": 2}), Delta=0.5)
        np.testing.assert_array_equal(curve.successes, threaded.successes)


class TestCertifyAndLandscape:
    def test_certificate_reports_infeasible_constants(self):
        cert = certify(ExperimentConfig(**FAST), Delta=0.5)
        assert cert.c_minus > 0 and cert.r_star > 0 and cert.q_star > 0
        assert cert.Delta == 0.5

    def test_landscape_minimum_at_truth(self):
        config = ExperimentConfig(**FAST)
        ax1, ax2, losses, eps = landscape(config, Delta=0.5)
        n = config.landscape_resolution
        assert losses.shape == (n, n)
        center = n // 2
        # the log-spaced axes pass through theta_star at the center index
        assert ax1[center] == pytest.approx(0.2, rel=1e-12)
        assert ax2[center] == pytest.approx(0.1, rel=1e-12)
        assert np.argmin(losses) == center * n + center
        assert losses[center, center] == pytest.approx(0.0, abs=1e-18)

    def test_landscape_needs_two_modalities(self):
        config = ExperimentConfig(**{**FAST, "theta_star": (0.2,), "counts": (2,)})
        with pytest.raises(InputError):
            landscape(config, Delta=0.5)


class TestIsotonic:
    def test_already_monotone_unchanged(self):
        rates = [1.0, 1.0, 0.5, 0.0]
        np.testing.assert_allclose(isotonic_nonincreasing(rates), rates)

    def test_pools_violators(self):
        out = isotonic_nonincreasing([1.0, 0.2, 0.8, 0.0])
        np.testing.assert_allclose(out, [1.0, 0.5, 0.5, 0.0])
        assert np.all(np.diff(out) <= 1e-12)

    def test_preserves_mean(self):
        rng = np.random.default_rng(3)
        rates = rng.uniform(size=20)
        out = isotonic_nonincreasing(rates)
        assert out.mean() == pytest.approx(rates.mean())
        assert np.all(np.diff(out) <= 1e-12)


class TestPlotSpec:
    def test_fields_written_sorted(self, tmp_path):
        path = tmp_path / "spec.plotspec"
        write_plot_spec(path, "success-curve", xlabel="distance", scale="log")
        assert path.read_text() == (
            "kind: success-curve\nscale: log\nxlabel: distance\n"
        )
