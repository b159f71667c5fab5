"""Gradient/Hessian assembly vs finite differences, spectrum bounds, audits."""

import numpy as np
import pytest

from psfunmix import (
    InputError,
    SupportSpec,
    build_dictionary,
    build_table,
    compute_constants,
    eig_extremes,
    estimate_lipschitz,
    gradient,
    hessian,
    loss,
    lorentz,
    make_grid,
    synthesize,
    weyl_bounds,
)
from psfunmix.hessian import audit_lemmas, model_jacobian

FAMILY = lorentz()


def fd_gradient(family, grid, support, theta, eta, x_star, rel=1e-6):
    z = np.concatenate([np.asarray(theta, float), np.asarray(eta, float)])
    p = len(theta)
    out = np.empty(z.size)
    for k in range(z.size):
        h = rel * max(abs(z[k]), 1e-8)
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        out[k] = (
            loss(family, grid, support, zp[:p], zp[p:], x_star)
            - loss(family, grid, support, zm[:p], zm[p:], x_star)
        ) / (2 * h)
    return out


def fd_hessian(family, grid, support, theta, eta, x_star, rel=1e-6):
    """Central differences of the analytic gradient (second-order accurate)."""
    z = np.concatenate([np.asarray(theta, float), np.asarray(eta, float)])
    p = len(theta)
    H = np.empty((z.size, z.size))
    for k in range(z.size):
        h = rel * max(abs(z[k]), 1e-8)
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        gp = gradient(family, grid, support, zp[:p], zp[p:], x_star)
        gm = gradient(family, grid, support, zm[:p], zm[p:], x_star)
        H[:, k] = (gp - gm) / (2 * h)
    return 0.5 * (H + H.T)


@pytest.fixture(scope="module")
def problem(small_grid, small_support, small_params, small_signal):
    # a perturbed point with non-zero residual so the R part is exercised
    theta = small_params.theta * np.array([1.07, 0.93])
    eta = small_params.eta + np.array([0.05, -0.03, 0.02, -0.04, 0.06])
    return small_grid, small_support, theta, eta, small_signal


class TestDerivatives:
    def test_gradient_matches_fd(self, problem):
        grid, support, theta, eta, x_star = problem
        g = gradient(FAMILY, grid, support, theta, eta, x_star)
        fd = fd_gradient(FAMILY, grid, support, theta, eta, x_star)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-10)

    def test_gradient_zero_at_truth(self, small_grid, small_support, small_params, small_signal):
        g = gradient(FAMILY, small_grid, small_support, small_params.theta,
                     small_params.eta, small_signal)
        assert np.max(np.abs(g)) < 1e-10

    def test_hessian_matches_fd(self, problem):
        grid, support, theta, eta, x_star = problem
        H = hessian(FAMILY, grid, support, theta, eta, x_star).H
        fd = fd_hessian(FAMILY, grid, support, theta, eta, x_star)
        np.testing.assert_allclose(H, fd, rtol=1e-4, atol=1e-9)

    def test_hessian_is_symmetric(self, problem):
        grid, support, theta, eta, x_star = problem
        H = hessian(FAMILY, grid, support, theta, eta, x_star).H
        np.testing.assert_allclose(H, H.T, atol=1e-12)

    def test_split_structure(self, problem):
        grid, support, theta, eta, x_star = problem
        blocks = hessian(FAMILY, grid, support, theta, eta, x_star)
        np.testing.assert_allclose(blocks.H, blocks.E_part + blocks.R_part, atol=1e-12)
        np.testing.assert_allclose(blocks.D_part, np.diag(blocks.E_part), atol=1e-15)
        # Gauss-Newton part is J^T J, hence positive semidefinite
        evals = np.linalg.eigvalsh(blocks.E_part)
        assert evals[0] >= -1e-10 * max(evals[-1], 1.0)

    def test_residual_part_vanishes_at_truth(self, small_grid, small_support,
                                             small_params, small_signal):
        blocks = hessian(FAMILY, small_grid, small_support, small_params.theta,
                         small_params.eta, small_signal)
        assert np.max(np.abs(blocks.R_part)) < 1e-10

    def test_jacobian_columns(self, problem):
        grid, support, theta, eta, x_star = problem
        stack = build_dictionary(FAMILY, grid, support, theta)
        J = model_jacobian(stack, eta)
        assert J.shape == (grid.N, support.p + support.total)
        # eta columns are the dictionary itself
        np.testing.assert_array_equal(J[:, support.p:], stack.G0)
        # theta column i is G1^i eta_i
        for i, sl in enumerate(support.modality_slices()):
            np.testing.assert_allclose(J[:, i], stack.block(1, i) @ eta[sl], atol=1e-14)

    def test_shape_mismatch_raises(self, small_grid, small_support, small_signal):
        with pytest.raises(InputError):
            loss(FAMILY, small_grid, small_support, (0.2,), np.ones(5), small_signal)
        with pytest.raises(InputError):
            loss(FAMILY, small_grid, small_support, (0.2, 0.1), np.ones(4), small_signal)
        with pytest.raises(InputError):
            loss(FAMILY, small_grid, small_support, (0.2, 0.1), np.ones(5),
                 small_signal[:-1])


class TestSpectrumBounds:
    def test_weyl_sandwich_contains_eigenvalues(self, problem):
        grid, support, theta, eta, x_star = problem
        blocks = hessian(FAMILY, grid, support, theta, eta, x_star)
        lo, hi = weyl_bounds(blocks)
        emin, emax = eig_extremes(blocks)
        assert lo <= emin <= emax <= hi

    def test_bounds_exact_for_diagonal_matrix(self):
        # with no off-diagonal mass both bounds collapse onto the spectrum
        from psfunmix.hessian import HessianBlocks

        d = np.array([3.0, 1.0, 7.0])
        blocks = HessianBlocks(H=np.diag(d), E_part=np.diag(d),
                               R_part=np.zeros((3, 3)), D_part=d,
                               residual=np.zeros(5), p=1)
        lo, hi = weyl_bounds(blocks)
        assert lo == pytest.approx(1.0) and hi == pytest.approx(7.0)
        emin, emax = eig_extremes(blocks)
        assert (lo, hi) == (pytest.approx(emin), pytest.approx(emax))


@pytest.fixture(scope="module")
def audit_inputs():
    # single spike per modality: the diagonal bounds are exact in this
    # regime (see test_diag_upper_gap_for_multi_spike_modalities for the
    # multi-spike caveat)
    grid = make_grid(T=8.0, N=1601)
    support = SupportSpec(locations=((0.0,), (0.5,)))
    theta = np.array([0.2, 0.1])
    eta = np.ones(2)
    Delta = 0.5
    x_star = synthesize(build_dictionary(FAMILY, grid, support, theta), eta)
    table = build_table(FAMILY, grid, support, theta, Delta)
    lip = estimate_lipschitz(FAMILY, grid, support, Delta,
                             [(0.1, 0.3), (0.05, 0.15)], samples_per_axis=3)
    cert = compute_constants(table, lip, support, theta, eta)
    return grid, support, theta, eta, x_star, table, lip, cert


class TestAudits:
    def test_all_inequalities_hold_at_truth(self, audit_inputs):
        grid, support, theta, eta, x_star, table, lip, cert = audit_inputs
        report = audit_lemmas(FAMILY, grid, support, theta, eta, x_star,
                              table, lip, cert, epsilon=0.0)
        assert report.passed, report.failures()

    def test_inequalities_hold_inside_ball(self, audit_inputs):
        grid, support, theta, eta, x_star, table, lip, cert = audit_inputs
        eps = 1e-3
        report = audit_lemmas(FAMILY, grid, support,
                              theta + np.array([eps, -eps]),
                              eta + np.array([eps, -eps]),
                              x_star, table, lip, cert, epsilon=eps)
        assert report.passed, report.failures()

    def test_diag_upper_gap_for_multi_spike_modalities(self):
        # known limitation of the diagonal upper bound: the theta-theta
        # diagonal entry sums one kernel-derivative energy per spike, so with
        # L equal-amplitude spikes it grows like L * eta^2 * mu_11 while the
        # bound stays at 1.5 * eta_max^2 * mu_11; the bound therefore fails
        # whenever the derivative-energy branch dominates and L >= 2
        grid = make_grid(T=8.0, N=1601)
        support = SupportSpec(locations=((0.0, 1.0), (0.5, 1.5)))
        theta = np.array([0.2, 0.1])
        eta = np.ones(4)
        Delta = 0.5
        x_star = synthesize(build_dictionary(FAMILY, grid, support, theta), eta)
        table = build_table(FAMILY, grid, support, theta, Delta)
        lip = estimate_lipschitz(FAMILY, grid, support, Delta,
                                 [(0.1, 0.3), (0.05, 0.15)], samples_per_axis=3)
        cert = compute_constants(table, lip, support, theta, eta)
        report = audit_lemmas(FAMILY, grid, support, theta, eta, x_star,
                              table, lip, cert, epsilon=0.0)
        assert report.failures() == ["diag_upper"]

    def test_negative_control_fails(self, audit_inputs):
        # corrupting the table must be caught by the audit
        grid, support, theta, eta, x_star, table, lip, cert = audit_inputs
        from dataclasses import replace

        bad = replace(table, I={k: 1e-6 * v for k, v in table.I.items()})
        report = audit_lemmas(FAMILY, grid, support, theta, eta, x_star,
                              bad, lip, cert, epsilon=0.0)
        assert not report.passed
        assert any(name.startswith("stack_norm") for name in report.failures())

    def test_report_serialization(self, audit_inputs):
        import json

        grid, support, theta, eta, x_star, table, lip, cert = audit_inputs
        report = audit_lemmas(FAMILY, grid, support, theta, eta, x_star,
                              table, lip, cert, epsilon=0.0)
        rows = json.loads(report.to_json())
        assert all({"inequality", "lhs", "rhs", "slack", "passed"} <= set(r) for r in rows)
        names = [r["inequality"] for r in rows]
        assert "diag_lower" in names and "offdiag_norm" in names
