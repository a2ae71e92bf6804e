"""Operator application, Picard stages and the continuation driver."""

import numpy as np
import pytest

from conftest import random_zero_mean, scaled_to_c1
from pmc.ambient import translate_vertically, vertical_field
from pmc.errors import ConfigurationError, HypothesisError
from pmc.fixed_point import SolverConfig, apply_T, solve, solve_at_lambda
from pmc.grid import ScalarField, TorusGrid, lp_norm, mean, sobolev_norm
from pmc.mollifier import mollify
from pmc.verification import build_manufactured

TWO_PI = 2.0 * np.pi


def trivial_g(dim, eps):
    return vertical_field(dim, lambda s: 2 * eps * s, lambda s: 2 * eps * np.ones_like(s))


def small_config(dim=1, n=32, eps=1e-3, **kw):
    return SolverConfig(grid=TorusGrid(dim, n), epsilon=eps, p=1.5 if dim == 1 else 2.0, **kw)


def manufactured_2d(eps=1e-3, n=64, amplitude=0.02):
    grid = TorusGrid(2, n)
    x, y = grid.coordinates()
    u0 = ScalarField(grid, amplitude * np.sin(TWO_PI * x) * np.sin(TWO_PI * y))
    return build_manufactured(u0, 2 * eps, eps)


class TestSolverConfig:
    def test_defaults_are_valid(self):
        cfg = small_config()
        assert cfg.q == pytest.approx(3.0)
        assert cfg.lambda_schedule == (1 / 16, 1 / 32, 1 / 64, 1 / 128)

    def test_rejects_nondecreasing_schedule(self):
        with pytest.raises(ConfigurationError):
            small_config(lambda_schedule=(1 / 16, 1 / 16))

    def test_rejects_large_lambda(self):
        with pytest.raises(ConfigurationError):
            small_config(lambda_schedule=(0.2, 0.1))

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ConfigurationError):
            small_config(eps=1.5)


class TestApplyT:
    def test_trivial_field_fixed_point_at_zero(self):
        eps = 1e-3
        cfg = small_config(dim=2, n=32)
        g_lam = mollify(trivial_g(2, eps), 1 / 16)
        out = apply_T(ScalarField.constant(cfg.grid, 0.0), g_lam, cfg)
        assert np.max(np.abs(out.u.values)) < 1e-14
        assert abs(out.c) < 1e-10

    def test_result_is_zero_mean(self, rng):
        eps = 1e-3
        cfg = small_config()
        g_lam = mollify(trivial_g(1, eps), 1 / 16)
        v = scaled_to_c1(random_zero_mean(cfg.grid, rng), 0.5 * np.sqrt(eps))
        out = apply_T(v, g_lam, cfg)
        assert abs(mean(out.u)) < 1e-12
        assert out.shift_residual <= cfg.shift_tol * eps

    def test_rejects_nonzero_mean_input(self):
        eps = 1e-3
        cfg = small_config()
        g_lam = mollify(trivial_g(1, eps), 1 / 16)
        with pytest.raises(ConfigurationError):
            apply_T(ScalarField.constant(cfg.grid, 0.1), g_lam, cfg)

    def test_manufactured_target_is_fixed_point(self):
        # at a tiny smoothing scale the exact solution maps to itself
        eps = 1e-3
        case = manufactured_2d()
        cfg = SolverConfig(grid=case.u_star.grid, epsilon=eps, p=2.0)
        lam = 2.0**-12
        g_lam = mollify(case.g, lam)
        c_star = mean(case.u_star)
        v = ScalarField(case.u_star.grid, case.u_star.values - c_star)
        out = apply_T(v, g_lam, cfg)
        assert lp_norm(out.u - v, 2) < 1e-6
        assert out.c == pytest.approx(c_star, abs=1e-6)


class TestSolveAtLambda:
    def test_trivial_converges_in_one_step(self):
        eps = 1e-3
        cfg = small_config(dim=2, n=32)
        v0 = ScalarField.constant(cfg.grid, 0.0)
        stage = solve_at_lambda(trivial_g(2, eps), 1 / 16, cfg, v0)
        assert stage.report.converged
        assert stage.report.picard_iterations == 1
        assert np.max(np.abs(stage.u_full.values)) < 1e-12

    def test_seed_independence(self, rng):
        # different admissible starts land on the same fixed point
        eps = 1e-3
        case = manufactured_2d(n=32, amplitude=0.005)
        cfg = SolverConfig(grid=case.u_star.grid, epsilon=eps, p=2.0)
        lam = 1 / 32
        v_zero = ScalarField.constant(cfg.grid, 0.0)
        v_rand = scaled_to_c1(random_zero_mean(cfg.grid, rng), 0.5 * np.sqrt(eps))
        a = solve_at_lambda(case.g, lam, cfg, v_zero)
        b = solve_at_lambda(case.g, lam, cfg, v_rand)
        assert sobolev_norm(a.u_full - b.u_full, 2, cfg.q) <= 10 * cfg.picard_tol

    def test_fixed_point_certificate(self):
        eps = 1e-3
        case = manufactured_2d(n=32, amplitude=0.005)
        cfg = SolverConfig(grid=case.u_star.grid, epsilon=eps, p=2.0)
        stage = solve_at_lambda(case.g, 1 / 32, cfg, ScalarField.constant(cfg.grid, 0.0))
        assert stage.report.fixed_point_gap <= 2 * cfg.picard_tol
        assert all(-0.25 < c < 0.25 for c in stage.report.c_history)


class TestSolve:
    def test_trivial_field(self):
        eps = 1e-4
        cfg = small_config(dim=2, n=32, eps=eps)
        report = solve(trivial_g(2, eps), cfg)
        assert report.converged
        assert np.max(np.abs(report.u.values)) < 1e-10
        assert report.epsilon_bound_satisfied
        assert report.residual_nonlinear < 1e-12

    def test_manufactured_recovery_small(self):
        eps = 1e-3
        case = manufactured_2d(n=32, amplitude=0.005)
        cfg = SolverConfig(grid=case.u_star.grid, epsilon=eps, p=2.0)
        report = solve(case.g, cfg, force=True)
        err = lp_norm(report.u - case.u_star, 2)
        assert err <= 1e-5
        assert report.residual_nonlinear <= 1e-6
        assert all(-0.25 < c < 0.25 for c in report.c_history)
        assert all(r <= cfg.shift_tol * eps for r in report.shift_residuals)

    def test_hypothesis_failure_raises_without_force(self):
        eps = 1e-3
        case = manufactured_2d(n=32, amplitude=0.02)  # too large for smallness
        cfg = SolverConfig(grid=case.u_star.grid, epsilon=eps, p=2.0)
        with pytest.raises(HypothesisError) as err:
            solve(case.g, cfg)
        assert err.value.report is not None
        report = solve(case.g, cfg, force=True)
        assert report.converged

    def test_translation_equivariance(self):
        eps = 1e-3
        case = manufactured_2d(n=32, amplitude=0.005)
        cfg = SolverConfig(grid=case.u_star.grid, epsilon=eps, p=2.0)
        d = 0.02
        base = solve(case.g, cfg, force=True)
        moved = solve(translate_vertically(case.g, d), cfg, force=True)
        tol = 10 * cfg.picard_tol
        assert sobolev_norm(moved.u - (base.u + d), 2, cfg.q) <= tol
        base_centered = base.u - mean(base.u)
        moved_centered = moved.u - mean(moved.u)
        assert sobolev_norm(moved_centered - base_centered, 2, cfg.q) <= tol

    def test_report_body_is_deterministic(self):
        eps = 1e-3
        case = manufactured_2d(n=32, amplitude=0.003)
        cfg = SolverConfig(grid=case.u_star.grid, epsilon=eps, p=2.0)
        body1 = solve(case.g, cfg, force=True).render_body()
        body2 = solve(case.g, cfg, force=True).render_body()
        assert body1 == body2

    def test_apriori_ratios_recorded(self):
        eps = 1e-3
        case = manufactured_2d(n=32, amplitude=0.003)
        cfg = SolverConfig(grid=case.u_star.grid, epsilon=eps, p=2.0)
        report = solve(case.g, cfg, force=True)
        ratios = [r for st in report.stages for r in st.apriori_ratios]
        assert ratios and all(np.isfinite(r) and r >= 0 for r in ratios)

    def test_residual_not_worse_than_initial_guess(self):
        eps = 1e-3
        case = manufactured_2d(n=32, amplitude=0.005)
        cfg = SolverConfig(grid=case.u_star.grid, epsilon=eps, p=2.0)
        report = solve(case.g, cfg, force=True)
        from pmc.verification import pmc_residual

        initial = pmc_residual(ScalarField.constant(cfg.grid, 0.0), case.g)
        assert report.residual_nonlinear <= initial
