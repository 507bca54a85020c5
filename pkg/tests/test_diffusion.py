import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from rslab.diffusion import (
    Curve,
    G_curve,
    doob_conditional,
    drift_regression,
    f_curve,
    g_curve,
    g_curve_kernel,
    g_curve_quadrature,
    g_prime_quadrature,
    martingale_regression,
    pair_mean_stderr,
    simulate,
    simulate_from_atom,
    step_grid,
    value_grid_for_simulation,
)
from rslab.parisi import AtomicMeasure, GridConfig, solve_u
from rslab.quadrature import gauss_expect, sech4
from rslab.rs import Case, ModelParams, case_classifier, solve_q

N_PATHS = 200_000


@pytest.fixture(scope="module")
def soft_setup():
    """delta_q ensemble with slices on [0, q] for the value function."""
    params = ModelParams(1.5, 0.5)
    fp = solve_q(params)
    mu = AtomicMeasure.delta(fp.q)
    record = tuple(np.linspace(0.0, fp.q, 9)) + (1.0,)
    vg = solve_u(mu, params, GridConfig(times=record))
    ens = simulate(mu, params, vg, N_PATHS, seed=11, record=record)
    return params, fp, vg, ens


class TestCurve:
    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            Curve([0.0, 0.5, 0.5], [1, 2, 3], None)

    def test_rejects_outside_unit_interval(self):
        with pytest.raises(ValueError):
            Curve([0.0, 1.5], [1, 2], None)

    def test_default_stderr_is_zero(self):
        c = Curve([0.0, 1.0], [1.0, 2.0], None)
        assert_array_equal(c.stderr, [0.0, 0.0])
        assert c.at(1.0) == (2.0, 0.0)


class TestSimulate:
    def test_start_is_exact(self, soft_setup):
        params, _, _, ens = soft_setup
        assert np.all(ens.state(0.0) == params.h)

    def test_marginal_at_q(self, soft_setup):
        params, fp, _, ens = soft_setup
        x = ens.state(fp.q)
        n = x.size
        mean, var = x.mean(), x.var(ddof=1)
        target_var = params.beta**2 * fp.q
        assert abs(mean - params.h) < 4 * math.sqrt(target_var / n)
        assert abs(var - target_var) < 4 * target_var * math.sqrt(2.0 / (n - 1))

    def test_soft_interval_increments(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        mu = AtomicMeasure.delta(fp.q)
        dt = fp.q / 40
        record = np.linspace(0.0, fp.q, 41)
        ens = simulate(mu, params, None, 20_000, dt=dt, seed=5, record=record)
        inc = np.diff(ens.states, axis=0)
        steps = inc.shape[0]
        assert abs(inc.mean()) < 4 * params.beta * math.sqrt(dt) / math.sqrt(inc.size)
        assert abs(inc.var() / (params.beta**2 * dt) - 1) < 0.05
        assert steps == 40

    def test_tiny_beta_freezes_paths(self):
        params = ModelParams(1e-12, 0.3)
        ens = simulate(AtomicMeasure.delta(0.5), params, None, 1000, seed=0)
        assert np.max(np.abs(ens.states - 0.3)) < 1e-10

    def test_seed_determinism(self):
        params = ModelParams(1.2, 0.4)
        mu = AtomicMeasure.delta(solve_q(params).q)
        a = simulate(mu, params, None, 70_000, seed=42, block_size=1 << 14)
        b = simulate(mu, params, None, 70_000, seed=42, block_size=1 << 14, workers=3)
        c = simulate(mu, params, None, 70_000, seed=43, block_size=1 << 14)
        assert_array_equal(a.states, b.states)
        assert not np.array_equal(a.states, c.states)

    def test_misaligned_time_grid_is_rejected(self):
        params = ModelParams(1.2, 0.4)
        mu = AtomicMeasure.delta(0.333)
        with pytest.raises(ValueError, match="atom"):
            simulate(mu, params, None, 100, times=np.linspace(0, 1, 11))

    def test_odd_path_count_is_rejected(self):
        with pytest.raises(ValueError):
            simulate(AtomicMeasure.delta(0.5), ModelParams(1.0, 0.1), None, 101)

    def test_step_grid_contains_atoms(self):
        mu = AtomicMeasure((0.2137, 0.61), (0.5, 0.5))
        grid = step_grid(mu, 1e-2)
        for a in mu.atoms:
            assert np.min(np.abs(grid - a)) == 0.0
        # no drift before the first atom, so one exact step covers it
        assert grid[1] == 0.2137
        assert np.max(np.diff(grid[1:])) <= 1e-2 + 1e-15

    def test_multi_atom_measure_runs(self):
        params = ModelParams(1.5, 0.3)
        mu = AtomicMeasure((0.3, 0.6), (0.4, 0.6))
        vg = value_grid_for_simulation(mu, params, 1e-2, GridConfig(dx=1e-2))
        ens = simulate(mu, params, vg, 2000, dt=1e-2, seed=1)
        assert np.all(np.isfinite(ens.states)) and np.all(ens.state(0.0) == 0.3)
        # |drift| <= beta^2, so X_1 - h is beta W_1 plus at most beta^2 in size
        assert np.std(ens.state(1.0)) <= params.beta + params.beta**2

    def test_value_grid_must_cover_step_times(self):
        params = ModelParams(1.5, 0.3)
        mu = AtomicMeasure((0.3, 0.6), (0.4, 0.6))
        vg = solve_u(mu, params, GridConfig(dx=1e-2))
        with pytest.raises(ValueError, match="slices"):
            simulate(mu, params, vg, 100, dt=1e-2)

    def test_multi_atom_requires_value_grid(self):
        mu = AtomicMeasure((0.3, 0.6), (0.4, 0.6))
        with pytest.raises(ValueError):
            simulate(mu, ModelParams(1.5, 0.3), None, 100)

    def test_martingale_on_soft_interval(self, soft_setup):
        _, fp, vg, ens = soft_setup
        means = []
        for t in ens.times[ens.times <= fp.q]:
            m, se = pair_mean_stderr(vg.interp(t, ens.state(t), "ux"))
            means.append((m, se))
        m0 = means[0][0]
        for m, se in means[1:]:
            assert abs(m - m0) < 4 * se
        for coef, se in martingale_regression(ens, vg, fp.q):
            assert np.all(np.abs(coef) < 4 * se)

    def test_drift_cancellation_after_q(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        dt = 1e-3
        ens = simulate(AtomicMeasure.delta(fp.q), params, None, N_PATHS, dt=dt, seed=3, record=np.linspace(fp.q, 1, 11))
        for coef, se, _ in drift_regression(ens, fp.q):
            assert np.all(np.abs(coef) <= 4 * se + 5 * dt)


class TestGCurve:
    def test_monte_carlo_endpoints(self, soft_setup):
        params, fp, vg, ens = soft_setup
        curve = g_curve(ens, vg)
        g0, se0 = curve.at(0.0)
        assert se0 == 0.0 and g0 == float(vg.interp(0.0, params.h, "ux")) ** 2
        gq, seq = curve.at(fp.q)
        assert abs(gq - fp.q) < 4 * seq

    def test_monte_carlo_left_inequality(self, soft_setup):
        _, fp, vg, ens = soft_setup
        curve = g_curve(ens, vg)
        for t, g, se in zip(curve.times, curve.values, curve.stderr):
            if t < fp.q:
                assert g >= t - 4 * se
                assert g - t >= (1 - fp.alpha) * (fp.q - t) - 4 * se

    def test_monte_carlo_matches_quadrature(self, soft_setup):
        params, fp, vg, ens = soft_setup
        curve = g_curve(ens, vg)
        for t, g, se in zip(curve.times, curve.values, curve.stderr):
            if t <= fp.q:
                assert abs(g - g_curve_quadrature(params, fp, t)) <= 4 * se + 1e-12

    def test_quadrature_endpoints(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        assert abs(g_curve_quadrature(params, fp, fp.q) - fp.q) < 1e-10
        expected = gauss_expect(None, np.tanh, params.h, params.beta * math.sqrt(fp.q)) ** 2
        assert abs(g_curve_quadrature(params, fp, 0.0) - expected) < 1e-15

    @pytest.mark.parametrize("beta,h", [(0.8, 0.5), (1.5, 0.5), (2.0, 1.3)])
    def test_derivative(self, beta, h):
        params = ModelParams(beta, h)
        fp = solve_q(params)
        eps = 1e-4
        for t in np.linspace(0.1, 0.9, 5) * fp.q:
            fd = (g_curve_quadrature(params, fp, t + eps) - g_curve_quadrature(params, fp, t - eps)) / (2 * eps)
            assert abs(fd - g_prime_quadrature(params, fp, t)) < 1e-6

    def test_out_of_range(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        with pytest.raises(ValueError):
            g_curve_quadrature(params, fp, fp.q + 0.1)


class TestFCurve:
    def test_zero_at_q(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        fc = f_curve(params, fp, [fp.q, 0.5 * (1 + fp.q)], seed=7)
        assert abs(fc.values[0]) < 4 * fc.stderr[0]

    def test_slope_at_q(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        delta = 0.02
        # a finer Euler step keeps the O(dt) weak bias well inside the band
        ens = simulate(AtomicMeasure.delta(fp.q), params, None, N_PATHS, dt=1e-4, seed=1, record=[fp.q, fp.q + delta])
        slope = (np.tanh(ens.state(fp.q + delta)) ** 2 - np.tanh(ens.state(fp.q)) ** 2) / delta - 1.0
        mean, se = pair_mean_stderr(slope)
        assert abs(mean - (fp.alpha - 1)) < 4 * se

    def test_case_one_strictly_negative(self):
        params = ModelParams(0.8, 0.5)
        fp = solve_q(params)
        assert case_classifier(fp) is Case.CaseI
        grid = np.linspace(fp.q, 1.0, 11)
        fc = f_curve(params, fp, grid, seed=3)
        assert np.all(fc.values[1:] < -4 * fc.stderr[1:])

    def test_grid_outside_right_interval(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        with pytest.raises(ValueError):
            f_curve(params, fp, [0.0, 1.0], n_paths=100)


class TestGFunctional:
    @pytest.mark.parametrize("beta,h", [(0.8, 0.5), (1.5, 0.5), (3.0, 3.2)])
    def test_shape(self, beta, h):
        params = ModelParams(beta, h)
        fp = solve_q(params)
        G = G_curve(params, fp, np.linspace(0, 1, 200))
        assert G.values[-1] == 0.0
        i = int(np.argmin(G.values))
        assert abs(G.times[i] - fp.q) <= np.max(np.diff(G.times))
        left = G.times <= fp.q
        assert np.all(np.diff(G.values[left]) <= 1e-12)
        assert np.all(np.diff(G.values[~left]) >= -1e-12)

    def test_interface_continuity(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        assert abs(g_curve_quadrature(params, fp, fp.q) - fp.q) < 1e-10
        assert abs(g_curve_kernel(params, fp, fp.q) - fp.q) < 1e-10
        assert abs(g_curve_kernel(params, fp, fp.q + 1e-7) - (fp.q + 1e-7)) < 1e-7

    def test_monte_carlo_source(self):
        params = ModelParams(0.8, 0.5)
        fp = solve_q(params)
        Gq = G_curve(params, fp, np.linspace(0, 1, 50))
        Gm = G_curve(params, fp, np.linspace(0, 1, 50), sources="mc", seed=2)
        assert np.all(np.abs(Gq.values - Gm.values) <= 4 * Gm.stderr + 1e-3 * (1 - Gm.times))
        assert Gm.stderr[-1] == 0.0

    def test_unknown_source(self):
        params = ModelParams(0.8, 0.5)
        with pytest.raises(ValueError):
            G_curve(params, solve_q(params), [0.5], sources="magic")


class TestDoob:
    def test_zero_lambda(self):
        assert doob_conditional(ModelParams(1.5, 0.5), 0.7, 0.0, np.tanh) == np.tanh(0.7)

    @pytest.mark.parametrize("x,lam", [(0.0, 0.3), (2.0, 1.0), (-4.0, 2.0)])
    def test_normalization(self, x, lam):
        assert abs(doob_conditional(ModelParams(1.5, 0.5), x, lam, np.ones_like) - 1.0) < 1e-14

    def test_against_drifted_sde(self):
        params = ModelParams(1.5, 0.5)
        exact = doob_conditional(params, 0.8, 0.5, sech4)
        y = simulate_from_atom(params, 0.8, 0.5, N_PATHS, seed=21, dt=2.5e-4)
        mean, se = pair_mean_stderr(sech4(y))
        assert abs(mean - exact) < 3 * se

    def test_lambda_bound(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        with pytest.raises(ValueError):
            doob_conditional(params, 0.0, fp.lambda_max * 1.01, np.tanh, fp=fp)
