import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from rslab.parisi import (
    AtomicMeasure,
    GridConfig,
    GridOverflowError,
    decode_measure,
    encode_measure,
    finite_differences,
    parisi_functional,
    rsb_search,
    solve_u,
    u_delta_q_explicit,
)
from rslab.quadrature import gauss_expect_many, log_cosh
from rslab.rs import LOG2, ModelParams, at_line, phi_rs, solve_q

POINTS = [(0.8, 0.5), (1.2, 1.0), (2.0, 2.5), (1.5, 0.5), (2.0, 0.1)]
COARSE = GridConfig(dx=1e-2)


@pytest.fixture(scope="module", params=POINTS, ids=lambda p: f"beta{p[0]}-h{p[1]}")
def delta_q_solution(request):
    params = ModelParams(*request.param)
    fp = solve_q(params)
    times = tuple(sorted({*np.linspace(0, 1, 9), fp.q, 0.5 * fp.q, 0.5 * (1 + fp.q)}))
    vg = solve_u(AtomicMeasure.delta(fp.q), params, GridConfig(times=times))
    return params, fp, vg


class TestAtomicMeasure:
    def test_validation(self):
        with pytest.raises(ValueError):
            AtomicMeasure((0.5, 0.3), (0.5, 0.5))
        with pytest.raises(ValueError):
            AtomicMeasure((0.3, 0.3), (0.5, 0.5))
        with pytest.raises(ValueError):
            AtomicMeasure((0.3, 1.2), (0.5, 0.5))
        with pytest.raises(ValueError):
            AtomicMeasure((0.3,), (0.9,))
        with pytest.raises(ValueError):
            AtomicMeasure((0.3, 0.4), (1.1, -0.1))

    def test_cdf_right_continuous(self):
        mu = AtomicMeasure((0.2, 0.7), (0.25, 0.75))
        assert mu.cdf(0.2 - 1e-15) == 0.0
        assert mu.cdf(0.2) == 0.25
        assert mu.cdf(0.7) == 1.0
        assert mu.cdf(1.0) == 1.0

    def test_intervals(self):
        mu = AtomicMeasure((0.0, 0.2, 0.7), (0.1, 0.3, 0.6))
        assert mu.intervals() == [(0.0, 0.2, 0.1), (0.2, 0.7, 0.4), (0.7, 1.0, 1.0)]
        assert mu.breakpoints() == [0.2, 0.7]

    def test_zero_weight_atoms_are_merged(self):
        mu = AtomicMeasure((0.2, 0.5, 0.7), (0.25, 0.0, 0.75))
        assert mu.intervals() == AtomicMeasure((0.2, 0.7), (0.25, 0.75)).intervals()
        assert AtomicMeasure((0.2, 0.5), (1.0, 0.0)).is_single_atom

    def test_penalty_closed_form(self):
        mu = AtomicMeasure((0.1, 0.45, 0.8), (0.2, 0.5, 0.3))
        # midpoint rule on a fine grid as an independent check
        mid = (np.arange(200_000) + 0.5) / 200_000
        cdf = np.searchsorted(mu.atoms, mid, side="right")
        cum = np.concatenate([[0.0], np.cumsum(mu.weights)])[cdf]
        assert abs(mu.penalty_integral() - np.mean(mid * cum)) < 1e-9

    def test_delta_penalty(self):
        q = 0.37
        assert abs(AtomicMeasure.delta(q).penalty_integral() - 0.5 * (1 - q * q)) < 1e-16


class TestExplicit:
    def test_terminal_origin(self):
        fp = solve_q(ModelParams(1.5, 0.5))
        u, ux, uxx = u_delta_q_explicit(fp.params, fp, 1.0, 0.0)
        assert (float(u), float(ux), float(uxx)) == (0.0, 0.0, 1.0)

    def test_branches_agree_at_q(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        x = np.linspace(-5, 5, 41)
        right = u_delta_q_explicit(params, fp, fp.q, x)
        left = u_delta_q_explicit(params, fp, np.nextafter(fp.q, 0), x)
        for a, b in zip(left, right):
            assert_allclose(a, b, atol=1e-12)

    def test_time_zero(self):
        params = ModelParams(1.5, 0.5)
        fp = solve_q(params)
        u = u_delta_q_explicit(params, fp, 0.0, params.h)[0]
        expected = 0.5 * 1.5**2 * (1 - fp.q) + gauss_expect_many(None, log_cosh, 0.5, 1.5 * math.sqrt(fp.q))
        assert abs(u - expected) < 1e-15


class TestSolveU:
    def test_matches_closed_form(self, delta_q_solution):
        params, fp, vg = delta_q_solution
        for t in vg.times:
            u, ux, uxx = u_delta_q_explicit(params, fp, float(t), vg.xgrid)
            assert np.max(np.abs(vg.u[vg.index(t)] - u)) < 2e-6
            assert np.max(np.abs(vg.ux[vg.index(t)] - ux)) < 1e-4
            assert np.max(np.abs(vg.uxx[vg.index(t)] - uxx)) < 1e-4

    def test_terminal_slice(self, delta_q_solution):
        _, _, vg = delta_q_solution
        assert np.max(np.abs(vg.u[vg.index(1.0)] - log_cosh(vg.xgrid))) <= 1e-12

    def test_derivative_bounds(self, delta_q_solution):
        _, _, vg = delta_q_solution
        assert np.max(np.abs(vg.ux)) <= 1 + 1e-8
        assert np.min(vg.uxx) > -1e-8 and np.max(vg.uxx) <= 1 + 1e-8

    def test_evenness(self, delta_q_solution):
        _, _, vg = delta_q_solution
        x = np.linspace(0, 3, 13)
        for t in vg.times:
            assert_allclose(vg.interp(t, -x), vg.interp(t, x), rtol=0, atol=0)
            assert_allclose(vg.interp(t, -x, "ux"), -vg.interp(t, x, "ux"), rtol=0, atol=0)

    def test_finite_differences_agree(self, delta_q_solution):
        _, fp, vg = delta_q_solution
        i = vg.index(fp.q)
        ux, uxx = finite_differences(vg.u[i], vg.xgrid[1] - vg.xgrid[0])
        inner = slice(1, -1)
        assert np.max(np.abs(ux[inner] - vg.ux[i][inner])) < 1e-5
        assert np.max(np.abs(uxx[inner] - vg.uxx[i][inner])) < 1e-5

    def test_pure_heat_flow_for_atom_at_one(self):
        params = ModelParams(1.3, 0.4)
        vg = solve_u(AtomicMeasure.delta(1.0), params, GridConfig(times=(0.25, 0.5)))
        x = vg.xgrid[::100]
        for t in (0.0, 0.25, 0.5):
            expected = gauss_expect_many(None, log_cosh, x, 1.3 * math.sqrt(1 - t))
            assert np.max(np.abs(vg.interp(t, x) - expected)) < 1e-12

    def test_multi_atom_derivative_bounds(self):
        mu = AtomicMeasure((0.2, 0.5, 0.8), (0.3, 0.3, 0.4))
        vg = solve_u(mu, ModelParams(2.0, 0.3), GridConfig(times=tuple(np.linspace(0, 1, 11))))
        assert np.max(np.abs(vg.ux)) <= 1 + 1e-8
        assert np.min(vg.uxx) > -1e-8 and np.max(vg.uxx) <= 1 + 1e-8

    def test_grid_overflow(self):
        params = ModelParams(1.0, 0.2)
        vg = solve_u(AtomicMeasure.delta(0.3), params, COARSE, derivatives=False)
        with pytest.raises(GridOverflowError):
            vg.interp(0.0, vg.x_max + 1e3)

    def test_missing_slice(self):
        vg = solve_u(AtomicMeasure.delta(0.3), ModelParams(1.0, 0.2), COARSE, derivatives=False)
        with pytest.raises(KeyError):
            vg.interp(0.123, 0.0)


class TestParisiFunctional:
    @pytest.mark.parametrize("beta,h", POINTS)
    def test_equals_rs_value(self, beta, h):
        params = ModelParams(beta, h)
        fp = solve_q(params)
        assert abs(parisi_functional(AtomicMeasure.delta(fp.q), params) - phi_rs(fp)) < 1e-8

    def test_small_beta_limit(self):
        params = ModelParams(1e-7, 0.8)
        mu = AtomicMeasure((0.3, 0.6), (0.5, 0.5))
        assert abs(parisi_functional(mu, params, COARSE) - (LOG2 + math.log(math.cosh(0.8)))) < 1e-12

    def test_grid_refinement(self):
        params = ModelParams(2.0, 0.3)
        mu = AtomicMeasure((0.25, 0.6), (0.4, 0.6))
        coarse = parisi_functional(mu, params, GridConfig(dx=2e-3))
        fine = parisi_functional(mu, params, GridConfig(dx=1e-3))
        assert abs(coarse - fine) < 1e-8

    @settings(max_examples=8, deadline=None)
    @given(
        st.floats(0.05, 0.45),
        st.floats(0.55, 0.95),
        st.floats(0.1, 0.9),
        st.floats(0.01, 0.99),
    )
    def test_zero_weight_atom_is_inert(self, a, b, w, extra):
        params = ModelParams(1.7, 0.4)
        mu = AtomicMeasure((a, b), (w, 1 - w))
        atoms = sorted({a, b, extra})
        if len(atoms) < 3:
            return
        weights = [w if x == a else (1 - w if x == b else 0.0) for x in atoms]
        padded = AtomicMeasure(tuple(atoms), tuple(weights))
        assert abs(parisi_functional(mu, params, COARSE) - parisi_functional(padded, params, COARSE)) <= 1e-12


class TestSearch:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-6, 6), min_size=3, max_size=5))
    def test_decode_gives_valid_measure(self, theta):
        k = (len(theta) + 1) // 2
        mu = decode_measure(theta[: 2 * k - 1], k)
        assert abs(math.fsum(mu.weights) - 1) <= 1e-14
        assert all(0 <= x <= 1 for x in mu.atoms)

    def test_encode_decode_roundtrip(self):
        mu = decode_measure(encode_measure([0.2, 0.7], [0.3, 0.7]), 2)
        assert_allclose(mu.atoms, [0.2, 0.7], rtol=1e-12)
        assert_allclose(mu.weights, [0.3, 0.7], rtol=1e-12)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            rsb_search(ModelParams(1.0, 0.5), k=4)

    def test_single_atom_recovers_q(self):
        params = ModelParams(1.2, at_line(1.2) + 0.2)
        res = rsb_search(params, k=1)
        assert abs(res.best_measure.atoms[0] - solve_q(params).q) < 1e-4
        assert res.best_value <= res.rs_value + 1e-9

    def test_budget_exhaustion_is_flagged(self):
        res = rsb_search(ModelParams(1.2, 0.5), k=2, budget=8, n_starts=2)
        assert res.exhausted
        assert res.best_value <= res.rs_value + 1e-9
