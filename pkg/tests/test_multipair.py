import numpy as np
import pytest

from twrpower.initializer import cp_free_initialize, zf_initialize
from twrpower.model import derive_coefficients, generate_scenario
from twrpower.multipair import (BETA_FLOOR, DcOptions, DcState,
                                RankViolationError, alamouti_blocks,
                                build_p2r, channel_bases, dc_solve, phi,
                                phi_tilde, polish_design, recover)
from twrpower.onepair import solve_onepair
from twrpower.verify import check_p1


def scen(seed, N=12, K=3):
    return generate_scenario(seed, N=N, K=K)


class TestMajorizer:
    def test_plugin_values(self):
        w = np.array([1.0, 0.0], dtype=complex)
        h = np.array([np.sqrt(2.0), 0.0], dtype=complex)
        assert phi(w, 4.0, h) == pytest.approx(-0.5)
        h_perp = np.array([0.0, 1.0], dtype=complex)
        assert phi(w, 3.0, h_perp) == 0.0

    def test_equal_at_expansion(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            w = rng.standard_normal(5) + 1j * rng.standard_normal(5)
            h = rng.standard_normal(5) + 1j * rng.standard_normal(5)
            xi = rng.uniform(0.1, 10.0)
            assert phi_tilde(w, xi, w, xi, h) == pytest.approx(
                phi(w, xi, h), rel=1e-12)

    def test_majorizes_everywhere(self):
        rng = np.random.default_rng(1)
        w_n = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        xi_n = 2.3
        h = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        for _ in range(1000):
            w = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            xi = rng.uniform(1e-3, 1e3)
            assert phi_tilde(w, xi, w_n, xi_n, h) >= phi(w, xi, h) - 1e-9

    def test_gradient_match_finite_differences(self):
        rng = np.random.default_rng(2)
        w_n = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        xi_n = 1.7
        h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        eps = 1e-6

        def num_grad(f):
            g_re = np.zeros(4)
            g_im = np.zeros(4)
            for m in range(4):
                d = np.zeros(4, dtype=complex)
                d[m] = eps
                g_re[m] = (f(w_n + d, xi_n) - f(w_n - d, xi_n)) / (2 * eps)
                g_im[m] = (f(w_n + 1j * d, xi_n) - f(w_n - 1j * d, xi_n)) / (2 * eps)
            g_xi = (f(w_n, xi_n + eps) - f(w_n, xi_n - eps)) / (2 * eps)
            return g_re, g_im, g_xi

        exact = num_grad(lambda w, xi: phi(w, xi, h))
        major = num_grad(lambda w, xi: phi_tilde(w, xi, w_n, xi_n, h))
        for a, b in zip(exact, major):
            assert np.allclose(a, b, rtol=1e-6, atol=1e-9)


class TestBuildP2r:
    def _scaled_state(self, s, coeffs, init):
        ss = s.scale_powers(1.0 / s.sigma_r2)
        state = DcState(n=0, w=init.w0.copy(), xi=init.xi0 * s.sigma_r2,
                        mu=init.mu0 / np.sqrt(s.sigma_r2))
        return ss, state

    def test_expansion_point_self_feasible(self):
        # the program built around a feasible starting point is solvable
        for seed in (1, 2, 4):
            s = scen(seed)
            co = derive_coefficients(s)
            init = cp_free_initialize(s, co, seed=seed)
            assert init.feasible
            ss, state = self._scaled_state(s, co, init)
            sol = build_p2r(ss, co, state).solve()
            assert sol.status == "optimal" or sol.primal_residual <= 1e-6

    def test_beta_in_range_without_explicit_bounds(self):
        s = scen(1)
        co = derive_coefficients(s)
        init = cp_free_initialize(s, co, seed=1)
        ss, state = self._scaled_state(s, co, init)
        sol = build_p2r(ss, co, state).solve()
        for k in range(3):
            for i in range(2):
                b = sol[f"beta_{i}_{k}"]
                assert BETA_FLOOR * 0.99 <= b <= 1.0 + 1e-7

    def test_k1_respects_onepair_optimum(self):
        s = scen(5, N=8, K=1)
        co = derive_coefficients(s)
        opt, _ = solve_onepair(s, co)
        init = cp_free_initialize(s, co, seed=5)
        ss, state = self._scaled_state(s, co, init)
        sol = build_p2r(ss, co, state).solve()
        assert sol.objective * s.sigma_r2 >= opt.objective * (1 - 1e-6)

    def test_malformed_state_rejected(self):
        s = scen(6)
        co = derive_coefficients(s)
        with pytest.raises(ValueError):
            build_p2r(s, co, DcState(n=0, w=np.zeros((2, 4), dtype=complex),
                                     xi=np.ones((2, 3)), mu=np.zeros((2, 3))))
        with pytest.raises(ValueError):
            build_p2r(s, co, DcState(n=0, w=np.zeros((3, 12), dtype=complex),
                                     xi=-np.ones((2, 3)), mu=np.zeros((2, 3))))


class TestDcSolve:
    def test_monotone_and_feasible(self):
        for seed in (1, 4, 6):
            s = scen(seed)
            co = derive_coefficients(s)
            init = cp_free_initialize(s, co, seed=seed)
            sol, rep = dc_solve(s, co, init)
            assert rep.status == "optimal"
            tr = np.array(rep.objective_trace)
            assert np.all(np.diff(tr) <= 1e-9)
            assert check_p1(s, sol, tol=1e-6).passed
            assert rep.iterations <= 10

    def test_k1_close_to_global(self):
        hits = 0
        seeds = range(10)
        for seed in seeds:
            s = scen(seed, N=8, K=1)
            co = derive_coefficients(s)
            opt, _ = solve_onepair(s, co)
            init = cp_free_initialize(s, co, seed=seed)
            sol, rep = dc_solve(s, co, init)
            assert rep.status == "optimal"
            assert opt.objective <= sol.objective * (1 + 1e-6)
            if sol.objective <= opt.objective * 10 ** (0.05):   # within 0.5 dB
                hits += 1
        assert hits >= 9

    def test_zf_init_converges_same_ballpark(self):
        s = scen(2)
        co = derive_coefficients(s)
        a, _ = dc_solve(s, co, cp_free_initialize(s, co, seed=2))
        b, _ = dc_solve(s, co, zf_initialize(s, co))
        assert abs(10 * np.log10(a.objective / b.objective)) < 0.5

    def test_infeasible_init_rejected(self):
        s = scen(3)
        co = derive_coefficients(s)
        init = cp_free_initialize(s, co, seed=3)
        init.feasible = False
        with pytest.raises(ValueError):
            dc_solve(s, co, init)


class TestRecover:
    def test_rank_one(self):
        rng = np.random.default_rng(4)
        v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        v /= np.linalg.norm(v)
        r = recover(2.5 * np.outer(v, v.conj()))
        assert r.kind == "rank-one"
        assert r.p == pytest.approx(2.5, rel=1e-12)
        assert abs(np.vdot(r.v, v)) == pytest.approx(1.0, rel=1e-10)

    def test_rank_two_diagonal(self):
        V = np.diag([2.0, 1.0, 0.0, 0.0]).astype(complex)
        r = recover(V)
        assert r.kind == "rank-two"
        assert r.p == pytest.approx(3.0)
        assert np.allclose(r.p * r.F @ r.F.conj().T, V, atol=1e-12)
        assert np.linalg.norm(r.F) == pytest.approx(1.0, rel=1e-12)

    def test_rank_violation_raised(self):
        V = np.diag([1.0, 0.5, 0.25]).astype(complex)
        with pytest.raises(RankViolationError):
            recover(V)

    def test_covariance_rebuild(self):
        V = np.diag([5.0, 3.0, 0.0]).astype(complex)
        r = recover(V)
        assert np.allclose(r.covariance(), V, atol=1e-12)


class TestAlamouti:
    def test_block_layout(self):
        blocks = alamouti_blocks(np.array([1.0, 1.0j]))
        assert blocks.shape == (1, 2, 2)
        assert np.allclose(blocks[0], np.array([[1.0, 1.0j], [1.0j, 1.0]]))

    def test_orthogonality(self):
        rng = np.random.default_rng(5)
        s = rng.standard_normal(10) + 1j * rng.standard_normal(10)
        for m, B in enumerate(alamouti_blocks(s)):
            power = abs(s[2 * m]) ** 2 + abs(s[2 * m + 1]) ** 2
            assert np.allclose(B @ B.conj().T, power * np.eye(2), atol=1e-12)

    def test_odd_length_rejected(self):
        with pytest.raises(ValueError):
            alamouti_blocks(np.ones(5, dtype=complex))


class TestPolish:
    def test_restores_feasibility_after_perturbation(self):
        s = scen(4)
        co = derive_coefficients(s)
        init = cp_free_initialize(s, co, seed=4)
        sol, _ = dc_solve(s, co, init)
        shaved = sol.V * 0.999      # deliberately break the downlink slack
        out = polish_design(s, co, sol.w, shaved)
        assert out is not None
        V, q, beta, mu = out
        rebuilt = type(sol)(w=sol.w, V=V,
                            recovered=[recover(V[k], rank_tol=1.0) for k in range(3)],
                            q=q, beta=beta, mu=mu,
                            objective=float(sum(np.real(np.trace(V[k]))
                                                for k in range(3)) + q.sum()))
        assert check_p1(s, rebuilt, tol=1e-6).passed
