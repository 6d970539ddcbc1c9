import numpy as np
import pytest

from twrpower.model import (Scenario, generate_scenario, derive_coefficients,
                            min_received_power)
from twrpower.onepair import (rank_one_extract, required_received_power,
                              solve_p4_fixed_gamma, solve_onepair, w_of_gamma,
                              RankReductionError, _span_basis)
from twrpower.verify import check_p1, property1_residual


def scen(seed, N=8):
    return generate_scenario(seed, N=N, K=1)


class TestWOfGamma:
    def test_endpoint_matched_filter(self):
        s = scen(0)
        h1, h2 = s.h[0, 0], s.h[1, 0]
        w, deg = w_of_gamma(1.0, h1, h2)
        assert not deg
        assert np.allclose(w, h1 / np.linalg.norm(h1))

    def test_orthogonal_channels(self):
        N = 4
        h1 = np.zeros(N, dtype=complex)
        h2 = np.zeros(N, dtype=complex)
        h1[0] = 2.0
        h2[1] = 1.5
        w, deg = w_of_gamma(0.0, h1, h2)
        assert not deg
        # angle of a zero inner product is taken as zero
        assert np.allclose(w, h2 / np.linalg.norm(h2))

    def test_signal_fraction(self):
        rng = np.random.default_rng(1)
        h1 = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        h2 = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        for gamma in rng.uniform(0.0, 1.0, size=100):
            w, _ = w_of_gamma(gamma, h1, h2)
            assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-12)
            assert np.abs(w.conj() @ h1) ** 2 == pytest.approx(
                gamma * np.linalg.norm(h1) ** 2, rel=1e-9, abs=1e-12)

    def test_constructive_phase_on_second_channel(self):
        rng = np.random.default_rng(2)
        h1 = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        h2 = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        n1 = np.linalg.norm(h1)
        hb = h2 - (h1.conj() @ h2) / n1**2 * h1
        for gamma in (0.2, 0.7):
            w, _ = w_of_gamma(gamma, h1, h2)
            expect = (np.sqrt(gamma) * abs(h2.conj() @ h1) / n1
                      + np.sqrt(1 - gamma) * np.linalg.norm(hb))
            assert np.abs(w.conj() @ h2) == pytest.approx(expect, rel=1e-12)

    def test_collinear_degenerate(self):
        h1 = np.array([1.0 + 1j, 2.0, -0.5j])
        h2 = (0.3 - 0.2j) * h1
        w, deg = w_of_gamma(0.4, h1, h2)
        assert deg
        assert np.allclose(w, h1 / np.linalg.norm(h1))


class TestFixedGammaProgram:
    def test_matches_grid_oracle(self):
        # independent oracle: rank-one transmit directions on a sphere grid
        # crossed with a splitting-ratio grid
        s = scen(3, N=6)
        co = derive_coefficients(s)
        gamma = 0.55
        pt = solve_p4_fixed_gamma(s, co, gamma)
        assert pt is not None

        w = pt.w
        sig = np.array([np.abs(w.conj() @ s.h[i, 0]) ** 2 for i in range(2)])
        q = co.alpha[:, 0] * s.sigma_r2 / sig
        m2 = np.maximum(q + 2 * s.p_c - 2 * s.E[:, 0], 0.0)
        Q = _span_basis(s)
        a = [Q.conj().T @ s.g[i, 0] for i in range(2)]

        best = np.inf
        grid = np.linspace(0.0, 1.0, 81)
        betas = np.geomspace(1e-7, 1.0, 400)
        for phi in grid * np.pi / 2:
            for psi in np.linspace(0.0, 2 * np.pi, 81):
                u = np.array([np.cos(phi), np.sin(phi) * np.exp(1j * psi)])
                gains = np.array([np.abs(a[i].conj() @ u) ** 2 for i in range(2)])
                if np.any(gains <= 0):
                    continue
                t_req = 0.0
                for i in range(2):
                    need = np.inf
                    for b in betas:
                        rate_need = co.theta[i, 0] * (s.sigma_u2 + s.sigma_z2 / b)
                        hv_need = (m2[i] / (s.eta * (1 - b)) - s.sigma_u2
                                   if b < 1 else (0.0 if m2[i] == 0 else np.inf))
                        need = min(need, max(rate_need, hv_need))
                    t_req = max(t_req, need / gains[i])
                best = min(best, t_req)
        oracle = best + q.sum()
        assert pt.objective == pytest.approx(oracle, rel=1e-3)

    def test_energy_rich_scenario_keeps_full_split(self):
        # when local energy covers circuit + uplink power, no harvest is
        # needed and the returned split keeps everything at the decoder
        s = scen(1)
        co = derive_coefficients(s)
        pt = solve_p4_fixed_gamma(s, co, 0.5)
        assert pt is not None
        sig = np.array([np.abs(pt.w.conj() @ s.h[i, 0]) ** 2 for i in range(2)])
        q = co.alpha[:, 0] * s.sigma_r2 / sig
        assert np.all(2 * s.E[:, 0] - 2 * s.p_c >= q)
        assert pt.beta == pytest.approx(np.ones(2), abs=1e-9)
        assert pt.mu == pytest.approx(np.zeros(2), abs=1e-12)

    def test_orthogonal_beamformer_flagged(self):
        # gamma = 0 zeroes the first channel's gain entirely
        s = scen(2)
        co = derive_coefficients(s)
        assert solve_p4_fixed_gamma(s, co, 0.0) is None

    def test_fixed_beta_one_with_harvest_need_infeasible(self):
        s = scen(4)
        co = derive_coefficients(s)
        low_E = Scenario(N=s.N, K=1, h=s.h, g=s.g, sigma_r2=s.sigma_r2,
                         sigma_u2=s.sigma_u2, sigma_z2=s.sigma_z2, eta=s.eta,
                         p_c=s.p_c, E=np.full((2, 1), s.p_c * 0.4),
                         Rbar=s.Rbar, rho=s.rho)
        assert required_received_power(low_E, 3.0, 1.0, fixed_beta=1.0) == np.inf
        assert solve_p4_fixed_gamma(low_E, derive_coefficients(low_E), 0.5,
                                    fixed_beta=1.0) is None


class TestRankOneExtract:
    def test_identity_on_rank_one(self):
        u = np.array([1.0 + 0.5j, -0.3])
        A = np.outer(u, u.conj())
        C = [np.eye(2, dtype=complex)]
        out = rank_one_extract(A, C)
        assert np.allclose(out, A, atol=1e-10)

    def test_preserves_constraint_values(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            B = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
            A = B @ B.conj().T
            mats = []
            for _ in range(2):
                u = rng.standard_normal(2) + 1j * rng.standard_normal(2)
                mats.append(np.outer(u, u.conj()))
            mats.append(np.eye(2, dtype=complex))
            out = rank_one_extract(A, mats)
            lam = np.linalg.eigvalsh(out)
            assert lam[0] >= -1e-9 * lam[1]
            assert lam[0] <= 1e-6 * lam[1]
            for M in mats:
                assert np.real(np.trace(M @ out)) == pytest.approx(
                    np.real(np.trace(M @ A)), rel=1e-7, abs=1e-12)

    def test_zero_matrix_rejected(self):
        with pytest.raises(RankReductionError):
            rank_one_extract(np.zeros((2, 2), dtype=complex),
                             [np.eye(2, dtype=complex)])


class TestSolveOnepair:
    def test_argmin_over_all_evaluated_points(self):
        s = scen(6)
        co = derive_coefficients(s)
        sol, rep = solve_onepair(s, co)
        assert rep.status == "optimal"
        # re-evaluating on the coarse grid can not beat the returned optimum
        grid = np.linspace(0.0, 1.0, 101)
        objs = []
        for g in grid:
            pt = solve_p4_fixed_gamma(s, co, g)
            if pt is not None:
                objs.append(pt.objective)
        assert sol.objective <= min(objs) * (1 + 1e-9)

    def test_beamformer_in_channel_span(self):
        s = scen(7)
        co = derive_coefficients(s)
        sol, _ = solve_onepair(s, co)
        H = np.stack([s.h[0, 0], s.h[1, 0]], axis=1)
        Qh, _ = np.linalg.qr(H)
        res = sol.w[0] - Qh @ (Qh.conj().T @ sol.w[0])
        assert np.linalg.norm(res) < 1e-9
        G = np.stack([s.g[0, 0], s.g[1, 0]], axis=1)
        Qg, _ = np.linalg.qr(G)
        v = sol.recovered[0].v
        assert np.linalg.norm(v - Qg @ (Qg.conj().T @ v)) < 1e-9

    def test_balanced_power_ratio(self):
        s = scen(8)
        co = derive_coefficients(s)
        sol, _ = solve_onepair(s, co)
        assert property1_residual(s, sol).max() < 1e-6

    def test_feasible_for_original_problem(self):
        for seed in range(6):
            s = scen(seed)
            sol, rep = solve_onepair(s)
            assert rep.status == "optimal"
            assert check_p1(s, sol, tol=1e-6).passed

    def test_fixed_beta_never_better(self):
        for seed in (9, 10, 11):
            s = scen(seed)
            co = derive_coefficients(s)
            opt, _ = solve_onepair(s, co)
            base, _ = solve_onepair(s, co, fixed_beta=0.5)
            assert base.objective >= opt.objective * (1 - 1e-9)
            assert np.all(base.beta == 0.5)

    def test_collinear_channels_still_solve(self):
        s = scen(12, N=4)
        h = s.h.copy()
        h[1, 0] = (0.7 + 0.1j) * h[0, 0]
        s2 = Scenario(N=s.N, K=1, h=h, g=s.g, sigma_r2=s.sigma_r2,
                      sigma_u2=s.sigma_u2, sigma_z2=s.sigma_z2, eta=s.eta,
                      p_c=s.p_c, E=s.E, Rbar=s.Rbar, rho=s.rho)
        sol, rep = solve_onepair(s2)
        assert rep.status == "optimal"
        assert check_p1(s2, sol, tol=1e-6).passed
