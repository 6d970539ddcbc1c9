import numpy as np
import pytest

from twrpower.initializer import (activated_inverse_powers, cp_free_initialize,
                                  default_budget, feasibility_ratio,
                                  maxmin_w_update, xi_update, zf_initialize)
from twrpower.model import Scenario, derive_coefficients, generate_scenario


def scen(seed, N=12, K=3):
    return generate_scenario(seed, N=N, K=K)


def arc_objective(e1, e2, a):
    n1 = np.linalg.norm(e1)
    eb = e2 - (e1.conj() @ e2) / n1**2 * e1
    first = np.sqrt(a) * n1
    second = np.sqrt(a) * abs(e2.conj() @ e1) / n1 + np.sqrt(1 - a) * np.linalg.norm(eb)
    return min(first, second)


class TestWUpdate:
    def test_candidate_set_matches_dense_grid(self):
        # the three-candidate maximum equals a 1001-point grid maximum
        rng = np.random.default_rng(0)
        for trial in range(200):
            N = 4
            e1 = rng.standard_normal(N) + 1j * rng.standard_normal(N)
            e2 = rng.standard_normal(N) + 1j * rng.standard_normal(N)
            n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
            cands = [1.0, abs(e2.conj() @ e1) ** 2 / (n1**2 * n2**2)]
            if n1 >= abs(e2.conj() @ e1) / n1:
                d = n1 - abs(e2.conj() @ e1) / n1
                eb = e2 - (e1.conj() @ e2) / n1**2 * e1
                cands.append(np.linalg.norm(eb) ** 2
                             / (d**2 + np.linalg.norm(eb) ** 2))
            best = max(arc_objective(e1, e2, a) for a in cands)
            grid = max(arc_objective(e1, e2, a)
                       for a in np.linspace(0.0, 1.0, 1001))
            assert best >= grid - 1e-9

    def test_orthogonal_symmetric_case(self):
        c = 1.7
        e1 = np.array([c, 0.0], dtype=complex)
        e2 = np.array([0.0, c], dtype=complex)
        d = np.linalg.norm(e1) - 0.0
        a_int = np.linalg.norm(e2) ** 2 / (d**2 + np.linalg.norm(e2) ** 2)
        assert a_int == pytest.approx(0.5)
        assert arc_objective(e1, e2, 0.5) == pytest.approx(c / np.sqrt(2))

    def test_update_maximizes_pair_ratio(self):
        # returned beamformer beats random ones on the worst in-pair ratio
        s = scen(1, N=6, K=2)
        co = derive_coefficients(s)
        rng = np.random.default_rng(2)
        xi = 1.0 / rng.uniform(1e-4, 1e-2, size=(2, 2))
        w = maxmin_w_update(s, co, xi)
        base = feasibility_ratio(s, co, w, xi)
        for _ in range(50):
            wr = rng.standard_normal((2, s.N)) + 1j * rng.standard_normal((2, s.N))
            wr /= np.linalg.norm(wr, axis=1)[:, None]
            assert feasibility_ratio(s, co, wr, xi) <= base * (1 + 1e-9)

    def test_unit_norm(self):
        s = scen(3)
        co = derive_coefficients(s)
        w = maxmin_w_update(s, co, np.full((2, 3), 1e4))
        assert np.linalg.norm(w, axis=1) == pytest.approx(np.ones(3), abs=1e-12)


class TestXiUpdate:
    def test_k1_closed_form_from_activation(self):
        s = scen(4, N=6, K=1)
        co = derive_coefficients(s)
        w = s.h[0, 0] + s.h[1, 0]
        w = (w / np.linalg.norm(w))[None, :]
        xi = activated_inverse_powers(s, co, w)
        sig = np.array([np.abs(w[0].conj() @ s.h[i, 0]) ** 2 for i in range(2)])
        expect = co.alpha[:, 0] * s.sigma_r2 / sig
        assert 1.0 / xi[:, 0] == pytest.approx(expect, rel=1e-12)

    def test_eigen_solution_matches_linear_solve(self):
        s = scen(5, N=8, K=2)
        co = derive_coefficients(s)
        w = maxmin_w_update(s, co, np.full((2, 2), 1e4))
        xi_lin = activated_inverse_powers(s, co, w)
        assert xi_lin is not None
        P = float(np.sum(1.0 / xi_lin))
        xi_eig = xi_update(s, co, w, P)
        assert np.max(np.abs(xi_eig - xi_lin) / xi_lin) < 1e-8

    def test_budget_saturated(self):
        s = scen(6, N=10, K=3)
        co = derive_coefficients(s)
        w = maxmin_w_update(s, co, np.full((2, 3), 1e4))
        P = default_budget(s, co)
        xi = xi_update(s, co, w, P)
        assert np.sum(1.0 / xi) == pytest.approx(P, rel=1e-9)

    def test_balanced_ratios(self):
        # at the returned powers every user attains the same ratio
        s = scen(7, N=10, K=3)
        co = derive_coefficients(s)
        w = maxmin_w_update(s, co, np.full((2, 3), 1e5))
        xi = xi_update(s, co, w, default_budget(s, co))
        ratios = []
        for k in range(3):
            gains = np.abs(s.h.conj() @ w[k]) ** 2
            interf = sum(gains[j, l] / xi[j, l]
                         for l in range(3) if l != k for j in range(2))
            for i in range(2):
                num = gains[i, k] / xi[i, k]
                ratios.append(num / (co.alpha[i, k] * (interf + s.sigma_r2)))
        assert np.max(ratios) / np.min(ratios) == pytest.approx(1.0, rel=1e-7)


class TestCpFree:
    def test_high_success_rate(self):
        feasible = 0
        for seed in range(20):
            s = scen(seed)
            co = derive_coefficients(s)
            ip = cp_free_initialize(s, co, seed=seed)
            feasible += ip.feasible
            if ip.feasible:
                assert ip.ratio >= 1.0 - 1e-9
                assert feasibility_ratio(s, co, ip.w0, ip.xi0) >= 1.0 - 1e-9
                assert np.all(ip.mu0 >= 0.0)
        assert feasible >= 18

    def test_alternation_monotone(self):
        for seed in range(10):
            s = scen(seed, N=8, K=4)
            co = derive_coefficients(s)
            ip = cp_free_initialize(s, co, seed=seed)
            tr = np.array(ip.trace)
            assert np.all(np.diff(tr) >= -1e-9 * np.abs(tr[:-1]))

    def test_k1_single_pass(self):
        s = scen(8, N=8, K=1)
        co = derive_coefficients(s)
        ip = cp_free_initialize(s, co)
        assert ip.feasible
        assert len(ip.trace) == 1

    def test_mu_rule(self):
        s = scen(9)
        co = derive_coefficients(s)
        ip = cp_free_initialize(s, co, seed=9)
        expect = np.sqrt(np.maximum(1.0 / ip.xi0 + 2 * s.p_c - 2 * s.E, 0.0))
        assert ip.mu0 == pytest.approx(expect, rel=1e-12)

    def test_graceful_failure_on_collinear_channels(self):
        # all users share one uplink direction: inter-pair interference can
        # never be suppressed and the ratio stays below 1
        s = scen(10, N=4, K=3)
        rng = np.random.default_rng(11)
        base = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        h = np.stack([[base * rng.uniform(0.5, 2.0) for _ in range(3)]
                      for _ in range(2)])
        s2 = Scenario(N=4, K=3, h=h, g=s.g, sigma_r2=s.sigma_r2,
                      sigma_u2=s.sigma_u2, sigma_z2=s.sigma_z2, eta=s.eta,
                      p_c=s.p_c, E=s.E, Rbar=s.Rbar, rho=s.rho)
        co2 = derive_coefficients(s2)
        ip = cp_free_initialize(s2, co2, max_alt=5, restarts=2)
        assert not ip.feasible
        assert ip.ratio < 1.0


class TestZeroForcing:
    def test_exact_interference_nulling(self):
        s = scen(12)
        co = derive_coefficients(s)
        ip = zf_initialize(s, co)
        assert ip.feasible
        for k in range(3):
            for l in range(3):
                if l == k:
                    continue
                for j in range(2):
                    gain = abs(ip.w0[k].conj() @ s.h[j, l])
                    assert gain <= 1e-9 * np.linalg.norm(s.h[j, l])
        assert ip.ratio >= 1.0 - 1e-9

    def test_matched_filter_when_channels_orthogonal(self):
        N, K = 8, 2
        h = np.zeros((2, K, N), dtype=complex)
        for k in range(K):
            for i in range(2):
                h[i, k, 2 * k + i] = 1.0 + 0.5j
        s = scen(13, N=N, K=K)
        s2 = Scenario(N=N, K=K, h=h, g=s.g, sigma_r2=s.sigma_r2,
                      sigma_u2=s.sigma_u2, sigma_z2=s.sigma_z2, eta=s.eta,
                      p_c=s.p_c, E=s.E, Rbar=s.Rbar, rho=s.rho)
        co2 = derive_coefficients(s2)
        ip = zf_initialize(s2, co2)
        # combining direction stays inside the own-pair subspace
        for k in range(K):
            span = h[:, k, :].T
            Q, _ = np.linalg.qr(span)
            res = ip.w0[k] - Q @ (Q.conj().T @ ip.w0[k])
            assert np.linalg.norm(res) < 1e-12

    def test_too_few_antennas_rejected(self):
        s = scen(14, N=4, K=3)     # needs N >= 2K - 1 = 5
        co = derive_coefficients(s)
        with pytest.raises(ValueError):
            zf_initialize(s, co)
