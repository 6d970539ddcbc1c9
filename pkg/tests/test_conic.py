import numpy as np
import pytest

from twrpower.conic import (AffExpr, ConicProblem, complex_to_real_embedding,
                            solve)


def rand_hermitian(rng, n, shift=0.0):
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    M = B @ B.conj().T + shift * np.eye(n)
    return M


class TestEmbedding:
    def test_psd_iff_embedded_psd(self):
        rng = np.random.default_rng(0)
        for n in (2, 3, 5):
            for shift in (0.5, -3.0):
                M = rand_hermitian(rng, n, shift)
                E = complex_to_real_embedding(M)
                assert np.allclose(E, E.T)
                psd = np.linalg.eigvalsh(M).min() >= 0
                psd_e = np.linalg.eigvalsh(E).min() >= -1e-12
                assert psd == psd_e

    def test_eigenvalues_doubled(self):
        rng = np.random.default_rng(1)
        M = rand_hermitian(rng, 4)
        lam = np.sort(np.linalg.eigvalsh(M))
        lam_e = np.sort(np.linalg.eigvalsh(complex_to_real_embedding(M)))
        assert np.allclose(np.repeat(lam, 2), lam_e)


class TestExpressions:
    def test_real_extraction(self):
        p = ConicProblem()
        x = p.scalar("x")
        e = (2.0 + 1.0j) * x + (3.0 - 0.5j)
        assert e.real().coeffs == {0: 2.0}
        assert e.real().const == 3.0
        assert e.imag().coeffs == {0: 1.0}

    def test_product_of_variables_rejected(self):
        p = ConicProblem()
        x = p.scalar("x")
        y = p.scalar("y")
        with pytest.raises(TypeError):
            _ = x * y

    def test_complex_expr_rejected_in_inequality(self):
        p = ConicProblem()
        x = p.scalar("x")
        with pytest.raises(ValueError):
            p.add_le(1.0j * x, 0.0)

    def test_non_affine_input_rejected(self):
        p = ConicProblem()
        with pytest.raises(TypeError):
            p.schur_lmi("top", 1.0, "bottom")


class TestSolve:
    def test_one_dimensional_bound(self):
        p = ConicProblem()
        x = p.scalar("x")
        p.add_lmi([[x]])
        p.add_le(-x, -1.0)
        p.minimize(x)
        sol = p.solve()
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=1e-7)

    def test_trace_minimization_with_pinned_offdiagonal(self):
        p = ConicProblem()
        X = p.hermitian("X", 2)
        p.add_le(-(X.entry(0, 0) + X.entry(1, 1)), -2.0)
        p.add_eq(X.entry(0, 1).real(), 1.0)
        p.add_eq(X.entry(0, 1).imag(), 0.0)
        p.minimize(X.trace())
        sol = p.solve()
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(2.0, abs=1e-6)
        assert np.allclose(sol["X"], np.ones((2, 2)), atol=1e-5)
        assert np.linalg.eigvalsh(sol["X"]).min() >= -1e-8

    def test_contradiction_is_infeasible(self):
        p = ConicProblem()
        x = p.scalar("x")
        p.add_le(-x, -1.0)
        p.add_le(x, 0.0)
        p.minimize(x)
        assert p.solve().status == "infeasible"

    def test_schur_boundary_feasible(self):
        p = ConicProblem()
        slack = p.scalar("s", nonneg=True)
        p.schur_lmi(4.0 + 0 * slack, 2.0, 1.0 + 0 * slack)
        p.minimize(slack)
        assert p.solve().status == "optimal"

    def test_schur_violated_infeasible(self):
        p = ConicProblem()
        slack = p.scalar("s", nonneg=True)
        p.schur_lmi(1.0 + 0 * slack, 2.0, 1.0 + 0 * slack)
        p.minimize(slack)
        assert p.solve().status == "infeasible"

    def test_schur_matches_pointwise_product_rule(self):
        # membership in the 2x2 block cone is exactly top*bottom >= c^2
        rng = np.random.default_rng(2)
        for _ in range(100):
            top, bottom = rng.uniform(0.0, 3.0, size=2)
            c = rng.uniform(0.0, 2.0)
            p = ConicProblem()
            slack = p.scalar("s", nonneg=True)
            p.schur_lmi(top + 0 * slack, c, bottom + 0 * slack)
            p.minimize(slack)
            feasible = p.solve().status == "optimal"
            assert feasible == (top * bottom >= c * c - 1e-12)

    def test_complex_lmi(self):
        # min t with [[t, c], [conj(c), 1]] psd gives t = |c|^2
        p = ConicProblem()
        t = p.scalar("t", nonneg=True)
        p.add_lmi([[t, 1.0 + 2.0j], [0.0, 1.0]])
        p.minimize(t)
        sol = p.solve()
        assert sol.objective == pytest.approx(5.0, rel=1e-6)

    def test_pinned_psd_matrices(self):
        rng = np.random.default_rng(3)
        for shift in (0.3, -2.0):
            M = rand_hermitian(rng, 3, shift)
            p = ConicProblem()
            X = p.hermitian("X", 3)
            for i in range(3):
                p.add_eq(X.entry(i, i), M[i, i].real)
                for j in range(i + 1, 3):
                    p.add_eq(X.entry(i, j).real(), M[i, j].real)
                    p.add_eq(X.entry(i, j).imag(), M[i, j].imag)
            p.minimize(X.trace())
            status = p.solve().status
            assert (status == "optimal") == (np.linalg.eigvalsh(M).min() >= 0)

    def test_norm_constraint(self):
        p = ConicProblem()
        w = p.complex_vector("w", 3)
        t = p.scalar("t", nonneg=True)
        target = np.array([1 + 1j, 2 - 1j, 0.5j])
        for m in range(3):
            p.add_eq(w.entry(m).real(), target[m].real)
            p.add_eq(w.entry(m).imag(), target[m].imag)
        p.add_norm_le(w, t)
        p.minimize(t)
        sol = p.solve()
        assert sol.objective == pytest.approx(np.linalg.norm(target), rel=1e-6)
        assert np.allclose(sol["w"], target, atol=1e-6)

    def test_trace_dot(self):
        rng = np.random.default_rng(4)
        C = rand_hermitian(rng, 3)
        M = rand_hermitian(rng, 3, shift=4.0)
        p = ConicProblem()
        X = p.hermitian("X", 3)
        for i in range(3):
            p.add_eq(X.entry(i, i), M[i, i].real)
            for j in range(i + 1, 3):
                p.add_eq(X.entry(i, j).real(), M[i, j].real)
                p.add_eq(X.entry(i, j).imag(), M[i, j].imag)
        t = p.scalar("t")
        p.add_eq(X.trace_dot(C) - t, 0.0)
        p.minimize(t)
        sol = p.solve()
        assert sol["t"] == pytest.approx(np.real(np.trace(C @ M)), rel=1e-6)

    def test_determinism(self):
        def build():
            p = ConicProblem()
            X = p.hermitian("X", 4)
            p.add_le(-X.trace(), -3.0)
            p.add_eq(X.entry(0, 1).real(), 0.25)
            p.minimize(X.trace() + 0.1 * X.entry(0, 0))
            return p.solve()

        a, b = build(), build()
        assert a.objective == b.objective
        assert np.array_equal(a["X"], b["X"])

    def test_variable_scale_is_transparent(self):
        def run(scale):
            p = ConicProblem()
            x = p.scalar("x", nonneg=True, scale=scale)
            y = p.hermitian("Y", 2, scale=scale)
            p.add_le(-(x + y.trace()), -5.0)
            p.add_le(-y.entry(0, 0), -1.0)
            p.minimize(2.0 * x + y.trace())
            return p.solve()

        base = run(1.0)
        scaled = run(1e6)
        assert scaled.status == "optimal"
        assert scaled.objective == pytest.approx(base.objective, rel=1e-6)
        assert scaled["x"] == pytest.approx(base["x"], abs=1e-6)

    def test_balance_is_transparent(self):
        def run(balance):
            p = ConicProblem()
            t = p.scalar("t", nonneg=True)
            b = p.scalar("b")
            p.schur_lmi(t, 2.0, b, balance=balance)
            p.add_le(b, 1.0)
            p.minimize(t)
            return p.solve()

        base = run(None)
        bal = run((0.25, 4.0))
        assert bal.objective == pytest.approx(base.objective, rel=1e-6)
        assert bal.objective == pytest.approx(4.0, rel=1e-6)

    def test_module_level_solve(self):
        p = ConicProblem()
        x = p.scalar("x")
        p.add_le(-x, -2.0)
        p.minimize(x)
        assert solve(p).objective == pytest.approx(2.0, abs=1e-7)


class TestDump:
    def test_dump_triplets(self, tmp_path):
        p = ConicProblem()
        x = p.scalar("x")
        X = p.hermitian("X", 2)
        p.add_le(x + X.entry(0, 0), 1.0)
        p.add_lmi([[x, 1.0 + 0.5j], [0.0, X.entry(1, 1)]])
        p.minimize(x)
        path = tmp_path / "dump.txt"
        p.dump(path)
        lines = path.read_text().strip().splitlines()
        kinds = {line.split()[0] for line in lines}
        assert {"obj", "le", "lmi"} <= kinds
        for line in lines:
            parts = line.split()
            assert len(parts) == 7
            float(parts[5]), float(parts[6])
