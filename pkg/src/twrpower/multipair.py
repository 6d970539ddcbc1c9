"""Iterative convexified solver for the general multi-pair design problem.

The power minimization program is convex except for two difference-of-convex
pieces: the uplink signal term -|w^H h|^2 / xi and the harvest slack -mu^2.
Each iteration replaces them by their affine majorizers around the previous
solution (same value and gradient there), solves the resulting conic program,
and re-expands.  The previous solution stays feasible for the next program,
so the objective never increases, and the converged point is stationary.

Transmit covariances at convergence have rank at most two; rank-one ones
recover a plain beamformer, rank-two ones a two-column factor transmitted
in 2x2 orthogonal space-time blocks with no loss.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .conic import ConicProblem
from .initializer import InitPoint
from .model import (DerivedCoefficients, DesignSolution, RecoveredBeamformer,
                    Scenario, SolveReport, min_received_power)

RANK_TOL = 1e-6      # eigenvalue ratio separating rank-one / rank-two / violation
BETA_FLOOR = 1e-6    # numerical floor on splitting ratios; objective effect O(floor)


class RankViolationError(RuntimeError):
    """A converged covariance had numerical rank above two."""


@dataclass
class DcState:
    """Expansion point of one convexified iteration (scenario power units)."""

    n: int
    w: np.ndarray             # (K, N), ||w_k|| <= 1
    xi: np.ndarray            # (2, K) inverse user powers, > 0
    mu: np.ndarray            # (2, K) harvest slack, >= 0
    V: np.ndarray | None = None   # previous covariances, scale hints only
    objective: float = np.inf
    converged: bool = False


@dataclass
class DcOptions:
    rel_tol: float = 1e-5     # relative objective decrease to declare convergence
    max_iter: int = 50
    rank_tol: float = RANK_TOL


def phi(w_k: np.ndarray, xi_ik: float, h_ik: np.ndarray) -> float:
    """Negative uplink signal term -|w^H h|^2 / xi."""
    return -np.abs(w_k.conj() @ h_ik) ** 2 / xi_ik


def phi_tilde(w_k: np.ndarray, xi_ik: float, w_n: np.ndarray, xi_n: float,
              h_ik: np.ndarray) -> float:
    """Affine majorizer of phi around the expansion point (w_n, xi_n).

    Upper-bounds phi everywhere and agrees with it, in value and gradient,
    at the expansion point.
    """
    inner_n = w_n.conj() @ h_ik
    return (-2.0 * np.real(inner_n * (h_ik.conj() @ w_k)) / xi_n
            + np.abs(inner_n) ** 2 / xi_n**2 * xi_ik)


def channel_bases(s: Scenario):
    """Orthonormal bases of the downlink and uplink channel spans.

    The optimum never puts transmit covariance energy outside
    span{g_{i,l}} (it would raise the trace without touching any
    constraint) nor receive beamformer weight outside span{h_{j,l}}
    (it would waste norm budget), so both can be parameterized over
    min(2K, N)-dimensional orthonormal bases without loss.
    """
    Qg, _ = np.linalg.qr(s.g.reshape(2 * s.K, s.N).T)
    Qh, _ = np.linalg.qr(s.h.reshape(2 * s.K, s.N).T)
    return Qg, Qh


def build_p2r(s: Scenario, coeffs: DerivedCoefficients, state: DcState,
              beta_floor: float = BETA_FLOOR):
    """Assemble the convexified conic program around `state`.

    Expects `s` and `state` in consistent power units (the driver feeds
    noise-normalized copies).  Variables are expressed over the channel-span
    bases; solutions map back via `extract_p2r_solution`.
    """
    K, N = s.K, s.N
    if state.w.shape != (K, N) or state.xi.shape != (2, K) or state.mu.shape != (2, K):
        raise ValueError("expansion point does not match the scenario dimensions")
    if np.any(state.xi <= 0.0) or np.any(state.mu < 0.0):
        raise ValueError("expansion point must have xi > 0 and mu >= 0")
    p = ConicProblem()
    sz = np.sqrt(s.sigma_z2)

    Qg, Qh = channel_bases(s)
    dg, dh = Qg.shape[1], Qh.shape[1]
    gt = np.einsum("nm,ikn->ikm", Qg.conj(), s.g)   # reduced downlink channels
    ht = np.einsum("nm,jln->jlm", Qh.conj(), s.h)   # reduced uplink channels
    Theta_t = gt[..., :, None] * gt[..., None, :].conj()

    # operating-point magnitudes used only as numerical scale hints; the
    # cross-pair interference seen by each user (from the previous iterate's
    # covariances when available) enters like extra antenna noise
    cross_est = np.zeros((2, K))
    if state.V is not None:
        for k in range(K):
            for i in range(2):
                gik = s.g[i, k]
                cross_est[i, k] = sum(
                    max(np.real(gik.conj() @ state.V[l] @ gik), 0.0)
                    for l in range(K) if l != k)
    r_est = np.empty((2, K))        # required own received power
    top_est = np.empty((2, K))      # downlink-rate block top at the estimate
    beta_est = np.empty((2, K))
    m2_est = np.empty((2, K))       # harvest need used for scaling only
    for k in range(K):
        for i in range(2):
            sig_eff = s.sigma_u2 + cross_est[i, k]
            m2_est[i, k] = state.mu[i, k] ** 2
            r_eff, beta_est[i, k] = min_received_power(
                coeffs.theta[i, k], m2_est[i, k],
                sig_eff, s.sigma_z2, s.eta)
            r_est[i, k] = r_eff
            top_est[i, k] = max(r_eff / coeffs.theta[i, k] - sig_eff, s.sigma_z2)
    beta_est = np.maximum(beta_est, beta_floor)
    tc_est = r_est + cross_est + s.sigma_u2   # harvest block top estimate
    # a vanishing harvest need makes its block inactive; treating tiny mu
    # iterates as zero keeps the block balance bounded
    m2_est[m2_est < 1e-9 * tc_est] = 0.0

    V = []
    w = []
    for k in range(K):
        gain = np.array([np.linalg.norm(s.g[i, k]) ** 2 for i in range(2)])
        V.append(p.hermitian(f"V_{k}", dg, scale=float(np.max(r_est[:, k] / gain))))
        w.append(p.complex_vector(f"w_{k}", dh))
        p.add_norm_le(w[k], 1.0)

    xi = {}
    t = {}
    beta = {}
    mu = {}
    for k in range(K):
        for i in range(2):
            xi[i, k] = p.scalar(f"xi_{i}_{k}", nonneg=True,
                                scale=float(state.xi[i, k]))
            t[i, k] = p.scalar(f"t_{i}_{k}", nonneg=True,
                               scale=float(1.0 / state.xi[i, k]))
            beta[i, k] = p.scalar(f"beta_{i}_{k}")
            mu[i, k] = p.scalar(f"mu_{i}_{k}", nonneg=True,
                                scale=float(max(state.mu[i, k], sz)))
            # epigraph t >= 1/xi

            p.schur_lmi(t[i, k], 1.0, xi[i, k],
                        balance=(state.xi[i, k], 1.0 / state.xi[i, k]))

    I = {}
    for k in range(K):
        for l in range(K):
            if l == k:
                continue
            for j in range(2):
                est = np.abs(state.w[k].conj() @ s.h[j, l]) ** 2 / state.xi[j, l]
                est = max(est, s.sigma_r2)
                I[j, l, k] = p.scalar(f"I_{j}_{l}_{k}", scale=float(est))
                p.add_lmi([[I[j, l, k], w[k].conj_dot(ht[j, l])],
                           [0.0, xi[j, l]]],
                          balance=(1.0 / est, 1.0 / state.xi[j, l]))

    wn_t = np.einsum("nm,kn->km", Qh.conj(), state.w)   # expansion w, reduced
    for k in range(K):
        for i in range(2):
            # uplink with the majorized signal term
            inner_n = wn_t[k].conj() @ ht[i, k]
            interf = sum(I[j, l, k] for l in range(K) if l != k for j in range(2))
            lin = (-2.0 / state.xi[i, k]) * (inner_n * w[k].dot_conj(ht[i, k])).real() \
                + (np.abs(inner_n) ** 2 / state.xi[i, k] ** 2) * xi[i, k]
            p.add_le(coeffs.alpha[i, k] * (interf + s.sigma_r2) + lin, 0.0)

            # downlink rate
            recv_k = V[k].trace_dot(Theta_t[i, k])
            cross = sum(V[l].trace_dot(Theta_t[i, k])
                        for l in range(K) if l != k)
            p.schur_lmi(recv_k * (1.0 / coeffs.theta[i, k]) - cross - s.sigma_u2,
                        sz, beta[i, k],
                        balance=(1.0 / top_est[i, k], 1.0 / beta_est[i, k]))

            # harvest
            total = recv_k + cross
            m2 = m2_est[i, k]
            bot_est = m2 / tc_est[i, k] if m2 > 0 else s.eta
            p.add_lmi([[total + s.sigma_u2, mu[i, k]],
                       [0.0, s.eta * (1.0 - beta[i, k])]],
                      balance=(1.0 / tc_est[i, k], 1.0 / bot_est))

            # energy budget with the majorized -mu^2: t stands in for 1/xi
            p.add_le(t[i, k] - 2.0 * state.mu[i, k] * mu[i, k]
                     + state.mu[i, k] ** 2 + 2.0 * s.p_c - 2.0 * s.E[i, k], 0.0)
            p.add_le(-beta[i, k], -beta_floor)

    p.minimize(sum(V[k].trace() for k in range(K))
               + sum(t[i, k] for k in range(K) for i in range(2)))
    return p


def recover(V: np.ndarray, rank_tol: float = RANK_TOL) -> RecoveredBeamformer:
    """Extract the transmit beamformer(s) from a converged covariance.

    Rank one yields (v, p); rank two yields (F = [f1 f2], p) realized with
    2x2 orthogonal space-time blocks.  Anything of higher numerical rank is
    a numerical artifact at a non-stationary point and is surfaced as
    RankViolationError rather than silently truncated.
    """
    lam, U = np.linalg.eigh(V)
    lam = np.maximum(lam[::-1], 0.0)
    U = U[:, ::-1]
    p = float(np.real(np.trace(V)))
    if lam[0] <= 0.0 or p <= 0.0:
        raise RankViolationError("covariance is numerically zero")
    r2 = float(lam[1] / lam[0])
    r3 = float(lam[2] / lam[0]) if len(lam) > 2 else 0.0
    if r2 <= rank_tol:
        return RecoveredBeamformer(kind="rank-one", p=p, v=U[:, 0],
                                   eig_ratio2=r2, eig_ratio3=r3)
    if r3 <= rank_tol:
        F = np.stack([np.sqrt(lam[0] / p) * U[:, 0],
                      np.sqrt(lam[1] / p) * U[:, 1]], axis=1)
        return RecoveredBeamformer(kind="rank-two", p=p, F=F,
                                   eig_ratio2=r2, eig_ratio3=r3)
    raise RankViolationError(f"third eigenvalue ratio {r3:.3e} above {rank_tol:.1e}")


def alamouti_blocks(symbols: np.ndarray) -> np.ndarray:
    """Group a symbol stream into 2x2 orthogonal space-time blocks.

    Block m sends (s_{2m}, s_{2m+1}) in the first symbol time and
    (-conj(s_{2m+1}), conj(s_{2m})) in the second, so B B^H =
    (|s_{2m}|^2 + |s_{2m+1}|^2) I.
    """
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.ndim != 1 or symbols.size % 2 != 0:
        raise ValueError("symbol stream must be one-dimensional with even length")
    M = symbols.size // 2
    out = np.empty((M, 2, 2), dtype=complex)
    for m in range(M):
        s1, s2 = symbols[2 * m], symbols[2 * m + 1]
        out[m] = [[s1, s2], [-np.conj(s2), np.conj(s1)]]
    return out


def _design_functionals(s: Scenario, coeffs: DerivedCoefficients,
                        beta: np.ndarray, mu: np.ndarray):
    """Linear functionals of (V_1..V_K) fixing feasibility and objective.

    Per user: the downlink-rate left side (own received power over theta
    minus cross interference) and, when harvest is needed, the total
    received power; plus the total trace.  Preserving these exactly keeps
    any (beta, mu) feasible completion valid and the objective unchanged.
    """
    K, N = s.K, s.N
    funcs = [[np.eye(N, dtype=complex) for _ in range(K)]]
    for k in range(K):
        for i in range(2):
            row = []
            for l in range(K):
                sign = 1.0 / coeffs.theta[i, k] if l == k else -1.0
                row.append(sign * coeffs.Theta[i, k])
            funcs.append(row)
            if mu[i, k] > 0.0 and beta[i, k] < 1.0:
                funcs.append([coeffs.Theta[i, k].copy() for _ in range(K)])
    return funcs


def purify_covariances(V: np.ndarray, functionals, tol: float = 1e-9) -> np.ndarray:
    """Reduce the ranks of a covariance stack along its optimal face.

    Classical semidefinite rank reduction: factor each block, find a
    Hermitian direction in the null space of the preserved functionals,
    and step to the positive semidefinite boundary, dropping total rank by
    at least one per step.  Every functional value is preserved exactly, so
    the output stays on the same optimal face of whatever program produced
    the input.
    """
    K = V.shape[0]
    L = []
    for k in range(K):
        lam, U = np.linalg.eigh(V[k])
        keep = lam > tol * max(lam.max(), 0.0)
        L.append(U[:, keep] * np.sqrt(lam[keep]))

    while True:
        ranks = [Lk.shape[1] for Lk in L]
        dim = sum(r * r for r in ranks)
        if dim == 0:
            break
        rows = []
        for row in functionals:
            coeffs_row = []
            for k in range(K):
                r = ranks[k]
                if r == 0:
                    continue
                M = L[k].conj().T @ row[k] @ L[k]
                cols = [M[i, i].real for i in range(r)]
                for i in range(r):
                    for j in range(i + 1, r):
                        cols.append(2.0 * M[i, j].real)
                        cols.append(2.0 * M[i, j].imag)
                coeffs_row.extend(cols)
            rows.append(coeffs_row)
        rows = np.asarray(rows)
        # razor-tight functionals sit many orders below the others; keeping
        # each row at unit norm keeps the null space accurate for all of them
        norms = np.linalg.norm(rows, axis=1)
        rows = rows / np.maximum(norms, 1e-300)[:, None]
        null = scipy.linalg.null_space(rows, rcond=1e-13)
        if null.shape[1] == 0:
            break
        x = null[:, 0]
        deltas = []
        pos = 0
        lam_ext = 0.0            # signed eigenvalue of largest magnitude
        for k in range(K):
            r = ranks[k]
            D = np.zeros((r, r), dtype=complex)
            for i in range(r):
                D[i, i] = x[pos]
                pos += 1
            for i in range(r):
                for j in range(i + 1, r):
                    D[i, j] = x[pos] + 1j * x[pos + 1]
                    D[j, i] = x[pos] - 1j * x[pos + 1]
                    pos += 2
            deltas.append(D)
            if r:
                lam = np.linalg.eigvalsh(D)
                cand = lam[np.argmax(np.abs(lam))]
                if abs(cand) > abs(lam_ext):
                    lam_ext = float(cand)
        if abs(lam_ext) <= 1e-12:
            break
        t = -1.0 / lam_ext       # zeroes the extreme eigenvalue, stays PSD
        newL = []
        for k in range(K):
            if ranks[k] == 0:
                newL.append(L[k])
                continue
            lam, U = np.linalg.eigh(np.eye(ranks[k]) + t * deltas[k])
            keep = lam > 1e-12
            newL.append(L[k] @ (U[:, keep] * np.sqrt(np.maximum(lam[keep], 0.0))))
        L = newL

    return np.stack([Lk @ Lk.conj().T if Lk.shape[1] else
                     np.zeros_like(V[0]) for Lk in L])


def refit_covariances(s: Scenario, coeffs: DerivedCoefficients,
                      beta: np.ndarray, mu: np.ndarray, V_prev: np.ndarray):
    """Re-solve for the covariances alone at fixed splitting ratios and
    harvest slacks.

    With (beta, mu) frozen, both downlink blocks collapse to linear trace
    inequalities, leaving a small clean semidefinite program; its solution
    sharpens the covariances to solver precision before rank recovery.
    Returns None when no usable iterate is produced.
    """
    ss = s.scale_powers(1.0 / s.sigma_r2)
    Qg, _ = channel_bases(ss)
    gt = np.einsum("nm,ikn->ikm", Qg.conj(), s.g)
    Theta_t = gt[..., :, None] * gt[..., None, :].conj()
    mu_s = mu / np.sqrt(s.sigma_r2)
    p = ConicProblem()
    V = [p.hermitian(f"V_{k}", Qg.shape[1],
                     scale=float(max(np.real(np.trace(V_prev[k])) / s.sigma_r2, 1.0)))
         for k in range(s.K)]
    for k in range(s.K):
        for i in range(2):
            recv = V[k].trace_dot(Theta_t[i, k])
            cross = sum(V[l].trace_dot(Theta_t[i, k]) for l in range(s.K) if l != k)
            need_dl = ss.sigma_u2 + ss.sigma_z2 / beta[i, k]
            p.add_le(-(recv * (1.0 / coeffs.theta[i, k]) - cross) * (1.0 / need_dl), -1.0)
            if mu_s[i, k] > 0.0 and beta[i, k] < 1.0:
                need_hv = mu_s[i, k] ** 2 / (s.eta * (1.0 - beta[i, k])) - ss.sigma_u2
                if need_hv > 0.0:
                    p.add_le(-(recv + cross) * (1.0 / need_hv), -1.0)
    p.minimize(sum(V[k].trace() for k in range(s.K)))
    sol = p.solve()
    if not sol.values or sol.primal_residual > 1e-7 or not np.isfinite(sol.objective):
        return None
    return np.stack([Qg @ sol[f"V_{k}"] @ Qg.conj().T for k in range(s.K)]) * s.sigma_r2


def polish_design(s: Scenario, coeffs: DerivedCoefficients, w: np.ndarray,
                  V: np.ndarray):
    """Turn a near-feasible design into an exactly feasible one.

    Keeps the beamformer directions: user powers are recomputed from the
    activated uplink equalities at `w`, and all covariances are lifted by
    the smallest common factor rho >= 1 for which every user's downlink-rate
    and harvest constraints admit a splitting ratio (the smallest such rho
    per user is the root of a quadratic).  Splitting ratios then route
    exactly the needed harvest to the energy branch.

    Returns (V', q, beta, mu) or None when the uplink targets are not
    supportable at `w` (the conic iterate was not close to feasible).
    """
    from .initializer import activated_inverse_powers

    xi = activated_inverse_powers(s, coeffs, w)
    if xi is None:
        return None
    q = 1.0 / xi
    m2 = np.maximum(q + 2.0 * s.p_c - 2.0 * s.E, 0.0)

    K = s.K
    recv = np.empty((2, K, K))      # recv[i, k, l] = Tr(Theta_{i,k} V_l)
    for k in range(K):
        for i in range(2):
            gik = s.g[i, k]
            recv[i, k] = [max(np.real(gik.conj() @ V[l] @ gik), 0.0)
                          for l in range(K)]
    rho = 1.0
    for k in range(K):
        for i in range(2):
            a_b = recv[i, k, k] / coeffs.theta[i, k] - (recv[i, k].sum() - recv[i, k, k])
            a_c = recv[i, k].sum()
            if a_b <= 0.0:
                return None
            # smallest rho with eta (a_b rho - sigma_z2 - sigma_u2) *
            # (a_c rho + sigma_u2) >= m2 (a_b rho - sigma_u2), written as
            # A rho^2 + B rho + C >= 0 with A > 0
            A = s.eta * a_b * a_c
            B = s.eta * (a_b * s.sigma_u2 - (s.sigma_u2 + s.sigma_z2) * a_c) \
                - m2[i, k] * a_b
            C = -s.eta * (s.sigma_u2 + s.sigma_z2) * s.sigma_u2 + m2[i, k] * s.sigma_u2
            disc = B * B - 4.0 * A * C
            root = (-B + np.sqrt(max(disc, 0.0))) / (2.0 * A)
            # also keep the rate constraint satisfiable at beta = 1
            root = max(root, (s.sigma_u2 + s.sigma_z2) / a_b)
            rho = max(rho, root)
    rho *= 1.0 + 1e-12
    Vp = V * rho
    total = recv.sum(axis=2) * rho + s.sigma_u2
    beta = 1.0 - m2 / (s.eta * total)
    return Vp, q, beta, np.sqrt(m2)


def dc_solve(s: Scenario, coeffs: DerivedCoefficients, init: InitPoint,
             opts: DcOptions | None = None):
    """Run the majorize-and-solve loop from a feasible starting point.

    Args:
        s: scenario (watt units).
        coeffs: derived coefficients for s.
        init: starting point; init.feasible must be True.
        opts: stopping rule and rank tolerance.

    Returns:
        (DesignSolution | None, SolveReport).  The objective trace is
        non-increasing; infeasibility of the first subproblem means the
        starting point was not actually feasible, and infeasibility later
        is reported as numerical-failure (the expansion point always remains
        feasible in exact arithmetic).
    """
    t0 = time.perf_counter()
    if opts is None:
        opts = DcOptions()
    if not init.feasible:
        raise ValueError("dc_solve requires a feasible starting point")

    # all conic work in noise-normalized units
    c = 1.0 / s.sigma_r2
    ss = s.scale_powers(c)
    Qg, Qh = channel_bases(ss)
    state = DcState(n=0, w=init.w0.copy(), xi=init.xi0 * s.sigma_r2,
                    mu=init.mu0 / np.sqrt(s.sigma_r2))

    trace = []
    worst_residual = 0.0
    accepted = None           # (state, sol) of the best iterate so far
    status = "max-iterations"
    for n in range(opts.max_iter):
        prob = build_p2r(ss, coeffs, state)
        sol = prob.solve()
        # a reduced-accuracy iterate is still useful to the outer loop: the
        # monotone acceptance below rejects regressions and the final design
        # is re-certified by the polish step
        usable = sol.status == "optimal" or (
            sol.status != "infeasible" and sol.values
            and np.isfinite(sol.objective) and sol.primal_residual <= 1e-6)
        if not usable:
            if sol.status == "infeasible" and n == 0:
                report = SolveReport(status="infeasible", iterations=0,
                                     wall_time=time.perf_counter() - t0)
                return None, report
            # the expansion point stays feasible in exact arithmetic, so a
            # failure here is numerical; fall back to the accepted iterate
            status = "numerical-failure"
            break
        worst_residual = max(worst_residual, sol.primal_residual)
        obj = sol.objective * s.sigma_r2
        if trace and obj > trace[-1]:
            # the exact subproblem optimum cannot exceed the previous
            # objective (the previous point stays feasible); an uptick is
            # solver noise, so keep the previous iterate and stop
            status = "optimal"
            break
        trace.append(obj)
        state = DcState(
            n=n + 1,
            w=np.stack([Qh @ sol[f"w_{k}"] for k in range(s.K)]),
            xi=np.array([[sol[f"xi_{i}_{k}"] for k in range(s.K)] for i in range(2)]),
            mu=np.array([[sol[f"mu_{i}_{k}"] for k in range(s.K)] for i in range(2)]),
            V=np.stack([Qg @ sol[f"V_{k}"] @ Qg.conj().T for k in range(s.K)]),
            objective=obj,
        )
        accepted = (state, sol)
        if n > 0 and trace[-2] - trace[-1] < opts.rel_tol * abs(trace[-2]):
            status = "optimal"
            break

    if accepted is None:
        report = SolveReport(status=status, iterations=len(trace),
                             objective_trace=trace,
                             wall_time=time.perf_counter() - t0)
        return None, report
    state, last = accepted

    w = state.w.copy()
    norms = np.linalg.norm(w, axis=1)
    if np.any(norms < 1.0 - 1e-7):
        warnings.warn(f"receive beamformer norm {norms.min():.9f} below 1 at "
                      "convergence; renormalizing")
    w /= norms[:, None]

    V = np.stack([Qg @ last[f"V_{k}"] @ Qg.conj().T for k in range(s.K)]) * s.sigma_r2
    # sharpen the covariances at the converged operating point: re-solve the
    # now-linear covariance subproblem, then walk to an extreme point of its
    # optimal face so the rank structure is exact rather than noise-limited
    beta_last = np.clip(
        np.array([[last[f"beta_{i}_{k}"] for k in range(s.K)] for i in range(2)]),
        BETA_FLOOR, 1.0)
    mu_watt = state.mu * np.sqrt(s.sigma_r2)
    refit = refit_covariances(s, coeffs, beta_last, mu_watt, V)
    if refit is not None:
        tr_ref = sum(np.real(np.trace(refit[k])) for k in range(s.K))
        tr_old = sum(np.real(np.trace(V[k])) for k in range(s.K))
        if tr_ref <= tr_old * (1.0 + 1e-6):
            V = refit
    pure = purify_covariances(V, _design_functionals(s, coeffs, beta_last, mu_watt))

    # absorb the conic solver's feasibility slack: exact uplink powers at w
    # and the minimal covariance lift restoring downlink + harvest.  The
    # polish runs twice: once on the sharpened covariances and once more on
    # the rank-recovered ones, so the design actually transmitted (rank one
    # or two per pair) is the certified one.  A purified stack can leave a
    # razor-thin downlink margin a hair negative; blending back a vanishing
    # share of the unpurified covariances restores its sign at negligible
    # rank cost
    outcome = None
    rank_error = None
    for mix in (0.0, 1e-6, 1e-4, 1e-2, 1.0):
        cand = (1.0 - mix) * pure + mix * V
        polished = polish_design(s, coeffs, w, cand)
        if polished is None:
            continue
        try:
            interim = [recover(polished[0][k], opts.rank_tol) for k in range(s.K)]
        except RankViolationError as err:
            rank_error = err
            continue
        final = polish_design(s, coeffs, w,
                              np.stack([r.covariance() for r in interim]))
        if final is None:
            continue
        outcome = final
        break
    if outcome is None:
        if rank_error is not None:
            raise rank_error
        report = SolveReport(status="numerical-failure", iterations=len(trace),
                             objective_trace=trace, residual=worst_residual,
                             wall_time=time.perf_counter() - t0)
        return None, report
    V, q, beta, mu = outcome
    recovered = [recover(V[k], opts.rank_tol) for k in range(s.K)]
    objective = float(sum(np.real(np.trace(V[k])) for k in range(s.K)) + q.sum())
    solution = DesignSolution(w=w, V=V, recovered=recovered, q=q, beta=beta,
                              mu=mu, objective=objective)
    report = SolveReport(status=status, iterations=len(trace),
                         objective_trace=trace, residual=worst_residual,
                         wall_time=time.perf_counter() - t0)
    return solution, report


def write_trace_csv(report: SolveReport, path):
    """Per-iteration trace as CSV: n, objective_W, objective_dBm, max_residual."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["n", "objective_W", "objective_dBm", "max_residual"])
        for n, obj in enumerate(report.objective_trace):
            writer.writerow([n + 1, f"{obj:.12g}",
                             f"{10.0 * np.log10(obj) + 30.0:.9g}",
                             f"{report.residual:.3e}"])
