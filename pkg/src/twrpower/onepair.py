"""Globally optimal design for a single user pair (three-node relay).

With one pair there is no inter-pair interference, the user powers collapse
to q_i = alpha_i sigma_r^2 / |w^H h_i|^2, and the receive beamformer can be
parameterized by a single scalar gamma in [0, 1] inside span{h_1, h_2};
likewise the transmit covariance lives in span{g_1, g_2} and reduces to a
2x2 PSD matrix A through V = G A G^H with G = [g_1 g_2].  A 1-D search over
gamma with one small SDP per point, followed by a rank-one extraction of A,
yields the global optimum.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .conic import ConicProblem
from .model import (DerivedCoefficients, DesignSolution, RecoveredBeamformer,
                    Scenario, SolveReport, derive_coefficients,
                    min_received_power)

GAMMA_GRID = 101          # coarse grid points on [0, 1]
GAMMA_RESOLUTION = 1e-4   # golden-section refinement width
RANK_TOL = 1e-6


class RankReductionError(RuntimeError):
    """No rank-one matrix preserving the constraint values was found."""


@dataclass
class GammaPoint:
    """Solution of the reduced 2x2 SDP at one fixed gamma (watt units)."""

    gamma: float
    w: np.ndarray          # unit receive beamformer
    A: np.ndarray          # 2x2 Hermitian PSD, V = G A G^H
    beta: np.ndarray       # (2,) splitting ratios from the SDP
    mu: np.ndarray         # (2,)
    objective: float       # Tr(G^H G A) + uplink power term, W
    uplink_term: float     # sum_i alpha_i sigma_r^2 / |w^H h_i|^2, W


def _span_basis(s: Scenario) -> np.ndarray:
    """Orthonormal N x 2 basis of span{g1, g2} (V = Q A Q^H, p = Tr(A))."""
    G = np.stack([s.g[0, 0], s.g[1, 0]], axis=1)
    Q, _ = np.linalg.qr(G)
    return Q


def w_of_gamma(gamma: float, h1: np.ndarray, h2: np.ndarray):
    """Receive beamformer on the gamma-parameterized arc inside span{h1, h2}.

    w = sqrt(gamma) h1/||h1|| + sqrt(1-gamma) e^{j angle(h2^H h1)} hb/||hb||
    with hb the component of h2 orthogonal to h1; the phase factor makes the
    two contributions to w^H h2 add constructively, and orthogonality gives
    ||w|| = 1 exactly and |w^H h1|^2 = gamma ||h1||^2.

    Returns (w, degenerate); for collinear channels (||hb|| below
    1e-12 ||h2||) the matched filter h1/||h1|| is returned for every gamma
    and the degenerate flag is set.
    """
    n1 = np.linalg.norm(h1)
    if n1 == 0.0:
        raise ValueError("h1 must be nonzero")
    u1 = h1 / n1
    hb = h2 - (h1.conj() @ h2) / n1**2 * h1
    nb = np.linalg.norm(hb)
    if nb < 1e-12 * np.linalg.norm(h2):
        return u1, True
    phase = np.exp(1j * np.angle(h2.conj() @ h1))
    w = np.sqrt(gamma) * u1 + np.sqrt(1.0 - gamma) * phase * hb / nb
    return w, False


def required_received_power(s: Scenario, theta_i: float, m2_i: float,
                            fixed_beta: float | None = None) -> float:
    """Minimum Tr(Theta V) admitting a feasible (beta, mu) pair for one user.

    The downlink-rate and harvest constraints of a user are jointly feasible
    for some splitting ratio iff the received signal power reaches this
    threshold: the harvest margin at the smallest rate-feasible ratio grows
    monotonically with received power, so the pair of 2x2 blocks collapses
    to a single scalar bound.  `m2_i` is the needed harvest [q + 2 p_c -
    2 E]^+ in the same power units as the scenario.  Returns inf when no
    splitting ratio works (only possible with beta pinned to 1 while
    harvest is needed).
    """
    if fixed_beta is None:
        r, _ = min_received_power(theta_i, m2_i, s.sigma_u2, s.sigma_z2, s.eta)
        return r
    rate_need = theta_i * (s.sigma_u2 + s.sigma_z2 / fixed_beta)
    if m2_i <= 0.0:
        return rate_need
    if fixed_beta >= 1.0:
        return np.inf
    return max(rate_need, m2_i / (s.eta * (1.0 - fixed_beta)) - s.sigma_u2)


def solve_p4_fixed_gamma(s: Scenario, coeffs: DerivedCoefficients,
                         gamma: float, fixed_beta: float | None = None):
    """Solve the reduced 2x2 SDP at a fixed gamma; returns a GammaPoint or None.

    The splitting ratios and harvest slacks are eliminated exactly: per user
    they admit a feasible choice iff Tr(C_i A) meets the closed-form
    threshold of required_received_power, so the program solved here is
    min Tr(A) s.t. Tr(C_i A) >= r_i, A >= 0.  (The printed block form with
    (beta, mu) as variables is equivalent but places beta on a razor edge
    ~ sigma_z^2 / received_power, which is unresolvable in double precision
    once harvesting forces the received power far above the noise floor.)
    (beta, mu) are recovered afterwards: mu_i carries exactly the needed
    harvest and beta_i routes the rest to the decoder.

    None signals an infeasible or degenerate point (e.g. the beamformer is
    orthogonal to one uplink channel, making that user's power unbounded).
    """
    if s.K != 1:
        raise ValueError("one-pair solver requires K = 1")
    h1, h2 = s.h[0, 0], s.h[1, 0]
    w, _ = w_of_gamma(gamma, h1, h2)
    sig = np.array([np.abs(w.conj() @ h1) ** 2, np.abs(w.conj() @ h2) ** 2])
    if np.any(sig <= 1e-14 * np.array([h1.conj() @ h1, h2.conj() @ h2]).real):
        return None

    alpha = coeffs.alpha[:, 0]
    theta = coeffs.theta[:, 0]
    q = alpha * s.sigma_r2 / sig          # activated uplink powers, W
    uplink_term = float(q.sum())

    # powers in units of sigma_r2; the transmit covariance parameterized
    # over an orthonormal basis of span{g1, g2} (an invertible congruence of
    # the [g1 g2] parameterization, so the feasible set and optimum are
    # unchanged while the 2x2 variable keeps power-like magnitudes)
    c = 1.0 / s.sigma_r2
    ss = s.scale_powers(c)
    Q = _span_basis(s)
    Qg = Q.conj().T @ s.g[:, 0, :].T       # columns Q^H g_i
    C = [np.outer(Qg[:, i], Qg[:, i].conj()) for i in range(2)]
    m2 = np.maximum(q * c + 2.0 * ss.p_c - 2.0 * ss.E[:, 0], 0.0)
    r_req = np.array([required_received_power(ss, theta[i], m2[i], fixed_beta)
                      for i in range(2)])
    if not np.all(np.isfinite(r_req)):
        return None

    p = ConicProblem()
    A = p.hermitian("A", 2,
                    scale=float(np.max(r_req / np.array([Ci.trace().real for Ci in C]))))
    for i in range(2):
        p.add_le(-A.trace_dot(C[i]) * (1.0 / r_req[i]), -1.0)
    p.minimize(A.trace())
    sol = p.solve()
    if sol.status != "optimal":
        return None

    A_opt = sol["A"]
    recv = np.array([np.real(np.trace(Ci @ A_opt)) for Ci in C])
    if fixed_beta is not None:
        beta = np.full(2, float(fixed_beta))
    else:
        beta = 1.0 - m2 / (ss.eta * (recv + ss.sigma_u2))
    return GammaPoint(
        gamma=gamma,
        w=w,
        A=A_opt * s.sigma_r2,
        beta=beta,
        mu=np.sqrt(m2) * np.sqrt(s.sigma_r2),
        objective=sol.objective * s.sigma_r2 + uplink_term,
        uplink_term=uplink_term,
    )


def rank_one_extract(A: np.ndarray, constraints: list[np.ndarray],
                     tol: float = RANK_TOL) -> np.ndarray:
    """Rank-one PSD matrix preserving Tr(C A) for every C in `constraints`.

    If A is already numerically rank one its principal eigenpair is
    returned.  Otherwise one rank-reduction step is taken: a Hermitian
    direction in the null space of the constraint traces is followed until
    the PSD boundary, which for a 2x2 matrix lands on a rank-one point.
    """
    lam, U = np.linalg.eigh(A)
    lam = np.maximum(lam, 0.0)
    if lam[1] <= 0.0:
        raise RankReductionError("matrix is numerically zero")
    if lam[0] <= tol * lam[1]:
        return lam[1] * np.outer(U[:, 1], U[:, 1].conj())

    # Hermitian delta parameterized by (d00, d11, Re d01, Im d01)
    rows = [[Cm[0, 0].real, Cm[1, 1].real, 2.0 * Cm[0, 1].real, 2.0 * Cm[0, 1].imag]
            for Cm in constraints]
    null = scipy.linalg.null_space(np.asarray(rows), rcond=1e-10)
    if null.shape[1] == 0:
        raise RankReductionError("constraint null space is empty")
    x = null[:, 0]
    D = np.array([[x[0], x[2] + 1j * x[3]], [x[2] - 1j * x[3], x[1]]])

    # det(A + t D) = a t^2 + b t + c
    a = (D[0, 0] * D[1, 1]).real - abs(D[0, 1]) ** 2
    b = (A[0, 0] * D[1, 1] + A[1, 1] * D[0, 0]).real \
        - 2.0 * (A[0, 1].conjugate() * D[0, 1]).real
    cdet = (A[0, 0] * A[1, 1]).real - abs(A[0, 1]) ** 2
    if abs(a) > 1e-300:
        disc = b * b - 4.0 * a * cdet
        if disc < 0.0:
            raise RankReductionError("no real PSD-boundary crossing")
        roots = [(-b + np.sqrt(disc)) / (2.0 * a), (-b - np.sqrt(disc)) / (2.0 * a)]
    elif abs(b) > 1e-300:
        roots = [-cdet / b]
    else:
        raise RankReductionError("degenerate reduction direction")

    scale = lam[1]
    for t in sorted(roots, key=abs):
        cand = A + t * D
        lc, Uc = np.linalg.eigh(cand)
        if lc[0] < -1e-9 * scale or lc[1] <= 0.0:
            continue
        return max(lc[1], 0.0) * np.outer(Uc[:, 1], Uc[:, 1].conj())
    raise RankReductionError("no PSD rank-one point on the reduction line")


def _golden_section(f, lo: float, hi: float, width: float):
    """Golden-section minimization of f on [lo, hi]; f may return inf."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > width:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)


def solve_onepair(s: Scenario, coeffs: DerivedCoefficients | None = None,
                  fixed_beta: float | None = None):
    """Global optimum for K = 1: grid over gamma, golden-section refinement,
    rank-one recovery.

    Args:
        s: scenario with K = 1.
        coeffs: derived coefficients (computed if omitted).
        fixed_beta: pin both splitting ratios to this value (baseline mode).

    Returns:
        (DesignSolution | None, SolveReport); the solution is None when every
        gamma is infeasible.
    """
    t0 = time.perf_counter()
    if s.K != 1:
        raise ValueError("one-pair solver requires K = 1")
    if coeffs is None:
        coeffs = derive_coefficients(s)

    _, degenerate = w_of_gamma(0.5, s.h[0, 0], s.h[1, 0])
    evaluated: dict[float, GammaPoint | None] = {}

    def evaluate(gamma: float) -> float:
        gamma = float(np.clip(gamma, 0.0, 1.0))
        if gamma not in evaluated:
            evaluated[gamma] = solve_p4_fixed_gamma(s, coeffs, gamma, fixed_beta)
        pt = evaluated[gamma]
        return pt.objective if pt is not None else np.inf

    if degenerate:
        evaluate(1.0)
    else:
        grid = np.linspace(0.0, 1.0, GAMMA_GRID)
        objs = np.array([evaluate(g) for g in grid])
        if np.all(np.isinf(objs)):
            return None, SolveReport(status="infeasible", iterations=len(evaluated),
                                     wall_time=time.perf_counter() - t0)
        best = int(np.argmin(objs))
        step = grid[1] - grid[0]
        _golden_section(evaluate,
                        max(0.0, grid[best] - step), min(1.0, grid[best] + step),
                        GAMMA_RESOLUTION)

    feasible = {g: pt for g, pt in evaluated.items() if pt is not None}
    if not feasible:
        return None, SolveReport(status="infeasible", iterations=len(evaluated),
                                 wall_time=time.perf_counter() - t0)
    gamma_star = min(feasible, key=lambda g: (feasible[g].objective, g))
    point = feasible[gamma_star]

    Q = _span_basis(s)
    Qg = Q.conj().T @ s.g[:, 0, :].T
    C = [np.outer(Qg[:, i], Qg[:, i].conj()) for i in range(2)]
    A_hat = rank_one_extract(point.A, C + [np.eye(2, dtype=complex)])

    sig = np.array([np.abs(point.w.conj() @ s.h[i, 0]) ** 2 for i in range(2)])
    q = coeffs.alpha[:, 0] * s.sigma_r2 / sig
    m2 = np.maximum(q + 2.0 * s.p_c - 2.0 * s.E[:, 0], 0.0)

    # absorb the conic solver's feasibility slack: lift A just enough that
    # every user's received power reaches its exact threshold
    recv = np.array([np.real(np.trace(Ci @ A_hat)) for Ci in C])
    r_req = np.array([required_received_power(s, coeffs.theta[i, 0], m2[i], fixed_beta)
                      for i in range(2)])
    lift = max(1.0, float(np.max(r_req / recv)))
    A_hat = A_hat * lift
    recv = recv * lift

    lam, U = np.linalg.eigh(A_hat)
    avec = np.sqrt(max(lam[1], 0.0)) * U[:, 1]
    Gv = Q @ avec
    p_k = float(np.real(Gv.conj() @ Gv))
    v = Gv / np.linalg.norm(Gv)
    V = np.outer(Gv, Gv.conj())

    if fixed_beta is not None:
        beta = np.full(2, float(fixed_beta))
    else:
        # route exactly the needed harvest to the energy branch
        beta = 1.0 - m2 / (s.eta * (recv + s.sigma_u2))
    mu = np.sqrt(m2)

    objective = p_k + float(q.sum())
    solution = DesignSolution(
        w=point.w[None, :],
        V=V[None, :, :],
        recovered=[RecoveredBeamformer(kind="rank-one", p=p_k, v=v,
                                       eig_ratio2=float(lam[0] / max(lam[1], 1e-300)))],
        q=q[:, None],
        beta=beta[:, None],
        mu=mu[:, None],
        objective=objective,
    )
    report = SolveReport(status="optimal", iterations=len(evaluated),
                         objective_trace=[objective],
                         wall_time=time.perf_counter() - t0)
    return solution, report
