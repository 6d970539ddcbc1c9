"""Feasible starting points for the iterative multi-pair solver.

Two routes.  The conic-program-free route alternates two closed-form
block updates on a max-min feasibility surrogate: receive beamformers from
a three-candidate line search inside a whitened two-channel span, and
inverse user powers from the Perron eigenvector of an extended gain matrix
under a total power budget.  The fallback fixes the beamformers by pairwise
zero forcing, which kills inter-pair interference exactly whenever the
relay has enough antennas (N >= 2K - 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import DerivedCoefficients, Scenario

# budget multiplier: the surrogate's power cap only has to be generous
# enough that the max-min ratio can cross 1 whenever geometry allows
BUDGET_FACTOR = 1000.0


@dataclass
class InitPoint:
    """Starting point {w0, xi0, mu0} plus the achieved feasibility ratio."""

    w0: np.ndarray            # (K, N) unit receive beamformers
    xi0: np.ndarray           # (2, K) inverse user powers, 1/W
    mu0: np.ndarray           # (2, K) harvest slack, sqrt(W)
    feasible: bool
    ratio: float              # min over users of the feasibility ratio
    trace: list = field(default_factory=list)   # ratio after each half-update


def feasibility_ratio(s: Scenario, coeffs: DerivedCoefficients,
                      w: np.ndarray, xi: np.ndarray) -> float:
    """Worst-user ratio of uplink signal to required interference-plus-noise.

    A point {w, xi} satisfies the uplink constraints of the power
    minimization problem iff this ratio is >= 1.
    """
    ratios = np.empty((2, s.K))
    gains = np.empty((2, s.K, s.K))     # gains[j, l, k] = |w_k^H h_{j,l}|^2
    for k in range(s.K):
        gains[:, :, k] = np.abs(s.h.conj() @ w[k]) ** 2
    for k in range(s.K):
        interf = 0.0
        for l in range(s.K):
            if l == k:
                continue
            interf += np.sum(gains[:, l, k] / xi[:, l])
        for i in range(2):
            num = gains[i, k, k] / xi[i, k]
            ratios[i, k] = num / (coeffs.alpha[i, k] * (interf + s.sigma_r2))
    return float(ratios.min())


def _inv_sqrt(J: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh(J)
    return (U / np.sqrt(lam)) @ U.conj().T


def maxmin_w_update(s: Scenario, coeffs: DerivedCoefficients,
                    xi: np.ndarray) -> np.ndarray:
    """Per-pair receive beamformers maximizing the worst in-pair ratio.

    For pair k the problem whitens by J_k = sum over other pairs of
    h h^H / xi + sigma_r^2 I, reducing to max_u min_i |e_i^H u| on the unit
    sphere with e_i the whitened own channels.  The maximizer lies on a
    one-parameter arc; its optimum is one of at most three candidates
    (the endpoint a = 1, the single-term stationary point, and the
    intersection of the two arc envelopes).
    """
    K, N = s.K, s.N
    w = np.empty((K, N), dtype=complex)
    for k in range(K):
        J = s.sigma_r2 * np.eye(N, dtype=complex)
        for l in range(K):
            if l == k:
                continue
            for j in range(2):
                J += np.outer(s.h[j, l], s.h[j, l].conj()) / xi[j, l]
        Jinv_half = _inv_sqrt(J)
        e1 = Jinv_half @ s.h[0, k] / np.sqrt(coeffs.alpha[0, k] * xi[0, k])
        e2 = Jinv_half @ s.h[1, k] / np.sqrt(coeffs.alpha[1, k] * xi[1, k])
        n1 = np.linalg.norm(e1)
        cross = e2.conj() @ e1                       # e2^H e1
        eb = e2 - (e1.conj() @ e2) / n1**2 * e1
        nb = np.linalg.norm(eb)

        def arc_value(a):
            a = min(max(a, 0.0), 1.0)
            first = np.sqrt(a) * n1
            second = np.sqrt(a) * abs(cross) / n1 + np.sqrt(1.0 - a) * nb
            return min(first, second)

        candidates = [1.0]
        n2 = np.linalg.norm(e2)
        candidates.append(abs(cross) ** 2 / (n1**2 * n2**2))
        if n1 >= abs(cross) / n1:
            d = n1 - abs(cross) / n1
            candidates.append(nb**2 / (d**2 + nb**2))
        best = max(candidates, key=arc_value)

        if nb < 1e-12 * n2 or best >= 1.0 - 1e-15:
            u = e1 / n1
        else:
            phase = np.exp(1j * np.angle(cross))
            u = np.sqrt(best) * e1 / n1 + np.sqrt(1.0 - best) * phase * eb / nb
        wk = Jinv_half @ u
        w[k] = wk / np.linalg.norm(wk)
    return w


def _gain_matrices(s: Scenario, coeffs: DerivedCoefficients, w: np.ndarray):
    """Signal matrix D (diagonal) and cross-talk matrix R, user order 2k + i.

    D[m, m] = alpha_{i,k} / |w_k^H h_{i,k}|^2 and R[2l + j, 2k + i] =
    |w_k^H h_{j,l}|^2 for l != k (zero inside the own pair).
    """
    K = s.K
    n = 2 * K
    gains = np.empty((n, K))
    for k in range(K):
        gains[:, k] = (np.abs(s.h.conj() @ w[k]) ** 2).T.reshape(-1)
    sig = np.array([gains[2 * k + i, k] for k in range(K) for i in range(2)])
    if np.any(sig <= 0.0):
        raise ValueError("receive beamformer orthogonal to an own channel")
    alpha = coeffs.alpha.T.reshape(-1)
    D = np.diag(alpha / sig)
    R = np.zeros((n, n))
    for k in range(K):
        for i in range(2):
            col = gains[:, k].copy()
            col[2 * k:2 * k + 2] = 0.0
            R[:, 2 * k + i] = col
    return D, R


def xi_update(s: Scenario, coeffs: DerivedCoefficients, w: np.ndarray,
              P: float) -> np.ndarray:
    """Inverse powers maximizing the worst-user ratio under sum power P.

    The optimal [1/xi, 1] is the dominant eigenvector of the nonnegative
    extended matrix [[D R^T, sigma_r^2 D 1], [1^T D R^T / P,
    sigma_r^2 1^T D 1 / P]]; at that point every user's ratio equals the
    inverse Perron eigenvalue and the budget holds with equality.  Computed
    by power iteration (Perron eigenpair of a nonnegative matrix).
    """
    n = 2 * s.K
    D, R = _gain_matrices(s, coeffs, w)
    one = np.ones((n, 1))
    top = np.hstack([D @ R.T, s.sigma_r2 * (D @ one)])
    bottom = np.hstack([(one.T @ D @ R.T) / P,
                        [[s.sigma_r2 * float(one.T @ D @ one) / P]]])
    F = np.vstack([top, bottom])

    v = np.full(n + 1, 1.0 / (n + 1))
    for _ in range(100000):
        nv = F @ v
        nv /= np.linalg.norm(nv)
        if np.linalg.norm(nv - v) <= 1e-12 * np.linalg.norm(v):
            v = nv
            break
        v = nv
    if v[-1] <= 0.0:
        v = -v
    x = v[:n] / v[-1]
    if np.any(x <= 0.0):
        raise ValueError("Perron vector has non-positive entries")
    return (1.0 / x).reshape(s.K, 2).T


def activated_inverse_powers(s: Scenario, coeffs: DerivedCoefficients,
                             w: np.ndarray) -> np.ndarray | None:
    """Inverse powers putting every uplink constraint exactly at equality.

    Solves (I - D R^T) x = sigma_r^2 D 1 for the power vector x = 1/xi;
    returns None when the system has no positive solution (targets not
    jointly supportable at these beamformers).
    """
    n = 2 * s.K
    D, R = _gain_matrices(s, coeffs, w)
    try:
        x = scipy.linalg.solve(np.eye(n) - D @ R.T, s.sigma_r2 * (D @ np.ones(n)))
    except scipy.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        return None
    return (1.0 / x).reshape(s.K, 2).T


def harvest_slack(s: Scenario, xi: np.ndarray) -> np.ndarray:
    """mu0 = sqrt((1/xi + 2 p_c - 2 E)^+), the needed harvest per user."""
    return np.sqrt(np.maximum(1.0 / xi + 2.0 * s.p_c - 2.0 * s.E, 0.0))


def default_budget(s: Scenario, coeffs: DerivedCoefficients) -> float:
    """Power budget for the feasibility surrogate: generous but finite."""
    mean_gain = float(np.mean(np.linalg.norm(s.h, axis=-1) ** 2))
    return BUDGET_FACTOR * s.K * s.sigma_r2 * float(coeffs.alpha.mean()) / mean_gain


def cp_free_initialize(s: Scenario, coeffs: DerivedCoefficients,
                       P: float | None = None, max_alt: int = 30,
                       restarts: int = 5, seed: int = 0) -> InitPoint:
    """Find a feasible {w0, xi0, mu0} by alternating closed-form updates.

    Alternates beamformer and inverse-power updates until the worst-user
    ratio reaches 1 (each update is the exact maximizer of its block, so the
    ratio is non-decreasing along the way).  On success the inverse powers
    are recomputed from the activated uplink equalities, which yields the
    minimal powers supporting the targets at the found beamformers.
    Feasibility is not guaranteed; after `restarts` random power seeds the
    point is returned with feasible=False.
    """
    if P is None:
        P = default_budget(s, coeffs)
    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(max(restarts, 1)):
        if attempt == 0:
            x = np.full(2 * s.K, P / (2 * s.K))
        else:
            u = rng.uniform(0.1, 1.0, size=2 * s.K)
            x = P * u / u.sum()
        xi = (1.0 / x).reshape(s.K, 2).T
        w = maxmin_w_update(s, coeffs, xi)
        ratio = feasibility_ratio(s, coeffs, w, xi)
        trace = [ratio]
        for _ in range(max_alt):
            if ratio >= 1.0:
                break
            xi = xi_update(s, coeffs, w, P)
            ratio = feasibility_ratio(s, coeffs, w, xi)
            trace.append(ratio)
            if ratio >= 1.0:
                break
            w = maxmin_w_update(s, coeffs, xi)
            ratio = feasibility_ratio(s, coeffs, w, xi)
            trace.append(ratio)
        if ratio >= 1.0:
            xi0 = activated_inverse_powers(s, coeffs, w)
            if xi0 is None:
                xi0 = xi
            return InitPoint(w0=w, xi0=xi0, mu0=harvest_slack(s, xi0),
                             feasible=True,
                             ratio=feasibility_ratio(s, coeffs, w, xi0),
                             trace=trace)
        if best is None or ratio > best.ratio:
            best = InitPoint(w0=w, xi0=xi, mu0=harvest_slack(s, xi),
                             feasible=False, ratio=ratio, trace=trace)
    return best


def zf_initialize(s: Scenario, coeffs: DerivedCoefficients) -> InitPoint:
    """Pairwise zero-forcing start: null all other pairs' uplink channels.

    Requires N >= 2K - 1 so each pair has a nontrivial null space left.
    The in-pair combining direction is the dominant left singular vector of
    the pair's projected channel matrix, which captures the most own-pair
    signal inside the interference-free subspace.
    """
    K, N = s.K, s.N
    if N < 2 * K - 1:
        raise ValueError(f"pairwise zero forcing needs N >= 2K - 1 (N={N}, K={K})")
    w = np.empty((K, N), dtype=complex)
    for k in range(K):
        others = [s.h[j, l] for l in range(K) if l != k for j in range(2)]
        if others:
            B = np.stack(others, axis=1)
            Qb, _ = np.linalg.qr(B)
            proj = lambda v: v - Qb @ (Qb.conj().T @ v)
        else:
            proj = lambda v: v
        M = np.stack([proj(s.h[0, k]), proj(s.h[1, k])], axis=1)
        U, sv, _ = np.linalg.svd(M, full_matrices=False)
        if sv[0] <= 1e-12 * np.linalg.norm(s.h[:, k, :]):
            return InitPoint(w0=w, xi0=np.ones((2, K)), mu0=np.zeros((2, K)),
                             feasible=False, ratio=0.0)
        w[k] = U[:, 0]
    sig = np.array([[np.abs(w[k].conj() @ s.h[i, k]) ** 2 for k in range(K)]
                    for i in range(2)])
    if np.any(sig <= 0.0):
        return InitPoint(w0=w, xi0=np.ones((2, K)), mu0=np.zeros((2, K)),
                         feasible=False, ratio=0.0)
    xi0 = sig / (coeffs.alpha * s.sigma_r2)
    return InitPoint(w0=w, xi0=xi0, mu0=harvest_slack(s, xi0), feasible=True,
                     ratio=feasibility_ratio(s, coeffs, w, xi0))
