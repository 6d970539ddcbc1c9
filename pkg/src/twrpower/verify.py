"""Independent feasibility and optimality-signature checks.

This module is the trust anchor for every solver in the package: it
consumes only a Scenario and a DesignSolution and re-evaluates the original
design constraints with the shared model formulas.  It never calls solver
code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import (DesignSolution, Scenario, downlink_sinr_rate,
                    harvested_power, uplink_sinr)


@dataclass
class FeasibilityReport:
    """Worst normalized violation per constraint family."""

    residuals: dict = field(default_factory=dict)
    passed: bool = False
    tolerance: float = 0.0

    def worst(self) -> float:
        return max(self.residuals.values(), default=np.inf)

    def to_json(self) -> str:
        return json.dumps({"passed": bool(self.passed),
                           "tolerance": self.tolerance,
                           "residuals": {k: float(v) for k, v in self.residuals.items()}},
                          indent=1)


def _uplink_lhs(s: Scenario, q, w, i, k):
    """Left side of the uplink rate constraint in its two-term form."""
    wk = w[k]
    s1 = q[0, k] * np.abs(wk.conj() @ s.h[0, k]) ** 2
    s2 = q[1, k] * np.abs(wk.conj() @ s.h[1, k]) ** 2
    own = s1 if i == 0 else s2
    return own / (s1 + s2) + uplink_sinr(s, q, w, i, k)


def check_p1(s: Scenario, sol: DesignSolution, tol: float = 1e-6) -> FeasibilityReport:
    """Evaluate all original design constraints on a recovered solution.

    Residuals are violations normalized by each constraint's right-hand
    side, so one tolerance covers rate-scale and watt-scale families.  The
    downlink and harvest families are evaluated on the recovered (rank-one
    or rank-two) covariances, which is what the relay actually transmits.
    """
    V = sol.pair_covariances()
    res = {"uplink_rate": 0.0, "downlink_rate": 0.0, "harvest": 0.0,
           "norms": 0.0, "ranges": 0.0}
    for k in range(s.K):
        for i in range(2):
            target = 2.0 ** (2.0 * s.Rbar[i, k])
            lhs = _uplink_lhs(s, sol.q, sol.w, i, k)
            res["uplink_rate"] = max(res["uplink_rate"], (target - lhs) / target)

            dl_target = 2.0 ** (2.0 * s.Rbar[1 - i, k])
            sinr, _ = downlink_sinr_rate(s, V, sol.beta, i, k)
            res["downlink_rate"] = max(res["downlink_rate"],
                                       (dl_target - (1.0 + sinr)) / dl_target)

            harvested = harvested_power(s, V, sol.beta, i, k)
            supply = harvested + 2.0 * s.E[i, k] - 2.0 * s.p_c
            res["harvest"] = max(res["harvest"],
                                 (sol.q[i, k] - supply) / max(sol.q[i, k], 1e-15))

            res["ranges"] = max(res["ranges"], -sol.q[i, k],
                                sol.beta[i, k] - 1.0, -sol.beta[i, k])

    for k in range(s.K):
        res["norms"] = max(res["norms"], abs(np.linalg.norm(sol.w[k]) - 1.0))
        r = sol.recovered[k]
        if r.kind == "rank-one":
            res["norms"] = max(res["norms"], abs(np.linalg.norm(r.v) - 1.0))
        else:
            res["norms"] = max(res["norms"], abs(np.linalg.norm(r.F) - 1.0))
        res["ranges"] = max(res["ranges"], -r.p)
        lam_min = float(np.linalg.eigvalsh(V[k]).min())
        res["norms"] = max(res["norms"], -lam_min / max(r.p, 1e-15))

    res = {k: float(max(v, 0.0)) for k, v in res.items()}
    return FeasibilityReport(residuals=res,
                             passed=all(v <= tol for v in res.values()),
                             tolerance=tol)


def property1_residual(s: Scenario, sol: DesignSolution) -> np.ndarray:
    """Distance from the balanced in-pair power ratio at a stationary point.

    Any stationary design splits the in-pair received powers proportionally
    to 2^(2 Rbar); returns |achieved share - target share| per user.
    """
    out = np.empty((2, s.K))
    T = 2.0 ** (2.0 * s.Rbar)
    for k in range(s.K):
        wk = sol.w[k]
        sig = np.array([sol.q[i, k] * np.abs(wk.conj() @ s.h[i, k]) ** 2
                        for i in range(2)])
        for i in range(2):
            out[i, k] = abs(sig[i] / sig.sum() - T[i, k] / (T[0, k] + T[1, k]))
    return out


def local_optimality_probe(s: Scenario, sol: DesignSolution,
                           n_trials: int = 200, step: float = 1e-3,
                           seed: int = 0, tol: float = 1e-6) -> bool:
    """Empirical stationarity smoke test, not a certificate.

    Perturbs the design in random directions, projects crudely back to
    feasibility (renormalize beamformers, clamp splitting ratios, rescale
    user powers up to the uplink requirement), and fails if any feasible
    perturbation improves the objective beyond second-order noise.
    """
    rng = np.random.default_rng(seed)
    base = sol.objective
    margin = step ** 2 * base

    for _ in range(n_trials):
        w = sol.w + step * (rng.standard_normal(sol.w.shape)
                            + 1j * rng.standard_normal(sol.w.shape))
        w /= np.linalg.norm(w, axis=1)[:, None]
        recovered = []
        ok = True
        for r in sol.recovered:
            p_new = max(r.p * (1.0 + step * rng.standard_normal()), 0.0)
            if r.kind == "rank-one":
                v = r.v + step * (rng.standard_normal(s.N) + 1j * rng.standard_normal(s.N))
                v /= np.linalg.norm(v)
                recovered.append(type(r)(kind="rank-one", p=p_new, v=v))
            else:
                F = r.F + step * (rng.standard_normal(r.F.shape)
                                  + 1j * rng.standard_normal(r.F.shape))
                F /= np.linalg.norm(F)
                recovered.append(type(r)(kind="rank-two", p=p_new, F=F))
        beta = np.clip(sol.beta * (1.0 + step * rng.standard_normal(sol.beta.shape)),
                       1e-9, 1.0)

        # minimal user powers meeting the uplink constraints at the new w
        gains = np.empty((2, s.K, s.K))
        for k in range(s.K):
            gains[:, :, k] = np.abs(s.h.conj() @ w[k]) ** 2
        n = 2 * s.K
        T = 2.0 ** (2.0 * s.Rbar)
        alpha = T - T / (T[0] + T[1])[None, :]
        D = np.diag((alpha / np.array([[gains[i, k, k] for k in range(s.K)]
                                       for i in range(2)])).T.reshape(-1))
        R = np.zeros((n, n))
        for k in range(s.K):
            for i in range(2):
                col = gains[:, :, k].T.reshape(-1).copy()
                col[2 * k:2 * k + 2] = 0.0
                R[:, 2 * k + i] = col
        try:
            x = np.linalg.solve(np.eye(n) - D @ R.T, s.sigma_r2 * (D @ np.ones(n)))
        except np.linalg.LinAlgError:
            continue
        if np.any(x <= 0.0):
            continue
        q = x.reshape(s.K, 2).T

        cand = DesignSolution(w=w, V=sol.V, recovered=recovered, q=q, beta=beta,
                              mu=sol.mu,
                              objective=float(sum(r.p for r in recovered) + q.sum()))
        if cand.objective >= base - margin:
            continue
        if check_p1(s, cand, tol=tol).passed:
            return False
    return True
