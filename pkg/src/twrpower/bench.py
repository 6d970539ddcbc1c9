"""Monte-Carlo benchmark harness: seeded sweeps, solver registry, CSV output.

Reproduces desk-scale analogues of the paper-style experiments: the one-pair
rate sweep with the fixed-split baseline, the convergence-trace comparison
of the two initializations against the lower bound, rate and noise sweeps
with the zero-forcing-receive baseline, and the low-degrees-of-freedom
regime.  Absolute power levels depend on the channel draws; curve shapes
and the ordering lower-bound <= iterative <= restricted baselines are the
reproducible quantities.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .conic import ConicProblem
from .initializer import cp_free_initialize, zf_initialize
from .model import (DerivedCoefficients, DesignSolution, Scenario,
                    ScenarioParams, dbm_from_linear, derive_coefficients,
                    generate_scenario, min_received_power)
from .multipair import (DcOptions, dc_solve, polish_design, recover)
from .onepair import solve_onepair
from .verify import check_p1

CSV_SCHEMA = 1
SOLVERS = ("onepair", "dc-cpfree", "dc-zf", "fixed-beta", "zf-receive",
           "lower-bound", "large-n")

ROW_FIELDS = ["schema", "experiment", "K", "N", "sweep", "value", "run",
              "solver", "objective_W", "objective_dBm", "iterations",
              "status", "verified", "wall_ms"]


@dataclass
class ExperimentConfig:
    """One benchmark sweep: scenario family, sweep variable, solver set."""

    experiment: str                       # fig2 | fig3 | fig4 | fig5 | fig6 | custom
    K: int
    N: int
    sweep: str = "none"                   # none | rate | noise_dbm
    sweep_values: list = field(default_factory=lambda: [0.0])
    runs: int = 20
    seed: int = 0
    solvers: list = field(default_factory=lambda: ["dc-cpfree", "lower-bound"])
    emit_traces: bool = False             # per-iteration trace rows (fig3)

    def __post_init__(self):
        if not self.sweep_values:
            raise ValueError("sweep range must be non-empty")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        for name in self.solvers:
            if name not in SOLVERS:
                raise ValueError(f"unknown solver {name!r}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        return ExperimentConfig(**json.loads(text))


@dataclass
class ResultRow:
    """One CSV record of a Monte-Carlo run."""

    experiment: str
    K: int
    N: int
    sweep: str
    value: float
    run: int
    solver: str
    objective_W: float
    objective_dBm: float
    iterations: int
    status: str
    verified: str            # "yes" | "no" | "n/a"
    wall_ms: float
    trace: list = field(default_factory=list)


def presets(seed: int = 0, runs: int | None = None) -> dict:
    """Named experiment presets (desk-scale run counts)."""
    r = lambda default: default if runs is None else runs
    return {
        "fig2": [ExperimentConfig("fig2", K=1, N=8, sweep="rate",
                                  sweep_values=[1.0, 2.0, 3.0, 4.0], runs=r(20),
                                  seed=seed,
                                  solvers=["onepair", "fixed-beta", "dc-cpfree",
                                           "lower-bound"])],
        "fig3": [ExperimentConfig("fig3", K=3, N=12, sweep="none",
                                  sweep_values=[0.0], runs=r(20), seed=seed,
                                  solvers=["dc-cpfree", "dc-zf", "lower-bound"],
                                  emit_traces=True)],
        "fig4": [ExperimentConfig("fig4", K=3, N=12, sweep="rate",
                                  sweep_values=[0.5, 1.0, 1.5, 2.0], runs=r(20),
                                  seed=seed,
                                  solvers=["dc-cpfree", "zf-receive", "lower-bound"])],
        "fig5": [ExperimentConfig("fig5", K=3, N=12, sweep="noise_dbm",
                                  sweep_values=[-80.0, -70.0, -60.0, -50.0],
                                  runs=r(20), seed=seed,
                                  solvers=["dc-cpfree", "zf-receive", "lower-bound"])],
        "fig6": [ExperimentConfig("fig6-k5", K=5, N=8, sweep="noise_dbm",
                                  sweep_values=[-65.0, -60.0], runs=r(5), seed=seed,
                                  solvers=["dc-cpfree", "lower-bound"]),
                 ExperimentConfig("fig6-k7", K=7, N=12, sweep="noise_dbm",
                                  sweep_values=[-65.0, -60.0], runs=r(3), seed=seed,
                                  solvers=["dc-cpfree", "lower-bound"])],
    }


def scenario_for(cfg: ExperimentConfig, point_idx: int, run_idx: int) -> Scenario:
    """Deterministic scenario for one (sweep point, run) cell."""
    value = cfg.sweep_values[point_idx]
    params = ScenarioParams(
        rate_fixed=value if cfg.sweep == "rate" else None,
        noise_dbm=value if cfg.sweep == "noise_dbm" else ScenarioParams.noise_dbm,
    )
    seq = np.random.SeedSequence(entropy=cfg.seed,
                                 spawn_key=(point_idx, run_idx))
    return generate_scenario(seq, cfg.N, cfg.K, params)


def zf_receive_baseline(s: Scenario, coeffs: DerivedCoefficients,
                        rel_tol: float = 1e-5, max_iter: int = 30):
    """Fix the receive beamformers by pairwise zero forcing, optimize the rest.

    With the receivers frozen, the uplink constraints are affine in the user
    powers and only the harvest slack keeps a difference-of-convex term,
    which is majorized and iterated on alone.  Requires N >= 2K - 1.

    Returns (DesignSolution | None, iterations, status).
    """
    init = zf_initialize(s, coeffs)
    if not init.feasible:
        return None, 0, "infeasible"
    w = init.w0
    c = 1.0 / s.sigma_r2
    ss = s.scale_powers(c)
    K, N = s.K, s.N
    sz = np.sqrt(ss.sigma_z2)
    gains = np.empty((2, K, K))          # gains[j, l, k] = |w_k^H h_{j,l}|^2
    for k in range(K):
        gains[:, :, k] = np.abs(s.h.conj() @ w[k]) ** 2

    Qg, _ = np.linalg.qr(s.g.reshape(2 * K, N).T)
    gt = np.einsum("nm,ikn->ikm", Qg.conj(), s.g)
    Theta_t = gt[..., :, None] * gt[..., None, :].conj()

    mu_n = init.mu0 / np.sqrt(s.sigma_r2)
    q_prev = (1.0 / init.xi0) * c
    V_prev = None
    trace = []
    last = None
    status = "max-iterations"
    for n in range(max_iter):
        cross_est = np.zeros((2, K))
        if V_prev is not None:
            for k in range(K):
                for i in range(2):
                    gik = s.g[i, k]
                    cross_est[i, k] = sum(
                        max(np.real(gik.conj() @ V_prev[l] @ gik), 0.0)
                        for l in range(K) if l != k) / s.sigma_r2
        r_est = np.empty((2, K))
        beta_est = np.empty((2, K))
        top_est = np.empty((2, K))
        for k in range(K):
            for i in range(2):
                sig_eff = ss.sigma_u2 + cross_est[i, k]
                r_est[i, k], beta_est[i, k] = min_received_power(
                    coeffs.theta[i, k], mu_n[i, k] ** 2, sig_eff,
                    ss.sigma_z2, ss.eta)
                top_est[i, k] = max(r_est[i, k] / coeffs.theta[i, k] - sig_eff,
                                    ss.sigma_z2)
        beta_est = np.maximum(beta_est, 1e-6)
        tc_est = r_est + cross_est + ss.sigma_u2
        m2_est = mu_n ** 2
        m2_est[m2_est < 1e-9 * tc_est] = 0.0

        p = ConicProblem()
        V = []
        for k in range(K):
            gain = np.array([np.linalg.norm(s.g[i, k]) ** 2 for i in range(2)])
            V.append(p.hermitian(f"V_{k}", Qg.shape[1],
                                 scale=float(np.max(r_est[:, k] / gain))))
        q = {}
        for k in range(K):
            for i in range(2):
                q[i, k] = p.scalar(f"q_{i}_{k}", nonneg=True,
                                   scale=float(max(q_prev[i, k], 1.0)))
        for k in range(K):
            for i in range(2):
                interf = sum(q[j, l] * gains[j, l, k]
                             for l in range(K) if l != k for j in range(2))
                p.add_le(coeffs.alpha[i, k] * (interf + ss.sigma_r2)
                         - q[i, k] * gains[i, k, k], 0.0)
                recv = V[k].trace_dot(Theta_t[i, k])
                cross = sum(V[l].trace_dot(Theta_t[i, k])
                            for l in range(K) if l != k)
                beta = p.scalar(f"beta_{i}_{k}")
                mu = p.scalar(f"mu_{i}_{k}", nonneg=True,
                              scale=float(max(mu_n[i, k], sz)))
                p.schur_lmi(recv * (1.0 / coeffs.theta[i, k]) - cross - ss.sigma_u2,
                            sz, beta,
                            balance=(1.0 / top_est[i, k], 1.0 / beta_est[i, k]))
                bot = m2_est[i, k] / tc_est[i, k] if m2_est[i, k] > 0 else ss.eta
                p.add_lmi([[recv + cross + ss.sigma_u2, mu],
                           [0.0, ss.eta * (1.0 - beta)]],
                          balance=(1.0 / tc_est[i, k], 1.0 / bot))
                p.add_le(q[i, k] - 2.0 * mu_n[i, k] * mu + mu_n[i, k] ** 2
                         + 2.0 * ss.p_c - 2.0 * ss.E[i, k], 0.0)
                p.add_le(-beta, -1e-6)
        p.minimize(sum(V[k].trace() for k in range(K))
                   + sum(q[i, k] for k in range(K) for i in range(2)))
        sol = p.solve()
        usable = sol.status == "optimal" or (
            sol.status != "infeasible" and sol.values
            and np.isfinite(sol.objective) and sol.primal_residual <= 1e-6)
        if not usable:
            if n == 0:
                return None, 0, "infeasible" if sol.status == "infeasible" \
                    else "numerical-failure"
            status = "numerical-failure"
            break
        obj = sol.objective * s.sigma_r2
        if trace and obj > trace[-1]:
            status = "optimal"
            break
        trace.append(obj)
        last = sol
        mu_n = np.array([[sol[f"mu_{i}_{k}"] for k in range(K)] for i in range(2)])
        q_prev = np.array([[sol[f"q_{i}_{k}"] for k in range(K)] for i in range(2)])
        V_prev = np.stack([Qg @ sol[f"V_{k}"] @ Qg.conj().T for k in range(K)]) * s.sigma_r2
        if n > 0 and trace[-2] - trace[-1] < rel_tol * abs(trace[-2]):
            status = "optimal"
            break
    if last is None:
        return None, len(trace), status

    V = np.stack([Qg @ last[f"V_{k}"] @ Qg.conj().T for k in range(K)]) * s.sigma_r2
    polished = polish_design(s, coeffs, w, V)
    if polished is None:
        return None, len(trace), "numerical-failure"
    V1, qv, beta, mu = polished
    recovered = [recover(V1[k], rank_tol=1.0) for k in range(K)]
    rebuilt = polish_design(s, coeffs, w,
                            np.stack([r.covariance() for r in recovered]))
    if rebuilt is not None:
        V1, qv, beta, mu = rebuilt
        recovered = [recover(V1[k], rank_tol=1.0) for k in range(K)]
    objective = float(sum(np.real(np.trace(V1[k])) for k in range(K)) + qv.sum())
    solution = DesignSolution(w=w.copy(), V=V1, recovered=recovered, q=qv,
                              beta=beta, mu=mu, objective=objective)
    return solution, len(trace), status


def run_cell(cfg: ExperimentConfig, point_idx: int, run_idx: int,
             solver: str) -> ResultRow:
    """Execute one (sweep point, run, solver) cell."""
    s = scenario_for(cfg, point_idx, run_idx)
    coeffs = derive_coefficients(s)
    init_seed = int(np.random.SeedSequence(
        entropy=cfg.seed, spawn_key=(point_idx, run_idx, 1)).generate_state(1)[0])
    t0 = time.perf_counter()
    sol = None
    iters = 0
    status = "optimal"
    verified = "n/a"
    objective = np.nan
    trace = []

    try:
        if solver == "onepair":
            sol, rep = solve_onepair(s, coeffs)
            iters, status = rep.iterations, rep.status
        elif solver == "fixed-beta":
            sol, rep = solve_onepair(s, coeffs, fixed_beta=0.5)
            iters, status = rep.iterations, rep.status
        elif solver in ("dc-cpfree", "dc-zf"):
            init = (cp_free_initialize(s, coeffs, seed=init_seed)
                    if solver == "dc-cpfree" else zf_initialize(s, coeffs))
            if not init.feasible:
                status = "infeasible"
            else:
                sol, rep = dc_solve(s, coeffs, init)
                iters, status = rep.iterations, rep.status
                trace = list(rep.objective_trace)
        elif solver == "zf-receive":
            sol, iters, status = zf_receive_baseline(s, coeffs)
        elif solver == "lower-bound":
            lb = bounds.lower_bound(s, coeffs)
            status = lb.status
            objective = lb.objective
            iters = lb.fp_iterations
        elif solver == "large-n":
            ln = bounds.large_n_solution(bounds.large_n_params(s, coeffs))
            objective = float(ln.q.sum() + ln.p.sum())
        else:
            raise ValueError(f"unknown solver {solver!r}")
    except Exception:
        status = "numerical-failure"
        sol = None

    if sol is not None:
        objective = sol.objective
        verified = "yes" if check_p1(s, sol).passed else "no"
        if status == "optimal" and verified == "no":
            status = "verify-failed"

    wall_ms = (time.perf_counter() - t0) * 1e3
    dBm = float(dbm_from_linear(objective)) if np.isfinite(objective) and objective > 0 else np.nan
    return ResultRow(experiment=cfg.experiment, K=cfg.K, N=cfg.N,
                     sweep=cfg.sweep, value=cfg.sweep_values[point_idx],
                     run=run_idx, solver=solver,
                     objective_W=float(objective), objective_dBm=dBm,
                     iterations=iters, status=status, verified=verified,
                     wall_ms=wall_ms, trace=trace)


def _cell_args(cfgs):
    for cfg in cfgs:
        for p in range(len(cfg.sweep_values)):
            for r in range(cfg.runs):
                for solver in cfg.solvers:
                    yield (cfg, p, r, solver)


def run_experiment(cfgs, workers: int = 1) -> list[ResultRow]:
    """Run all cells of one or more configs; deterministic row order."""
    if isinstance(cfgs, ExperimentConfig):
        cfgs = [cfgs]
    cells = list(_cell_args(cfgs))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_cell_star, cells, chunksize=1))
    else:
        rows = [run_cell(*args) for args in cells]
    rows.sort(key=lambda r: (r.experiment, r.value, r.run, r.solver))
    return rows


def _run_cell_star(args):
    return run_cell(*args)


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def write_rows_csv(rows, path_or_file):
    """Row CSV with a schema marker; identical configs yield identical bytes
    apart from the wall_ms column."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        f.write(f"# schema={CSV_SCHEMA}\n")
        writer = csv.writer(f)
        writer.writerow(ROW_FIELDS)
        for r in rows:
            writer.writerow([CSV_SCHEMA, r.experiment, r.K, r.N, r.sweep,
                             _fmt(r.value), r.run, r.solver,
                             _fmt(r.objective_W), _fmt(r.objective_dBm),
                             r.iterations, r.status, r.verified,
                             f"{r.wall_ms:.1f}"])
    finally:
        if own:
            f.close()


def aggregate(rows):
    """Per (experiment, value, solver) summary.

    Averages in watts first (then converts), and also averages the per-run
    dBm values; both are reported since they are different statistics.
    Non-optimal runs are excluded from means and counted in the
    feasibility rate.
    """
    groups = {}
    for r in rows:
        groups.setdefault((r.experiment, r.value, r.solver), []).append(r)
    out = []
    for (exp, value, solver), rs in sorted(groups.items()):
        ok = [r for r in rs if r.status == "optimal" and np.isfinite(r.objective_W)]
        mean_w = float(np.mean([r.objective_W for r in ok])) if ok else np.nan
        out.append({
            "experiment": exp, "value": value, "solver": solver,
            "runs": len(rs), "ok": len(ok),
            "feasibility_rate": len(ok) / len(rs),
            "mean_W": mean_w,
            "dBm_of_mean_W": float(dbm_from_linear(mean_w)) if ok else np.nan,
            "mean_dBm": float(np.mean([r.objective_dBm for r in ok])) if ok else np.nan,
        })
    return out


def write_aggregate_csv(aggs, path_or_file):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        f.write(f"# schema={CSV_SCHEMA}\n")
        names = ["experiment", "value", "solver", "runs", "ok",
                 "feasibility_rate", "mean_W", "dBm_of_mean_W", "mean_dBm"]
        writer = csv.DictWriter(f, fieldnames=names)
        writer.writeheader()
        for a in aggs:
            writer.writerow({k: _fmt(v) for k, v in a.items()})
    finally:
        if own:
            f.close()


def write_trace_csv(rows, path_or_file):
    """Per-iteration objective traces of the iterative runs (fig3 preset)."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        f.write(f"# schema={CSV_SCHEMA}\n")
        writer = csv.writer(f)
        writer.writerow(["experiment", "value", "run", "solver", "iteration",
                         "objective_W", "objective_dBm"])
        for r in rows:
            for n, obj in enumerate(r.trace):
                writer.writerow([r.experiment, _fmt(r.value), r.run, r.solver,
                                 n + 1, _fmt(obj),
                                 _fmt(float(dbm_from_linear(obj)))])
    finally:
        if own:
            f.close()


def rows_csv_text(rows) -> str:
    buf = io.StringIO()
    write_rows_csv(rows, buf)
    return buf.getvalue()
