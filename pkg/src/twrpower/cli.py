"""Command line entry point: scenario generation, solving, benchmarking.

Subcommands: gen, solve, bench, lowerbound, largen.  Exit code is 0 only
when every solver result passed the independent feasibility verifier.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

import numpy as np

from . import bench, bounds
from .initializer import cp_free_initialize, zf_initialize
from .model import (Scenario, ScenarioParams, dbm_from_linear,
                    derive_coefficients, generate_scenario)
from .multipair import dc_solve, write_trace_csv
from .onepair import solve_onepair
from .verify import check_p1


def _cmd_gen(args):
    params = ScenarioParams(rate_fixed=args.rate, noise_dbm=args.noise_dbm)
    s = generate_scenario(args.seed, args.n, args.k, params)
    pathlib.Path(args.out).write_text(s.to_json())
    print(f"wrote scenario N={args.n} K={args.k} seed={args.seed} -> {args.out}")
    return 0


def _solution_doc(s, sol, rep_status, verified):
    return {
        "status": rep_status,
        "verified": verified,
        "objective_W": sol.objective,
        "objective_dBm": float(dbm_from_linear(sol.objective)),
        "q_W": sol.q.tolist(),
        "beta": sol.beta.tolist(),
        "relay_power_W": [r.p for r in sol.recovered],
        "beamformer_rank": [r.kind for r in sol.recovered],
    }


def _cmd_solve(args):
    s = Scenario.from_json(pathlib.Path(args.scenario).read_text())
    coeffs = derive_coefficients(s)
    trace = None
    if args.solver == "onepair":
        sol, rep = solve_onepair(s, coeffs)
        status = rep.status
    elif args.solver == "fixed-beta":
        sol, rep = solve_onepair(s, coeffs, fixed_beta=0.5)
        status = rep.status
    elif args.solver in ("dc-cpfree", "dc-zf"):
        init = (cp_free_initialize(s, coeffs, seed=args.seed)
                if args.solver == "dc-cpfree" else zf_initialize(s, coeffs))
        if not init.feasible:
            print("no feasible starting point found")
            return 1
        sol, rep = dc_solve(s, coeffs, init)
        status = rep.status
        trace = rep
    elif args.solver == "zf-receive":
        sol, iters, status = bench.zf_receive_baseline(s, coeffs)
    else:
        print(f"unknown solver {args.solver!r}", file=sys.stderr)
        return 2
    if sol is None:
        print(f"solver failed: {status}")
        return 1
    ok = check_p1(s, sol).passed
    doc = _solution_doc(s, sol, status, "yes" if ok else "no")
    print(json.dumps(doc, indent=1))
    if args.out:
        pathlib.Path(args.out).write_text(json.dumps(doc, indent=1))
    if args.trace and trace is not None:
        write_trace_csv(trace, args.trace)
    return 0 if (ok and status == "optimal") else 1


def _cmd_bench(args):
    if args.preset:
        cfgs = bench.presets(seed=args.seed, runs=args.runs).get(args.preset)
        if cfgs is None:
            print(f"unknown preset {args.preset!r}", file=sys.stderr)
            return 2
    else:
        cfgs = [bench.ExperimentConfig.from_json(
            pathlib.Path(args.config).read_text())]
        if args.runs is not None:
            for i, c in enumerate(cfgs):
                cfgs[i] = bench.ExperimentConfig(
                    **{**c.__dict__, "runs": args.runs})
    rows = bench.run_experiment(cfgs, workers=args.workers)
    out = pathlib.Path(args.out)
    bench.write_rows_csv(rows, out)
    aggs = bench.aggregate(rows)
    bench.write_aggregate_csv(aggs, out.with_name(out.stem + "_agg.csv"))
    if any(cfg.emit_traces for cfg in cfgs):
        bench.write_trace_csv(rows, out.with_name(out.stem + "_trace.csv"))
    for a in aggs:
        print(f"{a['experiment']:10s} value={a['value']:<8g} {a['solver']:12s} "
              f"ok={a['ok']}/{a['runs']} mean={a['dBm_of_mean_W']:.2f} dBm")
    bad = [r for r in rows if r.verified == "no"]
    if bad:
        print(f"{len(bad)} rows failed verification", file=sys.stderr)
        return 1
    return 0


def _cmd_lowerbound(args):
    s = Scenario.from_json(pathlib.Path(args.scenario).read_text())
    coeffs = derive_coefficients(s)
    lb = bounds.lower_bound(s, coeffs)
    doc = {"status": lb.status, "objective_W": lb.objective,
           "objective_dBm": float(dbm_from_linear(lb.objective))
           if np.isfinite(lb.objective) and lb.objective > 0 else None,
           "fixed_point_iterations": lb.fp_iterations}
    print(json.dumps(doc, indent=1))
    return 0 if lb.status in ("optimal", "infeasible") else 1


def _cmd_largen(args):
    n_list = [int(x) for x in args.n_list.split(",")]
    rows = ["N,i,k,case,q_W,p_W,beta"]
    for N in n_list:
        s = generate_scenario(args.seed, max(N, 1), args.k)
        coeffs = derive_coefficients(s)
        ln = bounds.large_n_solution(
            bounds.LargeScaleParams(N=N, rho=s.rho, theta=coeffs.theta,
                                    sigma_r2=s.sigma_r2, sigma_u2=s.sigma_u2,
                                    sigma_z2=s.sigma_z2, eta=s.eta,
                                    p_c=s.p_c, E=s.E))
        for k in range(args.k):
            for i in range(2):
                rows.append(f"{N},{i},{k},{ln.case[i, k]},{ln.q[i, k]:.12g},"
                            f"{ln.p[i, k]:.12g},{ln.beta[i, k]:.12g}")
    text = "\n".join(rows) + "\n"
    if args.out:
        pathlib.Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="twr",
        description="Minimum-power designs for wirelessly powered "
                    "multi-pair two-way relay networks")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a random scenario JSON")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, required=True, help="relay antennas")
    g.add_argument("--k", type=int, required=True, help="user pairs")
    g.add_argument("--rate", type=float, default=None,
                   help="same rate target for all users (bps/Hz)")
    g.add_argument("--noise-dbm", type=float, default=-60.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    so = sub.add_parser("solve", help="solve a scenario with one solver")
    so.add_argument("--scenario", required=True)
    so.add_argument("--solver", default="dc-cpfree",
                    choices=["onepair", "fixed-beta", "dc-cpfree", "dc-zf",
                             "zf-receive"])
    so.add_argument("--seed", type=int, default=0,
                    help="restart seed for the starting-point search")
    so.add_argument("--out", default=None, help="write solution JSON here")
    so.add_argument("--trace", default=None,
                    help="write per-iteration trace CSV here")
    so.set_defaults(func=_cmd_solve)

    b = sub.add_parser("bench", help="run a Monte-Carlo sweep")
    grp = b.add_mutually_exclusive_group(required=True)
    grp.add_argument("--preset", choices=["fig2", "fig3", "fig4", "fig5", "fig6"])
    grp.add_argument("--config", help="ExperimentConfig JSON file")
    b.add_argument("--runs", type=int, default=None,
                   help="override runs per sweep point")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", required=True, help="rows CSV path")
    b.set_defaults(func=_cmd_bench)

    lb = sub.add_parser("lowerbound", help="virtual-receiver lower bound")
    lb.add_argument("--scenario", required=True)
    lb.set_defaults(func=_cmd_lowerbound)

    ln = sub.add_parser("largen", help="asymptotic many-antenna closed form")
    ln.add_argument("--k", type=int, required=True)
    ln.add_argument("--n-list", required=True, help="comma separated N values")
    ln.add_argument("--seed", type=int, default=0)
    ln.add_argument("--out", default=None)
    ln.set_defaults(func=_cmd_largen)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
