"""Command-line front end: solve, simulate, compare against LQG, generate examples.

Exit codes form a stable contract: 0 success, 1 usage or unsupported request,
2 infeasible or invalid problem, 3 solver non-convergence or failed check,
4 I/O or parse failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import examples as ex
from ._linalg import symmetrize
from .diffusion import (
    LambdaMatrix,
    build_policy,
    feasibility_check,
    solve_lambda,
)
from .errors import (
    CovSteerError,
    InfeasibleTarget,
    NoConvergence,
    ReducedUncontrollable,
    SecondOrderViolation,
    SingularGramian,
    SpecFormatError,
    UnsupportedProblem,
)
from .lqg_bridge import equivalence_check, riccati_backward
from .mean_steering import steer_mean
from .nodiffusion import EPS_COV, EPS_GAIN, steer_partial_cov
from .simulation import (
    LinearPolicyRealization,
    cost_decompose,
    monte_carlo,
    propagate_moments,
    write_ensemble_csv,
    write_moments_csv,
    write_singular_values_csv,
    write_trajectories_csv,
)
from .system_model import load_spec, save_spec, stack_operators, validate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_NOCONVERGENCE = 3
EXIT_IO = 4


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _Exit(EXIT_USAGE, f"{self.prog}: error: {message}")


def _load(path) -> tuple:
    try:
        system, bc = load_spec(path)
    except SpecFormatError as exc:
        raise _Exit(EXIT_IO, str(exc))
    report = validate(system, bc)
    if not report.ok:
        listing = "\n  ".join(report.violations)
        raise _Exit(EXIT_INFEASIBLE, f"{path}: spec fails validation:\n  {listing}")
    return system, bc


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot create output directory {out}: {exc}")
    return out


def _feasibility_margin(system, bc) -> float:
    G_N = system.G[-1]
    gap = symmetrize(np.asarray(bc.SigmaF, dtype=float)) - G_N @ G_N.T
    return float(np.linalg.eigvalsh(gap)[0])


def _solve_pipeline(system, bc, tol_newton: float):
    ops = stack_operators(system)
    if bc.D is not None:
        if not system.is_diffusionless():
            raise _Exit(
                EXIT_USAGE,
                "partial covariance selectors are only supported for zero process noise",
            )
        try:
            mean_plan = steer_mean(ops, bc)
            gain = steer_partial_cov(ops, bc.Sigma0, bc.D, bc.SigmaF)
        except (SingularGramian, ReducedUncontrollable) as exc:
            raise _Exit(EXIT_INFEASIBLE, str(exc))
        return ops, ("partial", mean_plan, gain)

    if not feasibility_check(system, bc):
        raise _Exit(
            EXIT_INFEASIBLE,
            "infeasible: SigmaF - G_N G_N^T is not positive semidefinite "
            "(the final-step noise injection exceeds the target covariance)",
        )
    try:
        lam = solve_lambda(ops, bc, tol=tol_newton)
        policy = build_policy(ops, bc, lam)
    except (SingularGramian, InfeasibleTarget) as exc:
        raise _Exit(EXIT_INFEASIBLE, str(exc))
    except (NoConvergence, SecondOrderViolation) as exc:
        raise _Exit(EXIT_NOCONVERGENCE, str(exc))
    except UnsupportedProblem as exc:
        raise _Exit(EXIT_USAGE, str(exc))
    return ops, ("steering", policy)


def cmd_solve(args) -> int:
    system, bc = _load(args.spec)
    out = _outdir(args)
    ops, solved = _solve_pipeline(system, bc, args.tol_newton)

    doc = {
        "n": system.n,
        "m": system.m,
        "r": system.r,
        "N": system.N,
        "feasibility_margin": _feasibility_margin(system, bc),
    }
    if solved[0] == "partial":
        _, mean_plan, gain = solved
        doc.update(
            type="partial_gain",
            mean_plan=mean_plan.u_mean.tolist(),
            J_mu=mean_plan.J_mu,
            J_sigma_analytic=gain.J_sigma,
            L=gain.L.tolist(),
            D=bc.D.tolist(),
        )
        summary = (
            f"partial covariance gain solved: J_mu={mean_plan.J_mu:.6g} "
            f"J_sigma={gain.J_sigma:.6g}"
        )
    else:
        _, policy = solved
        traj = propagate_moments(system, policy)
        mean_err = float(np.linalg.norm(traj.mu[-1] - bc.muF))
        cov_err = float(
            np.linalg.norm(traj.Sigma[-1] - symmetrize(bc.SigmaF))
            / max(np.linalg.norm(bc.SigmaF), np.finfo(float).tiny)
        )
        doc.update(
            type="steering",
            Lambda=policy.Lambda.tolist(),
            mean_plan=policy.mean_plan.u_mean.tolist(),
            J_mu=policy.mean_plan.J_mu,
            J_sigma_analytic=traj.J_sigma,
            residual_norm=policy.lambda_.residual_norm,
            second_order_ok=policy.lambda_.second_order_ok,
            newton_iterations=policy.lambda_.iterations,
            terminal_mean_error=mean_err,
            terminal_cov_rel_error=cov_err,
            gain_metadata={
                "innovations": system.N + 1,
                "gain_shape": [system.m, system.n],
                "storage": "derived on demand from Lambda and Phi",
            },
        )
        summary = (
            f"solved: residual={policy.lambda_.residual_norm:.3e} "
            f"J_mu={policy.mean_plan.J_mu:.6g} J_sigma={traj.J_sigma:.6g} "
            f"terminal cov rel err={cov_err:.3e}"
        )
        if cov_err > args.tol_cov or mean_err > args.tol_cov * (1 + np.linalg.norm(bc.muF)):
            raise _Exit(
                EXIT_NOCONVERGENCE,
                f"solution quality below tolerance: terminal cov rel err {cov_err:.3e} "
                f"(mean err {mean_err:.3e}) exceeds {args.tol_cov:.1e}",
            )

    path = out / "policy.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(summary)
    print(f"wrote {path}")
    return EXIT_OK


def _rebuild_policy(system, bc, doc):
    ops = stack_operators(system)
    if doc.get("type") == "steering":
        lam = LambdaMatrix(
            Lambda=np.array(doc["Lambda"], dtype=float),
            residual_norm=float(doc.get("residual_norm", 0.0)),
            second_order_ok=bool(doc.get("second_order_ok", True)),
        )
        return build_policy(ops, bc, lam)
    if doc.get("type") == "partial_gain":
        mean_plan = steer_mean(ops, bc)
        L = np.array(doc["L"], dtype=float)
        return _PartialGainPolicy(system, bc, mean_plan, L)
    raise _Exit(EXIT_IO, f"policy artifact has unknown type {doc.get('type')!r}")


class _PartialGainPolicy:
    """Mean plan plus static feedback of the initial deviation."""

    def __init__(self, system, bc, mean_plan, L):
        self.system = system
        self.mu0 = np.asarray(bc.mu0, dtype=float)
        self.Sigma0 = symmetrize(np.asarray(bc.Sigma0, dtype=float))
        self.mean_plan = mean_plan
        self.L_blocks = L.reshape(system.N + 1, system.m, system.n)

    def realization(self, system) -> LinearPolicyRealization:
        n, m, N = system.n, system.m, system.N
        A, B, G = system.a_stack(), system.b_stack(), system.g_stack()
        q = 2 * n
        F = np.zeros((N + 1, q, q))
        f = np.zeros((N + 1, q))
        E = np.zeros((N + 1, q, system.r))
        H = np.zeros((N + 1, m, q))
        for k in range(N + 1):
            F[k, :n, :n] = A[k]
            F[k, :n, n:] = B[k] @ self.L_blocks[k]
            F[k, n:, n:] = np.eye(n)
            f[k, :n] = B[k] @ self.mean_plan.u_mean[k]
            E[k, :n, :] = G[k]
            H[k, :, n:] = self.L_blocks[k]
        return LinearPolicyRealization(
            nx=n,
            x_mean0=self.mu0,
            x_cov0=self.Sigma0,
            z_offset0=np.concatenate([self.mu0, np.zeros(n)]),
            z_gain0=np.vstack([np.eye(n), np.eye(n)]),
            F=F,
            f=f,
            E=E,
            H=H,
            h=self.mean_plan.u_mean.copy(),
        )


def cmd_simulate(args) -> int:
    system, bc = _load(args.spec)
    out = _outdir(args)
    policy_path = Path(args.policy) if args.policy else out / "policy.json"
    try:
        with open(policy_path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read policy artifact {policy_path}: {exc}")
    except json.JSONDecodeError as exc:
        raise _Exit(EXIT_IO, f"{policy_path}: invalid JSON: {exc.msg}")

    policy = _rebuild_policy(system, bc, doc)
    traj = propagate_moments(system, policy)
    ens = monte_carlo(system, policy, runs=args.runs, seed=args.seed)
    J_mu, J_sigma, J_total = cost_decompose(traj)
    cost_doc = {
        "runs": ens.runs,
        "seed": ens.seed,
        "J_mu_analytic": J_mu,
        "J_sigma_analytic": J_sigma,
        "J_total_analytic": J_total,
        "sample_cost_mean": ens.sample_cost_mean,
        "sample_cost_se": ens.sample_cost_se,
        "terminal_cov_rel_error_sample": float(
            np.linalg.norm(ens.sample_Sigma[-1] - symmetrize(bc.SigmaF))
            / max(np.linalg.norm(bc.SigmaF), np.finfo(float).tiny)
        ),
    }
    with open(out / "cost.json", "w") as fh:
        json.dump(cost_doc, fh, indent=2)
        fh.write("\n")

    if args.format == "csv":
        write_moments_csv(out / "moments.csv", traj)
        write_singular_values_csv(out / "singular_values.csv", traj)
        write_ensemble_csv(out / "ensemble.csv", ens)
        write_trajectories_csv(out / "trajectories.csv", ens)
        written = ["moments.csv", "singular_values.csv", "ensemble.csv",
                   "trajectories.csv", "cost.json"]
    else:
        sim_doc = {
            "mu": traj.mu.tolist(),
            "Sigma": traj.Sigma.tolist(),
            "sample_mu": ens.sample_mu.tolist(),
            "sample_Sigma": ens.sample_Sigma.tolist(),
            "sample_steps": ens.sample_steps.tolist(),
            "sample_states": ens.sample_states.tolist(),
            "sample_inputs": ens.sample_inputs.tolist(),
        }
        with open(out / "simulation.json", "w") as fh:
            json.dump(sim_doc, fh, indent=2)
            fh.write("\n")
        written = ["simulation.json", "cost.json"]
    print(f"simulated {ens.runs} runs (seed {ens.seed}); "
          f"sample cost {ens.sample_cost_mean:.6g} +- {ens.sample_cost_se:.2g}")
    print(f"wrote {', '.join(written)} in {out}")
    return EXIT_OK


def cmd_compare_lqg(args) -> int:
    system, bc = _load(args.spec)
    _, solved = _solve_pipeline(system, bc, args.tol_newton)
    if solved[0] != "steering":
        raise _Exit(EXIT_USAGE, "compare-lqg requires a full-covariance steering problem")
    policy = solved[1]
    lqg = riccati_backward(system, policy.Lambda)
    report = equivalence_check(policy, lqg, runs=args.runs, seed=args.seed)
    status = "PASS" if report.within(args.tol_gain) else "FAIL"
    print(
        f"{status}: max input deviation {report.max_input_deviation:.3e} over "
        f"{report.runs} runs (tolerance {args.tol_gain:.1e})"
    )
    return EXIT_OK if status == "PASS" else EXIT_NOCONVERGENCE


def cmd_gen_example(args) -> int:
    if args.name == "lti":
        system, bc = ex.lti_example()
    else:
        system, bc = ex.linearize_discretize()
    path = Path(args.out) if args.out else Path(f"{args.name}.json")
    if path.parent and not path.parent.exists():
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise _Exit(EXIT_IO, f"cannot create {path.parent}: {exc}")
    try:
        save_spec(path, system, bc)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot write {path}: {exc}")
    print(f"wrote {path} (n={system.n}, m={system.m}, r={system.r}, N={system.N})")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="covsteer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a steering problem from a spec file")
    p_solve.add_argument("spec")
    p_solve.add_argument("--out", default=".", help="output directory for policy.json")
    p_solve.add_argument("--tol-newton", type=float, default=1e-10,
                         help="relative residual tolerance of the multiplier solve")
    p_solve.add_argument("--tol-cov", type=float, default=EPS_COV,
                         help="acceptable relative terminal-covariance error")

    p_sim = sub.add_parser("simulate", help="propagate moments and run a Monte-Carlo ensemble")
    p_sim.add_argument("spec")
    p_sim.add_argument("--policy", default=None,
                       help="policy artifact (default: <out>/policy.json)")
    p_sim.add_argument("--out", default=".")
    p_sim.add_argument("--runs", type=int, default=20000)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--format", choices=("csv", "json"), default="csv")

    p_cmp = sub.add_parser("compare-lqg", help="check steering vs LQG input equivalence")
    p_cmp.add_argument("spec")
    p_cmp.add_argument("--runs", type=int, default=100)
    p_cmp.add_argument("--seed", type=int, default=0)
    p_cmp.add_argument("--tol-newton", type=float, default=1e-10)
    p_cmp.add_argument("--tol-gain", type=float, default=EPS_GAIN,
                       help="maximum allowed input deviation")

    p_gen = sub.add_parser("gen-example", help="write a benchmark spec file")
    p_gen.add_argument("name", choices=("lti", "cartpole"))
    p_gen.add_argument("--out", default=None, help="output file (default ./<name>.json)")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate" and args.runs < 2:
            raise _Exit(EXIT_USAGE, "simulate needs --runs >= 2")
        handler = {
            "solve": cmd_solve,
            "simulate": cmd_simulate,
            "compare-lqg": cmd_compare_lqg,
            "gen-example": cmd_gen_example,
        }[args.command]
        return handler(args)
    except _Exit as exc:
        print(exc.message, file=sys.stderr)
        return exc.code
    except CovSteerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
