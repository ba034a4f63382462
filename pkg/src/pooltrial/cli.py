"""Command-line entry point: simulate / estimate / mc / check.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(degenerate design, singular bread), 3 diagnostic-suite failure.  Every
subcommand writes a manifest.json into its output directory with the resolved
configuration and master seed, sufficient to re-run the job byte-identically.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import config_to_raw, load_config
from .core import SeedPlan, TrajectorySet, TrialConfig
from .errors import DiagnosticFailure, PoolTrialError
from .estimators import fit_theta
from .montecarlo import emit_table, run_grid
from .simulator import run_trial
from .variance import variance_report

log = logging.getLogger("pooltrial")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        raise PoolTrialError(message)


def _write_manifest(out_dir: str, payload: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = {"package_version": __version__, **payload}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    log.info("manifest written to %s", os.path.join(out_dir, "manifest.json"))


def _resolved_config(args) -> TrialConfig:
    config, grid, _ = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.replace(master_seed=args.seed)
    return config


def cmd_simulate(args) -> int:
    config = _resolved_config(args)
    plan = SeedPlan(config.master_seed, args.rep)
    trajset = run_trial(config, plan)
    trajset.save(args.out)
    _write_manifest(
        args.out,
        {
            "command": "simulate",
            "config": config_to_raw(config),
            "master_seed": config.master_seed,
            "rep_index": args.rep,
        },
    )
    log.info("trajectories written to %s", args.out)
    return 0


def cmd_estimate(args) -> int:
    manifest_path = os.path.join(args.input, "manifest.json")
    if args.config is not None:
        config = _resolved_config(args)
    elif os.path.exists(manifest_path):
        from .config import parse_config

        with open(manifest_path) as f:
            manifest = json.load(f)
        config, _ = parse_config(manifest["config"])
    else:
        raise PoolTrialError(
            f"no --config given and no manifest.json in {args.input}"
        )
    trajset = TrajectorySet.load(args.input, config)
    est = fit_theta(trajset)
    report = variance_report(trajset, est, alpha=args.alpha, which=args.variance)
    out = {
        "theta_hat": est.theta_hat.tolist(),
        "psi_residual_norm": est.psi_residual_norm,
        "beta_hats": np.asarray(est.beta_hats).tolist(),
        **report.to_dict(),
    }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "estimate.json"), "w") as f:
        json.dump(out, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(
        args.out,
        {
            "command": "estimate",
            "config": config_to_raw(config),
            "master_seed": config.master_seed,
            "alpha": args.alpha,
            "variance": args.variance,
            "input": os.path.abspath(args.input),
        },
    )
    log.info("estimate written to %s", args.out)
    return 0


def cmd_mc(args) -> int:
    config, grid, _ = load_config(args.config)
    if args.seed is not None:
        config = config.replace(master_seed=args.seed)
    if grid is None:
        grid = {
            "kappa1": [config.env.kappa1],
            "rho": [config.policy.rho],
            "n_users": [config.n_users],
        }

    def progress(cell):
        log.info(
            "cell kappa1=%g rho=%g n=%d: sandwich %.4f (%.4f) "
            "adaptive %.4f (%.4f) aborted=%d",
            cell.kappa1,
            cell.rho,
            cell.n,
            cell.coverage_sandwich,
            cell.mc_se_sandwich,
            cell.coverage_adaptive,
            cell.mc_se_adaptive,
            cell.reps_aborted,
        )

    cells = run_grid(
        config,
        grid["kappa1"],
        grid["rho"],
        grid["n_users"],
        reps=args.reps,
        oracle_n=args.oracle_n,
        alpha=args.alpha,
        jobs=args.jobs,
        progress=progress,
    )
    emit_table(cells, args.out)
    _write_manifest(
        args.out,
        {
            "command": "mc",
            "config": config_to_raw(config),
            "grid": grid,
            "master_seed": config.master_seed,
            "reps": args.reps,
            "oracle_n": args.oracle_n,
            "alpha": args.alpha,
        },
    )
    log.info("coverage table written to %s", args.out)
    if any(c.unhealthy for c in cells):
        log.warning("one or more cells exceeded the 1%% abort budget")
    return 0


def _default_check_config(seed: int) -> TrialConfig:
    from .core import EnvConfig
    from .policies import PolicySpec

    return TrialConfig(
        n_users=100,
        horizon_T=5,
        policy=PolicySpec(kind="boltzmann", rho=1.0, pi_min=0.1),
        env=EnvConfig(kappa1=1.0),
        master_seed=seed,
    )


def cmd_check(args) -> int:
    from .diagnostics import (
        BoundedFunctional,
        bernstein_check,
        clt_check,
        invariance_scan,
    )

    failures = []
    results = {}
    suites = (
        ["bernstein", "clt", "invariance"] if args.suite == "all" else [args.suite]
    )

    if "bernstein" in suites:
        config = _default_check_config(args.seed)
        report = bernstein_check(
            config, BoundedFunctional("clipped_reward", -3.0, 3.0), reps=args.reps
        )
        results["bernstein"] = {
            "x_grid": report.x_grid.tolist(),
            "empirical_tail": report.empirical_tail.tolist(),
            "bound": report.bound.tolist(),
            "violations": int(report.n_violations),
        }
        log.info("bernstein: %d violations", report.n_violations)
        if report.n_violations > 0:
            failures.append("bernstein")

    if "clt" in suites:
        from .diagnostics import averaged_theta_star

        config = _default_check_config(args.seed).replace(
            n_users=500, horizon_T=50
        )
        theta_star = averaged_theta_star(config, args.oracle_n, 4)
        report = clt_check(config, reps=args.reps, theta_star=theta_star)
        results["clt"] = {
            "reps": report.reps,
            "z_mean": report.z_mean,
            "z_variance": report.z_variance,
            "ks_stat": report.ks_stat,
            "ks_threshold": report.ks_threshold,
            "passed": report.passed,
        }
        log.info(
            "clt: KS %.4f vs threshold %.4f (%s)",
            report.ks_stat,
            report.ks_threshold,
            "pass" if report.passed else "FAIL",
        )
        if not report.passed:
            failures.append("clt")

    if "invariance" in suites:
        base = _default_check_config(args.seed).replace(n_users=100, horizon_T=10)
        steep = base.replace(
            policy=dataclasses.replace(base.policy, rho=5.0)
        )
        shallow = base.replace(
            policy=dataclasses.replace(base.policy, rho=0.5)
        )
        flat = base.replace(
            policy=dataclasses.replace(base.policy, kind="constant_uniform")
        )
        profiles = invariance_scan(
            [("rho=5", steep), ("rho=0.5", shallow), ("constant_uniform", flat)],
            reps=min(args.reps, 200),
        )
        dominated = bool(np.all(profiles["rho=5"] > profiles["rho=0.5"]))
        flat_zero = bool(np.all(profiles["constant_uniform"] == 0.0))
        results["invariance"] = {
            label: prof.tolist() for label, prof in profiles.items()
        }
        results["invariance"]["rho5_dominates"] = dominated
        results["invariance"]["constant_uniform_zero"] = flat_zero
        log.info(
            "invariance: dominance=%s constant-zero=%s", dominated, flat_zero
        )
        if not (dominated and flat_zero):
            failures.append("invariance")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "check.json"), "w") as f:
            json.dump(results, f, indent=2, sort_keys=True)
            f.write("\n")
        _write_manifest(
            args.out,
            {
                "command": "check",
                "suite": args.suite,
                "reps": args.reps,
                "master_seed": args.seed,
            },
        )
    if failures:
        raise DiagnosticFailure(f"diagnostic suite(s) failed: {failures}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pooltrial", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one trial and write trajectories")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--rep", type=int, default=0)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="fit theta and variance estimators")
    p_est.add_argument("--in", dest="input", required=True)
    p_est.add_argument("--config", default=None)
    p_est.add_argument("--seed", type=int, default=None)
    p_est.add_argument("--out", required=True)
    p_est.add_argument("--alpha", type=float, default=0.05)
    p_est.add_argument(
        "--variance",
        choices=["sandwich", "adaptive", "both"],
        default="both",
    )
    p_est.set_defaults(func=cmd_estimate)

    p_mc = sub.add_parser("mc", help="coverage table over a (kappa1, rho, n) grid")
    p_mc.add_argument("--config", required=True)
    p_mc.add_argument("--reps", type=int, default=500)
    p_mc.add_argument("--oracle-n", type=int, default=100_000)
    p_mc.add_argument("--seed", type=int, default=None)
    p_mc.add_argument("--out", required=True)
    p_mc.add_argument("--jobs", type=int, default=1)
    p_mc.add_argument("--alpha", type=float, default=0.05)
    p_mc.set_defaults(func=cmd_mc)

    p_chk = sub.add_parser("check", help="run diagnostic suites")
    p_chk.add_argument(
        "--suite",
        choices=["bernstein", "clt", "invariance", "all"],
        default="all",
    )
    p_chk.add_argument("--reps", type=int, default=2000)
    p_chk.add_argument("--oracle-n", type=int, default=100_000)
    p_chk.add_argument("--seed", type=int, default=20240601)
    p_chk.add_argument("--out", default=None)
    p_chk.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        return args.func(args)
    except PoolTrialError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
