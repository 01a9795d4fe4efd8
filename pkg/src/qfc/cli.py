"""Configuration-driven experiment runner.

Subcommands
-----------
solve-hjb    backward HJB sweep; writes the value-grid file and a summary
simulate     closed-loop Monte-Carlo under a policy; writes a cost report
verify       the verification battery; exit 0 iff every check passes
master       deterministic master-equation run (no noise)
convergence  integrator consistency ladders

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 acceptance failure (including inconclusive checks).  Figures are rendered
next to the delimited outputs unless --no-plots is given.  QFC_THREADS sets
the Monte-Carlo worker count (results are thread-count invariant).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import AcceptanceFailure, ConfigError, NumericalError
from .filtering import (
    ModelSpec,
    NoisePath,
    ito_drift,
    diffusion,
    master_solve,
    simulate_ito,
    strat_correction,
    strat_drift,
    trajectory_to_csv,
)
from .hjb import (
    extract_policy,
    hjb_solve_qubit,
    read_value_grid,
    state_from_bloch,
    write_value_grid,
)
from .operators import random_density
from .verify import (
    argmin_invariance_check,
    derive_seed,
    estimate_expected_cost,
    generator_identity_check,
    lq_control_grid_check,
    scheme_consistency_report,
)

ZERO_POLICY_ID = "zero"


def _zero_policy(model: ModelSpec):
    m = model.n_controls
    u0 = np.zeros(m)
    return lambda t, rho: u0


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config, out_dir=args.out)
    if args.seed is not None:
        cfg.master_seed = int(args.seed)
    return cfg


def _solve_grids(cfg: ExperimentConfig, mode: str = "stochastic"):
    """Config grid plus the coarse companion used for the grid-error gauge."""
    fine = hjb_solve_qubit(cfg.model, cfg.cost, n_points=cfg.grid_n,
                           dt=cfg.grid_dt, t0=cfg.sim_t0, T=cfg.sim_T,
                           mode=mode, store_slices=cfg.grid_store_slices)
    coarse_n = cfg.grid_n // 2 + 1
    if coarse_n % 2 == 0:
        coarse_n += 1
    coarse = hjb_solve_qubit(cfg.model, cfg.cost, n_points=max(coarse_n, 5),
                             dt=None, t0=cfg.sim_t0, T=cfg.sim_T, mode=mode,
                             store_slices=3)
    return fine, coarse


# ---------------------------------------------------------------------------
# solve-hjb


def cmd_solve_hjb(args) -> int:
    cfg = _load_config(args)
    if cfg.model.dim != 2:
        raise ConfigError("HJB grid solver supports n=2 only")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = hjb_solve_qubit(cfg.model, cfg.cost, n_points=cfg.grid_n,
                           dt=cfg.grid_dt, t0=cfg.sim_t0, T=cfg.sim_T,
                           store_slices=cfg.grid_store_slices)
    grid_path = out / "value_grid.csv"
    write_value_grid(grid, grid_path)
    p0 = cfg.rho0_bloch
    s0 = grid.value_at(cfg.sim_t0, p0)
    summary = {
        **cfg.output_stamp(),
        "grid_file": grid_path.name,
        "N": grid.n_points,
        "dt_pde": grid.dt,
        "model_fingerprint": grid.model_fp,
        "cost_fingerprint": grid.cost_fp,
        "start_bloch": list(map(float, p0)),
        "value_at_start": s0,
    }
    _write_json(out / "solve_summary.json", summary)
    p0_txt = "(" + ", ".join(f"{x:g}" for x in p0) + ")"
    _say(args, f"S({cfg.sim_t0:g}, {p0_txt}) = {s0:.6f}")
    _say(args, f"grid written to {grid_path}")
    if not args.no_plots:
        from . import plots
        plots.value_slices_figure(grid, out / "value_slices.png")
    return 0


# ---------------------------------------------------------------------------
# simulate


def _resolve_policy(cfg: ExperimentConfig, args):
    source = args.policy
    if source == "zero":
        return _zero_policy(cfg.model), ZERO_POLICY_ID, None
    if source == "hjb-grid":
        grid = hjb_solve_qubit(cfg.model, cfg.cost, n_points=cfg.grid_n,
                               dt=cfg.grid_dt, t0=cfg.sim_t0, T=cfg.sim_T,
                               store_slices=cfg.grid_store_slices)
        return extract_policy(grid, cfg.model, cfg.cost), "hjb-grid", grid
    if source == "file":
        if not args.grid_file:
            raise ConfigError("--grid-file is required with --policy file")
        grid = read_value_grid(args.grid_file)
        return extract_policy(grid, cfg.model, cfg.cost), "hjb-file", grid
    raise ConfigError(f"unknown policy source {source!r}")


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    policy, policy_id, grid = _resolve_policy(cfg, args)
    rho0 = state_from_bloch(cfg.rho0_bloch)
    report = estimate_expected_cost(
        cfg.model, cfg.cost, policy, rho0, cfg.sim_t0, cfg.sim_T, cfg.sim_dt,
        cfg.n_traj, cfg.master_seed, policy_id=policy_id,
        rho0_bloch=cfg.rho0_bloch)
    payload = {**cfg.output_stamp(), **report.to_json()}
    if grid is not None:
        payload["value_at_start"] = grid.value_at(cfg.sim_t0, cfg.rho0_bloch)
    _write_json(out / "cost_report.json", payload)
    _say(args, f"mean J = {report.mean_J:.6f} ± {report.stderr_J:.6f} "
               f"({cfg.n_traj} trajectories)")
    n_dump = min(args.dump_trajectories, cfg.n_traj)
    sample_trajs = []
    n_sample = max(n_dump, 0 if args.no_plots else min(5, cfg.n_traj))
    for i in range(n_sample):
        noise = NoisePath.generate(cfg.sim_t0, cfg.sim_T, cfg.sim_dt,
                                   derive_seed(cfg.master_seed, i))
        traj = simulate_ito(cfg.model, policy, rho0, noise)
        sample_trajs.append(traj)
        if i < n_dump:
            trajectory_to_csv(traj, out / f"trajectory_{i:04d}.csv")
    if not args.no_plots:
        from . import plots
        plots.cost_histogram_figure(
            report.costs, out / "cost_histogram.png", mean=report.mean_J,
            stderr=report.stderr_J, value=payload.get("value_at_start"))
        if sample_trajs:
            plots.trajectories_figure(sample_trajs, out / "trajectories.png")
    return 0


# ---------------------------------------------------------------------------
# verify


def _check(name, status, **details):
    return {"name": name, "status": status, **details}


def _verify_battery(cfg: ExperimentConfig, args):
    checks = []
    rng = np.random.default_rng(cfg.master_seed)
    model, cost = cfg.model, cfg.cost

    # Stratonovich drift identity v = w - c over random states
    worst = 0.0
    for n in (2, 3):
        test_model = model if n == model.dim else ModelSpec(
            dim=n, hamiltonian=np.zeros((n, n)), controls=(),
            coupling=np.asarray(
                np.diag(np.arange(1, n + 1)) + 0.3j * np.eye(n, k=1),
                dtype=complex),
            u_max=np.zeros(0))
        for _ in range(500):
            rho = random_density(n, rng)
            u = rng.uniform(-1, 1, test_model.n_controls) \
                if test_model.n_controls else np.zeros(0)
            v = strat_drift(test_model, 0.0, u, rho)
            wc = ito_drift(test_model, 0.0, u, rho) \
                - strat_correction(test_model, rho)
            worst = max(worst, float(np.abs(v - wc).max()))
    checks.append(_check("stratonovich_identity",
                         "pass" if worst <= 1e-12 else "fail",
                         measured=worst, tolerance=1e-12))

    # conservation: traceless drift and diffusion
    worst = 0.0
    for _ in range(200):
        rho = random_density(model.dim, rng)
        u = rng.uniform(-1, 1, model.n_controls)
        worst = max(worst,
                    abs(complex(np.trace(ito_drift(model, 0.0, u, rho))).real),
                    abs(complex(np.trace(diffusion(model, rho))).real))
    checks.append(_check("traceless_coefficients",
                         "pass" if worst <= 1e-12 else "fail",
                         measured=worst, tolerance=1e-12))

    # generator equivalence
    dev = generator_identity_check(model, n_samples=40,
                                   seed=derive_seed(cfg.master_seed, 101))
    checks.append(_check("generator_equivalence",
                         "pass" if dev <= 1e-5 else "fail",
                         measured=dev, tolerance=1e-5))

    # argmin invariance + grid cross-check
    ok = argmin_invariance_check(model, cost, n_samples=60,
                                 seed=derive_seed(cfg.master_seed, 102))
    cells = lq_control_grid_check(model, cost, n_samples=20,
                                  seed=derive_seed(cfg.master_seed, 103))
    checks.append(_check("argmin_invariance",
                         "pass" if ok and cells <= 1.0 else "fail",
                         grid_distance_cells=cells))

    # integrator ladders on a shared path
    noise = NoisePath.generate(cfg.sim_t0, cfg.sim_T, 4 * cfg.sim_dt,
                               derive_seed(cfg.master_seed, 104))
    reports = scheme_consistency_report(model, _zero_policy(model),
                                        state_from_bloch(cfg.rho0_bloch),
                                        noise, depth=3)
    for key, rep in reports.items():
        checks.append(_check(f"ladder_{key}",
                             "pass" if rep.passing else "fail",
                             **rep.to_json()))

    # dynamic-programming closure
    fine, coarse = _solve_grids(cfg)
    s_fine = fine.value_at(cfg.sim_t0, cfg.rho0_bloch)
    s_coarse = coarse.value_at(cfg.sim_t0, cfg.rho0_bloch)
    eps_grid = abs(s_fine - s_coarse)
    policy = extract_policy(fine, cfg.model, cfg.cost)
    rho0 = state_from_bloch(cfg.rho0_bloch)
    rep_p = estimate_expected_cost(model, cost, policy, rho0, cfg.sim_t0,
                                   cfg.sim_T, cfg.sim_dt, cfg.n_traj,
                                   cfg.master_seed, policy_id="hjb",
                                   rho0_bloch=cfg.rho0_bloch)
    rep_0 = estimate_expected_cost(model, cost, _zero_policy(model), rho0,
                                   cfg.sim_t0, cfg.sim_T, cfg.sim_dt,
                                   cfg.n_traj, cfg.master_seed,
                                   policy_id=ZERO_POLICY_ID,
                                   rho0_bloch=cfg.rho0_bloch)
    gap = abs(rep_p.mean_J - s_fine)
    tol = 3.0 * rep_p.stderr_J + eps_grid
    if gap <= tol:
        status = "pass"
    elif 3.0 * rep_p.stderr_J > 0.15 * max(1.0, abs(s_fine)):
        status = "inconclusive"  # sample too small to resolve the value
    else:
        status = "fail"
    checks.append(_check("value_vs_cost", status, value=s_fine,
                         mean_J=rep_p.mean_J, stderr=rep_p.stderr_J,
                         eps_grid=eps_grid, gap=gap, tolerance=tol))

    # paired improvement over the uncontrolled policy (common noise seeds)
    diff = rep_0.costs - rep_p.costs
    d_mean = float(np.mean(diff))
    d_err = float(np.std(diff, ddof=1) / np.sqrt(len(diff))) if len(diff) > 1 else 0.0
    if d_mean > 3.0 * d_err and d_err > 0.0:
        status = "pass"
    elif 3.0 * (rep_p.stderr_J + rep_0.stderr_J) > 0.15:
        status = "inconclusive"
    else:
        status = "fail"
    checks.append(_check("policy_improvement", status,
                         mean_J_zero=rep_0.mean_J, mean_J_policy=rep_p.mean_J,
                         paired_gain=d_mean, paired_stderr=d_err))

    # thread invariance on a small batch
    rep_a = estimate_expected_cost(model, cost, policy, rho0, cfg.sim_t0,
                                   cfg.sim_T, cfg.sim_dt,
                                   min(16, cfg.n_traj), cfg.master_seed,
                                   threads=1)
    rep_b = estimate_expected_cost(model, cost, policy, rho0, cfg.sim_t0,
                                   cfg.sim_T, cfg.sim_dt,
                                   min(16, cfg.n_traj), cfg.master_seed,
                                   threads=4)
    identical = bool(np.array_equal(rep_a.costs, rep_b.costs))
    checks.append(_check("thread_invariance",
                         "pass" if identical else "fail"))

    return checks, reports, fine, rep_p, rep_0, eps_grid


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checks, reports, grid, rep_p, rep_0, eps_grid = _verify_battery(cfg, args)
    statuses = [c["status"] for c in checks]
    overall = ("pass" if all(s == "pass" for s in statuses)
               else "inconclusive" if all(s != "fail" for s in statuses)
               else "fail")
    payload = {**cfg.output_stamp(), "overall": overall, "checks": checks}
    _write_json(out / "verify.json", payload)
    for c in checks:
        _say(args, f"[{c['status']:>12}] {c['name']}")
    _say(args, f"overall: {overall}")
    if not args.no_plots:
        from . import plots
        plots.convergence_figure(reports, out / "convergence.png")
        plots.cost_histogram_figure(rep_p.costs, out / "value_check.png",
                                    mean=rep_p.mean_J, stderr=rep_p.stderr_J,
                                    value=grid.value_at(cfg.sim_t0,
                                                        cfg.rho0_bloch))
        plots.check_summary_figure(checks, out / "verify_summary.png")
    return 0 if overall == "pass" else 3


# ---------------------------------------------------------------------------
# master and convergence


def cmd_master(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rho0 = state_from_bloch(cfg.rho0_bloch)
    m = cfg.model.n_controls
    traj = master_solve(cfg.model, cfg.sim_t0, cfg.sim_T, cfg.sim_dt,
                        lambda t: np.zeros(m), rho0)
    trajectory_to_csv(traj, out / "master_trajectory.csv")
    final_cost = float(np.trace(traj.final_state @ cfg.cost.terminal_op).real)
    _write_json(out / "master_summary.json", {
        **cfg.output_stamp(),
        "terminal_cost": final_cost,
        "final_bloch": [2.0 * traj.final_state[0, 1].real,
                        -2.0 * traj.final_state[0, 1].imag,
                        float((traj.final_state[0, 0]
                               - traj.final_state[1, 1]).real)],
    })
    _say(args, f"terminal cost <rho(T), S> = {final_cost:.6f}")
    if not args.no_plots:
        from . import plots
        plots.bloch_components_figure(traj, out / "master_trajectory.png")
    return 0


def cmd_convergence(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    noise = NoisePath.generate(cfg.sim_t0, cfg.sim_T, 4 * cfg.sim_dt,
                               derive_seed(cfg.master_seed, 104))
    reports = scheme_consistency_report(
        cfg.model, _zero_policy(cfg.model), state_from_bloch(cfg.rho0_bloch),
        noise, depth=args.depth)
    payload = {**cfg.output_stamp(),
               "reports": {k: r.to_json() for k, r in reports.items()}}
    _write_json(out / "convergence.json", payload)
    for name, rep in reports.items():
        _say(args, f"{name}: errors {['%.3e' % e for e in rep.errors]} "
                   f"order ≈ {rep.order:.2f}")
    if not args.no_plots:
        from . import plots
        plots.convergence_figure(reports, out / "convergence.png")
    if not all(r.passing for r in reports.values()):
        raise AcceptanceFailure("a convergence ladder is not monotone")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qfc",
        description="Quantum filtering and feedback-control toolkit "
                    f"(v{__version__})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--no-plots", action="store_true",
                       help="skip figure rendering")

    p = sub.add_parser("solve-hjb", help="solve the Bloch-ball Bellman PDE")
    common(p)
    p.set_defaults(func=cmd_solve_hjb)

    p = sub.add_parser("simulate", help="closed-loop Monte-Carlo")
    common(p)
    p.add_argument("--policy", choices=["zero", "file", "hjb-grid"],
                   default="hjb-grid")
    p.add_argument("--grid-file", default=None,
                   help="value-grid file for --policy file")
    p.add_argument("--dump-trajectories", type=int, default=0,
                   help="write the first N trajectory CSVs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the verification battery")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("master", help="deterministic master-equation run")
    common(p)
    p.set_defaults(func=cmd_master)

    p = sub.add_parser("convergence", help="integrator consistency ladders")
    common(p)
    p.add_argument("--depth", type=int, default=3)
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except AcceptanceFailure as exc:
        print(f"acceptance failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
