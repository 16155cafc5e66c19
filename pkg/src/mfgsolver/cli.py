"""Command-line front end.

Subcommands: `train` (run the solver, emit history + checkpoint), `eval`
(paired metrics against the closed-form baseline), `baseline` (dump the
closed-form tabulation with Riccati residuals), and `report` (render figures
from a run directory's delimited outputs). Exit codes: 0 ok, 2 usage/config
error, 3 runtime failure.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import baseline_execution, baseline_systemic, dump_baseline_csv
from .config import ConfigError, config_hash, config_snapshot, load_config
from .evaluate import (evaluate, evaluate_cost, simulate_empirical,
                       write_metrics_json, write_snapshot_histograms)
from .models import TimeGrid, model_from_id
from .neural import load_checkpoint, save_checkpoint
from .streams import substream
from .trainer import TrainingAbort, train, write_history_csv
from .evaluate import actor_control

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
REFERENCE_N_TEST = 25000


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, payload: dict, artifacts: list) -> None:
    payload = dict(payload)
    payload["tool_version"] = __version__
    payload["checksums"] = {name: _sha256(out / name) for name in artifacts if (out / name).exists()}
    with open(out / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _load_config_or_exit(path: str, parser_error):
    try:
        return load_config(path)
    except ConfigError as exc:
        parser_error(str(exc))
        return None


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.k_end is not None:
        overrides["k_end"] = args.k_end
    if args.strict_determinism:
        overrides["strict_determinism"] = True
    if overrides:
        try:
            cfg = replace(cfg, **overrides)
        except ValueError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    try:
        result = train(cfg)
    except TrainingAbort as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_history_csv(result.history, out / "history.csv",
                      zero_wall_time=cfg.strict_determinism)
    meta = {
        "model_id": cfg.model_id,
        "dim_state": result.model.dim_state,
        "dim_control": result.model.dim_control,
        "measure_dim": result.model.measure_dim,
        "n_steps": cfg.n_steps,
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
    }
    save_checkpoint(result.stack, meta, out / "checkpoint.json")
    _write_manifest(out, {
        "command": "train",
        "config": config_snapshot(cfg),
        "config_path": str(args.config),
        "seed": cfg.seed,
        "overrides": overrides,
        "strict_determinism": cfg.strict_determinism,
        "threads": args.threads,
        "started_at": started,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "output_dir": str(out),
    }, ["history.csv", "checkpoint.json"])
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        stack, meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    model = model_from_id(cfg.model_id, cfg.model_params)
    grid = TimeGrid(cfg.horizon, cfg.n_steps)
    dims = (model.dim_state, model.dim_control, model.measure_dim, cfg.n_steps)
    have = (meta.get("dim_state"), meta.get("dim_control"), meta.get("measure_dim"), meta.get("n_steps"))
    if tuple(have) != dims:
        print(f"checkpoint/model mismatch: checkpoint dims {have}, config requires {dims}",
              file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    rng = substream(args.seed, "eval")
    provenance = {
        "seed": args.seed,
        "config_hash": config_hash(cfg),
        "checkpoint": str(args.checkpoint),
        "build_id": f"mfgsolver-{__version__}+{config_hash(cfg)}",
        "n_test": args.n_test,
        "check_coupling": args.check_coupling,
    }
    notes = {}
    if args.n_test < REFERENCE_N_TEST:
        notes["mc_note"] = (f"n_test={args.n_test} below the reference {REFERENCE_N_TEST}; "
                            f"Monte Carlo error bars widen by ~x{np.sqrt(REFERENCE_N_TEST / args.n_test):.2f}")

    if args.no_baseline:
        r_x0, r_noise = rng.spawn(2)
        x0 = model.init_sampler(args.n_test, r_x0)
        xi = r_noise.standard_normal((grid.n_steps, args.n_test, model.dim_noise))
        traj, measures = simulate_empirical(model, grid, actor_control(stack), x0, xi)
        j_check = evaluate_cost(model, traj, measures, grid)
        with open(out / "metrics.json", "w") as fh:
            json.dump({"j_check": j_check, "n_test": args.n_test, "provenance": provenance}, fh, indent=2)
            fh.write("\n")
        write_snapshot_histograms({"check": traj.states[:-1]}, grid.points, out / "hist_states.csv")
        write_snapshot_histograms({"check": traj.controls}, grid.points, out / "hist_controls.csv")
    else:
        if cfg.model_id == "systemic_risk":
            baseline = baseline_systemic(cfg.model_params, grid)
        elif cfg.model_id == "optimal_execution":
            baseline = baseline_execution(cfg.model_params, grid)
        else:
            print(f"model {cfg.model_id!r} has no closed-form baseline; pass --no-baseline",
                  file=sys.stderr)
            return EXIT_USAGE
        try:
            report = evaluate(stack, model, baseline, args.n_test, rng,
                              check_coupling=args.check_coupling)
        except (ValueError, RuntimeError) as exc:
            print(f"evaluation failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        write_metrics_json(report, out / "metrics.json", provenance)
        # histogram dump re-simulates the two systems with the same streams
        r2 = substream(args.seed, "eval")
        from .baselines import baseline_simulate
        rx, rn = r2.spawn(2)
        x0 = model.init_sampler(args.n_test, rx)
        xi = rn.standard_normal((grid.n_steps, args.n_test, model.dim_noise))
        traj_hat = baseline_simulate(baseline, model, args.n_test, x0=x0, increments=xi)
        traj_chk, _ = simulate_empirical(model, grid, actor_control(stack), x0, xi)
        write_snapshot_histograms({"baseline": traj_hat.states[:-1], "check": traj_chk.states[:-1]},
                                  grid.points, out / "hist_states.csv")
        write_snapshot_histograms({"baseline": traj_hat.controls, "check": traj_chk.controls},
                                  grid.points, out / "hist_controls.csv")

    _write_manifest(out, {
        "command": "eval",
        "config": config_snapshot(cfg),
        "config_path": str(args.config),
        "seed": args.seed,
        "n_test": args.n_test,
        "threads": args.threads,
        "notes": notes,
        "started_at": started,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "output_dir": str(out),
    }, ["metrics.json", "hist_states.csv", "hist_controls.csv"])
    return EXIT_OK


def cmd_baseline(args) -> int:
    try:
        cfg = load_config(args.params)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.model != cfg.model_id:
        print(f"--model {args.model!r} does not match config model {cfg.model_id!r}",
              file=sys.stderr)
        return EXIT_USAGE
    grid = TimeGrid(cfg.horizon, cfg.n_steps)
    if args.model == "systemic_risk":
        b = baseline_systemic(cfg.model_params, grid)
    elif args.model == "optimal_execution":
        b = baseline_execution(cfg.model_params, grid)
    elif args.model == "flocking":
        print("no closed-form baseline for the flocking model", file=sys.stderr)
        return EXIT_USAGE
    else:
        print(f"unknown model: {args.model!r}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    max_res = dump_baseline_csv(b, out / "baseline.csv")
    with open(out / "residual_report.json", "w") as fh:
        json.dump({"model": args.model, "max_abs_residual": max_res}, fh, indent=2)
        fh.write("\n")
    _write_manifest(out, {
        "command": "baseline",
        "config": config_snapshot(cfg),
        "config_path": str(args.params),
        "output_dir": str(out),
    }, ["baseline.csv", "residual_report.json"])
    return EXIT_OK


def cmd_report(args) -> int:
    from .plots import render_run

    run_dir = Path(args.run)
    if not run_dir.is_dir():
        print(f"run directory not found: {run_dir}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    written = render_run(run_dir, out)
    if not written:
        print("nothing to render: no history.csv, metrics.json, or histogram CSVs found",
              file=sys.stderr)
        return EXIT_USAGE
    for path in written:
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgsolver",
                                     description="Actor-critic solver for mean-field games")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training loop")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--k-end", type=int, default=None, help="override the iteration count")
    p_train.add_argument("--strict-determinism", action="store_true",
                         help="ordered reductions and zeroed timings for byte-stable outputs")
    p_train.add_argument("--threads", type=int, default=None,
                         help="recorded in the manifest; computation is vectorized in-process")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="paired evaluation against the closed-form baseline")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--n-test", type=int, default=REFERENCE_N_TEST)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--no-baseline", action="store_true",
                        help="cost-only evaluation for models without a closed form")
    p_eval.add_argument("--check-coupling", choices=("empirical", "baseline"), default="empirical",
                        help="population measure of the learned system")
    p_eval.add_argument("--threads", type=int, default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_base = sub.add_parser("baseline", help="dump the closed-form equilibrium tabulation")
    p_base.add_argument("--model", required=True)
    p_base.add_argument("--params", required=True, help="config file carrying the model parameters")
    p_base.add_argument("--out", required=True)
    p_base.set_defaults(fn=cmd_baseline)

    p_rep = sub.add_parser("report", help="render figures from a run directory")
    p_rep.add_argument("--run", required=True)
    p_rep.add_argument("--out", default=None, help="defaults to the run directory")
    p_rep.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
