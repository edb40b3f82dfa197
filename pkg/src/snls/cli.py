"""Configuration-driven command line.

Subcommands: skeleton, sde, truncated, rate, sweep, diagnose.  Every run
writes its artifacts into a fresh directory named by UTC timestamp plus a
hash of the resolved config, together with a manifest echoing the config,
the seed, and package versions.  Exit codes: 0 success, 2 config error,
3 numerical blow-up.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import __version__, config
from .diagnostics import (
    ito_stratonovich_gap,
    sde_strong_self_convergence,
    skeleton_self_convergence,
    strichartz_ratio_survey,
    weak_convergence_probe,
)
from .grid import set_fft_workers
from .ldp import RateOptions, minimize_action
from .mc import epsilon_sweep
from .noise import SeedSpec
from .operators import NoiseModel
from .skeleton import Control, solve_skeleton
from .stepping import BlowUpError
from .stochastic import solve_sde, solve_truncated
from .config import ConfigError


def _fmt(x) -> str:
    return f"{x:.17g}"


def make_run_dir(out_root: str, cfg: dict) -> str:
    stamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    name = f"{stamp}_{config.config_hash(cfg)}"
    path = os.path.join(out_root, name)
    os.makedirs(path, exist_ok=False)
    return path


def write_manifest(run_dir: str, cfg: dict, subcommand: str, extra: dict | None = None) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": cfg,
        "config_hash": config.config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {"snls": __version__, "numpy": np.__version__},
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_skeleton(setup, run_dir):
    traj = solve_skeleton(setup.u0, setup.control, setup.params, setup.noise, setup.dt, setup.t_final)
    traj.to_csv(os.path.join(run_dir, "trajectory.csv"))
    if setup.cfg["output"]["fields"]:
        traj.dump_fields(os.path.join(run_dir, "fields.bin"))
    return {"terminal_h_norm": traj.h_norms[-1]}


def cmd_sde(setup, run_dir):
    traj = solve_sde(
        setup.u0, setup.control, setup.params, setup.noise,
        SeedSpec(setup.seed), setup.dt, setup.t_final, mode=setup.mode,
    )
    traj.to_csv(os.path.join(run_dir, "trajectory.csv"))
    if setup.cfg["output"]["fields"]:
        traj.dump_fields(os.path.join(run_dir, "fields.bin"))
    return {"terminal_h_norm": traj.h_norms[-1]}


def cmd_truncated(setup, run_dir):
    traj, report = solve_truncated(
        setup.u0, setup.control, setup.params, setup.noise,
        SeedSpec(setup.seed), setup.dt, setup.t_final, setup.trunc, mode=setup.mode,
    )
    traj.to_csv(os.path.join(run_dir, "trajectory.csv"))
    if setup.cfg["output"]["fields"]:
        traj.dump_fields(os.path.join(run_dir, "fields.bin"))
    with open(os.path.join(run_dir, "stop_report.json"), "w") as fh:
        json.dump({"tau": report.tau, "hit": report.hit, "level": report.level}, fh, indent=2)
        fh.write("\n")
    return {"tau": report.tau, "hit": report.hit}


def cmd_rate(setup, run_dir):
    if setup.event is None:
        raise ConfigError("event: a rate computation needs an event block")
    rc = setup.cfg["rate"]
    opts = RateOptions(
        segments=rc["segments"] if rc["segments"] is not None else setup.cfg["control"]["segments"],
        penalty0=rc["penalty0"],
        penalty_factor=rc["penalty_factor"],
        rounds=rc["rounds"],
        feas_tol=rc["feas_tol"],
        fd_step=rc["fd_step"],
        maxiter_inner=rc["maxiter_inner"],
        budget=rc["budget"],
    )
    result = minimize_action(
        setup.u0, setup.event, setup.params, setup.noise, setup.dt, setup.t_final, opts
    )
    with open(os.path.join(run_dir, "rate_result.json"), "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"cost": result.cost, "feasible": result.feasible}


def cmd_sweep(setup, run_dir):
    if setup.event is None:
        raise ConfigError("event: a sweep needs an event block")
    sw = setup.cfg["sweep"]
    result = epsilon_sweep(
        setup.u0, setup.control, setup.params, setup.noise, setup.event,
        sw["epsilons"], sw["n_paths"], setup.seed, setup.dt, setup.t_final,
        mode=setup.mode, threads=setup.threads,
    )
    result.to_csv(os.path.join(run_dir, "sweep.csv"))
    return {"rows": len(result.rows)}


def cmd_diagnose(setup, run_dir):
    dg = setup.cfg["diagnostics"]
    checks = []

    st = dg["strichartz"]
    p = st["p"] if st["p"] is not None else setup.params.p
    r = st["r"] if st["r"] is not None else setup.params.r
    survey = strichartz_ratio_survey(
        setup.grid, st["n_samples"], p, r, st["t_final"], st["dt"], st["preset"], seed=setup.seed
    )
    checks.append(
        {"name": "strichartz_max_ratio", "value": survey["max_ratio"],
         "threshold": st["max_ratio"], "passed": bool(survey["finite"] and survey["max_ratio"] <= st["max_ratio"])}
    )

    b_only = NoiseModel(setup.grid, setup.noise.b_specs, [], setup.noise.g_shape)
    its = dg["ito_strat"]
    gap = ito_stratonovich_gap(setup.u0, setup.params, b_only, its["dts"], its["t_final"], seed=setup.seed)
    lo, hi = its["slope_range"]
    checks.append(
        {"name": "ito_stratonovich_slope", "value": gap["slope"],
         "threshold": [lo, hi], "passed": bool(gap["slope"] is not None and lo <= gap["slope"] <= hi)}
    )

    so = dg["skeleton_order"]
    sk = skeleton_self_convergence(
        setup.u0, None, setup.params, setup.noise, so["dt_coarse"], so["t_final"]
    )
    lo, hi = so["range"]
    checks.append(
        {"name": "skeleton_order", "value": sk["order"], "threshold": [lo, hi],
         "passed": bool(sk["order"] is not None and lo <= sk["order"] <= hi)}
    )

    sd = dg["sde_order"]
    sde_fit = sde_strong_self_convergence(
        setup.u0, setup.params, setup.noise, sd["dt_coarse"], sd["t_final"],
        n_paths=sd["n_paths"], seed=setup.seed,
    )
    lo, hi = sd["range"]
    checks.append(
        {"name": "sde_strong_order", "value": sde_fit["order"], "threshold": [lo, hi],
         "passed": bool(sde_fit["order"] is not None and lo <= sde_fit["order"] <= hi)}
    )

    wk = dg["weak"]
    segs = setup.control.segments
    pert = Control(
        0.2 * np.ones((setup.noise.m1, segs)), 0.2 * np.ones((setup.noise.m2, segs)), setup.t_final
    )
    probe = weak_convergence_probe(
        setup.u0, setup.control, pert, setup.params, setup.noise,
        wk["epsilons"], wk["delta"], wk["n_paths"], setup.seed, setup.dt, setup.t_final,
    )
    checks.append(
        {"name": "weak_convergence_monotone", "value": [r_["probability"] for r_ in probe["rows"]],
         "threshold": "non-increasing", "passed": bool(probe["monotone"])}
    )

    ys = dg["yosida"]
    ref = solve_skeleton(setup.u0, setup.control, setup.params, setup.noise, setup.dt, setup.t_final)
    from .trajectory import mixed_norm_of_difference

    dists = []
    for mu in ys["mus"]:
        ym = solve_skeleton(
            setup.u0, setup.control, setup.params, setup.noise, setup.dt, setup.t_final, mu=mu
        )
        dists.append(mixed_norm_of_difference(ym, ref, setup.params.p, setup.params.r))
    decreasing = all(b < a for a, b in zip(dists, dists[1:]))
    checks.append(
        {"name": "yosida_convergence", "value": dists, "threshold": ys["tail_tol"],
         "passed": bool(decreasing and dists[-1] <= ys["tail_tol"])}
    )

    with open(os.path.join(run_dir, "diagnostics.json"), "w") as fh:
        json.dump({"checks": checks}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(run_dir, "diagnostics.csv"), "w") as fh:
        fh.write("name,passed,value\n")
        for c in checks:
            fh.write(f"{c['name']},{int(c['passed'])},\"{c['value']}\"\n")
    return {"passed": all(c["passed"] for c in checks), "n_checks": len(checks)}


COMMANDS = {
    "skeleton": cmd_skeleton,
    "sde": cmd_sde,
    "truncated": cmd_truncated,
    "rate": cmd_rate,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snls", description=__doc__)
    ap.add_argument("subcommand", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="path to the JSON config file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (dotted path, JSON value); repeatable")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=None, help="worker pool size")
    ap.add_argument("--out", default=None, help="output root (default $SNLS_OUT_DIR or ./runs)")
    ap.add_argument("--dry-run", action="store_true", help="validate and print the resolved config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config.load(args.config)
        for ov in args.overrides:
            if "=" not in ov:
                raise ConfigError(f"--set {ov!r}: expected KEY=VALUE")
            key, _, val = ov.partition("=")
            cfg = config.apply_override(cfg, key, val)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads is not None:
            cfg["threads"] = args.threads
        config.validate(cfg)
        setup = config.build_setup(cfg)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    if args.dry_run:
        sys.stdout.write(config.serialize(cfg))
        return 0

    out_root = args.out or os.environ.get("SNLS_OUT_DIR") or "runs"
    set_fft_workers(setup.threads)
    run_dir = make_run_dir(out_root, cfg)
    try:
        summary = COMMANDS[args.subcommand](setup, run_dir)
    except BlowUpError as e:
        print(f"blow-up: {e}", file=sys.stderr)
        write_manifest(run_dir, cfg, args.subcommand, {"status": "blow-up", "detail": str(e)})
        return 3
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    write_manifest(run_dir, cfg, args.subcommand, {"status": "ok", "summary": _jsonable(summary)})
    print(run_dir)
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


if __name__ == "__main__":
    sys.exit(main())
