"""Command-line entry point.

Commands: validate, analyze, run, sweep, estimator-stats.
Exit codes: 0 ok, 2 configuration error, 3 runtime invariant breach.
Errors are emitted as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys

import numpy as np

from . import analysis, games, learners
from .errors import BAD_PARAMS, PARSE_ERROR, ConfigError, RuntimeBreach, SgpgError
from .estimators import NoiseConfig, reinforce_stats
from .geometry import lazy_basin_scores
from .simulate import RngState

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _emit_error(exc):
    doc = {"error": getattr(exc, "code", "ERROR"), "message": str(exc)}
    if hasattr(exc, "errors"):
        doc["errors"] = [{"code": c, "message": m} for c, m in exc.errors]
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def _resolve_game(spec):
    """`builtin:name[:k=v,...]` or a path to a game JSON file."""
    if spec.startswith("builtin:"):
        rest = spec[len("builtin:"):]
        name, _, raw = rest.partition(":")
        params = {}
        if raw:
            for item in raw.split(","):
                key, _, val = item.partition("=")
                if not _:
                    raise ConfigError(BAD_PARAMS, f"bad builtin parameter '{item}'")
                params[key] = _parse_scalar(val)
        if "actions" in params:
            params["actions"] = tuple(int(x) for x in str(params["actions"]).split("x"))
        return games.builtin_game(name, **params)
    return games.load_game(spec)


def _parse_scalar(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _resolve_pi_star(spec, game):
    if spec is None:
        return None
    if spec == "brute_force":
        found = analysis.brute_force_deterministic_nash(game)
        for prof in found:
            report = analysis.classify_equilibrium(game, prof)
            if report.classification == "strict_nash":
                return prof
        if found:
            return found[0]
        raise ConfigError(BAD_PARAMS, "brute force found no deterministic Nash profile")
    return games.load_policy(spec, game)


def _resolve_init(spec, game, algo, pi_star):
    if spec is None or spec == "uniform":
        init = games.uniform_policy(game)
    elif spec.startswith("near:"):
        if pi_star is None:
            raise ConfigError(BAD_PARAMS, "near-init needs --pi-star")
        init = learners.near_init(pi_star, float(spec.split(":", 1)[1]))
    elif spec.startswith("lazy_basin:"):
        if pi_star is None:
            raise ConfigError(BAD_PARAMS, "lazy_basin init needs --pi-star")
        if algo != "lpg":
            raise ConfigError(BAD_PARAMS, "lazy_basin init only makes sense for --algo lpg")
        return lazy_basin_scores(pi_star, float(spec.split(":", 1)[1]))
    else:
        init = games.load_policy(spec, game)
    return init


def _policy_doc(pi):
    return [r.tolist() for r in pi.rows]


# ---------------------------------------------------------------------------
# Commands.

def cmd_validate(args):
    game = _resolve_game(args.game)
    doc = {
        "states": len(game.states),
        "players": [{"name": p.name, "actions": p.n_actions} for p in game.players],
        "zeta_min": game.zeta_min,
        "valid": True,
    }
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args):
    game = _resolve_game(args.game)
    out = {}
    if args.brute_force:
        profiles = analysis.brute_force_deterministic_nash(game)
        out["deterministic_nash"] = []
        for prof in profiles:
            rep = analysis.classify_equilibrium(game, prof, tol=args.tol)
            out["deterministic_nash"].append({
                "policy": _policy_doc(prof),
                "classification": rep.classification,
                "fos_residual": rep.residual,
            })
    if args.policy:
        pi = games.load_policy(args.policy, game)
        rep = analysis.classify_equilibrium(game, pi, tol=args.tol)
        out["report"] = {
            "classification": rep.classification,
            "is_nash": bool(rep.is_nash),
            "fos_residual": rep.residual,
            "is_deterministic": bool(rep.is_deterministic),
            "strict_gaps": rep.strict_gaps.tolist() if rep.strict_gaps is not None else None,
            "sos_max_quad": rep.sos.max_quad,
            "sos_mu_hat": rep.sos.mu_hat,
            "vertex_margin": rep.vertex_margin,
        }
    if not out:
        raise ConfigError(BAD_PARAMS, "analyze needs a policy file or --brute-force")
    text = json.dumps(out, sort_keys=True, indent=1)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "analysis.json"), "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _build_schedule(args):
    mode = "geometric" if args.mode == "geometric" else "standard"
    return learners.Schedule(gamma=args.gamma, m=args.m, p=args.p,
                             eps0=args.eps0, r_exp=args.r_exp,
                             model=args.model, mode=mode)


def _run_config_echo(args):
    return {
        "game": args.game,
        "model": args.model,
        "algo": args.algo,
        "gamma": args.gamma, "m": args.m, "p": args.p,
        "eps0": args.eps0, "r_exp": args.r_exp,
        "mode": args.mode,
        "horizon": args.horizon,
        "seeds": args.seeds,
        "master_seed": args.master_seed,
        "init": args.init,
        "pi_star": args.pi_star,
        "log_every": args.log_every,
        "noise_scale": args.noise_scale,
        "basin_radius": args.basin_radius,
        "confidence_delta": args.delta,
    }


def _execute_run(args, out_dir):
    if args.horizon < 1:
        raise ConfigError(BAD_PARAMS, f"horizon must be >= 1, got {args.horizon}")
    if args.seeds < 1:
        raise ConfigError(BAD_PARAMS, f"seeds must be >= 1, got {args.seeds}")
    game = _resolve_game(args.game)
    sched = _build_schedule(args)
    pi_star = _resolve_pi_star(args.pi_star, game)
    init = _resolve_init(args.init, game, args.algo, pi_star)
    noise_cfg = NoiseConfig(kind=args.noise_kind, scale=args.noise_scale)
    echo = _run_config_echo(args)

    logs = learners.run_many(
        game, args.model, args.algo, sched, init, args.horizon,
        seeds=args.seeds, master_seed=args.master_seed, pi_star=pi_star,
        noise_cfg=noise_cfg, log_every=args.log_every, fos_every=args.fos_every,
        workers=args.workers, config_echo=echo)

    os.makedirs(out_dir, exist_ok=True)
    for log in logs:
        stem = os.path.join(out_dir, f"run_seed{log.seed:04d}")
        log.to_csv(stem + ".csv")
        log.write_sidecar(stem + ".json")

    summary = {"config": echo, "seeds": args.seeds}
    finals = [float(log.dist_sq[-1]) for log in logs
              if log.dist_sq.size and not math.isnan(float(log.dist_sq[-1]))]
    if finals:
        summary["final_dist_sq"] = {
            "mean": statistics.fmean(finals),
            "median": statistics.median(finals),
        }
    n0s = [log.n0 for log in logs if log.n0 is not None]
    summary["n0"] = {
        "count": len(n0s),
        "fraction": len(n0s) / len(logs),
        "values": n0s,
        "median": statistics.median(n0s) if n0s else None,
    }
    if pi_star is not None and args.fit_window:
        lo, hi = args.fit_window
        try:
            fit = analysis.fit_rate(logs, (lo, hi), basin_radius=args.basin_radius)
            summary["rate_fit"] = {
                "slope": fit.slope, "stderr": fit.stderr,
                "n_points": fit.n_points,
                "runs_used": fit.n_runs_used,
                "runs_excluded": fit.n_runs_excluded,
                "basin_exit_fraction": fit.exclusion_fraction,
            }
        except ConfigError as e:
            summary["rate_fit"] = {"error": str(e)}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return summary


def cmd_run(args):
    summary = _execute_run(args, args.out)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args):
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(PARSE_ERROR, f"{args.config}: line {e.lineno}: {e.msg}") from e
    except OSError as e:
        raise ConfigError(PARSE_ERROR, f"{args.config}: {e}") from e
    base = doc.get("base", {})
    grid = doc.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError(PARSE_ERROR, f"{args.config}: 'grid' must be an object of arrays")

    keys = sorted(grid)
    combos = [[]]
    for key in keys:
        vals = grid[key]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(PARSE_ERROR, f"{args.config}: grid '{key}' must be a non-empty array")
        combos = [c + [(key, v)] for c in combos for v in vals]

    rows = []
    for idx, combo in enumerate(combos):
        entry = dict(base)
        entry.update(dict(combo))
        entry_args = _args_from_entry(entry, args)
        entry_dir = os.path.join(args.out, f"entry{idx:03d}")
        summary = _execute_run(entry_args, entry_dir)
        row = {"entry": idx}
        row.update(dict(combo))
        row["final_dist_sq_mean"] = summary.get("final_dist_sq", {}).get("mean")
        row["n0_fraction"] = summary["n0"]["fraction"]
        fit = summary.get("rate_fit") or {}
        row["slope"] = fit.get("slope")
        row["basin_exit_fraction"] = fit.get("basin_exit_fraction")
        rows.append(row)

    os.makedirs(args.out, exist_ok=True)
    header = ["entry"] + keys + ["final_dist_sq_mean", "n0_fraction", "slope", "basin_exit_fraction"]
    with open(os.path.join(args.out, "sweep_summary.csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if row.get(k) is None else repr(row.get(k)).replace("'", "")
                              for k in header) + "\n")
    print(json.dumps({"entries": len(rows), "out": args.out}, sort_keys=True))
    return EXIT_OK


def _args_from_entry(entry, cli_args):
    ns = argparse.Namespace(**vars(cli_args))
    for key, val in entry.items():
        key = key.replace("-", "_")
        if not hasattr(ns, key):
            raise ConfigError(BAD_PARAMS, f"sweep config sets unknown field '{key}'")
        setattr(ns, key, tuple(val) if key == "fit_window" and val else val)
    return ns


def cmd_estimator_stats(args):
    game = _resolve_game(args.game)
    if args.policy:
        pi = games.load_policy(args.policy, game)
    else:
        pi = games.uniform_policy(game)
    rng = RngState(args.master_seed, 0)
    stats = reinforce_stats(game, pi, args.episodes, rng, eps=args.eps)
    raw_dev = np.max(np.abs(stats.mean - stats.score_mean) / np.maximum(stats.se, 1e-300))
    tan_dev = np.max(np.abs(stats.tangent_mean - stats.tangent_exact)
                     / np.maximum(stats.tangent_se, 1e-300))
    doc = {
        "episodes": stats.n_episodes,
        "eps": args.eps,
        "raw_mean_dev_in_se_units": float(raw_dev),
        "tangent_mean_dev_in_se_units": float(tan_dev),
        "mse_per_player": stats.mse_per_player.tolist(),
        "mse_bound_per_player": stats.mse_bound_per_player.tolist(),
        "bounds_hold": bool(np.all(stats.mse_per_player <= stats.mse_bound_per_player)),
    }
    text = json.dumps(doc, sort_keys=True, indent=1)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "estimator_stats.json"), "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.

def build_parser():
    parser = argparse.ArgumentParser(
        prog="sgpg",
        description="Stochastic games with random stopping: exact analysis and policy-gradient experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("validate", help="validate a game file or builtin")
    pv.add_argument("--game", required=True, help="path or builtin:<name>[:k=v,...]")
    pv.set_defaults(func=cmd_validate)

    pa = sub.add_parser("analyze", help="classify a policy and/or enumerate deterministic Nash")
    pa.add_argument("--game", required=True)
    pa.add_argument("--policy", help="policy JSON file to classify")
    pa.add_argument("--brute-force", action="store_true",
                    help="enumerate deterministic Nash profiles first")
    pa.add_argument("--tol", type=float, default=1e-8)
    pa.add_argument("--out", help="directory for analysis.json")
    pa.set_defaults(func=cmd_analyze)

    pr = sub.add_parser("run", help="run a learning experiment")
    _add_run_flags(pr)
    pr.set_defaults(func=cmd_run)

    ps = sub.add_parser("sweep", help="expand a config-file grid into runs")
    ps.add_argument("--config", required=True, help="JSON file with 'base' and 'grid'")
    ps.add_argument("--out", required=True)
    _add_run_flags(ps, with_required=False)
    ps.set_defaults(func=cmd_sweep)

    pe = sub.add_parser("estimator-stats", help="empirical estimator statistics")
    pe.add_argument("--game", required=True)
    pe.add_argument("--policy")
    pe.add_argument("--eps", type=float, default=0.0)
    pe.add_argument("--episodes", type=int, default=10_000)
    pe.add_argument("--master-seed", "--seed", dest="master_seed", type=int, default=0)
    pe.add_argument("--out")
    pe.set_defaults(func=cmd_estimator_stats)
    return parser


def _add_run_flags(p, with_required=True):
    p.add_argument("--game", required=with_required)
    p.add_argument("--model", choices=["full", "stochastic", "value_based"], default="full")
    p.add_argument("--algo", choices=["pg", "lpg"], default="pg")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--eps0", type=float, default=0.0)
    p.add_argument("--r-exp", type=float, default=0.0)
    p.add_argument("--mode", choices=["standard", "geometric"], default="standard")
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--master-seed", "--seed", dest="master_seed", type=int, default=0)
    p.add_argument("--init", help="uniform | near:<radius> | lazy_basin:<margin> | policy file")
    p.add_argument("--pi-star", help="policy file or 'brute_force'")
    if "sweep" not in p.prog:
        p.add_argument("--out", required=with_required)
    p.add_argument("--log-every", type=int, default=1)
    p.add_argument("--fos-every", type=int, default=0)
    p.add_argument("--noise-kind", choices=["uniform", "gaussian"], default="uniform")
    p.add_argument("--noise-scale", type=float, default=0.0)
    p.add_argument("--basin-radius", type=float)
    p.add_argument("--delta", type=float, default=0.1,
                   help="confidence level echoed into reports (reporting only)")
    p.add_argument("--fit-window", type=int, nargs=2, metavar=("N_LO", "N_HI"))
    p.add_argument("--workers", type=int)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on unknown flags/bad values, which matches the
        # config-error convention; --help exits 0.
        return int(e.code or 0)
    try:
        return args.func(args)
    except RuntimeBreach as e:
        _emit_error(e)
        return EXIT_RUNTIME
    except SgpgError as e:
        _emit_error(e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
