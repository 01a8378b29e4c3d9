"""Command-line entry point: ``tracelab <subcommand> ...``.

Exit codes: 0 success, 1 property-suite failure, 2 input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import contraction, environments as envs
from .harness import (
    SweepConfig,
    aggregate,
    best_sigma,
    episodes_to_optimal,
    maze_config,
    random_walk_config,
    run_sweep,
    summary_to_csv,
)
from .mdp import MDPError, load_mdp, uniform_policy, validate_policy
from .oracle import NonConvergenceError, solve_q_pi, solve_q_star

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("TRACELAB_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"TRACELAB_SEED must be an integer, got {raw!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# -- solve ----------------------------------------------------------------------


def _load_policy_csv(path: str, mdp) -> np.ndarray:
    pi = np.zeros(mdp.shape)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["state", "action", "prob"]:
            raise InputError(f"{path}: policy CSV header must be 'state,action,prob'")
        for lineno, row in enumerate(reader, start=2):
            try:
                s, a, p = int(row[0]), int(row[1]), float(row[2])
                pi[s, a] = p
            except (ValueError, IndexError):
                raise InputError(f"{path}: line {lineno}: bad policy row {row!r}") from None
    for s in mdp.terminal:
        pi[s] = 1.0 / mdp.num_actions
    return validate_policy(mdp, pi)


def cmd_solve(args) -> int:
    sources = [args.mdp_file is not None, args.random_walk is not None, args.maze is not None]
    if sum(sources) != 1:
        raise InputError("give exactly one of MDP_FILE, --random-walk or --maze")
    if args.mdp_file is not None:
        mdp = load_mdp(args.mdp_file)
        if args.gamma is not None:
            mdp = mdp.with_gamma(args.gamma)
    elif args.random_walk is not None:
        mdp = envs.build_random_walk(args.random_walk, 0.9 if args.gamma is None else args.gamma)
    else:
        layout = envs.builtin_maze(args.maze) if args.maze in envs.BUILTIN_MAZES else envs.load_maze(args.maze)
        mdp = envs.build_maze(layout, 0.99 if args.gamma is None else args.gamma)

    if args.policy == "optimal":
        Q = solve_q_star(mdp)
    elif args.policy == "uniform":
        Q = solve_q_pi(mdp, uniform_policy(*mdp.shape))
    else:
        Q = solve_q_pi(mdp, _load_policy_csv(args.policy, mdp))

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["state", "action", "value"])
    for s in range(mdp.num_states):
        if mdp.is_terminal(s):
            continue
        for a in range(mdp.num_actions):
            out.writerow([s, a, repr(float(Q[s, a]))])
    return EXIT_OK


# -- check-contraction --------------------------------------------------------------


def cmd_check_contraction(args) -> int:
    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    if args.gamma is not None and not 0.0 < args.gamma < 1.0:
        raise InputError("--gamma must lie in (0, 1)")
    for name in ("lam", "sigma"):
        value = getattr(args, name)
        if value is not None and not 0.0 <= value <= 1.0:
            raise InputError(f"--{'lambda' if name == 'lam' else name} must lie in [0, 1]")
    seed = args.seed if args.seed is not None else _default_seed()
    settings = ("eval", "control") if args.setting == "both" else (args.setting,)
    failed = False
    for kind in settings:
        trials = contraction.run_suite(
            kind, args.trials, seed,
            gamma=args.gamma, lam=args.lam, sigma=args.sigma,
            num_states=args.states, num_actions=args.actions, worst_case=args.worst_case,
        )
        covered = [t for t in trials if t.guaranteed]
        violations = [t for t in covered if not t.ok]
        label = "policy-evaluation" if kind == "eval" else "control"
        print(f"[{label}] trials={len(trials)} guaranteed={len(covered)} violations={len(violations)}")
        if covered:
            worst = max(covered, key=lambda t: t.ratio - t.eta)
            print(
                f"  max ratio={max(t.ratio for t in covered):.6g} "
                f"max(ratio - eta)={worst.ratio - worst.eta:.3g} "
                f"(trial {worst.index}: eta={worst.eta:.6g})"
            )
        for t in trials:
            if not t.guaranteed:
                print(
                    f"  trial {t.index}: no guarantee (d={t.d:.4g}, lambda={t.lam:.4g}, sigma={t.sigma:.4g}) "
                    f"observed ratio={t.ratio:.6g} eta={t.eta:.6g}"
                )
        for t in violations:
            print(f"  trial {t.index}: VIOLATION ratio={t.ratio:.12g} > eta={t.eta:.12g}")
        if args.worst_case:
            over = [t for t in covered if t.worst_case > t.eta + contraction.TOL]
            print(
                f"  worst-case operator norm exceeds eta in {len(over)}/{len(covered)} guaranteed trials "
                "(informational)"
            )
        failed |= bool(violations)
    print("FAIL" if failed else "PASS")
    return EXIT_FAIL if failed else EXIT_OK


# -- sweeps ---------------------------------------------------------------------------

_SWEEP_FLAGS = {
    # flag dest -> SweepConfig field
    "env": "env",
    "n_states": "n_states",
    "maze": "maze",
    "algorithm": "algorithm",
    "lambda_grid": "lambda_grid",
    "sigma_grid": "sigma_grid",
    "epsilon_grid": "epsilon_grid",
    "epsilon_schedule": "epsilon_schedule",
    "epsilon_end": "epsilon_end",
    "epsilon_step": "epsilon_step",
    "epsilon_factor": "epsilon_factor",
    "episodes": "episodes",
    "runs": "runs",
    "base_seed": "base_seed",
    "alpha": "alpha",
    "gamma": "gamma",
    "mode": "mode",
    "max_steps": "max_steps",
    "checkpoint_stride": "checkpoint_stride",
    "output": "output",
    "jobs": "jobs",
}


def _add_sweep_flags(p: argparse.ArgumentParser, with_env: bool) -> None:
    if with_env:
        p.add_argument("--env", choices=("random_walk", "maze"))
    p.add_argument("--config", help="flat JSON file with SweepConfig keys")
    p.add_argument("--n-states", type=int)
    p.add_argument("--maze", help="builtin maze name or ASCII layout file")
    p.add_argument("--algorithm")
    p.add_argument("--lambda-grid", type=_floats)
    p.add_argument("--sigma-grid", type=_floats)
    p.add_argument("--epsilon-grid", type=_floats)
    p.add_argument("--epsilon-schedule", choices=("constant", "linear", "exponential"))
    p.add_argument("--epsilon-end", type=float)
    p.add_argument("--epsilon-step", type=float)
    p.add_argument("--epsilon-factor", type=float)
    p.add_argument("--episodes", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--base-seed", "--seed", dest="base_seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--mode")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--checkpoint-stride", type=int)
    p.add_argument("--output", "-o")
    p.add_argument("--jobs", "-j", type=int)
    p.add_argument("--paper-scale", action="store_true", help="10,000 episodes, 10 runs, 10x10 maze")


def _build_config(args, base: SweepConfig, default_output: str) -> SweepConfig:
    cfg = base
    from_file: dict = {}
    if args.config:
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(from_file, dict):
            raise InputError("config file must hold a flat JSON object")
        try:
            cfg = SweepConfig.from_mapping({**asdict(base), **from_file})
        except (TypeError, ValueError) as exc:
            raise InputError(str(exc)) from None
    if args.paper_scale:
        cfg = replace(cfg, episodes=10_000, runs=10)
        if cfg.env == "maze":
            cfg = replace(cfg, maze="maze10x10")
    overrides = {
        field: getattr(args, dest)
        for dest, field in _SWEEP_FLAGS.items()
        if getattr(args, dest, None) is not None
    }
    cfg = replace(cfg, **overrides)
    if "base_seed" not in overrides and "base_seed" not in from_file:
        cfg = replace(cfg, base_seed=_default_seed())
    if cfg.output is None:
        cfg = replace(cfg, output=default_output)
    try:
        return cfg.validate()
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _summary_path(output: str) -> Path:
    path = Path(output)
    return path.with_name(path.stem + ".summary" + (path.suffix or ".csv"))


def _execute(cfg: SweepConfig):
    result = run_sweep(cfg)
    result.to_csv(cfg.output)
    summary = aggregate(result)
    summary_to_csv(summary, _summary_path(cfg.output))
    diverged = sum(1 for r in result.rows if r.metric == "diverged" and r.value == 1.0)
    runs = sum(1 for r in result.rows if r.metric == "diverged")
    print(f"wrote {cfg.output} ({len(result.rows)} rows) and {_summary_path(cfg.output)}")
    print(f"runs={runs} diverged={diverged}")
    return result


def _report_random_walk(cfg: SweepConfig, result) -> None:
    if cfg.algorithm != "tbq_sigma":
        return
    for eps in cfg.epsilon_grid:
        for lam in cfg.lambda_grid:
            print(f"epsilon={eps!r} lambda={lam!r} best sigma={best_sigma(result, lam, eps)!r}")


def _report_maze(cfg: SweepConfig, result) -> None:
    layout = envs.builtin_maze(cfg.maze) if cfg.maze in envs.BUILTIN_MAZES else envs.load_maze(cfg.maze)
    table = episodes_to_optimal(result, layout.shortest_path_length())
    for (lam, sigma, eps), per_seed in sorted(table.items()):
        med = statistics.median(per_seed.values())
        print(f"lambda={lam!r} sigma={sigma!r} epsilon={eps!r} median episodes-to-optimal-path={med}")


def cmd_random_walk(args) -> int:
    cfg = _build_config(args, random_walk_config(), "random_walk.csv")
    if cfg.env != "random_walk":
        raise InputError("random-walk requires env=random_walk")
    _report_random_walk(cfg, _execute(cfg))
    return EXIT_OK


def cmd_maze(args) -> int:
    cfg = _build_config(args, maze_config(), "maze.csv")
    if cfg.env != "maze":
        raise InputError("maze requires env=maze")
    _report_maze(cfg, _execute(cfg))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _build_config(args, SweepConfig(), "sweep.csv")
    result = _execute(cfg)
    if cfg.env == "maze":
        _report_maze(cfg, result)
    else:
        _report_random_walk(cfg, result)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact Q* or Q^pi of an MDP, as CSV")
    p.add_argument("mdp_file", nargs="?")
    p.add_argument("--random-walk", type=int, metavar="N", help="builtin N-state random walk")
    p.add_argument("--maze", help="builtin maze name or ASCII layout file")
    p.add_argument("--gamma", type=float)
    p.add_argument("--policy", default="optimal", help="optimal, uniform, or a state,action,prob CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check-contraction", help="randomised contraction-factor checks")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--setting", choices=("eval", "control", "both"), default="both")
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--worst-case", action="store_true", help="also report exact operator norms")
    p.set_defaults(func=cmd_check_contraction)

    p = sub.add_parser("random-walk", help="lambda/sigma/epsilon sweep on the chain random walk")
    _add_sweep_flags(p, with_env=False)
    p.set_defaults(func=cmd_random_walk)

    p = sub.add_parser("maze", help="sigma sweep on a grid maze")
    _add_sweep_flags(p, with_env=False)
    p.set_defaults(func=cmd_maze)

    p = sub.add_parser("sweep", help="generic sweep driven by a config file and flags")
    _add_sweep_flags(p, with_env=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, MDPError, NonConvergenceError, OSError, ValueError) as exc:
        print(f"tracelab: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
