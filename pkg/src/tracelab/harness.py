"""Parameter sweeps over (lambda, sigma, epsilon, seed) and their CSV outputs.

A sweep trains one fresh learner per grid cell and seed. Random-walk runs
record the MSE against the exact optimal Q at checkpoints; maze runs record
the training steps of every episode and the length of the greedy path after
it. Every run also emits one ``diverged`` row (0 or 1) at its final episode.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import environments as envs
from .algorithms import KINDS, MODES, EpsilonSchedule, LearnerConfig, train
from .mdp import TabularMDP, make_rng
from .oracle import mse, solve_q_star

CSV_HEADER = ("algorithm", "lambda", "sigma", "epsilon", "seed", "episode", "metric", "value")
SUMMARY_HEADER = (
    "algorithm", "lambda", "sigma", "epsilon", "episode", "metric", "mean", "std", "n", "diverged_count",
)
METRIC_ORDER = {"mse": 0, "steps": 1, "greedy_steps": 2, "diverged": 3}


def unit_grid(step: float = 0.1) -> list[float]:
    n = round(1.0 / step)
    return [round(k * step, 10) for k in range(n + 1)]


@dataclass
class SweepConfig:
    env: str = "random_walk"
    n_states: int = 19
    maze: str = "maze5x5"
    algorithm: str = "tbq_sigma"
    lambda_grid: list[float] = field(default_factory=unit_grid)
    sigma_grid: list[float] = field(default_factory=unit_grid)
    epsilon_grid: list[float] = field(default_factory=lambda: [0.1, 0.5, 1.0])
    epsilon_schedule: str = "constant"
    epsilon_end: float = 0.0
    epsilon_step: float = 0.0
    epsilon_factor: float = 1.0
    episodes: int = 2000
    runs: int = 5
    base_seed: int = 0
    alpha: float = 0.3
    gamma: float = 0.9
    mode: str = "forward_offline"
    max_steps: int = 100
    checkpoint_stride: int = 100
    output: str | None = None
    jobs: int = 1

    def validate(self) -> "SweepConfig":
        if self.env not in ("random_walk", "maze"):
            raise ValueError(f"unknown environment {self.env!r}")
        if self.algorithm not in KINDS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("lambda_grid", "sigma_grid", "epsilon_grid"):
            grid = getattr(self, name)
            if not grid or any(not 0.0 <= v <= 1.0 for v in grid):
                raise ValueError(f"{name} must be nonempty with values in [0, 1]")
        if self.runs < 1 or self.episodes < 1:
            raise ValueError("runs and episodes must be >= 1")
        if self.checkpoint_stride < 1:
            raise ValueError("checkpoint_stride must be >= 1")
        if not 0 <= self.base_seed < 2**64 - self.runs:
            raise ValueError("base_seed out of range")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        return self

    @classmethod
    def from_mapping(cls, data: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return replace(cls(), **data)

    @classmethod
    def from_file(cls, path: str | Path) -> "SweepConfig":
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ValueError("config file must hold a flat JSON object")
        return cls.from_mapping(data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def sigmas(self) -> list[float]:
        # sigma only parameterises tbq_sigma; other kinds run once per cell
        return list(self.sigma_grid) if self.algorithm == "tbq_sigma" else [math.nan]


def random_walk_config(**overrides) -> SweepConfig:
    return replace(SweepConfig(), **overrides)


def maze_config(**overrides) -> SweepConfig:
    base = SweepConfig(
        env="maze",
        maze="maze5x5",
        lambda_grid=[0.9],
        sigma_grid=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        epsilon_grid=[1.0],
        epsilon_schedule="linear",
        epsilon_end=0.1,
        epsilon_step=0.02,
        episodes=500,
        alpha=0.05,
        gamma=0.99,
        mode="backward_online",
        max_steps=2000,
        checkpoint_stride=1,
    )
    return replace(base, **overrides)


class Row(NamedTuple):
    algorithm: str
    lam: float
    sigma: float
    epsilon: float
    seed: int
    episode: int
    metric: str
    value: float


@dataclass
class SweepResult:
    rows: list[Row]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow([
                row.algorithm, _fmt(row.lam), _fmt(row.sigma, True), _fmt(row.epsilon),
                row.seed, row.episode, row.metric, _fmt(row.value),
            ])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "SweepResult":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = [
            Row(r[0], _parse(r[1]), _parse(r[2]), _parse(r[3]), int(r[4]), int(r[5]), r[6], _parse(r[7]))
            for r in reader
        ]
        return cls(rows)

    def diverged_runs(self) -> set[tuple]:
        return {
            (r.algorithm, _key(r.lam), _key(r.sigma), _key(r.epsilon), r.seed)
            for r in self.rows
            if r.metric == "diverged" and r.value == 1.0
        }

    def select(self, **where) -> list[Row]:
        out = []
        for row in self.rows:
            if all(_same(getattr(row, k), v) for k, v in where.items()):
                out.append(row)
        return out


def _fmt(x, blank_nan: bool = False) -> str:
    if isinstance(x, float):
        return "" if blank_nan and math.isnan(x) else repr(x)
    return str(x)


def _parse(text: str) -> float:
    return math.nan if text == "" else float(text)


def _key(x: float):
    return "nan" if isinstance(x, float) and math.isnan(x) else x


def _same(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


# -- running ------------------------------------------------------------------


@lru_cache(maxsize=16)
def build_environment(env: str, n_states: int, maze: str, gamma: float) -> TabularMDP:
    if env == "random_walk":
        return envs.build_random_walk(n_states, gamma)
    layout = envs.builtin_maze(maze) if maze in envs.BUILTIN_MAZES else envs.load_maze(maze)
    return envs.build_maze(layout, gamma)


@lru_cache(maxsize=16)
def _reference_q(env: str, n_states: int, maze: str, gamma: float) -> np.ndarray:
    return solve_q_star(build_environment(env, n_states, maze, gamma))


class RunSpec(NamedTuple):
    lam: float
    sigma: float
    epsilon: float
    run_index: int


def _learner(cfg: SweepConfig, spec: RunSpec) -> LearnerConfig:
    schedule = EpsilonSchedule(
        cfg.epsilon_schedule, spec.epsilon, cfg.epsilon_end, cfg.epsilon_step, cfg.epsilon_factor
    )
    return LearnerConfig(
        alpha=cfg.alpha,
        lam=spec.lam,
        sigma=0.0 if math.isnan(spec.sigma) else spec.sigma,
        epsilon=schedule,
        max_steps=cfg.max_steps,
        mode=cfg.mode,
        kind=cfg.algorithm,
        gamma=cfg.gamma,
    )


def run_single(cfg: SweepConfig, spec: RunSpec) -> list[Row]:
    """Train one learner and return its metric rows in canonical order."""
    mdp = build_environment(cfg.env, cfg.n_states, cfg.maze, cfg.gamma)
    seed = cfg.base_seed + spec.run_index
    learner = _learner(cfg, spec)
    head = (cfg.algorithm, spec.lam, spec.sigma, spec.epsilon, seed)
    rows: list[Row] = []

    if cfg.env == "random_walk":
        checkpoints = sorted(set(range(0, cfg.episodes + 1, cfg.checkpoint_stride)) | {cfg.episodes})
        rec = train(mdp, learner, cfg.episodes, make_rng(seed), checkpoints=checkpoints)
        q_ref = _reference_q(cfg.env, cfg.n_states, cfg.maze, cfg.gamma)
        for k in checkpoints:
            value = mse(rec.snapshots[k], q_ref, mdp) if k in rec.snapshots else math.nan
            rows.append(Row(*head, k, "mse", value))
    else:
        greedy: list[float] = []

        def observe(k, Q, stats):
            length = envs.greedy_path_length(mdp, Q, cfg.max_steps)
            greedy.append(math.nan if length is None else float(length))

        rec = train(mdp, learner, cfg.episodes, make_rng(seed), observer=observe)
        if rec.diverged:
            greedy[-1] = math.nan
        for k in range(1, cfg.episodes + 1):
            done = k <= len(rec.steps) and not (rec.diverged and k == rec.diverged_episode)
            rows.append(Row(*head, k, "steps", float(rec.steps[k - 1]) if done else math.nan))
        for k in range(1, cfg.episodes + 1):
            rows.append(Row(*head, k, "greedy_steps", greedy[k - 1] if k <= len(greedy) else math.nan))
    rows.append(Row(*head, cfg.episodes, "diverged", 1.0 if rec.diverged else 0.0))
    return rows


def _run_task(args) -> list[Row]:
    return run_single(*args)


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """Train every (lambda, sigma, epsilon, run) combination.

    Output order is canonical, so serial and parallel runs write identical files.
    """
    cfg.validate()
    build_environment(cfg.env, cfg.n_states, cfg.maze, cfg.gamma)
    specs = [
        RunSpec(lam, sigma, eps, i)
        for lam in cfg.lambda_grid
        for sigma in cfg.sigmas()
        for eps in cfg.epsilon_grid
        for i in range(cfg.runs)
    ]
    tasks = [(cfg, spec) for spec in specs]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            chunks = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.jobs))))
    else:
        chunks = [_run_task(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=_canonical)
    return SweepResult(rows)


def _canonical(row: Row):
    nan_last = lambda x: (1, 0.0) if math.isnan(x) else (0, x)  # noqa: E731
    return (
        row.algorithm, nan_last(row.lam), nan_last(row.sigma), nan_last(row.epsilon),
        row.seed, METRIC_ORDER.get(row.metric, 99), row.metric, row.episode,
    )


# -- summaries ------------------------------------------------------------------


class SummaryRow(NamedTuple):
    algorithm: str
    lam: float
    sigma: float
    epsilon: float
    episode: int
    metric: str
    mean: float
    std: float
    n: int
    diverged_count: int


def aggregate(result: SweepResult) -> list[SummaryRow]:
    """Mean and population std across seeds per (cell, episode, metric).

    Diverged runs are left out of the statistics but counted; the ``diverged``
    metric itself averages over all runs.
    """
    if not result.rows:
        raise ValueError("empty sweep result")
    diverged = result.diverged_runs()
    groups: dict[tuple, list[tuple[int, float]]] = {}
    for row in result.rows:
        key = (row.algorithm, _key(row.lam), _key(row.sigma), _key(row.epsilon), row.episode, row.metric)
        groups.setdefault(key, []).append((row.seed, row.value))
    summary = []
    for key, entries in groups.items():
        algorithm, lam, sigma, eps, episode, metric = key
        cell = (algorithm, lam, sigma, eps)
        bad = sum((*cell, seed) in diverged for seed, _ in entries)
        if metric == "diverged":
            values = [v for _, v in entries]
        else:
            values = [v for seed, v in entries if (*cell, seed) not in diverged]
        arr = np.asarray(values, dtype=float)
        mean = float(arr.mean()) if arr.size else math.nan
        std = float(arr.std()) if arr.size else math.nan
        summary.append(SummaryRow(
            algorithm, _unkey(lam), _unkey(sigma), _unkey(eps), episode, metric, mean, std, arr.size, bad,
        ))
    summary.sort(key=lambda r: _canonical(Row(r.algorithm, r.lam, r.sigma, r.epsilon, 0, r.episode, r.metric, 0.0)))
    return summary


def _unkey(x):
    return math.nan if x == "nan" else x


def summary_to_csv(summary: list[SummaryRow], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for r in summary:
        writer.writerow([
            r.algorithm, _fmt(r.lam), _fmt(r.sigma, True), _fmt(r.epsilon), r.episode, r.metric,
            _fmt(r.mean), _fmt(r.std), r.n, r.diverged_count,
        ])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def final_values(result: SweepResult, lam: float, epsilon: float, metric: str = "mse") -> dict[float, dict[int, float]]:
    """sigma -> seed -> final-episode metric, with diverged runs mapped to +inf."""
    diverged = result.diverged_runs()
    rows = [
        r for r in result.rows
        if r.metric == metric and _same(r.lam, lam) and _same(r.epsilon, epsilon)
    ]
    if not rows:
        raise KeyError(f"no {metric} rows for lambda={lam}, epsilon={epsilon}")
    last = max(r.episode for r in rows)
    out: dict[float, dict[int, float]] = {}
    for r in rows:
        if r.episode != last:
            continue
        bad = (r.algorithm, _key(r.lam), _key(r.sigma), _key(r.epsilon), r.seed) in diverged
        out.setdefault(r.sigma, {})[r.seed] = math.inf if bad else r.value
    return out


def best_sigma(result: SweepResult, lam: float, epsilon: float, seed: int | None = None) -> float:
    """Sigma with the lowest final MSE for the (lambda, epsilon) cell.

    Uses the mean over seeds, or a single ``seed``; a sigma with any diverged
    run counts as +inf. Ties go to the smaller sigma.
    """
    table = final_values(result, lam, epsilon)
    scores = {}
    for sigma, per_seed in table.items():
        if seed is not None:
            if seed not in per_seed:
                raise KeyError(f"seed {seed} missing")
            scores[sigma] = per_seed[seed]
        else:
            vals = list(per_seed.values())
            scores[sigma] = math.inf if any(math.isinf(v) for v in vals) else float(np.mean(vals))
    return min(sorted(scores), key=lambda s: (scores[s], s))


def episodes_to_optimal(result: SweepResult, optimal_length: int) -> dict[tuple[float, float, float], dict[int, float]]:
    """(lambda, sigma, epsilon) -> seed -> first episode after which the greedy
    path stays at ``optimal_length`` for the rest of the run (inf if never)."""
    series: dict[tuple, dict[int, list[tuple[int, float]]]] = {}
    for r in result.rows:
        if r.metric == "greedy_steps":
            series.setdefault((r.lam, r.sigma, r.epsilon), {}).setdefault(r.seed, []).append((r.episode, r.value))
    out: dict[tuple, dict[int, float]] = {}
    for cell, per_seed in series.items():
        for seed, points in per_seed.items():
            points.sort()
            settle = math.inf
            for episode, value in reversed(points):
                if value != optimal_length:
                    break
                settle = episode
            out.setdefault(cell, {})[seed] = settle
    return out
