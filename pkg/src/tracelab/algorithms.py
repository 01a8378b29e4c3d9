"""Trace-coefficient strategies and the TBQ(sigma) learners.

Three updaters share one coefficient interface:

* forward view, online: the trajectory is sampled first and then replayed with
  an accumulating trace table while Q changes after every step;
* forward view, offline: every step's TD error and target policy use the
  episode-start Q, and each visited pair receives the discounted sum of later
  TD errors (computed by a reverse recursion, no trace table);
* backward view, online: acting and learning are interleaved, and the trace
  table decays by ``gamma * c`` where ``c`` depends on whether the next
  behaviour action is greedy.

The target policy is always greedy with lowest-index tie-breaking, so the TD
target ``max_b Q(s', b)`` coincides with ``E_pi Q(s', .)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mdp import TabularMDP, Trajectory, draw_action, epsilon_greedy_policy, sample_trajectory

KINDS = ("tbq_sigma", "tree_backup", "naive_q", "retrace", "importance_sampling", "watkins")
MODES = ("forward_online", "forward_offline", "backward_online")
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class CoefficientStrategy:
    kind: str
    lam: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0 or not 0.0 <= self.sigma <= 1.0:
            raise ValueError("lambda and sigma must lie in [0, 1]")

    def __call__(self, pi_prob: float, mu_prob: float) -> float:
        return coefficient(self, pi_prob, mu_prob)


def coefficient(strategy: CoefficientStrategy, pi_prob: float, mu_prob: float) -> float:
    kind, lam = strategy.kind, strategy.lam
    if kind == "tbq_sigma":
        # pi + sigma (1 - pi) keeps the pi = 1 case exactly equal to lambda
        return lam * (pi_prob + strategy.sigma * (1.0 - pi_prob))
    if kind == "tree_backup":
        return lam * pi_prob
    if kind == "naive_q":
        return lam
    if kind == "watkins":
        return lam if pi_prob == 1.0 else 0.0
    if mu_prob <= 0.0:
        raise ValueError(f"{kind} needs a positive behaviour probability")
    if kind == "retrace":
        return lam * min(1.0, pi_prob / mu_prob)
    return pi_prob / mu_prob


@dataclass(frozen=True)
class EpsilonSchedule:
    """Per-episode exploration rate, clamped to [0, 1].

    ``linear`` subtracts ``step`` each episode down to ``end``; ``exponential``
    multiplies by ``factor`` down to ``end``.
    """

    kind: str = "constant"
    start: float = 0.1
    end: float = 0.0
    step: float = 0.0
    factor: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "exponential"):
            raise ValueError(f"unknown epsilon schedule {self.kind!r}")

    def value(self, episode: int) -> float:
        if self.kind == "constant":
            eps = self.start
        elif self.kind == "linear":
            eps = max(self.end, self.start - self.step * episode)
        else:
            eps = max(self.end, self.start * self.factor**episode)
        return min(1.0, max(0.0, eps))


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float
    lam: float
    sigma: float = 0.0
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    max_steps: int = 100
    mode: str = "forward_online"
    kind: str = "tbq_sigma"
    gamma: float | None = None
    # alpha_k = alpha / (1 + k) ** alpha_power; 0 keeps alpha constant
    alpha_power: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        CoefficientStrategy(self.kind, self.lam, self.sigma)

    @property
    def strategy(self) -> CoefficientStrategy:
        return CoefficientStrategy(self.kind, self.lam, self.sigma)

    def alpha_at(self, episode: int) -> float:
        if self.alpha_power == 0.0:
            return self.alpha
        return self.alpha / (1.0 + episode) ** self.alpha_power


@dataclass(frozen=True)
class EpisodeStats:
    steps: int
    terminated: bool
    total_reward: float


def _gamma(mdp: TabularMDP, cfg: LearnerConfig) -> float:
    return mdp.gamma if cfg.gamma is None else cfg.gamma


def _td_errors(mdp: TabularMDP, Q: np.ndarray, traj: Trajectory, gamma: float) -> list[float]:
    vmax = Q.max(axis=1)
    out = []
    for s, a, r, s2 in traj.steps:
        boot = 0.0 if mdp.is_terminal(s2) else vmax[s2]
        out.append(r + gamma * boot - Q[s, a])
    return out


def _decays(Q: np.ndarray, traj: Trajectory, strategy, mu: np.ndarray, gamma: float) -> list[float]:
    """gamma * c_t for every step, with pi greedy in the frozen ``Q``."""
    greedy = np.argmax(Q, axis=1)
    return [
        gamma * strategy(1.0 if a == greedy[s] else 0.0, mu[s, a])
        for s, a, _, _ in traj.steps
    ]


def forward_offline_increment(
    mdp: TabularMDP,
    Q: np.ndarray,
    traj: Trajectory,
    strategy: CoefficientStrategy,
    mu: np.ndarray,
    gamma: float | None = None,
) -> np.ndarray:
    """Sum over visits l of sum_{t >= l} (prod_{i=l+1}^t gamma c_i) delta_t, per pair.

    Everything is evaluated against the frozen ``Q``; multiply by the step size
    and add to ``Q`` to apply.
    """
    gamma = mdp.gamma if gamma is None else gamma
    deltas = _td_errors(mdp, Q, traj, gamma)
    decay = _decays(Q, traj, strategy, mu, gamma)
    inc = np.zeros_like(Q, dtype=float)
    ret = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        nxt = decay[t + 1] * ret if t + 1 < len(deltas) else 0.0
        ret = deltas[t] + nxt
        s, a = traj.steps[t].state, traj.steps[t].action
        inc[s, a] += ret
    return inc


def backward_offline_increment(
    mdp: TabularMDP,
    Q: np.ndarray,
    traj: Trajectory,
    strategy: CoefficientStrategy,
    mu: np.ndarray,
    gamma: float | None = None,
) -> np.ndarray:
    """Trace-table counterpart of :func:`forward_offline_increment`.

    Mark the visit, credit the TD error to every traced pair, then decay the
    whole table with the next action's coefficient.
    """
    gamma = mdp.gamma if gamma is None else gamma
    deltas = _td_errors(mdp, Q, traj, gamma)
    decay = _decays(Q, traj, strategy, mu, gamma)
    trace = np.zeros_like(Q, dtype=float)
    inc = np.zeros_like(Q, dtype=float)
    for t, (s, a, _, _) in enumerate(traj.steps):
        trace[s, a] += 1.0
        inc += deltas[t] * trace
        if t + 1 < len(deltas):
            trace *= decay[t + 1]
    return inc


def forward_online_replay(
    mdp: TabularMDP,
    Q: np.ndarray,
    traj: Trajectory,
    strategy: CoefficientStrategy,
    mu: np.ndarray,
    alpha: float,
    gamma: float | None = None,
    trace_log: list | None = None,
) -> np.ndarray:
    """Replay ``traj`` with accumulating traces, updating a copy of ``Q`` each step."""
    gamma = mdp.gamma if gamma is None else gamma
    Q = np.array(Q, dtype=float)
    trace = np.zeros_like(Q)
    for t, (s, a, r, s2) in enumerate(traj.steps):
        boot = 0.0 if mdp.is_terminal(s2) else Q[s2].max()
        delta = r + gamma * boot - Q[s, a]
        if t > 0:
            pi_prob = 1.0 if a == int(np.argmax(Q[s])) else 0.0
            trace *= gamma * strategy(pi_prob, mu[s, a])
        trace[s, a] += 1.0
        Q += alpha * delta * trace
        if trace_log is not None:
            trace_log.append(trace.copy())
    return Q


def run_episode_forward(
    mdp: TabularMDP,
    Q: np.ndarray,
    cfg: LearnerConfig,
    rng: np.random.Generator,
    episode: int = 0,
    start: int | None = None,
) -> tuple[np.ndarray, EpisodeStats]:
    """Sample from epsilon-greedy(Q) and apply the forward-view update."""
    if cfg.mode not in ("forward_online", "forward_offline"):
        raise ValueError(f"run_episode_forward does not handle mode {cfg.mode!r}")
    mu = epsilon_greedy_policy(Q, cfg.epsilon.value(episode))
    traj = sample_trajectory(mdp, mu, mdp.start if start is None else start, rng, cfg.max_steps)
    alpha = cfg.alpha_at(episode)
    gamma = _gamma(mdp, cfg)
    if cfg.mode == "forward_online":
        Q_new = forward_online_replay(mdp, Q, traj, cfg.strategy, mu, alpha, gamma)
    else:
        Q_new = Q + alpha * forward_offline_increment(mdp, Q, traj, cfg.strategy, mu, gamma)
    total = sum(step.reward for step in traj.steps)
    return Q_new, EpisodeStats(len(traj), traj.terminated, total)


def run_episode_backward(
    mdp: TabularMDP,
    Q: np.ndarray,
    cfg: LearnerConfig,
    rng: np.random.Generator,
    episode: int = 0,
    start: int | None = None,
    trace_log: list | None = None,
) -> tuple[np.ndarray, EpisodeStats]:
    """Interleaved act/learn loop with a decaying trace table.

    RNG use: one uniform for the first action, then per step one uniform for
    the successor state and, unless it is terminal, one for the next action.
    """
    Q = np.array(Q, dtype=float)
    eps = cfg.epsilon.value(episode)
    alpha = cfg.alpha_at(episode)
    gamma = _gamma(mdp, cfg)
    strategy = cfg.strategy
    num_actions = mdp.num_actions
    trace = np.zeros_like(Q)

    s = mdp.start if start is None else start
    if mdp.is_terminal(s) or cfg.max_steps == 0:
        return Q, EpisodeStats(0, mdp.is_terminal(s), 0.0)
    a = draw_action(epsilon_greedy_policy(Q[s : s + 1], eps)[0], rng.random())
    steps, total, terminated = 0, 0.0, False
    while steps < cfg.max_steps:
        r = float(mdp.reward[s, a])
        s2 = mdp.next_state(s, a, rng.random())
        steps += 1
        total += r
        if mdp.is_terminal(s2):
            delta = r - Q[s, a]
            trace[s, a] += 1.0
            Q += alpha * delta * trace
            if trace_log is not None:
                trace_log.append(trace.copy())
            terminated = True
            break
        best = int(np.argmax(Q[s2]))
        mu_row = np.full(num_actions, eps / num_actions)
        mu_row[best] += 1.0 - eps
        a2 = draw_action(mu_row, rng.random())
        delta = r + gamma * Q[s2, best] - Q[s, a]
        trace[s, a] += 1.0
        Q += alpha * delta * trace
        if trace_log is not None:
            trace_log.append(trace.copy())
        trace *= gamma * strategy(1.0 if a2 == best else 0.0, mu_row[a2])
        s, a = s2, a2
    return Q, EpisodeStats(steps, terminated, total)


def is_diverged(Q: np.ndarray) -> bool:
    with np.errstate(invalid="ignore"):
        return not np.all(np.isfinite(Q)) or bool(np.max(np.abs(Q)) > DIVERGENCE_LIMIT)


@dataclass
class TrainingRecord:
    steps: list[int]
    snapshots: dict[int, np.ndarray]
    Q: np.ndarray
    diverged: bool = False
    diverged_episode: int | None = None


def train(
    mdp: TabularMDP,
    cfg: LearnerConfig,
    episodes: int,
    rng: np.random.Generator,
    checkpoints=(),
    Q0: np.ndarray | None = None,
    observer: Callable[[int, np.ndarray, EpisodeStats], None] | None = None,
) -> TrainingRecord:
    """Run ``episodes`` episodes; checkpoint ``k`` stores Q after ``k`` episodes.

    Training stops early once any |Q| entry exceeds 1e6 or becomes non-finite.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    Q = np.zeros(mdp.shape) if Q0 is None else np.array(Q0, dtype=float)
    wanted = set(checkpoints)
    record = TrainingRecord([], {}, Q)
    if 0 in wanted:
        record.snapshots[0] = Q.copy()
    step_fn = run_episode_backward if cfg.mode == "backward_online" else run_episode_forward
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(episodes):
            Q, stats = step_fn(mdp, Q, cfg, rng, episode=k)
            record.steps.append(stats.steps)
            if observer is not None:
                observer(k + 1, Q, stats)
            if is_diverged(Q):
                record.diverged = True
                record.diverged_episode = k + 1
                break
            if k + 1 in wanted:
                record.snapshots[k + 1] = Q.copy()
    record.Q = Q
    return record


def trace_bound(gamma: float, lam: float) -> float:
    return math.inf if gamma * lam >= 1.0 else 1.0 / (1.0 - gamma * lam)
