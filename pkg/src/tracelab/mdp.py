"""Finite MDPs, tabular policies and seeded trajectory sampling.

Arrays are the working representation throughout the package:

* Q tables and policies are float arrays of shape ``(num_states, num_actions)``.
* ``TabularMDP.transition`` has shape ``(S, A, S)`` and ``reward`` shape ``(S, A)``.

Terminal states carry no outgoing transitions, zero reward and zero Q rows.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

PROB_TOL = 1e-12


class MDPError(ValueError):
    """Invalid MDP, policy or Q table."""


class MDPParseError(MDPError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transition: np.ndarray
    reward: np.ndarray
    terminal: frozenset[int]
    gamma: float
    start: int = 0
    _cum: np.ndarray = field(init=False, repr=False)
    _cum_lists: list = field(init=False, repr=False)
    _reward_lists: list = field(init=False, repr=False)
    _terminal_flags: list = field(init=False, repr=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise MDPError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise MDPError("need at least one state and one action")
        if r.shape != (S, A):
            raise MDPError(f"reward must have shape {(S, A)}, got {r.shape}")
        if not 0.0 <= self.gamma <= 1.0:
            raise MDPError(f"gamma must lie in [0, 1], got {self.gamma}")
        terminal = frozenset(int(s) for s in self.terminal)
        if any(not 0 <= s < S for s in terminal):
            raise MDPError("terminal state out of range")
        if not 0 <= self.start < S:
            raise MDPError(f"start state {self.start} out of range")
        if np.any(P < 0) or not np.all(np.isfinite(P)) or not np.all(np.isfinite(r)):
            raise MDPError("transition probabilities must be finite and nonnegative")
        for s in range(S):
            if s in terminal:
                if np.any(P[s] != 0) or np.any(r[s] != 0):
                    raise MDPError(f"terminal state {s} must have no transitions and zero reward")
                continue
            sums = P[s].sum(axis=1)
            bad = np.flatnonzero(np.abs(sums - 1.0) > PROB_TOL)
            if bad.size:
                a = int(bad[0])
                raise MDPError(f"P(.|{s},{a}) sums to {float(sums[a])!r}, not 1")
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "terminal", terminal)
        object.__setattr__(self, "gamma", float(self.gamma))
        cum = np.cumsum(P, axis=2)
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)
        # plain-list copies for the per-step sampling hot path
        object.__setattr__(self, "_cum_lists", cum.tolist())
        object.__setattr__(self, "_reward_lists", r.tolist())
        object.__setattr__(self, "_terminal_flags", [s in terminal for s in range(S)])

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.transition.shape[:2]

    @property
    def nonterminal_mask(self) -> np.ndarray:
        mask = np.ones(self.num_states, dtype=bool)
        mask[list(self.terminal)] = False
        return mask

    def is_terminal(self, s: int) -> bool:
        return self._terminal_flags[s]

    def with_gamma(self, gamma: float) -> "TabularMDP":
        return TabularMDP(self.transition, self.reward, self.terminal, gamma, self.start)

    def next_state(self, s: int, a: int, u: float) -> int:
        """Inverse-CDF draw of the successor of ``(s, a)`` from a uniform ``u``."""
        cum = self._cum_lists[s][a]
        return min(bisect_right(cum, u * cum[-1]), self.num_states - 1)


# -- policies ---------------------------------------------------------------


def greedy_actions(Q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest action index."""
    return np.argmax(Q, axis=1)


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    pi = np.zeros_like(Q)
    pi[np.arange(Q.shape[0]), greedy_actions(Q)] = 1.0
    return pi


def epsilon_greedy_policy(Q: np.ndarray, epsilon: float) -> np.ndarray:
    if not 0.0 <= epsilon <= 1.0:
        raise MDPError(f"epsilon must lie in [0, 1], got {epsilon}")
    Q = np.asarray(Q, dtype=float)
    num_actions = Q.shape[1]
    pi = np.full_like(Q, epsilon / num_actions)
    pi[np.arange(Q.shape[0]), greedy_actions(Q)] += 1.0 - epsilon
    return pi


def uniform_policy(num_states: int, num_actions: int) -> np.ndarray:
    return np.full((num_states, num_actions), 1.0 / num_actions)


def validate_policy(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != mdp.shape:
        raise MDPError(f"policy shape {pi.shape} does not match MDP {mdp.shape}")
    rows = pi[mdp.nonterminal_mask]
    if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > PROB_TOL):
        raise MDPError("policy rows must be probability distributions")
    return pi


def policy_distance(pi: np.ndarray, mu: np.ndarray, mdp: TabularMDP | None = None) -> float:
    """max over states of max over actions of |pi(a|s) - mu(a|s)|.

    Terminal rows are skipped when ``mdp`` is given.
    """
    pi = np.asarray(pi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if pi.shape != mu.shape:
        raise MDPError(f"policy shapes differ: {pi.shape} vs {mu.shape}")
    diff = np.abs(pi - mu)
    if mdp is not None:
        diff = diff[mdp.nonterminal_mask]
    return float(diff.max()) if diff.size else 0.0


# -- randomness and trajectories --------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream for ``seed``; run ``i`` of a sweep uses ``seed + i``."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


class Step(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...]
    terminated: bool

    def __len__(self) -> int:
        return len(self.steps)


def draw_action(probs, u: float) -> int:
    """Inverse-CDF draw from a probability row."""
    return _draw_cum(list(accumulate(float(p) for p in probs)), u)


def _draw_cum(cum: list[float], u: float) -> int:
    return min(bisect_right(cum, u * cum[-1]), len(cum) - 1)


def sample_trajectory(
    mdp: TabularMDP,
    mu: np.ndarray,
    start: int,
    rng: np.random.Generator,
    max_steps: int,
    first_action: int | None = None,
) -> Trajectory:
    """Roll out ``mu`` from ``start`` until a terminal state or ``max_steps``.

    Each step consumes two uniforms from ``rng``: one for the action, one for
    the successor state. A forced ``first_action`` still consumes its uniform.
    """
    if not 0 <= start < mdp.num_states:
        raise MDPError(f"start state {start} out of range")
    steps: list[Step] = []
    s = start
    terminal = mdp._terminal_flags
    if terminal[s]:
        return Trajectory((), True)
    mu_cum = np.cumsum(np.asarray(mu, dtype=float), axis=1).tolist()
    rewards = mdp._reward_lists
    while len(steps) < max_steps:
        u_action, u_next = rng.random(2).tolist()
        a = _draw_cum(mu_cum[s], u_action)
        if first_action is not None and not steps:
            a = first_action
        s_next = mdp.next_state(s, a, u_next)
        steps.append(Step(s, a, rewards[s][a], s_next))
        if terminal[s_next]:
            return Trajectory(tuple(steps), True)
        s = s_next
    return Trajectory(tuple(steps), False)


# -- text format ------------------------------------------------------------


def parse_mdp(text: str) -> TabularMDP:
    """Parse the line-oriented MDP format (see README for the grammar)."""
    num_states = num_actions = None
    gamma = None
    start = 0
    terminal: set[int] = set()
    transitions: list[tuple[int, int, int, int, float, float]] = []

    def number(tok: str, kind, lineno: int, what: str):
        try:
            return kind(tok)
        except ValueError:
            raise MDPParseError(f"bad {what} {tok!r}", lineno) from None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *args = line.split()
        if head in ("states", "actions", "gamma", "start"):
            if len(args) != 1:
                raise MDPParseError(f"'{head}' takes exactly one value", lineno)
            if head == "states":
                num_states = number(args[0], int, lineno, "state count")
            elif head == "actions":
                num_actions = number(args[0], int, lineno, "action count")
            elif head == "gamma":
                gamma = number(args[0], float, lineno, "gamma")
            else:
                start = number(args[0], int, lineno, "start state")
        elif head == "terminal":
            terminal.update(number(tok, int, lineno, "state") for tok in args)
        elif head == "t":
            if len(args) != 5:
                raise MDPParseError("expected 't s a s2 prob reward'", lineno)
            s, a, s2 = (number(tok, int, lineno, "index") for tok in args[:3])
            prob = number(args[3], float, lineno, "probability")
            rew = number(args[4], float, lineno, "reward")
            transitions.append((lineno, s, a, s2, prob, rew))
        else:
            raise MDPParseError(f"unknown directive {head!r}", lineno)

    if num_states is None or num_states < 1:
        raise MDPParseError("missing or invalid 'states' directive")
    if num_actions is None or num_actions < 1:
        raise MDPParseError("missing or invalid 'actions' directive")
    if gamma is None:
        raise MDPParseError("missing 'gamma' directive")

    P = np.zeros((num_states, num_actions, num_states))
    R = np.zeros((num_states, num_actions))
    first_line: dict[tuple[int, int], int] = {}
    for lineno, s, a, s2, prob, rew in transitions:
        if not (0 <= s < num_states and 0 <= s2 < num_states and 0 <= a < num_actions):
            raise MDPParseError("state or action index out of range", lineno)
        if s in terminal:
            raise MDPParseError(f"terminal state {s} cannot have transitions", lineno)
        if prob < 0:
            raise MDPParseError("negative probability", lineno)
        P[s, a, s2] += prob
        R[s, a] += prob * rew
        first_line.setdefault((s, a), lineno)
    for s in range(num_states):
        if s in terminal:
            continue
        for a in range(num_actions):
            total = P[s, a].sum()
            if abs(total - 1.0) > PROB_TOL:
                raise MDPParseError(
                    f"probabilities for ({s}, {a}) sum to {float(total)!r}, not 1",
                    first_line.get((s, a)),
                )
    try:
        return TabularMDP(P, R, frozenset(terminal), gamma, start)
    except MDPParseError:
        raise
    except MDPError as exc:
        raise MDPParseError(str(exc)) from None


def load_mdp(path: str | Path) -> TabularMDP:
    return parse_mdp(Path(path).read_text())


def format_mdp(mdp: TabularMDP) -> str:
    lines = [
        f"states {mdp.num_states}",
        f"actions {mdp.num_actions}",
        f"gamma {float(mdp.gamma)!r}",
        f"start {mdp.start}",
    ]
    if mdp.terminal:
        lines.append("terminal " + " ".join(str(s) for s in sorted(mdp.terminal)))
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            for s2 in np.flatnonzero(mdp.transition[s, a]):
                lines.append(f"t {s} {a} {s2} {float(mdp.transition[s, a, s2])!r} {float(mdp.reward[s, a])!r}")
    return "\n".join(lines) + "\n"


def q_rows(Q: np.ndarray) -> Iterable[tuple[int, int, float]]:
    for s in range(Q.shape[0]):
        for a in range(Q.shape[1]):
            yield s, a, float(Q[s, a])
