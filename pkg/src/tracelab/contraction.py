"""Randomised checks of the contraction factors against the exact operator.

Trial ``i`` draws from its own stream ``make_rng(seed + i)``: a discount in
[0.5, 0.99] (unless fixed), trace parameters, a random MDP, policies with
Dirichlet(1, 1, ...) rows and a Q table uniform in [-5, 5]. The observed
ratio ||R Q - Q_fix|| / ||Q - Q_fix|| is compared with the predicted factor.

A trial whose parameters fall outside the guarantee (policy distance above the
bound, or lambda above ``lambda_max``) is redrawn when its parameters are free
and labelled ``guaranteed=False`` when they are fixed by the caller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environments import random_mdp
from .mdp import greedy_policy, make_rng, policy_distance
from .oracle import (
    OperatorSpec,
    apply_R_sigma,
    distance_bound,
    eta_control,
    eta_policy_eval,
    lambda_max,
    solve_q_pi,
    solve_q_star,
    sup_norm,
    weighted_kernel,
)

TOL = 1e-9
MAX_REDRAWS = 1000


@dataclass(frozen=True)
class Trial:
    index: int
    gamma: float
    lam: float
    sigma: float
    d: float
    ratio: float
    eta: float
    guaranteed: bool
    worst_case: float | None = None

    @property
    def ok(self) -> bool:
        return self.ratio <= self.eta + TOL


def operator_norm(mdp, target, behavior, coeff) -> float:
    """Exact sup-norm Lipschitz constant of Q -> R Q - Q_fix (a linear map of Q - Q_fix)."""
    S, A = mdp.shape
    gamma = mdp.gamma
    K = weighted_kernel(mdp, behavior * coeff)
    P_pi = weighted_kernel(mdp, target)
    L = np.linalg.solve(np.eye(S * A) - gamma * K, gamma * (P_pi - K))
    return float(np.abs(L).sum(axis=1).max())


def _random_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)


def _random_q(rng, mdp):
    Q = rng.uniform(-5.0, 5.0, size=mdp.shape)
    Q[~mdp.nonterminal_mask] = 0.0
    return Q


def policy_eval_trial(
    index: int,
    seed: int,
    gamma=None,
    lam=None,
    sigma=None,
    num_states: int = 5,
    num_actions: int = 2,
    worst_case: bool = False,
) -> Trial:
    rng = make_rng(seed + index)
    fixed = gamma is not None and lam is not None and sigma is not None
    for _ in range(MAX_REDRAWS):
        g = rng.uniform(0.5, 0.99) if gamma is None else gamma
        l = rng.uniform(0.0, 1.0) if lam is None else lam
        s = rng.uniform(0.0, 1.0) if sigma is None else sigma
        mdp = random_mdp(int(rng.integers(2**32)), num_states, num_actions, g, int(rng.integers(1, num_states + 1)))
        pi = _random_policy(rng, num_states, num_actions)
        mu = _random_policy(rng, num_states, num_actions)
        d = policy_distance(pi, mu, mdp)
        guaranteed = d < distance_bound(g, l, s)
        if guaranteed or fixed:
            break
    spec = OperatorSpec(l, s, pi, mu)
    q_pi = solve_q_pi(mdp, pi)
    Q = _random_q(rng, mdp)
    ratio = sup_norm(apply_R_sigma(mdp, spec, Q) - q_pi) / sup_norm(Q - q_pi)
    wc = operator_norm(mdp, pi, mu, spec.coefficients()) if worst_case else None
    return Trial(index, g, l, s, d, ratio, eta_policy_eval(g, l, s, d), guaranteed, wc)


def control_trial(
    index: int,
    seed: int,
    gamma=None,
    lam=None,
    sigma=None,
    num_states: int = 5,
    num_actions: int = 2,
    worst_case: bool = False,
) -> Trial:
    """Greedy target frozen at greedy(Q*), arbitrary behaviour, lambda <= lambda_max."""
    rng = make_rng(seed + index)
    g = rng.uniform(0.5, 0.99) if gamma is None else gamma
    s = rng.uniform(0.0, 1.0) if sigma is None else sigma
    bound = lambda_max(g, s)
    l = rng.uniform(0.0, bound) if lam is None else lam
    mdp = random_mdp(int(rng.integers(2**32)), num_states, num_actions, g, int(rng.integers(1, num_states + 1)))
    q_star = solve_q_star(mdp)
    pi = greedy_policy(q_star)
    mu = _random_policy(rng, num_states, num_actions)
    spec = OperatorSpec(l, s, pi, mu)
    Q = _random_q(rng, mdp)
    ratio = sup_norm(apply_R_sigma(mdp, spec, Q) - q_star) / sup_norm(Q - q_star)
    wc = operator_norm(mdp, pi, mu, spec.coefficients()) if worst_case else None
    d = policy_distance(pi, mu, mdp)
    return Trial(index, g, l, s, d, ratio, eta_control(g, l, s), l <= bound, wc)


def run_suite(kind: str, trials: int, seed: int, **kwargs) -> list[Trial]:
    fn = {"eval": policy_eval_trial, "control": control_trial}[kind]
    return [fn(i, seed, **kwargs) for i in range(trials)]
