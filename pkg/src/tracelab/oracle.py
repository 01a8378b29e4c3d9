"""Exact dynamic-programming ground truth.

Every operator acts on Q tables of shape ``(S, A)``. Internally the tables are
flattened to vectors over state-action pairs and the policy-weighted kernels

    (P^pi f)(s, a) = sum_{s', a'} P(s'|s, a) pi(a'|s') f(s', a')

are materialised as dense ``(S*A, S*A)`` matrices. Columns belonging to
terminal states are zero, which pins terminal values at 0 and makes the
linear systems equivalent to their restriction to nonterminal pairs.

Closed form of the coefficient operator
---------------------------------------
For trace coefficients ``c(s', a')`` the operator

    R Q(s, a) = Q(s, a) + E_mu[ sum_t gamma^t (c_1 ... c_t) delta_t ]

has expected TD error ``E[delta_t | s_t, a_t] = (T^pi Q - Q)(s_t, a_t)``, and
the weight carried from step ``t-1`` to ``t`` is ``gamma P(s_t|.) mu(a_t|s_t)
c(s_t, a_t)``. Summing the resulting Neumann series gives

    R Q = Q + (I - gamma P^{c mu})^{-1} (T^pi Q - Q),
    (P^{c mu} f)(s, a) = sum_{s', a'} P(s'|s, a) mu(a'|s') c(s', a') f(s', a').

With ``c = lambda`` and ``mu = pi`` this is the lambda-return operator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import MDPError, TabularMDP, greedy_policy, validate_policy

VI_TOL = 1e-12
VI_MAX_ITER = 1_000_000
RESIDUAL_TOL = 1e-10


class SingularSystemError(MDPError):
    """The linear system has no unique solution (e.g. an improper policy with gamma = 1)."""


class ImproperPolicyError(SingularSystemError):
    pass


class NonConvergenceError(MDPError):
    pass


@dataclass(frozen=True)
class OperatorSpec:
    lam: float
    sigma: float
    target: np.ndarray
    behavior: np.ndarray

    def __post_init__(self):
        for name in ("lam", "sigma"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise MDPError(f"{name} must lie in [0, 1], got {value}")

    def coefficients(self) -> np.ndarray:
        """c(s, a) = lambda * (sigma + (1 - sigma) * pi(a|s))."""
        return self.lam * (self.sigma + (1.0 - self.sigma) * np.asarray(self.target))


def _check_q(mdp: TabularMDP, Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.shape != mdp.shape:
        raise MDPError(f"Q shape {Q.shape} does not match MDP {mdp.shape}")
    return Q


def _masked_q(mdp: TabularMDP, Q: np.ndarray) -> np.ndarray:
    Q = Q.copy()
    Q[~mdp.nonterminal_mask] = 0.0
    return Q


def weighted_kernel(mdp: TabularMDP, weights: np.ndarray) -> np.ndarray:
    """Dense matrix of f -> sum_{s',a'} P(s'|s,a) w(s',a') f(s',a').

    Rows and columns are indexed by flattened (s, a); terminal columns are 0.
    """
    S, A = mdp.shape
    w = np.asarray(weights, dtype=float) * mdp.nonterminal_mask[:, None]
    K = mdp.transition[:, :, :, None] * w[None, None, :, :]
    return K.reshape(S * A, S * A)


def _solve(M: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    try:
        x = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"{what}: singular system") from exc
    if not np.all(np.isfinite(x)) or np.linalg.cond(M) > 1e13:
        raise SingularSystemError(f"{what}: system is singular or ill-conditioned")
    for _ in range(3):
        residual = b - M @ x
        if np.max(np.abs(residual), initial=0.0) <= RESIDUAL_TOL * 1e-2:
            break
        x = x + np.linalg.solve(M, residual)
    return x


def expected_next(mdp: TabularMDP, pi: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """(P^pi Q)(s, a)."""
    v = (pi * _masked_q(mdp, Q)).sum(axis=1)
    return mdp.transition @ v


def apply_bellman(mdp: TabularMDP, pi, Q) -> np.ndarray:
    Q = _check_q(mdp, Q)
    return mdp.reward + mdp.gamma * expected_next(mdp, np.asarray(pi, dtype=float), Q)


def apply_optimality(mdp: TabularMDP, Q) -> np.ndarray:
    Q = _check_q(mdp, Q)
    v = _masked_q(mdp, Q).max(axis=1)
    return mdp.reward + mdp.gamma * (mdp.transition @ v)


def solve_q_pi(mdp: TabularMDP, pi) -> np.ndarray:
    """Q^pi = (I - gamma P^pi)^{-1} r by a dense direct solve."""
    pi = validate_policy(mdp, pi)
    S, A = mdp.shape
    M = np.eye(S * A) - mdp.gamma * weighted_kernel(mdp, pi)
    try:
        q = _solve(M, mdp.reward.ravel(), "policy evaluation")
    except SingularSystemError as exc:
        raise ImproperPolicyError(
            "policy evaluation system is singular; the policy is improper for gamma = 1"
        ) from exc
    return q.reshape(S, A)


def solve_q_star(mdp: TabularMDP, tol: float = VI_TOL, max_iter: int = VI_MAX_ITER) -> np.ndarray:
    """Value iteration on the optimality operator until ||TQ - Q|| < tol."""
    Q = np.zeros(mdp.shape)
    for _ in range(max_iter):
        Q_next = apply_optimality(mdp, Q)
        gap = np.max(np.abs(Q_next - Q))
        Q = Q_next
        if gap < tol:
            return Q
        if not np.isfinite(gap):
            break
    raise NonConvergenceError(
        f"value iteration did not reach {tol} within {max_iter} iterations"
    )


def apply_lambda_return(mdp: TabularMDP, pi, Q, lam: float) -> np.ndarray:
    """Q + (I - lambda gamma P^pi)^{-1} (T^pi Q - Q)."""
    Q = _check_q(mdp, Q)
    pi = np.asarray(pi, dtype=float)
    S, A = mdp.shape
    M = np.eye(S * A) - lam * mdp.gamma * weighted_kernel(mdp, pi)
    td = (apply_bellman(mdp, pi, Q) - Q).ravel()
    return Q + _solve(M, td, "lambda-return").reshape(S, A)


def apply_coefficient_operator(mdp: TabularMDP, pi, mu, coeff, Q) -> np.ndarray:
    """Exact expectation of the trace operator for arbitrary coefficients c(s, a).

    ``coeff`` is an ``(S, A)`` array; see the module docstring for the closed form.
    """
    Q = _check_q(mdp, Q)
    pi = np.asarray(pi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    S, A = mdp.shape
    M = np.eye(S * A) - mdp.gamma * weighted_kernel(mdp, mu * np.asarray(coeff, dtype=float))
    td = (apply_bellman(mdp, pi, Q) - Q).ravel()
    return Q + _solve(M, td, "trace operator").reshape(S, A)


def apply_R_sigma(mdp: TabularMDP, spec: OperatorSpec, Q) -> np.ndarray:
    validate_policy(mdp, spec.target)
    validate_policy(mdp, spec.behavior)
    return apply_coefficient_operator(mdp, spec.target, spec.behavior, spec.coefficients(), Q)


def apply_R_sigma_control(mdp: TabularMDP, lam: float, sigma: float, mu, Q, pi=None) -> np.ndarray:
    """One control-mode application: the target is greedy(Q) unless ``pi`` freezes it."""
    Q = _check_q(mdp, Q)
    target = greedy_policy(Q) if pi is None else pi
    return apply_R_sigma(mdp, OperatorSpec(lam, sigma, target, mu), Q)


# -- contraction factors ----------------------------------------------------


def eta_policy_eval(gamma: float, lam: float, sigma: float, d: float) -> float:
    if gamma * lam >= 1.0:
        raise ValueError("gamma * lambda must be < 1")
    num = (
        gamma
        - lam * gamma**2
        + lam * sigma * gamma**2
        + sigma * gamma * lam * d
        - sigma * gamma * lam
    )
    return num / (1.0 - gamma * lam)


def eta_control(gamma: float, lam: float, sigma: float) -> float:
    if gamma * lam >= 1.0:
        raise ValueError("gamma * lambda must be < 1")
    return (sigma * gamma + sigma * lam * gamma) / (1.0 - lam * gamma) + (1.0 - sigma) * gamma


def lambda_max(gamma: float, sigma: float) -> float:
    """Largest lambda with eta_control <= 1, capped at 1."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    denom = sigma * gamma + sigma * gamma**2 + gamma - gamma**2
    return min(1.0, (1.0 - gamma) / denom)


def distance_bound(gamma: float, lam: float, sigma: float) -> float:
    """Policy distance below which eta_policy_eval < 1."""
    if lam == 0.0:
        return np.inf
    return (1.0 - gamma) * (1.0 / (gamma * lam) + 1.0 - sigma)


def mse(Q, Q_ref, mdp: TabularMDP | None = None) -> float:
    """Mean squared error over nonterminal state-action pairs."""
    Q = np.asarray(Q, dtype=float)
    Q_ref = np.asarray(Q_ref, dtype=float)
    if Q.shape != Q_ref.shape:
        raise MDPError(f"shape mismatch: {Q.shape} vs {Q_ref.shape}")
    diff = Q - Q_ref
    if mdp is not None:
        diff = diff[mdp.nonterminal_mask]
    return float(np.mean(diff**2))


def sup_norm(x) -> float:
    return float(np.max(np.abs(x)))
