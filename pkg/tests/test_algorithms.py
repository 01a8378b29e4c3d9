import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracelab.algorithms import (
    CoefficientStrategy,
    EpsilonSchedule,
    LearnerConfig,
    backward_offline_increment,
    coefficient,
    forward_offline_increment,
    forward_online_replay,
    run_episode_backward,
    run_episode_forward,
    trace_bound,
    train,
)
from tracelab.environments import build_maze, build_random_walk, builtin_maze
from tracelab.mdp import epsilon_greedy_policy, make_rng, sample_trajectory
from tracelab.oracle import lambda_max, mse, solve_q_star

from oracles import (
    alg1_dict_replay,
    backward_reference,
    forward_view_double_sum,
    naive_q_online,
    tree_backup_online,
)

WALK = build_random_walk(19, gamma=0.9)


def random_start_q(seed, mdp=WALK, scale=0.5):
    Q = make_rng(seed).uniform(-scale, scale, size=mdp.shape)
    Q[~mdp.nonterminal_mask] = 0.0
    return Q


# -- coefficients ---------------------------------------------------------------------


def test_coefficient_examples():
    assert coefficient(CoefficientStrategy("tbq_sigma", 1.0, 0.5), 0.0, 0.5) == 0.5
    assert coefficient(CoefficientStrategy("retrace", 0.9), 1.0, 0.95) == 0.9
    assert coefficient(CoefficientStrategy("tbq_sigma", 0.8, 1.0), 0.3, 0.5) == 0.8
    assert coefficient(CoefficientStrategy("naive_q", 0.8), 0.3, 0.5) == 0.8
    assert coefficient(CoefficientStrategy("importance_sampling", 0.5), 0.5, 0.25) == 2.0
    assert coefficient(CoefficientStrategy("watkins", 0.7), 1.0, 0.5) == 0.7
    assert coefficient(CoefficientStrategy("watkins", 0.7), 0.9, 0.5) == 0.0


@given(lam=st.floats(0, 1), pi=st.floats(0, 1), mu=st.floats(0.01, 1))
def test_tbq_sigma_endpoints_match_named_kinds(lam, pi, mu):
    tbq0 = CoefficientStrategy("tbq_sigma", lam, 0.0)
    tbq1 = CoefficientStrategy("tbq_sigma", lam, 1.0)
    assert tbq0(pi, mu) == pytest.approx(CoefficientStrategy("tree_backup", lam)(pi, mu), abs=1e-15)
    assert tbq1(pi, mu) == CoefficientStrategy("naive_q", lam)(pi, mu)


@pytest.mark.parametrize("kind", ["retrace", "importance_sampling"])
def test_ratio_kinds_reject_zero_behaviour_probability(kind):
    with pytest.raises(ValueError):
        coefficient(CoefficientStrategy(kind, 0.5), 0.5, 0.0)


@pytest.mark.parametrize("kwargs", [{"kind": "bogus", "lam": 0.5}, {"kind": "tbq_sigma", "lam": 1.5}])
def test_strategy_validation(kwargs):
    with pytest.raises(ValueError):
        CoefficientStrategy(**kwargs)


def test_epsilon_schedules():
    lin = EpsilonSchedule("linear", 1.0, 0.1, 0.02)
    assert lin.value(0) == 1.0
    assert lin.value(10) == pytest.approx(0.8)
    assert lin.value(1000) == pytest.approx(0.1)
    exp = EpsilonSchedule("exponential", 1.0, 0.05, factor=0.5)
    assert exp.value(2) == 0.25 and exp.value(100) == 0.05
    assert EpsilonSchedule(start=1.7).value(0) == 1.0


@pytest.mark.parametrize(
    "kwargs", [{"alpha": 0.0, "lam": 0.5}, {"alpha": 0.1, "lam": 0.5, "mode": "sideways"}, {"alpha": 0.1, "lam": 2.0}]
)
def test_learner_config_validation(kwargs):
    with pytest.raises(ValueError):
        LearnerConfig(**kwargs)


# -- forward view ------------------------------------------------------------------------


def sample_like_forward(mdp, Q, cfg, seed):
    mu = epsilon_greedy_policy(Q, cfg.epsilon.value(0))
    return sample_trajectory(mdp, mu, mdp.start, make_rng(seed), cfg.max_steps)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_forward_online_matches_hand_unrolled_episode(seed):
    cfg = LearnerConfig(alpha=0.3, lam=0.9, sigma=0.5, epsilon=EpsilonSchedule(start=0.5), mode="forward_online")
    Q0 = random_start_q(seed)
    Q1, stats = run_episode_forward(WALK, Q0, cfg, make_rng(seed))
    traj = sample_like_forward(WALK, Q0, cfg, seed)
    assert stats.steps == len(traj)
    expected = alg1_dict_replay(WALK, Q0, traj, 0.9, 0.5, 0.3)
    assert np.max(np.abs(Q1 - expected)) < 1e-12


def test_lambda_zero_is_one_step_q_learning():
    cfg = LearnerConfig(alpha=0.3, lam=0.0, sigma=0.7, epsilon=EpsilonSchedule(start=0.5))
    Q0 = random_start_q(3)
    Q1, _ = run_episode_forward(WALK, Q0, cfg, make_rng(3))
    Q = Q0.copy()
    for s, a, r, s2 in sample_like_forward(WALK, Q0, cfg, 3).steps:
        target = r + (0.0 if WALK.is_terminal(s2) else 0.9 * Q[s2].max())
        Q[s, a] += 0.3 * (target - Q[s, a])
    assert np.allclose(Q1, Q, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_offline_forward_and_backward_views_agree(seed):
    strategy = CoefficientStrategy("tbq_sigma", 0.8, 0.4)
    rng = make_rng(seed)
    Q = random_start_q(seed)
    for _ in range(20):
        mu = epsilon_greedy_policy(Q, 0.5)
        traj = sample_trajectory(WALK, mu, WALK.start, rng, 100)
        fwd = forward_offline_increment(WALK, Q, traj, strategy, mu)
        bwd = backward_offline_increment(WALK, Q, traj, strategy, mu)
        assert np.max(np.abs(fwd - bwd)) < 1e-12
        assert np.max(np.abs(fwd - forward_view_double_sum(WALK, Q, traj, 0.8, 0.4))) < 1e-12
        Q = Q + 0.3 * fwd


def test_forward_offline_episode_applies_summed_increment():
    cfg = LearnerConfig(alpha=0.2, lam=0.6, sigma=0.3, epsilon=EpsilonSchedule(start=0.5), mode="forward_offline")
    Q0 = random_start_q(4)
    Q1, _ = run_episode_forward(WALK, Q0, cfg, make_rng(4))
    traj = sample_like_forward(WALK, Q0, cfg, 4)
    expected = Q0 + 0.2 * forward_view_double_sum(WALK, Q0, traj, 0.6, 0.3)
    assert np.allclose(Q1, expected, atol=1e-12)


@pytest.mark.parametrize("sigma, reference", [(0.0, tree_backup_online), (1.0, naive_q_online)])
def test_forward_online_reductions(sigma, reference):
    lam, alpha = 0.8, 0.3
    strategy = CoefficientStrategy("tbq_sigma", lam, sigma)
    rng = make_rng(21)
    Q = random_start_q(21)
    for _ in range(100):
        mu = epsilon_greedy_policy(Q, 0.5)
        traj = sample_trajectory(WALK, mu, WALK.start, rng, 100)
        ours = forward_online_replay(WALK, Q, traj, strategy, mu, alpha)
        theirs = reference(WALK, Q, traj, lam, alpha)
        assert np.max(np.abs(ours - theirs)) < 1e-12
        Q = ours


@pytest.mark.parametrize("sigma, cut", [(0.0, True), (1.0, False)])
def test_backward_online_reductions(sigma, cut):
    lam, alpha, eps = 0.8, 0.3, 0.5
    cfg = LearnerConfig(alpha=alpha, lam=lam, sigma=sigma, epsilon=EpsilonSchedule(start=eps), mode="backward_online")
    ours_rng, ref_rng = make_rng(33), make_rng(33)
    Q = random_start_q(33)
    for k in range(100):
        ours, _ = run_episode_backward(WALK, Q, cfg, ours_rng, episode=k)
        theirs = backward_reference(WALK, Q, eps, lam, alpha, ref_rng, cfg.max_steps, cut)
        assert np.max(np.abs(ours - theirs)) < 1e-12
        Q = ours


def test_backward_cut_zeroes_traces_after_exploratory_action():
    cfg = LearnerConfig(alpha=0.1, lam=0.9, sigma=0.0, epsilon=EpsilonSchedule(start=1.0), mode="backward_online")
    log = []
    run_episode_backward(WALK, np.zeros(WALK.shape), cfg, make_rng(8), trace_log=log)
    cuts = 0
    for prev, cur in zip(log, log[1:]):
        # each step either decays by gamma * lambda or cuts to zero, then marks one pair
        kept = cur - 0.81 * prev
        if np.isclose(kept.sum(), 1.0) and np.isclose(kept.max(), 1.0):
            continue
        assert np.count_nonzero(cur) == 1 and cur.max() == 1.0
        cuts += 1
    assert cuts > 0


def test_greedy_behaviour_makes_sigma_irrelevant():
    base = dict(alpha=0.3, lam=0.9, epsilon=EpsilonSchedule(start=0.0), mode="backward_online")
    Q0 = random_start_q(5)
    out = []
    for sigma in (0.0, 0.5, 1.0):
        cfg = LearnerConfig(sigma=sigma, **base)
        out.append(train(WALK, cfg, 30, make_rng(5), Q0=Q0).Q)
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[0], out[2])


def test_greedy_behaviour_traces_decay_by_gamma_lambda():
    cfg = LearnerConfig(alpha=0.3, lam=0.9, sigma=0.0, epsilon=EpsilonSchedule(start=0.0), mode="backward_online")
    Q0 = random_start_q(6)
    log = []
    run_episode_backward(WALK, Q0, cfg, make_rng(6), trace_log=log)
    for prev, cur in zip(log, log[1:]):
        marked = cur - 0.81 * prev
        assert np.isclose(marked.sum(), 1.0) and np.isclose(marked.max(), 1.0)


@settings(max_examples=30, deadline=None)
@given(
    lam=st.floats(0.0, 1.0),
    sigma=st.floats(0.0, 1.0),
    eps=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**32),
    backward=st.booleans(),
)
def test_traces_stay_bounded(lam, sigma, eps, seed, backward):
    mode = "backward_online" if backward else "forward_online"
    cfg = LearnerConfig(alpha=0.1, lam=lam, sigma=sigma, epsilon=EpsilonSchedule(start=eps), mode=mode)
    log = []
    Q0 = random_start_q(seed % 1000)
    if backward:
        run_episode_backward(WALK, Q0, cfg, make_rng(seed), trace_log=log)
    else:
        traj = sample_like_forward(WALK, Q0, cfg, seed)
        mu = epsilon_greedy_policy(Q0, eps)
        forward_online_replay(WALK, Q0, traj, cfg.strategy, mu, 0.1, trace_log=log)
    bound = trace_bound(0.9, lam)
    for trace in log:
        assert trace.min() >= 0.0
        assert trace.max() <= bound + 1e-12


# -- training ---------------------------------------------------------------------


def test_train_rejects_zero_episodes():
    with pytest.raises(ValueError):
        train(WALK, LearnerConfig(alpha=0.1, lam=0.5), 0, make_rng(0))


def test_train_single_episode_and_checkpoints():
    cfg = LearnerConfig(alpha=0.3, lam=0.5, sigma=0.5, epsilon=EpsilonSchedule(start=0.5))
    rec = train(WALK, cfg, 1, make_rng(0), checkpoints=[0, 1])
    assert len(rec.steps) == 1 and rec.steps[0] > 0
    assert np.array_equal(rec.snapshots[0], np.zeros(WALK.shape))
    assert np.array_equal(rec.snapshots[1], rec.Q)


def test_train_stops_on_divergence():
    cfg = LearnerConfig(alpha=1.0, lam=1.0, sigma=1.0, epsilon=EpsilonSchedule(start=1.0), mode="forward_offline")
    rec = train(build_random_walk(19, gamma=1.0), cfg, 2000, make_rng(0))
    assert rec.diverged and rec.diverged_episode == len(rec.steps) < 2000


def test_train_beats_zero_initialisation():
    q_star = solve_q_star(WALK)
    cfg = LearnerConfig(alpha=0.3, lam=0.3, sigma=1.0, epsilon=EpsilonSchedule(start=0.5), mode="forward_offline")
    baseline = mse(np.zeros(WALK.shape), q_star, WALK)
    for seed in range(5):
        rec = train(WALK, cfg, 2000, make_rng(seed))
        assert not rec.diverged
        assert mse(rec.Q, q_star, WALK) < baseline


@pytest.mark.parametrize("sigma", [0.0, 0.5, 1.0])
def test_robbins_monro_convergence_below_lambda_max(sigma):
    q_star = solve_q_star(WALK)
    lam = min(0.9, lambda_max(0.9, sigma))
    cfg = LearnerConfig(
        alpha=1.0, lam=lam, sigma=sigma, epsilon=EpsilonSchedule(start=0.5), mode="forward_offline", alpha_power=0.6
    )
    initial = mse(np.zeros(WALK.shape), q_star, WALK)
    finals = [mse(train(WALK, cfg, 2000, make_rng(seed)).Q, q_star, WALK) for seed in range(5)]
    assert np.median(finals) < 0.1 * initial


def test_mse_decreases_across_checkpoints():
    q_star = solve_q_star(WALK)
    cfg = LearnerConfig(alpha=0.3, lam=0.5, sigma=0.5, epsilon=EpsilonSchedule(start=0.5), mode="forward_offline")
    rec = train(WALK, cfg, 1000, make_rng(0), checkpoints=[0, 10, 100, 1000])
    errs = [mse(rec.snapshots[k], q_star, WALK) for k in (0, 10, 100, 1000)]
    assert all(np.isfinite(errs)) and errs[0] > errs[1] > errs[2] > errs[3] > 0.0


def test_maze_late_episodes_follow_optimal_path():
    layout = builtin_maze("maze5x5")
    mdp = build_maze(layout, gamma=0.99)
    optimal = layout.shortest_path_length()
    cfg = LearnerConfig(
        alpha=0.05, lam=0.9, sigma=0.8, epsilon=EpsilonSchedule("linear", 1.0, 0.0, 0.02),
        mode="backward_online", max_steps=2000,
    )
    late = []
    for seed in range(5):
        rec = train(mdp, cfg, 500, make_rng(seed))
        late.append(np.inf if rec.diverged else np.mean(rec.steps[-50:]))
    assert np.median(late) <= 1.05 * optimal
