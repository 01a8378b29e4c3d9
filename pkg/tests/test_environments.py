import numpy as np
import pytest

from tracelab.environments import (
    LEFT,
    RIGHT,
    BUILTIN_MAZES,
    build_maze,
    build_random_walk,
    builtin_maze,
    greedy_path_length,
    load_maze,
    maze_state_index,
    parse_maze,
    random_mdp,
)
from tracelab.mdp import MDPError, make_rng, sample_trajectory, uniform_policy
from tracelab.oracle import solve_q_pi, solve_q_star


def test_random_walk_layout():
    mdp = build_random_walk(19)
    assert mdp.num_states == 21
    assert mdp.terminal == frozenset({0, 20})
    assert mdp.start == 10
    assert mdp.reward[19, RIGHT] == 1.0
    assert mdp.reward.sum() == 1.0
    assert mdp.transition[5, LEFT, 4] == 1.0 and mdp.transition[5, RIGHT, 6] == 1.0


def test_random_walk_centre_optimal_value():
    assert solve_q_star(build_random_walk(19, gamma=0.9))[10, RIGHT] == pytest.approx(0.9**9, abs=1e-12)


@pytest.mark.parametrize("n", [1, 4, 18])
def test_random_walk_rejects_bad_sizes(n):
    with pytest.raises(MDPError):
        build_random_walk(n)


@pytest.mark.parametrize("n", [5, 19])
def test_uniform_policy_values_are_mirror_symmetric(n):
    mdp = build_random_walk(n, gamma=1.0)
    Q = solve_q_pi(mdp, uniform_policy(*mdp.shape))
    for s in range(1, n + 1):
        mirror = n + 1 - s
        assert Q[s, RIGHT] == pytest.approx(1.0 - Q[mirror, LEFT], abs=1e-12)


def test_every_random_walk_episode_ends_within_cap():
    mdp = build_random_walk(19)
    rng = make_rng(0)
    for _ in range(50):
        traj = sample_trajectory(mdp, uniform_policy(*mdp.shape), mdp.start, rng, 100)
        assert len(traj) <= 100
        if traj.terminated:
            assert mdp.is_terminal(traj.steps[-1].next_state)


# -- mazes -------------------------------------------------------------------------


def test_corridor_optimal_value_is_goal_reward():
    layout = parse_maze("SG")
    mdp = build_maze(layout, gamma=0.99)
    q = solve_q_star(mdp)
    s = maze_state_index(layout)[layout.start]
    assert q[s, 3] == pytest.approx(1.0)
    assert greedy_path_length(mdp, q, 10) == 1


def test_blocked_moves_are_self_transitions():
    layout = parse_maze("S#G\n...")
    mdp = build_maze(layout)
    s = maze_state_index(layout)[(0, 0)]
    for action in (0, 2, 3):  # up off-grid, left off-grid, right into the wall
        assert mdp.transition[s, action, s] == 1.0
        assert mdp.reward[s, action] == pytest.approx(-0.0001)


def test_goal_row_is_zero():
    layout = builtin_maze("maze5x5")
    mdp = build_maze(layout)
    goal = maze_state_index(layout)[layout.goal]
    assert mdp.is_terminal(goal)
    assert np.all(solve_q_star(mdp)[goal] == 0.0)


@pytest.mark.parametrize("name", BUILTIN_MAZES)
def test_builtin_mazes_greedy_path_matches_bfs(name):
    layout = builtin_maze(name)
    mdp = build_maze(layout, gamma=0.99)
    assert greedy_path_length(mdp, solve_q_star(mdp), 2000) == layout.shortest_path_length()


def test_builtin_maze_sizes():
    assert builtin_maze("maze5x5").shortest_path_length() == 8
    assert builtin_maze("maze10x10").shortest_path_length() == 36
    assert (builtin_maze("maze10x10").height, builtin_maze("maze10x10").width) == (10, 10)


def test_greedy_path_length_reports_cycles():
    layout = builtin_maze("maze5x5")
    mdp = build_maze(layout)
    assert greedy_path_length(mdp, np.zeros(mdp.shape), 50) is None


@pytest.mark.parametrize(
    "text",
    ["", "S.\n.", "S..\n...", "SG\nG.", "S#\n#G", "S.x\n..G"],
)
def test_malformed_mazes_are_rejected(text):
    with pytest.raises(MDPError):
        parse_maze(text)


def test_unknown_builtin_maze():
    with pytest.raises(MDPError):
        builtin_maze("labyrinth")


def test_load_maze_from_file(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("S..\n.#.\n..G\n")
    assert load_maze(path).shortest_path_length() == 4


# -- random MDPs ---------------------------------------------------------------------


def test_random_mdp_is_deterministic_per_seed():
    a = random_mdp(seed=17, num_states=6, num_actions=3, gamma=0.9, branching=3)
    b = random_mdp(seed=17, num_states=6, num_actions=3, gamma=0.9, branching=3)
    c = random_mdp(seed=18, num_states=6, num_actions=3, gamma=0.9, branching=3)
    assert np.array_equal(a.transition, b.transition) and np.array_equal(a.reward, b.reward)
    assert not np.array_equal(a.transition, c.transition)


def test_branching_one_is_deterministic():
    mdp = random_mdp(seed=2, num_states=5, num_actions=2, gamma=0.9, branching=1)
    live = mdp.transition[mdp.nonterminal_mask]
    assert np.all(np.count_nonzero(live, axis=-1) == 1)


def test_thousand_random_mdps_are_valid():
    for seed in range(1000):
        mdp = random_mdp(seed=seed, num_states=5, num_actions=2, gamma=0.9, branching=1 + seed % 5)
        live = mdp.transition[mdp.nonterminal_mask]
        assert np.all(np.abs(live.sum(axis=-1) - 1.0) < 1e-12)
        assert np.all((mdp.reward >= 0.0) & (mdp.reward <= 1.0))


def test_random_mdp_terminal_reachable_under_uniform_policy():
    # a proper uniform policy makes the undiscounted system solvable
    for seed in range(50):
        mdp = random_mdp(seed=seed, num_states=5, num_actions=2, gamma=1.0, branching=1)
        solve_q_pi(mdp, uniform_policy(5, 2))


@pytest.mark.parametrize("kwargs", [{"num_states": 1}, {"branching": 0}, {"branching": 9}])
def test_random_mdp_rejects_bad_arguments(kwargs):
    args = dict(seed=0, num_states=5, num_actions=2, gamma=0.9, branching=2)
    args.update(kwargs)
    with pytest.raises(MDPError):
        random_mdp(**args)
