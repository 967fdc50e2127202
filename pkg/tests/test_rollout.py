import numpy as np
import pytest

from mdpcg.instances import random_instance, random_kernel
from mdpcg.mdp_core import occupancy_from_policy, retrieve_density, value_iteration
from mdpcg.rollout import (
    TrajectorySet,
    count_collisions,
    cycle_waits,
    policy_from_distribution,
    run_rollouts,
    sample_trajectories,
    wait_times,
)
from mdpcg.solver import SolveOptions, frank_wolfe
from mdpcg.warehouse import GridSpec, ScenarioConfig, build_scenario, goal_indicator

GRID = GridSpec()


def single_player_goal_run(player, trials=200, seed=0, arrivals=None):
    """Best response to the goal rewards alone (no congestion) with deterministic moves."""
    base = ScenarioConfig()
    cfg = ScenarioConfig(n_players=1, q=1.0, pickups=(base.pickups[player],), dropoffs=(base.dropoffs[player],), alphas=(1.0,))
    sc = build_scenario(cfg, arrivals=arrivals)
    inst = sc.instance
    costs = -np.broadcast_to(goal_indicator(sc.grid, sc.players[0])[None, :, None], inst.shape[1:])
    _, policy = value_iteration(costs, inst.kernels[0])
    traj = sample_trajectories(inst.kernels, inst.z0, [np.eye(5)[policy]], trials, seed)
    return wait_times(traj, sc.grid, sc.players)[0]


def test_policy_inversion_deterministic():
    rng = np.random.default_rng(0)
    kernel = random_kernel(rng, 3, 4, 3)
    z = np.array([0.5, 0.5, 0.0, 0.0])
    policy = rng.integers(0, 3, size=(4, 4))
    x = retrieve_density(kernel, z, policy)
    pi = policy_from_distribution(x)
    visited = x.sum(axis=2) > 0
    assert (pi.argmax(axis=2)[visited] == policy[visited]).all()
    assert np.allclose(pi.sum(axis=2), 1.0)


def test_policy_zero_mass_uniform():
    pi = policy_from_distribution(np.zeros((2, 3, 4)))
    assert np.allclose(pi, 0.25)


def test_policy_round_trip():
    rng = np.random.default_rng(1)
    kernel = random_kernel(rng, 4, 3, 3)
    z = rng.dirichlet(np.ones(3))
    x = occupancy_from_policy(kernel, z, rng.dirichlet(np.ones(3), size=(5, 3)))
    back = occupancy_from_policy(kernel, z, policy_from_distribution(x))
    assert np.abs(back - x).max() <= 1e-9


def test_deterministic_chain_ignores_seed():
    T, S, A = 5, 3, 2
    kernel = np.zeros((T, S, S, A))
    for s in range(S):
        kernel[:, (s + 1) % S, s, :] = 1.0
    pi = np.zeros((T + 1, S, A))
    pi[..., 1] = 1.0
    z = np.array([[0.0, 1.0, 0.0]])
    a = sample_trajectories([kernel], z, [pi], 4, seed=1)
    b = sample_trajectories([kernel], z, [pi], 4, seed=99)
    assert np.array_equal(a.states, b.states)
    assert (a.states[:, 0] == [1, 2, 0, 1, 2, 0]).all()
    assert (a.actions == 1).all()


def test_same_seed_identical():
    inst = random_instance(0, n_players=2, n_states=3, n_actions=2, horizon=4)
    pols = [np.full((5, 3, 2), 0.5)] * 2
    a = sample_trajectories(inst.kernels, inst.z0, pols, 50, seed=7)
    b = sample_trajectories(inst.kernels, inst.z0, pols, 50, seed=7)
    c = sample_trajectories(inst.kernels, inst.z0, pols, 80, seed=7)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
    assert np.array_equal(a.states, c.states[:50])


def test_visit_frequencies_match_occupancy():
    inst = random_instance(4, n_players=1, n_states=3, n_actions=2, horizon=3)
    rng = np.random.default_rng(0)
    pi = rng.dirichlet(np.ones(2), size=(4, 3))
    x = occupancy_from_policy(inst.kernels[0], inst.z0[0], pi)
    n = 100_000
    traj = sample_trajectories(inst.kernels, inst.z0, [pi], n, seed=3)
    for t in range(4):
        freq = np.bincount(traj.states[:, 0, t], minlength=3) / n
        p = x[t].sum(axis=1)
        se = np.sqrt(p * (1 - p) / n)
        assert (np.abs(freq - p) <= 3 * se + 1e-12).all()


def static_traj(locs, T1=4):
    states = np.array([[[GRID.state_index(u, 1)] * T1 for u in locs]])
    return TrajectorySet(states, np.zeros_like(states), 0)


def test_collisions_disjoint():
    counts = count_collisions(static_traj([(0, 0), (1, 1), (4, 9)]), GRID)
    assert counts.per_horizon.tolist() == [0, 0, 0]


def test_collisions_pinned_pair_mode_blind():
    traj = static_traj([(2, 2), (2, 2)], T1=6)
    traj.states[0, 1] += 1  # second player in mode 2, same cell
    assert count_collisions(traj, GRID).per_horizon.tolist() == [6, 6]


def test_collisions_three_at_one_step():
    traj = static_traj([(0, 0), (0, 1), (0, 2)], T1=3)
    traj.states[0, :, 1] = GRID.state_index((3, 3), 1)
    counts = count_collisions(traj, GRID)
    assert counts.per_t.tolist() == [[0, 2, 0]] * 3


def test_collision_symmetry_under_relabelling():
    inst = random_instance(5, n_players=3, n_states=4, n_actions=2, horizon=6)
    pols = [np.full((7, 4, 2), 0.5)] * 3
    traj = sample_trajectories(inst.kernels, inst.z0, pols, 30, seed=2)
    grid = GridSpec(rows=1, cols=2)
    counts = count_collisions(traj, grid).per_trial
    swapped = TrajectorySet(traj.states[:, ::-1], traj.actions[:, ::-1], 2)
    assert np.array_equal(count_collisions(swapped, grid).per_trial, counts[:, ::-1])


def test_cycle_waits_handmade():
    grid = GridSpec(rows=1, cols=3)
    d, p = (0, 0), (0, 2)
    path = [(d, 1), ((0, 1), 1), (p, 1), (p, 2), ((0, 1), 2), (d, 1), ((0, 1), 1), (p, 2), ((0, 1), 2)]
    states = np.array([grid.state_index(u, m) for u, m in path])
    waits, incomplete = cycle_waits(states, grid, d)
    assert waits == [5]
    assert incomplete == 1


def test_single_player_shortest_cycle_player_two():
    stats = single_player_goal_run(1)
    assert stats.completed > 0
    assert min(stats.waits) == 12
    assert all(w >= 12 for w in stats.waits)


def test_no_arrivals_no_packages():
    stats = single_player_goal_run(0, trials=5, arrivals=[0.0])
    assert stats.completed == 0
    assert np.isnan(stats.mean)


def test_zero_trials_empty_report():
    sc = build_scenario(ScenarioConfig(horizon=5))
    x = sc.instance.uniform_point()
    report = run_rollouts(sc.instance, x, sc.grid, sc.players, 0, 0)
    assert report.mean_collisions.tolist() == [0, 0, 0]
    assert all(w.completed == 0 for w in report.waits)


def test_congestion_weight_reduces_collisions():
    def total(beta):
        sc = build_scenario(ScenarioConfig(beta=beta))
        x, _ = frank_wolfe(sc.instance, SolveOptions(max_iters=100))
        report = run_rollouts(sc.instance, x, sc.grid, sc.players, 100, 0)
        return report.mean_collisions.sum()

    assert total(40.0) <= total(0.0)


@pytest.mark.parametrize("trials", [1, 3])
def test_report_rows(trials):
    sc = build_scenario(ScenarioConfig(horizon=40))
    report = run_rollouts(sc.instance, sc.instance.uniform_point(), sc.grid, sc.players, trials, 5)
    rows = list(report.rows(sc.players))
    assert [r["player"] for r in rows] == [1, 2, 3]
    assert all(r["mean_collisions"] >= 0 and r["trials"] == trials for r in rows)
