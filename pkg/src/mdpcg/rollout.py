"""Seeded Monte Carlo rollouts of equilibrium policies in the warehouse."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp_core import kernel_dims

MASS_FLOOR = 1e-12


def policy_from_distribution(x):
    """Action probabilities ``x[t, s, a] / sum_a x[t, s, a]``; uniform where the state has no mass."""
    x = np.asarray(x, dtype=float)
    mass = x.sum(axis=-1, keepdims=True)
    uniform = np.full_like(x, 1.0 / x.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(mass > MASS_FLOOR, x / np.where(mass > MASS_FLOOR, mass, 1.0), uniform)
    return np.clip(pi, 0.0, None)


@dataclass
class TrajectorySet:
    """Sampled chains, arrays of shape ``(trials, N, T+1)``."""

    states: np.ndarray
    actions: np.ndarray
    seed: int

    @property
    def trials(self):
        return self.states.shape[0]

    @property
    def n_players(self):
        return self.states.shape[1]


def _stream_uniforms(seed, trial, player, n):
    ss = np.random.SeedSequence(seed, spawn_key=(trial, player))
    return np.random.default_rng(ss).random((n, 2))


def _draw(cdf, u):
    """Index of the first cumulative probability above ``u`` per row."""
    cdf = cdf / cdf[:, -1:]
    return (u[:, None] < cdf).argmax(axis=1)


def sample_trajectories(kernels, z0, policies, trials, seed) -> TrajectorySet:
    """Sample every player's chain independently in every trial.

    Trial ``n`` of player ``i`` draws from its own stream
    ``SeedSequence(seed, spawn_key=(n, i))`` so results for a trial do not
    depend on how many trials are run.
    """
    N = len(kernels)
    T, S, A = kernel_dims(kernels[0])
    states = np.zeros((trials, N, T + 1), dtype=np.int64)
    actions = np.zeros((trials, N, T + 1), dtype=np.int64)
    if trials == 0:
        return TrajectorySet(states, actions, seed)
    for i in range(N):
        u = np.stack([_stream_uniforms(seed, n, i, T + 1) for n in range(trials)])  # (trials, T+1, 2)
        pi = np.asarray(policies[i])
        kernel = kernels[i]
        s = _draw(np.broadcast_to(np.cumsum(z0[i]), (trials, S)), u[:, 0, 0])
        for t in range(T + 1):
            a = _draw(np.cumsum(pi[t, s], axis=1), u[:, t, 1])
            states[:, i, t] = s
            actions[:, i, t] = a
            if t < T:
                s = _draw(np.cumsum(kernel[t][:, s, a].T, axis=1), u[:, t + 1, 0])
    return TrajectorySet(states, actions, seed)


@dataclass
class CollisionCounts:
    per_trial: np.ndarray  # (trials, N, T+1) collisions accrued by each player

    @property
    def per_t(self):
        """Mean collisions per player and time step, shape ``(N, T+1)``."""
        if self.per_trial.shape[0] == 0:
            return np.zeros(self.per_trial.shape[1:])
        return self.per_trial.mean(axis=0)

    @property
    def per_horizon(self):
        """Mean collisions per player over the whole horizon."""
        return self.per_t.sum(axis=1)


def count_collisions(trajectories: TrajectorySet, grid) -> CollisionCounts:
    """Each player accrues one collision per other player sharing its cell at a time step."""
    loc = grid.location(trajectories.states)
    same = loc[:, :, None, :] == loc[:, None, :, :]
    counts = same.sum(axis=2) - 1
    return CollisionCounts(per_trial=counts)


@dataclass
class WaitStats:
    waits: list = field(default_factory=list)
    incomplete: int = 0

    @property
    def completed(self):
        return len(self.waits)

    @property
    def mean(self):
        return float(np.mean(self.waits)) if self.waits else float("nan")

    @property
    def worst(self):
        return float(np.max(self.waits)) if self.waits else float("nan")


def cycle_waits(states, grid, dropoff):
    """Completed dropoff-pickup-dropoff cycle lengths along one state sequence.

    A cycle starts at t = 0 and at every delivery; it completes at the next
    delivery, i.e. a mode 2 -> mode 1 switch at the dropoff chute, provided
    a package was acquired (mode 1 -> 2) in between.  Returns
    ``(waits, incomplete)``.
    """
    modes = grid.mode(states)
    loc = grid.location(states)
    drop = grid.loc_index(dropoff)
    waits = []
    start, acquired = 0, bool(modes[0] == 2)
    for t in range(1, len(states)):
        if modes[t - 1] == 1 and modes[t] == 2:
            acquired = True
        elif modes[t - 1] == 2 and modes[t] == 1 and loc[t] == drop and acquired:
            waits.append(t - start)
            start, acquired = t, False
    incomplete = int(start < len(states) - 1)
    return waits, incomplete


def wait_times(trajectories: TrajectorySet, grid, players):
    """Per-player package wait statistics over all trials."""
    stats = [WaitStats() for _ in players]
    for n in range(trajectories.trials):
        for i, p in enumerate(players):
            waits, incomplete = cycle_waits(trajectories.states[n, i], grid, p.dropoff)
            stats[i].waits.extend(waits)
            stats[i].incomplete += incomplete
    return stats


@dataclass
class RolloutReport:
    trials: int
    seed: int
    mean_collisions: np.ndarray
    collisions_per_step: np.ndarray
    collisions_by_t: np.ndarray
    waits: list

    def rows(self, players):
        for i, (p, w) in enumerate(zip(players, self.waits)):
            yield {
                "player": i + 1,
                "alpha": p.alpha,
                "mean_collisions": float(self.mean_collisions[i]),
                "collisions_per_step": float(self.collisions_per_step[i]),
                "mean_wait": w.mean,
                "worst_wait": w.worst,
                "completed_packages": w.completed,
                "incomplete_cycles": w.incomplete,
                "trials": self.trials,
                "seed": self.seed,
            }


def run_rollouts(instance, x, grid, players, trials, seed) -> RolloutReport:
    """Sample the equilibrium's policies and summarise collisions and waits."""
    policies = [policy_from_distribution(x[i]) for i in range(len(players))]
    traj = sample_trajectories(instance.kernels, instance.z0, policies, trials, seed)
    counts = count_collisions(traj, grid)
    T1 = traj.states.shape[2]
    return RolloutReport(
        trials=trials,
        seed=seed,
        mean_collisions=counts.per_horizon,
        collisions_per_step=counts.per_horizon / T1,
        collisions_by_t=counts.per_t,
        waits=wait_times(traj, grid, players),
    )
