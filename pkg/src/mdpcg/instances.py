"""Seeded random game instances for testing and benchmarking."""
from __future__ import annotations

import numpy as np

from .game import CostModel, PrimitiveField
from .solver import GameInstance


def random_kernel(rng, horizon, n_states, n_actions, concentration=1.0):
    """Random ``(T, S, S, A)`` kernel with Dirichlet columns."""
    draws = rng.dirichlet(np.full(n_states, concentration), size=(horizon, n_states, n_actions))
    return np.ascontiguousarray(draws.transpose(0, 3, 1, 2))


def random_cost_model(rng, n_players, horizon, n_states, n_actions, exp_rate=1.0):
    """Admissible model: increasing ``h``, non-decreasing exponential ``f`` and linear ``g``."""
    T1 = horizon + 1
    f = PrimitiveField(
        rng.uniform(-0.5, 0.5, (T1, n_states)),
        rng.uniform(0.0, 0.5, (T1, n_states)),
        rng.uniform(0.05, 0.5, (T1, n_states)),
        rng.uniform(0.2, exp_rate, (T1, n_states)),
    )
    g = PrimitiveField(
        rng.uniform(-0.5, 0.5, (T1, n_states, n_actions)),
        rng.uniform(0.0, 0.5, (T1, n_states, n_actions)),
    )
    h = PrimitiveField(
        rng.uniform(-1.0, 1.0, (n_players, T1, n_states, n_actions)),
        rng.uniform(0.1, 1.0, (n_players, T1, n_states, n_actions)),
    )
    return CostModel(alpha=rng.uniform(0.5, 1.5, n_players), f=f, g=g, h=h)


def random_instance(seed, n_players=2, n_states=2, n_actions=2, horizon=2) -> GameInstance:
    rng = np.random.default_rng(seed)
    kernels = [random_kernel(rng, horizon, n_states, n_actions) for _ in range(n_players)]
    z0 = rng.dirichlet(np.ones(n_states), size=n_players)
    model = random_cost_model(rng, n_players, horizon, n_states, n_actions)
    return GameInstance(kernels=kernels, z0=z0, model=model).validate()


def random_joint_distribution(instance: GameInstance, rng):
    """Interior feasible point from random stochastic policies."""
    from .solver import random_feasible_point

    return random_feasible_point(instance, rng, vertex=False)
