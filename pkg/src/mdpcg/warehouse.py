"""Multi-robot pickup/delivery warehouse on a grid with pickup and dropoff modes.

States are ``(v, w, m)`` with zero-based row ``v``, column ``w`` and mode
``m`` (1 = seeking a package, 2 = carrying one).  The flat state index is
``(v * cols + w) * 2 + (m - 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .game import CostModel, PrimitiveField
from .mdp_core import StructureError
from .solver import GameInstance

ACTIONS = ("up", "down", "right", "left", "stay")
MOVES = {"up": (-1, 0), "down": (1, 0), "right": (0, 1), "left": (0, -1), "stay": (0, 0)}

PICKUPS = ((4, 8), (4, 7), (4, 2))
DROPOFFS = ((0, 4), (0, 5), (0, 8))


@dataclass(frozen=True)
class GridSpec:
    rows: int = 5
    cols: int = 10
    modes: int = 2

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if self.modes != 2:
            raise ValueError("the warehouse model has exactly two modes")

    @property
    def n_locations(self):
        return self.rows * self.cols

    @property
    def n_states(self):
        return self.n_locations * self.modes

    @property
    def n_actions(self):
        return len(ACTIONS)

    def contains(self, u):
        v, w = u
        return 0 <= v < self.rows and 0 <= w < self.cols

    def loc_index(self, u):
        return u[0] * self.cols + u[1]

    def loc_of_index(self, index):
        return divmod(int(index), self.cols)

    def state_index(self, u, mode):
        return self.loc_index(u) * self.modes + (mode - 1)

    def location(self, state):
        """Location index (vectorised) of a state index."""
        return np.asarray(state) // self.modes

    def mode(self, state):
        """Mode (1 or 2, vectorised) of a state index."""
        return np.asarray(state) % self.modes + 1


@dataclass(frozen=True)
class PlayerSpec:
    pickup: tuple
    dropoff: tuple
    rate: float = 0.5
    alpha: float = 1.0
    initial_location: tuple | None = None
    initial_mode: int = 1

    @property
    def start(self):
        return self.dropoff if self.initial_location is None else self.initial_location


@dataclass
class ScenarioConfig:
    n_players: int = 3
    q: float = 0.98
    gamma: float = 0.99
    use_discount: bool = False
    rates: tuple = 0.5  # scalar applies to every player
    alphas: tuple = (0.5, 1.0, 1.5)
    dt: float = 1.0
    horizon: int = 120
    epsilon: float = 1e-3
    beta: float = 40.0
    paper_literal_sign: bool = False
    arrival_complement: bool = False
    rows: int = 5
    cols: int = 10
    pickups: tuple = PICKUPS
    dropoffs: tuple = DROPOFFS
    initial_mode: int = 1

    def __post_init__(self):
        self.rates = _per_player(self.rates, self.n_players, "rates")
        self.alphas = _per_player(self.alphas, self.n_players, "alphas")
        self.pickups = tuple(tuple(int(c) for c in p) for p in self.pickups)[: self.n_players]
        self.dropoffs = tuple(tuple(int(c) for c in d) for d in self.dropoffs)[: self.n_players]
        self.validate()

    def validate(self):
        checks = [
            ("n_players", self.n_players >= 1),
            ("q", 0.0 < self.q <= 1.0),
            ("gamma", 0.0 < self.gamma <= 1.0),
            ("rates", all(r > 0 for r in self.rates)),
            ("alphas", all(a > 0 for a in self.alphas)),
            ("dt", self.dt > 0),
            ("horizon", self.horizon >= 1),
            ("epsilon", self.epsilon > 0),
            ("beta", self.beta >= 0),
            ("pickups", len(self.pickups) == self.n_players),
            ("dropoffs", len(self.dropoffs) == self.n_players),
            ("initial_mode", self.initial_mode in (1, 2)),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid scenario field {name!r}: {getattr(self, name)!r}")

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a plain mapping, rejecting unknown keys by name."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known - {"kind"})
        if unknown:
            raise ValueError(f"unknown scenario field {unknown[0]!r}")
        kwargs = {k: v for k, v in mapping.items() if k in known}
        for key in ("pickups", "dropoffs"):
            if key in kwargs:
                kwargs[key] = tuple(tuple(p) for p in kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValueError(str(exc)) from exc

    @property
    def grid(self):
        return GridSpec(self.rows, self.cols)

    def players(self):
        return [
            PlayerSpec(p, d, rate, alpha, initial_mode=self.initial_mode)
            for p, d, rate, alpha in zip(self.pickups, self.dropoffs, self.rates, self.alphas)
        ]


def _per_player(value, n, name):
    if np.isscalar(value):
        return (float(value),) * n
    value = tuple(float(v) for v in value)
    if len(value) == 1:
        return value * n
    if len(value) != n:
        raise ValueError(f"invalid scenario field {name!r}: need {n} values, got {len(value)}")
    return value


def action_target(u, action, grid: GridSpec):
    """Location an action points at, or None when it leaves the grid."""
    dv, dw = MOVES[ACTIONS[action]]
    target = (u[0] + dv, u[1] + dw)
    return target if grid.contains(target) else None


def neighbor_set(u, grid: GridSpec):
    """``u`` itself plus its in-grid orthogonal neighbours."""
    if not grid.contains(u):
        raise StructureError(f"location {u} outside the grid")
    out = [u]
    for name in ("up", "down", "right", "left"):
        dv, dw = MOVES[name]
        target = (u[0] + dv, u[1] + dw)
        if grid.contains(target):
            out.append(target)
    return out


def build_location_kernel(grid: GridSpec, q):
    """Location transitions ``P0[u_next, u, a]`` over flat location indices.

    A feasible action reaches its target with probability ``q`` and spreads
    ``1 - q`` evenly over the other neighbours; an infeasible action lands
    uniformly on the neighbour set.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    L, A = grid.n_locations, grid.n_actions
    P0 = np.zeros((L, L, A))
    for u_idx in range(L):
        u = grid.loc_of_index(u_idx)
        nbrs = [grid.loc_index(n) for n in neighbor_set(u, grid)]
        for a in range(A):
            target = action_target(u, a, grid)
            if target is None:
                P0[nbrs, u_idx, a] = 1.0 / len(nbrs)
                continue
            t_idx = grid.loc_index(target)
            others = [n for n in nbrs if n != t_idx]
            P0[t_idx, u_idx, a] = q
            if others:
                P0[others, u_idx, a] += (1.0 - q) / len(others)
            else:
                P0[t_idx, u_idx, a] = 1.0
    return P0


def arrival_probability(rate, dt=1.0, complement=False):
    """Mode-switch probability at a pickup chute.

    ``exp(-rate * dt)`` by default; ``1 - exp(-rate * dt)`` with ``complement``.
    """
    if rate <= 0 or dt <= 0:
        raise ValueError("rate and dt must be positive")
    p = math.exp(-rate * dt)
    return -math.expm1(-rate * dt) if complement else p


def build_stage_kernel(grid: GridSpec, player: PlayerSpec, P0, r):
    """Single-stage ``(S, S, A)`` kernel for one player including mode switches."""
    for chute in (player.pickup, player.dropoff):
        if not grid.contains(chute):
            raise StructureError(f"chute {chute} outside the grid")
    L, A = grid.n_locations, grid.n_actions
    P = np.zeros((grid.n_states, grid.n_states, A))
    pick, drop = grid.loc_index(player.pickup), grid.loc_index(player.dropoff)
    src1 = np.arange(L) * 2
    src2 = src1 + 1
    # mode 1: moves stay in mode 1 except landing on the pickup chute
    P[0::2][:, src1, :] = P0
    P[2 * pick, src1, :] = (1.0 - r) * P0[pick]
    P[2 * pick + 1, src1, :] = r * P0[pick]
    # mode 2: moves stay in mode 2 except landing on the dropoff chute
    P[1::2][:, src2, :] = P0
    P[2 * drop + 1, src2, :] = 0.0
    P[2 * drop, src2, :] = P0[drop]
    return P


def build_full_kernel(grid: GridSpec, players, q, dt=1.0, horizon=120, arrival_complement=False, arrivals=None):
    """Per-player ``(T, S, S, A)`` kernels, stationary in time.

    The stage kernel is shared across stages through a read-only broadcast
    view.  ``arrivals`` overrides the per-player mode-switch probabilities.
    """
    P0 = build_location_kernel(grid, q)
    out = []
    for i, player in enumerate(players):
        if arrivals is not None:
            r = arrivals[i]
        else:
            r = arrival_probability(player.rate, dt, arrival_complement)
        stage = build_stage_kernel(grid, player, P0, r)
        out.append(np.broadcast_to(stage, (horizon,) + stage.shape))
    return out


def goal_indicator(grid: GridSpec, player: PlayerSpec):
    """Per-state reward: 1 at (pickup, mode 1) and (dropoff, mode 2)."""
    c = np.zeros(grid.n_states)
    c[grid.state_index(player.pickup, 1)] = 1.0
    c[grid.state_index(player.dropoff, 2)] = 1.0
    return c


def build_cost_model(grid: GridSpec, players, config: ScenarioConfig) -> CostModel:
    """Goal rewards, ``epsilon``-linear regulariser and location congestion.

    ``f(w) = +-beta * exp(beta * (w - 1))`` where ``w`` sums the weighted
    mass over both modes and all actions at a location.
    """
    N, T1 = len(players), config.horizon + 1
    S, A = grid.n_states, grid.n_actions
    rewards = np.stack([goal_indicator(grid, p) for p in players])
    h_offset = np.broadcast_to(-rewards[:, None, :, None], (N, T1, S, A))
    h = PrimitiveField(h_offset, config.epsilon, 0.0, 0.0)
    sign = -1.0 if config.paper_literal_sign else 1.0
    beta = config.beta
    scale = sign * beta * math.exp(-beta) if beta > 0 else 0.0
    f = PrimitiveField(np.zeros((T1, grid.n_locations)), 0.0, scale, beta)
    g = PrimitiveField.zeros((T1, S, A))
    return CostModel(
        alpha=np.array([p.alpha for p in players]),
        f=f,
        g=g,
        h=h,
        groups=np.arange(S) // grid.modes,
        n_groups=grid.n_locations,
    )


def initial_distributions(grid: GridSpec, players):
    z = np.zeros((len(players), grid.n_states))
    for i, p in enumerate(players):
        z[i, grid.state_index(p.start, p.initial_mode)] = 1.0
    return z


@dataclass
class Scenario:
    config: ScenarioConfig
    grid: GridSpec
    players: list = field(default_factory=list)
    instance: GameInstance = None


def build_scenario(config: ScenarioConfig | None = None, arrivals=None) -> Scenario:
    """Assemble the warehouse game; defaults reproduce the reference experiment."""
    config = config or ScenarioConfig()
    grid = config.grid
    players = config.players()
    kernels = build_full_kernel(
        grid, players, config.q, config.dt, config.horizon, config.arrival_complement, arrivals
    )
    model = build_cost_model(grid, players, config)
    instance = GameInstance(
        kernels=kernels,
        z0=initial_distributions(grid, players),
        model=model,
        discount=config.gamma if config.use_discount else 1.0,
        allow_inadmissible=config.paper_literal_sign,
    )
    return Scenario(config=config, grid=grid, players=players, instance=instance.validate())
