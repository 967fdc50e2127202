"""Congestion costs, potential function and equilibrium measurements.

A joint distribution ``x`` is an array of shape ``(N, T+1, S, A)``.  Player
``i`` pays

    alpha_i * f(w[t, group(s)]) + alpha_i * g(y[t, s, a]) + h_i(x_i[t, s, a])

where ``y = sum_i alpha_i x_i`` and ``w`` sums ``y`` over actions and over all
states that share a congestion group (by default each state is its own group).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp_core import StructureError, backward_q

SUPPORT_THRESHOLD = 1e-9


class CostEvaluationError(ArithmeticError):
    """A cost or potential term evaluated to a non-finite number."""


@dataclass(frozen=True)
class CostPrimitive:
    """Scalar cost curve ``w -> c0 + c1*w + c2*exp(c3*w)``."""

    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0

    @classmethod
    def constant(cls, value):
        return cls(c0=value)

    @classmethod
    def linear(cls, slope, offset=0.0):
        return cls(c0=offset, c1=slope)

    @classmethod
    def exponential(cls, scale, rate, offset=0.0):
        return cls(c0=offset, c2=scale, c3=rate)

    @property
    def kind(self) -> str:
        has_exp = self.c2 != 0.0 and self.c3 != 0.0
        if has_exp:
            return "affine-exponential" if self.c1 != 0.0 else "exponential"
        return "linear" if self.c1 != 0.0 else "constant"

    def __call__(self, w):
        return self.field().evaluate(w)

    def antiderivative(self, w):
        """Integral of the curve from 0 to ``w``."""
        return self.field().antiderivative(w)

    def derivative(self, w):
        return self.field().derivative(w)

    @property
    def nondecreasing(self) -> bool:
        return bool(self.field().nondecreasing())

    @property
    def strictly_increasing(self) -> bool:
        return bool(self.field().strictly_increasing())

    def field(self, shape=()):
        return PrimitiveField.full(self, shape)


class PrimitiveField:
    """An array of cost primitives sharing one shape, evaluated elementwise."""

    def __init__(self, c0=0.0, c1=0.0, c2=0.0, c3=0.0):
        arrays = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in (c0, c1, c2, c3)))
        self.c0, self.c1, self.c2, self.c3 = (np.array(a) for a in arrays)
        if not all(np.isfinite(a).all() for a in self.params):
            raise ValueError("cost primitive parameters must be finite")

    @classmethod
    def full(cls, prim: CostPrimitive, shape):
        return cls(*(np.full(shape, c, dtype=float) for c in (prim.c0, prim.c1, prim.c2, prim.c3)))

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape))

    @property
    def params(self):
        return (self.c0, self.c1, self.c2, self.c3)

    @property
    def shape(self):
        return self.c0.shape

    def __getitem__(self, idx) -> CostPrimitive:
        return CostPrimitive(*(float(c[idx]) for c in self.params))

    def evaluate(self, w):
        return self.c0 + self.c1 * w + self.c2 * np.exp(self.c3 * w)

    def derivative(self, w):
        return self.c1 + self.c2 * self.c3 * np.exp(self.c3 * w)

    def antiderivative(self, w):
        w = np.asarray(w, dtype=float)
        safe_rate = np.where(self.c3 == 0.0, 1.0, self.c3)
        exp_part = np.where(self.c3 == 0.0, self.c2 * w, self.c2 / safe_rate * np.expm1(self.c3 * w))
        return self.c0 * w + 0.5 * self.c1 * w * w + exp_part

    def nondecreasing(self):
        return (self.c1 >= 0.0) & (self.c2 * self.c3 >= 0.0)

    def strictly_increasing(self):
        return self.nondecreasing() & ((self.c1 > 0.0) | (self.c2 * self.c3 > 0.0))


@dataclass
class CostModel:
    """Parameters of the congestion cost family.

    ``f`` has shape ``(T+1, G)``, ``g`` shape ``(T+1, S, A)``, ``h`` shape
    ``(N, T+1, S, A)``.  ``f`` and ``g`` may carry a leading player axis to
    describe games whose congestion terms differ between players; such games
    have no potential.
    """

    alpha: np.ndarray
    f: PrimitiveField
    g: PrimitiveField
    h: PrimitiveField
    groups: np.ndarray = None
    n_groups: int = field(default=None)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        N, T1, S, A = self.h.shape
        if self.alpha.shape != (N,):
            raise StructureError(f"alpha must have shape ({N},), got {self.alpha.shape}")
        if self.groups is None:
            self.groups = np.arange(S)
        self.groups = np.asarray(self.groups, dtype=int)
        if self.groups.shape != (S,) or self.groups.min() < 0:
            raise StructureError("groups must map every state to a nonnegative group id")
        if self.n_groups is None:
            self.n_groups = int(self.groups.max()) + 1
        if self.f.shape[-2:] != (T1, self.n_groups) or self.f.shape[:-2] not in ((), (N,)):
            raise StructureError(f"f must have shape {(T1, self.n_groups)} (optionally per player), got {self.f.shape}")
        if self.g.shape[-3:] != (T1, S, A) or self.g.shape[:-3] not in ((), (N,)):
            raise StructureError(f"g must have shape {(T1, S, A)} (optionally per player), got {self.g.shape}")
        self._membership = np.zeros((S, self.n_groups))
        self._membership[np.arange(S), self.groups] = 1.0

    @classmethod
    def zeros(cls, n_players, horizon, n_states, n_actions, alpha=None):
        alpha = np.ones(n_players) if alpha is None else alpha
        T1 = horizon + 1
        return cls(
            alpha=alpha,
            f=PrimitiveField.zeros((T1, n_states)),
            g=PrimitiveField.zeros((T1, n_states, n_actions)),
            h=PrimitiveField.zeros((n_players, T1, n_states, n_actions)),
        )

    @property
    def shape(self):
        """``(N, T+1, S, A)`` of the joint distributions this model prices."""
        return self.h.shape

    @property
    def n_players(self):
        return self.h.shape[0]

    @property
    def horizon(self):
        return self.h.shape[1] - 1

    @property
    def shared_congestion(self) -> bool:
        """True when every player faces the same ``f`` and ``g``."""
        N = self.n_players
        shared = True
        for prim, base in ((self.f, 2), (self.g, 3)):
            if len(prim.shape) > base:
                shared &= all(np.all(c == c[0]) for c in prim.params) or N == 1
        return bool(shared)

    def group_sums(self, y):
        """Aggregate ``(T+1, S, A)`` congestion into ``(T+1, G)`` group totals."""
        return y.sum(axis=-1) @ self.membership

    @property
    def membership(self):
        """One-hot ``(S, G)`` matrix of state-to-group assignments."""
        return self._membership


def _check_joint(x, model):
    x = np.asarray(x, dtype=float)
    if x.shape != model.shape:
        raise StructureError(f"joint distribution must have shape {model.shape}, got {x.shape}")
    return x


def congestion_distribution(x, alpha):
    """Impact-weighted sum of the players' distributions, shape ``(T+1, S, A)``."""
    return np.tensordot(np.asarray(alpha, dtype=float), np.asarray(x, dtype=float), axes=(0, 0))


def _raise_nonfinite(costs, what):
    idx = tuple(int(i) for i in np.argwhere(~np.isfinite(costs))[0])
    names = ("player", "t", "s", "a")[-len(idx):]
    where = ", ".join(f"{n}={v}" for n, v in zip(names, idx))
    raise CostEvaluationError(f"non-finite {what} at {where}")


def player_costs(x, model: CostModel):
    """Stage costs of every player at the joint distribution ``x``, shape ``(N, T+1, S, A)``."""
    x = _check_joint(x, model)
    y = congestion_distribution(x, model.alpha)
    w = model.group_sums(y)
    with np.errstate(over="ignore", invalid="ignore"):
        f_val = model.f.evaluate(w)[..., model.groups]  # (T+1, S) or (N, T+1, S)
        g_val = model.g.evaluate(y)
        h_val = model.h.evaluate(x)
        congestion = f_val[..., None] + g_val
        costs = model.alpha[:, None, None, None] * congestion + h_val
    if not np.isfinite(costs).all():
        _raise_nonfinite(np.broadcast_to(costs, x.shape), "cost")
    return costs


def potential(x, model: CostModel) -> float:
    """Potential whose gradient with respect to ``x[i, t, s, a]`` is player i's cost."""
    if not model.shared_congestion:
        raise ValueError("congestion costs differ between players; no potential exists")
    x = _check_joint(x, model)
    y = congestion_distribution(x, model.alpha)
    w = model.group_sums(y)
    f = model.f if len(model.f.shape) == 2 else PrimitiveField(*(c[0] for c in model.f.params))
    g = model.g if len(model.g.shape) == 3 else PrimitiveField(*(c[0] for c in model.g.params))
    with np.errstate(over="ignore", invalid="ignore"):
        total = f.antiderivative(w).sum() + g.antiderivative(y).sum() + model.h.antiderivative(x).sum()
    if not np.isfinite(total):
        raise CostEvaluationError("non-finite potential value")
    return float(total)


def q_values(x, model: CostModel, kernels, discount=1.0, costs=None):
    """Q-values of every player at the frozen joint distribution ``x``."""
    if costs is None:
        costs = player_costs(x, model)
    return np.stack([backward_q(costs[i], kernels[i], discount) for i in range(model.n_players)])


def q_excess(q):
    """``Q - min_a Q`` for an array whose last axis indexes actions."""
    return q - q.min(axis=-1, keepdims=True)


def nash_gap(x, model: CostModel, kernels, support=SUPPORT_THRESHOLD, discount=1.0):
    """Largest Q-value excess over actions played with mass above ``support``.

    Returns ``(gap, per_player_gaps)``; the gap is zero exactly at a Nash
    equilibrium.
    """
    x = _check_joint(x, model)
    excess = q_excess(q_values(x, model, kernels, discount))
    played = np.where(x > support, excess, 0.0)
    per_player = played.reshape(model.n_players, -1).max(axis=1)
    return float(per_player.max()), per_player


@dataclass
class AdmissibilityVerdict:
    ok: bool
    reasons: list[str]

    def __bool__(self):
        return self.ok


def check_cost_admissibility(model: CostModel) -> AdmissibilityVerdict:
    """Sufficient monotonicity conditions for positive-definite cost Jacobians.

    Every ``h`` must be strictly increasing and every ``f`` and ``g``
    non-decreasing; congestion terms must also be shared by all players.
    """
    reasons = []
    bad_h = np.argwhere(~model.h.strictly_increasing())
    if bad_h.size:
        reasons.append(f"h not strictly increasing at {len(bad_h)} entries, first (i,t,s,a)={tuple(bad_h[0])}")
    for name, prim in (("f", model.f), ("g", model.g)):
        bad = np.argwhere(~prim.nondecreasing())
        if bad.size:
            reasons.append(f"{name} decreasing at {len(bad)} entries, first index={tuple(bad[0])}")
    if not model.shared_congestion:
        reasons.append("f or g differs between players")
    return AdmissibilityVerdict(ok=not reasons, reasons=reasons)


@dataclass
class SymmetryVerdict:
    ok: bool
    max_asymmetry: float
    min_curvature: float
    worst_pair: tuple | None = None
    message: str = ""

    def __bool__(self):
        return self.ok


def check_jacobian_symmetry(x, model: CostModel, probes=20, seed=0, step=1e-5, rtol=1e-5):
    """Finite-difference spot checks of the cost-vector Jacobian.

    Probes ``probes`` random coordinate pairs ``(p, q)`` and compares
    ``d cost_p / d x_q`` with ``d cost_q / d x_p``; also checks that the
    directional curvature ``d^T J d`` is positive along ``probes`` random
    directions.
    """
    if probes < 1:
        raise ValueError("probes must be at least 1")
    x = _check_joint(x, model)
    rng = np.random.default_rng(seed)
    n = x.size
    flat = x.ravel()

    def xi(v):
        return player_costs(v.reshape(x.shape), model).ravel()

    def column(q):
        e = np.zeros(n)
        e[q] = step
        return (xi(flat + e) - xi(flat - e)) / (2 * step)

    worst, worst_pair = 0.0, None
    # always include a cross-player pair at a shared coordinate when possible
    pairs = [tuple(rng.integers(0, n, size=2)) for _ in range(probes)]
    if model.n_players > 1:
        per = n // model.n_players
        k = int(rng.integers(0, per))
        pairs[0] = (k, per + k)
    cache = {}
    for p, q in pairs:
        for c in (p, q):
            if c not in cache:
                cache[c] = column(c)
        j_pq, j_qp = cache[q][p], cache[p][q]
        err = abs(j_pq - j_qp) / max(1.0, abs(j_pq), abs(j_qp))
        if err > worst:
            worst, worst_pair = err, (np.unravel_index(p, x.shape), np.unravel_index(q, x.shape))

    min_curv = np.inf
    for _ in range(probes):
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        curv = float(d @ (xi(flat + step * d) - xi(flat - step * d)) / (2 * step))
        min_curv = min(min_curv, curv)

    messages = []
    if worst > rtol:
        messages.append(f"asymmetric Jacobian between {worst_pair} (relative {worst:.3g})")
    if min_curv <= 0:
        messages.append(f"nonpositive directional curvature {min_curv:.3g}")
    return SymmetryVerdict(
        ok=not messages,
        max_asymmetry=worst,
        min_curvature=min_curv,
        worst_pair=worst_pair,
        message="; ".join(messages),
    )
