"""Frank-Wolfe learning dynamics and dual certificates for MDP congestion games."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import game
from .mdp_core import (
    StructureError,
    backward_q,
    expected_next,
    flow_residual,
    kernel_dims,
    occupancy_from_policy,
    retrieve_density,
    uniform_occupancy,
    validate_kernel,
    value_iteration,
)

log = logging.getLogger(__name__)


@dataclass
class GameInstance:
    """Kernels ``(T, S, S, A)`` and initial distributions ``(S,)`` per player plus a cost model."""

    kernels: list
    z0: np.ndarray
    model: game.CostModel
    discount: float = 1.0
    allow_inadmissible: bool = False

    def __post_init__(self):
        self.kernels = [np.asarray(k, dtype=float) for k in self.kernels]
        self.z0 = np.asarray(self.z0, dtype=float)

    @property
    def n_players(self):
        return len(self.kernels)

    @property
    def shape(self):
        return self.model.shape

    @property
    def horizon(self):
        return self.model.horizon

    def validate(self):
        """Raise :class:`StructureError` unless the instance is well formed."""
        N, T1, S, A = self.model.shape
        if len(self.kernels) != N:
            raise StructureError(f"{len(self.kernels)} kernels for {N} players")
        if self.z0.shape != (N, S):
            raise StructureError(f"initial distributions must have shape {(N, S)}, got {self.z0.shape}")
        for i, kernel in enumerate(self.kernels):
            verdict = validate_kernel(kernel, T1 - 1, S, A)
            if not verdict:
                raise StructureError(f"player {i} kernel is not stochastic at (t,s,a)={verdict.failures[0]}")
        if (self.z0 < 0).any() or np.abs(self.z0.sum(axis=1) - 1.0).max() > 1e-12:
            raise StructureError("initial distributions must be probability vectors")
        if not self.allow_inadmissible:
            verdict = game.check_cost_admissibility(self.model)
            if not verdict:
                raise StructureError("cost model is not admissible: " + "; ".join(verdict.reasons))
        return self

    def costs(self, x):
        return game.player_costs(x, self.model)

    def potential(self, x):
        return game.potential(x, self.model)

    def flow_residual(self, x):
        return max(flow_residual(x[i], self.kernels[i], self.z0[i]) for i in range(self.n_players))

    def uniform_point(self):
        return np.stack([uniform_occupancy(k, z) for k, z in zip(self.kernels, self.z0)])


@dataclass
class SolveOptions:
    max_iters: int = 100
    gap_tol: float = 1e-6
    movement_tol: float = 1e-4
    seed: int = 0
    workers: int = 1
    update: str = "jacobi"  # or "gauss-seidel"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.gap_tol <= 0 or self.movement_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.update not in ("jacobi", "gauss-seidel"):
            raise ValueError(f"unknown update order {self.update!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class ConvergenceTrace:
    """One record per iteration ``k``.

    ``potential[k-1]`` is ``F(x^k)``; ``fw_gap[k-1]`` is the duality gap of
    ``x^{k-1}`` against its best responses; ``movement[k-1, i]`` is
    ``||x^{ik} - x^{i,k-1}||_2`` and ``norms[k-1, i]`` is ``||x^{ik}||_2``.
    """

    potential: list = field(default_factory=list)
    fw_gap: list = field(default_factory=list)
    movement: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.potential)

    def rows(self):
        for k in range(len(self)):
            yield k + 1, self.potential[k], self.fw_gap[k], self.movement[k], self.norms[k]


def best_response(instance: GameInstance, i, costs_i):
    _, policy = value_iteration(costs_i, instance.kernels[i], instance.discount)
    return retrieve_density(instance.kernels[i], instance.z0[i], policy)


def fw_gap(x, b, costs) -> float:
    """``sum_i <cost_i(x), x_i - b_i>``; nonnegative when ``b`` holds best responses."""
    return float(np.sum(np.asarray(costs) * (np.asarray(x) - np.asarray(b))))


def frank_wolfe(instance: GameInstance, opts: SolveOptions | None = None, x0=None):
    """Frank-Wolfe over the potential with dynamic-programming best responses.

    Each iteration freezes the stage costs at the current joint
    distribution, solves every player's MDP by value iteration, and moves
    toward the resulting deterministic occupancy measure with step
    ``2 / (k + 1)``.  Returns ``(x, trace)``.
    """
    opts = opts or SolveOptions()
    instance.validate()
    N = instance.n_players
    x = instance.uniform_point() if x0 is None else np.array(x0, dtype=float)
    trace = ConvergenceTrace()
    pool = ThreadPoolExecutor(opts.workers) if opts.workers > 1 and N > 1 else None
    try:
        for k in range(1, opts.max_iters + 1):
            step = 2.0 / (k + 1)
            prev = x.copy()
            if opts.update == "jacobi":
                costs = instance.costs(x)
                if pool is not None:
                    b = np.stack(list(pool.map(lambda i: best_response(instance, i, costs[i]), range(N))))
                else:
                    b = np.stack([best_response(instance, i, costs[i]) for i in range(N)])
                gap = fw_gap(x, b, costs)
                x = (1.0 - step) * x + step * b
            else:
                gap = 0.0
                for i in range(N):
                    costs_i = instance.costs(x)[i]
                    b_i = best_response(instance, i, costs_i)
                    gap += fw_gap(x[i], b_i, costs_i)
                    x[i] = (1.0 - step) * x[i] + step * b_i
            diff = (x - prev).reshape(N, -1)
            movement = np.linalg.norm(diff, axis=1)
            trace.potential.append(instance.potential(x))
            trace.fw_gap.append(gap)
            trace.movement.append(movement)
            trace.norms.append(np.linalg.norm(x.reshape(N, -1), axis=1))
            if gap <= opts.gap_tol and movement.max() <= opts.movement_tol:
                trace.converged = True
                log.info("converged at iteration %d (gap %.3g)", k, gap)
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return x, trace


def random_feasible_point(instance: GameInstance, rng, vertex=False):
    """A random joint distribution: random deterministic policies if ``vertex`` else Dirichlet policies."""
    N, T1, S, A = instance.shape
    out = np.empty(instance.shape)
    for i in range(N):
        if vertex:
            policy = rng.integers(0, A, size=(T1, S))
            out[i] = retrieve_density(instance.kernels[i], instance.z0[i], policy)
        else:
            pi = rng.dirichlet(np.full(A, 0.5), size=(T1, S))
            out[i] = occupancy_from_policy(instance.kernels[i], instance.z0[i], pi)
    return out


def curvature_term(instance: GameInstance, x, s, gamma, f_x=None, costs_x=None):
    """``2/gamma^2 * (F(w) - F(x) - <w - x, grad F(x)>)`` with ``w = x + gamma (s - x)``."""
    w = x + gamma * (s - x)
    f_x = instance.potential(x) if f_x is None else f_x
    costs_x = instance.costs(x) if costs_x is None else costs_x
    return 2.0 / gamma**2 * (instance.potential(w) - f_x - float(np.sum((w - x) * costs_x)))


def estimate_curvature(instance: GameInstance, samples=200, seed=0) -> float:
    """Sampled lower bound on the curvature constant of the potential.

    Half the sampled pairs are vertices of the feasible set (deterministic
    policies), half are interior points; step lengths are drawn from (0, 1].
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    best = 0.0
    for n in range(samples):
        x = random_feasible_point(instance, rng, vertex=bool(n % 2))
        s = random_feasible_point(instance, rng, vertex=bool(n % 2) or rng.random() < 0.5)
        gamma = 1.0 if n % 4 == 0 else 1.0 - rng.random()
        best = max(best, curvature_term(instance, x, s, gamma))
    return best


@dataclass
class DualCertificate:
    """Shifted KKT multipliers per player.

    ``nu`` has shape ``(N, T+1, S)`` and ``mu`` shape ``(N, T+1, S, A)``.
    """

    nu: np.ndarray
    mu: np.ndarray
    stationarity: float
    dual_feasibility: float
    complementary_slackness: float
    per_player: dict = field(default_factory=dict)

    @property
    def residuals(self):
        return {
            "stationarity": self.stationarity,
            "dual_feasibility": self.dual_feasibility,
            "complementary_slackness": self.complementary_slackness,
        }


def shift_duals(nu, mu, kernel):
    """Shift KKT multipliers so every stage has a zero-slack action.

    Works backward from the last stage with a zero shift beyond the horizon:
    ``lam = mu + E[delta_next]``, ``delta = min_a lam``, ``mu_hat = lam - delta``
    and ``nu_hat = nu + delta``.  Returns ``(nu_hat, mu_hat, delta)`` where
    ``delta`` has shape ``(T+2, S)`` including the zero terminal row.
    """
    T, S, A = kernel_dims(kernel)
    delta = np.zeros((T + 2, S))
    mu_hat = np.empty_like(mu, dtype=float)
    for t in range(T, -1, -1):
        lam = mu[t] + (expected_next(kernel[t], delta[t + 1]) if t < T else 0.0)
        delta[t] = lam.min(axis=1)
        mu_hat[t] = lam - delta[t][:, None]
    return nu + delta[: T + 1], mu_hat, delta


def stationarity_residual(costs, kernel, nu, mu, discount=1.0) -> float:
    """Largest violation of ``cost + E[nu_next] = nu + mu`` (``cost = nu + mu`` at the last stage)."""
    T = kernel_dims(kernel)[0]
    lhs = np.array(costs, dtype=float)
    for t in range(T):
        lhs[t] += discount * expected_next(kernel[t], nu[t + 1])
    return float(np.abs(lhs - nu[..., None] - mu).max())


def extract_certificate(x, instance: GameInstance) -> DualCertificate:
    """Dual certificate built from the Q-values at ``x``.

    ``nu = min_a Q`` and ``mu = Q - nu`` are shifted with :func:`shift_duals`;
    residuals measure how far ``x`` is from a KKT point of each player's
    problem.
    """
    x = np.asarray(x, dtype=float)
    costs = instance.costs(x)
    nus, mus = [], []
    per = {"stationarity": [], "dual_feasibility": [], "complementary_slackness": []}
    for i in range(instance.n_players):
        kernel = instance.kernels[i]
        q = backward_q(costs[i], kernel, instance.discount)
        nu = q.min(axis=2)
        nu_hat, mu_hat, _ = shift_duals(nu, q - nu[..., None], kernel)
        nus.append(nu_hat)
        mus.append(mu_hat)
        per["stationarity"].append(stationarity_residual(costs[i], kernel, nu_hat, mu_hat, instance.discount))
        per["dual_feasibility"].append(float(mu_hat.min()))
        per["complementary_slackness"].append(float(np.abs(x[i] * mu_hat).max()))
    return DualCertificate(
        nu=np.stack(nus),
        mu=np.stack(mus),
        stationarity=max(per["stationarity"]),
        dual_feasibility=min(per["dual_feasibility"]),
        complementary_slackness=max(per["complementary_slackness"]),
        per_player=per,
    )


@dataclass
class CertificateVerdict:
    passed: bool
    residuals: dict

    def __bool__(self):
        return self.passed


def verify_certificate(x, cert: DualCertificate, instance: GameInstance, tol=1e-6) -> CertificateVerdict:
    """Check the four KKT conditions for ``x`` and the given multipliers, each within ``tol``."""
    x = np.asarray(x, dtype=float)
    costs = instance.costs(x)
    stat = max(
        stationarity_residual(costs[i], instance.kernels[i], cert.nu[i], cert.mu[i], instance.discount)
        for i in range(instance.n_players)
    )
    residuals = {
        "primal_feasibility": instance.flow_residual(x),
        "dual_feasibility": max(0.0, -float(cert.mu.min())),
        "complementary_slackness": float(np.abs(x * cert.mu).max()),
        "stationarity": stat,
    }
    return CertificateVerdict(passed=all(v <= tol for v in residuals.values()), residuals=residuals)
