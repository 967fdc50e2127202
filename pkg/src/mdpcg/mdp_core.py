"""Finite-horizon MDP primitives.

Array conventions used throughout the package:

* ``kernel`` has shape ``(T, S, S, A)``. ``kernel[t - 1, s_next, s, a]`` is the
  probability of arriving in ``s_next`` at stage ``t`` after taking action
  ``a`` in state ``s`` at stage ``t - 1``.  Destination index first.
* State-action distributions and stage costs have shape ``(T + 1, S, A)``.
* Values and deterministic policies have shape ``(T + 1, S)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-12


class StructureError(ValueError):
    """Array dimensions do not describe a consistent MDP."""


@dataclass
class KernelVerdict:
    ok: bool
    # (stage, state, action) triples whose outgoing column is not a distribution
    failures: list[tuple[int, int, int]] = field(default_factory=list)
    max_violation: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


def kernel_dims(kernel: np.ndarray) -> tuple[int, int, int]:
    """Return ``(T, S, A)`` for a kernel, raising on a malformed shape."""
    if kernel.ndim != 4 or kernel.shape[1] != kernel.shape[2]:
        raise StructureError(f"kernel must have shape (T, S, S, A), got {kernel.shape}")
    T, S, _, A = kernel.shape
    if T < 1:
        raise StructureError("horizon must be at least one transition")
    return T, S, A


def validate_kernel(kernel, horizon=None, n_states=None, n_actions=None, tol=SIMPLEX_TOL):
    """Check that every ``kernel[t, :, s, a]`` column lies on the probability simplex.

    Returns a :class:`KernelVerdict` listing each offending ``(t, s, a)`` with
    ``t`` the 1-based stage the column transitions into.
    """
    kernel = np.asarray(kernel, dtype=float)
    T, S, A = kernel_dims(kernel)
    for name, want, got in (("horizon", horizon, T), ("states", n_states, S), ("actions", n_actions, A)):
        if want is not None and want != got:
            raise StructureError(f"kernel {name} is {got}, expected {want}")

    col_sum = kernel.sum(axis=1)  # (T, S, A)
    sum_err = np.abs(col_sum - 1.0)
    neg = np.maximum(-kernel.min(axis=1), 0.0)
    over = np.maximum(kernel.max(axis=1) - 1.0, 0.0)
    violation = np.maximum(sum_err, np.maximum(neg, over))
    bad = np.argwhere(violation > tol)
    failures = [(int(t) + 1, int(s), int(a)) for t, s, a in bad]
    return KernelVerdict(ok=not failures, failures=failures, max_violation=float(violation.max()))


def _check_costs(costs, T, S, A):
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (T + 1, S, A):
        raise StructureError(f"costs must have shape {(T + 1, S, A)}, got {costs.shape}")
    return costs


def expected_next(kernel_t: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``sum_{s'} kernel_t[s', s, a] * values[s']`` as an ``(S, A)`` array."""
    return np.tensordot(values, kernel_t, axes=(0, 0))


def push_forward(kernel_t: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """State marginal of the next stage given the current ``(S, A)`` flow."""
    return np.tensordot(kernel_t, flow, axes=([1, 2], [0, 1]))


def backward_q(costs, kernel, discount=1.0):
    """Q-values of the finite-horizon recursion for fixed stage costs.

    ``Q[T] = c[T]`` and ``Q[t-1] = c[t-1] + discount * E[min_a Q[t]]``.
    """
    T, S, A = kernel_dims(kernel)
    costs = _check_costs(costs, T, S, A)
    q = np.empty_like(costs)
    q[T] = costs[T]
    for t in range(T, 0, -1):
        v = q[t].min(axis=1)
        q[t - 1] = costs[t - 1] + discount * expected_next(kernel[t - 1], v)
    return q


def value_iteration(costs, kernel, discount=1.0):
    """Backward dynamic programming for a finite-horizon cost-minimising MDP.

    Returns ``(values, policy)`` with shapes ``(T+1, S)``.  Ties in the
    minimisation go to the lowest action index.
    """
    if not 0.0 < discount <= 1.0:
        raise ValueError(f"discount must lie in (0, 1], got {discount}")
    q = backward_q(costs, kernel, discount)
    policy = q.argmin(axis=2)
    values = np.take_along_axis(q, policy[..., None], axis=2)[..., 0]
    return values, policy


def retrieve_density(kernel, z, policy):
    """Occupancy measure generated by a deterministic policy from ``z``."""
    T, S, A = kernel_dims(kernel)
    policy = np.asarray(policy)
    if policy.shape != (T + 1, S):
        raise StructureError(f"policy must have shape {(T + 1, S)}, got {policy.shape}")
    rows = np.arange(S)
    d = np.zeros((T + 1, S, A))
    d[0, rows, policy[0]] = z
    for t in range(1, T + 1):
        d[t, rows, policy[t]] = push_forward(kernel[t - 1], d[t - 1])
    return d


def occupancy_from_policy(kernel, z, pi):
    """Occupancy measure of a stochastic policy ``pi[t, s, a]``."""
    T, S, A = kernel_dims(kernel)
    pi = np.asarray(pi, dtype=float)
    d = np.empty((T + 1, S, A))
    d[0] = np.asarray(z, dtype=float)[:, None] * pi[0]
    for t in range(1, T + 1):
        d[t] = push_forward(kernel[t - 1], d[t - 1])[:, None] * pi[t]
    return d


def uniform_occupancy(kernel, z):
    """Occupancy measure of the policy that splits every state's mass evenly over actions."""
    T, S, A = kernel_dims(kernel)
    return occupancy_from_policy(kernel, z, np.full((T + 1, S, A), 1.0 / A))


def flow_residual(x, kernel, z) -> float:
    """Largest violation of the feasible-flow constraints, nonnegativity included.

    Zero exactly when ``x`` is a feasible state-action distribution for
    ``(kernel, z)``.
    """
    T, S, A = kernel_dims(kernel)
    x = np.asarray(x, dtype=float)
    if x.shape != (T + 1, S, A):
        raise StructureError(f"distribution must have shape {(T + 1, S, A)}, got {x.shape}")
    z = np.asarray(z, dtype=float)
    worst = max(0.0, float(-x.min()))
    worst = max(worst, float(np.abs(x[0].sum(axis=1) - z).max()))
    marg = x.sum(axis=2)
    for t in range(1, T + 1):
        inflow = push_forward(kernel[t - 1], x[t - 1])
        worst = max(worst, float(np.abs(inflow - marg[t]).max()))
    return worst


def policy_cost(costs, kernel, z, policy) -> float:
    """Expected total cost of a deterministic policy, evaluated through its occupancy measure."""
    return float(np.sum(np.asarray(costs) * retrieve_density(kernel, z, policy)))
