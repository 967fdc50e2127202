"""Acceptance criteria, one test per criterion.

Each test prints a single ``[criterion n] PASS|FAIL`` line with the measured
quantity and its tolerance, straight to the terminal.
"""
import time

import numpy as np
import pytest

from mdpcg.cli import main
from mdpcg.game import nash_gap, player_costs, potential
from mdpcg.instances import random_instance, random_joint_distribution, random_kernel
from mdpcg.mdp_core import value_iteration
from mdpcg.rollout import run_rollouts
from mdpcg.solver import SolveOptions, estimate_curvature, extract_certificate, frank_wolfe
from mdpcg.warehouse import ScenarioConfig, build_scenario
from oracles import enumerate_policies, minimize_potential
from test_rollout import single_player_goal_run

ORACLE_SEEDS = range(5)


@pytest.fixture
def report(capsys):
    def emit(n, ok, text):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}  {text}")
        return ok

    return emit


@pytest.fixture(scope="module")
def oracle_runs():
    runs = []
    for seed in ORACLE_SEEDS:
        inst = random_instance(seed)
        xhat, Fhat = minimize_potential(inst)
        start = time.perf_counter()
        x, trace = frank_wolfe(inst, SolveOptions(max_iters=10_000, gap_tol=1e-12, movement_tol=1e-12))
        runs.append(dict(inst=inst, xhat=xhat, Fhat=Fhat, x=x, trace=trace, seconds=time.perf_counter() - start))
    return runs


@pytest.fixture(scope="module")
def warehouse_run():
    sc = build_scenario()
    start = time.perf_counter()
    x, trace = frank_wolfe(sc.instance, SolveOptions(max_iters=100))
    return sc, x, trace, time.perf_counter() - start


def test_criterion_1_potential_gradient(report):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, h = 0.0, 1e-6
    for n in range(20):
        inst = random_instance(
            n, n_players=int(rng.integers(1, 4)), n_states=int(rng.integers(1, 5)),
            n_actions=int(rng.integers(1, 4)), horizon=int(rng.integers(1, 5)),
        )
        x = random_joint_distribution(inst, rng)
        costs = player_costs(x, inst.model)
        for _ in range(100):
            idx = tuple(int(rng.integers(0, d)) for d in x.shape)
            e = np.zeros_like(x)
            e[idx] = h
            fd = (potential(x + e, inst.model) - potential(x - e, inst.model)) / (2 * h)
            worst = max(worst, abs(fd - costs[idx]) / (1 + abs(costs[idx])))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-5 and seconds < 10
    assert report(1, ok, f"max |FD - cost|/(1+|cost|) = {worst:.2e} (tol 1e-5) over 2000 coordinates, {seconds:.1f}s (< 10s)")


def test_criterion_2_oracle_equivalence(report, oracle_runs):
    dF = max(abs(r["trace"].potential[-1] - r["Fhat"]) for r in oracle_runs)
    gaps = [nash_gap(r["xhat"], r["inst"].model, r["inst"].kernels)[0] for r in oracle_runs]
    fw_gaps = [nash_gap(r["x"], r["inst"].model, r["inst"].kernels)[0] for r in oracle_runs]
    n_vars = max(r["x"].size for r in oracle_runs)
    seconds = sum(r["seconds"] for r in oracle_runs)
    ok = dF <= 1e-4 and max(gaps) <= 1e-3 and n_vars <= 32 and seconds < 60
    assert report(
        2, ok,
        f"|F_FW - F_oracle| max {dF:.2e} (tol 1e-4); nash_gap at the minimiser max {max(gaps):.2e} (tol 1e-3); "
        f"{n_vars} variables, {seconds:.1f}s (< 60s); info: nash_gap of the raw FW iterate {max(fw_gaps):.2e}",
    )


def test_criterion_3_rate_envelope(report, oracle_runs):
    worst_ratio, worst_decay, worst_fw_decay = 0.0, 0.0, 0.0
    for r in oracle_runs:
        C = 4 * estimate_curvature(r["inst"], samples=200, seed=0)
        sub = np.array(r["trace"].potential) - r["Fhat"]
        k = np.arange(1, len(sub) + 1)
        worst_ratio = max(worst_ratio, float(np.max(sub / (2 * C / (k + 2)))))
        worst_decay = max(worst_decay, sub[99] / sub[9])
        worst_fw_decay = max(worst_fw_decay, r["trace"].fw_gap[99] / r["trace"].fw_gap[9])
    ok = worst_ratio <= 1.0 and worst_decay <= 0.15
    assert report(
        3, ok,
        f"max_k (F(x^k)-F*)/(2C/(k+2)) = {worst_ratio:.3f} (<= 1); gap(100)/gap(10) max {worst_decay:.3f} (<= 0.15); "
        f"info: FW duality gap ratio {worst_fw_decay:.3f}",
    )


def test_criterion_4_kkt_certificate(report, oracle_runs):
    certs = [extract_certificate(r["xhat"], r["inst"]) for r in oracle_runs]
    stat = max(c.stationarity for c in certs)
    dual = min(c.dual_feasibility for c in certs)
    cs = max(c.complementary_slackness for c in certs)
    ok = stat <= 1e-4 and dual >= -1e-9 and cs <= 1e-6
    assert report(4, ok, f"stationarity {stat:.2e} (<= 1e-4), min mu_hat {dual:.2e} (>= -1e-9), complementary slackness {cs:.2e} (<= 1e-6)")


def test_criterion_5_value_iteration_exact(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        kernel = random_kernel(rng, 3, 3, 2)
        costs = rng.normal(size=(4, 3, 2))
        values, _ = value_iteration(costs, kernel)
        worst = max(worst, float(np.abs(values - enumerate_policies(costs, kernel)).max()))
    assert report(5, worst <= 1e-12, f"max |V - V_enum| = {worst:.1e} over 50 draws (S=3, A=2, T=3; tol 1e-12)")


def test_criterion_6_warehouse_stabilization(report, warehouse_run):
    _, _, trace, seconds = warehouse_run
    movement = np.array(trace.movement)
    norms = np.array(trace.norms)
    at40 = float(movement[39].max())
    best_by_40 = float(movement[:40].max(axis=1).min())
    norm_change = float(np.abs(norms[39] - norms[38]).max())
    ok = at40 < 1e-2 and seconds < 120
    assert report(
        6, ok,
        f"max_i ||x^(i,40) - x^(i,39)|| = {at40:.3f} (< 1e-2), smallest over k <= 40 {best_by_40:.3f}, {seconds:.1f}s for 100 iterations; "
        f"info: max_i | ||x^(i,40)|| - ||x^(i,39)|| | = {norm_change:.1e}",
    )


def test_criterion_7_shortest_cycles(report):
    shortest = [min(single_player_goal_run(i).waits) for i in range(3)]
    assert report(7, shortest == [16, 12, 20], f"shortest dropoff-pickup-dropoff cycles {shortest} (expected [16, 12, 20])")


def test_criterion_8_impact_ordering(report, warehouse_run):
    sc, x, _, _ = warehouse_run
    rollout = run_rollouts(sc.instance, x, sc.grid, sc.players, trials=100, seed=0)
    light, heavy = rollout.mean_collisions[0], rollout.mean_collisions[2]
    assert report(8, light >= heavy, f"mean collisions alpha=0.5: {light:.2f} >= alpha=1.5: {heavy:.2f} (all {np.round(rollout.mean_collisions, 2).tolist()})")


def test_criterion_9_determinism(report, tmp_path):
    names = ["x_player1.csv", "x_player2.csv", "x_player3.csv", "trace.csv", "rollout_summary.csv", "collisions_by_t.csv"]
    for run in ("a", "b"):
        out = str(tmp_path / run)
        main(["solve", "--out", out, "--seed", "11"])
        main(["simulate", "--out", out, "--seed", "11"])
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    assert report(9, all(same), f"{sum(same)}/{len(same)} CSV outputs byte-identical across reruns with seed 11")
