"""Command line entry point: ``mdpcg solve|certify|simulate|report``.

Exit codes: 0 success, 1 input or structural error, 2 iteration cap reached
before convergence, 3 certification failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, io
from .game import nash_gap
from .mdp_core import StructureError
from .solver import SolveOptions, estimate_curvature, extract_certificate, frank_wolfe, verify_certificate
from .warehouse import ScenarioConfig, build_scenario

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("mdpcg")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_MAX_ITERS, EXIT_UNCERTIFIED = 0, 1, 2, 3
FEASIBILITY_TOL = 1e-8


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    scenario: ScenarioConfig | None = None
    game_path: Path | None = None
    solver: SolveOptions = dataclasses.field(default_factory=SolveOptions)
    curvature_samples: int = 0
    trials: int = 100
    rollout_seed: int = 0
    out: Path = Path("run")

    def as_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": dataclasses.asdict(self.scenario) if self.scenario else {"kind": "custom", "path": str(self.game_path)},
            "solver": dataclasses.asdict(self.solver) | {"curvature_samples": self.curvature_samples},
            "rollout": {"trials": self.trials, "seed": self.rollout_seed},
        }

    def digest(self):
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def build(self):
        """Return ``(instance, scenario_or_None)``."""
        if self.game_path is not None:
            return io.load_game(self.game_path).validate(), None
        scenario = build_scenario(self.scenario)
        return scenario.instance, scenario


SOLVER_KEYS = {"max_iters": int, "gap_tol": float, "movement_tol": float, "seed": int, "workers": int, "update": str}


def _section(doc, name):
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a table")
    return dict(value)


def _typed(section, key, kind, where):
    value = section[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"field {where}.{key} must be {kind.__name__}, got {value!r}")
    return value


def parse_config(doc, base_dir=Path(".")) -> RunConfig:
    """Validate a parsed config document, naming the first bad field."""
    unknown = set(doc) - {"schema_version", "out", "scenario", "solver", "rollout"}
    if unknown:
        raise ConfigError(f"unknown top-level field {sorted(unknown)[0]!r}")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"field schema_version must be {SCHEMA_VERSION}, got {version!r}")
    cfg = RunConfig()
    if "out" in doc:
        cfg.out = Path(_typed(doc, "out", str, "root"))

    scen = _section(doc, "scenario")
    kind = scen.pop("kind", "warehouse")
    if kind == "custom":
        if set(scen) != {"path"}:
            raise ConfigError("field scenario.path is required (and the only field) for custom games")
        path = Path(_typed(scen, "path", str, "scenario"))
        cfg.game_path = path if path.is_absolute() else base_dir / path
        if not cfg.game_path.exists():
            raise ConfigError(f"field scenario.path: {cfg.game_path} does not exist")
    elif kind == "warehouse":
        try:
            cfg.scenario = ScenarioConfig.from_mapping(scen)
        except ValueError as exc:
            raise ConfigError(f"scenario: {exc}") from exc
    else:
        raise ConfigError(f"field scenario.kind must be 'warehouse' or 'custom', got {kind!r}")

    solver = _section(doc, "solver")
    cfg.curvature_samples = int(solver.pop("curvature_samples", 0))
    bad = set(solver) - set(SOLVER_KEYS)
    if bad:
        raise ConfigError(f"unknown field solver.{sorted(bad)[0]}")
    try:
        cfg.solver = SolveOptions(**{k: _typed(solver, k, SOLVER_KEYS[k], "solver") for k in solver})
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc

    rollout = _section(doc, "rollout")
    bad = set(rollout) - {"trials", "seed"}
    if bad:
        raise ConfigError(f"unknown field rollout.{sorted(bad)[0]}")
    if "trials" in rollout:
        cfg.trials = _typed(rollout, "trials", int, "rollout")
    if "seed" in rollout:
        cfg.rollout_seed = _typed(rollout, "seed", int, "rollout")
    if cfg.trials < 0:
        raise ConfigError("field rollout.trials must be nonnegative")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc
    return parse_config(doc, path.parent)


def resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig(scenario=ScenarioConfig())
    if args.out is not None:
        cfg.out = Path(args.out)
    if cfg.scenario is not None and (args.paper_literal_congestion_sign or args.arrival_complement):
        changes = {}
        if args.paper_literal_congestion_sign:
            changes["paper_literal_sign"] = True
        if args.arrival_complement:
            changes["arrival_complement"] = True
        cfg.scenario = dataclasses.replace(cfg.scenario, **changes)
    solver_changes = {}
    if args.max_iters is not None:
        solver_changes["max_iters"] = args.max_iters
    if args.seed is not None:
        solver_changes["seed"] = args.seed
        cfg.rollout_seed = args.seed
    if args.command == "solve" and args.tol is not None:
        solver_changes["gap_tol"] = args.tol
    if solver_changes:
        try:
            cfg.solver = dataclasses.replace(cfg.solver, **solver_changes)
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from exc
    if args.trials is not None:
        if args.trials < 0:
            raise ConfigError("--trials must be nonnegative")
        cfg.trials = args.trials
    return cfg


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def open_manifest(cfg: RunConfig, stage):
    """Create the run manifest if needed and append a stage-start line."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "manifest.txt"
    if not path.exists():
        io.write_kv(
            path,
            [
                ("config_hash", cfg.digest()),
                ("seed", cfg.solver.seed),
                ("rollout_seed", cfg.rollout_seed),
                ("tool_version", __version__),
                ("created", _now()),
            ],
        )
    io.write_kv(path, [(f"stage.{stage}.started", _now()), (f"stage.{stage}.config_hash", cfg.digest())], mode="a")
    return path


def close_manifest(path, stage, status):
    io.write_kv(path, [(f"stage.{stage}.status", status), (f"stage.{stage}.finished", _now())], mode="a")


def cmd_solve(cfg: RunConfig) -> int:
    instance, _ = cfg.build()
    manifest = open_manifest(cfg, "solve")
    x, trace = frank_wolfe(instance, cfg.solver)
    io.write_joint(cfg.out, x)
    io.write_trace(cfg.out / "trace.csv", trace)
    gap, per_player = nash_gap(x, instance.model, instance.kernels, discount=instance.discount)
    summary = [
        ("iterations", len(trace)),
        ("converged", trace.converged),
        ("potential", trace.potential[-1]),
        ("fw_gap", trace.fw_gap[-1]),
        ("nash_gap", gap),
        ("flow_residual", instance.flow_residual(x)),
    ]
    summary += [(f"nash_gap_{i + 1}", g) for i, g in enumerate(per_player)]
    if cfg.curvature_samples > 0:
        summary.append(("curvature_lower_bound", estimate_curvature(instance, cfg.curvature_samples, cfg.solver.seed)))
        summary.append(("curvature_samples", cfg.curvature_samples))
    io.write_kv(cfg.out / "solve_summary.txt", summary)
    status = "converged" if trace.converged else "max_iters"
    close_manifest(manifest, "solve", status)
    log.info("solve finished after %d iterations (%s)", len(trace), status)
    return EXIT_OK if trace.converged else EXIT_MAX_ITERS


def _load_equilibrium(instance, directory):
    x = io.read_joint(directory, instance.shape)
    residual = instance.flow_residual(x)
    if residual > FEASIBILITY_TOL:
        raise io.FormatError(f"equilibrium is infeasible: flow_residual = {residual:.3g}")
    return x


def cmd_certify(cfg: RunConfig, equilibrium: Path, tol: float) -> int:
    instance, _ = cfg.build()
    x = _load_equilibrium(instance, equilibrium)
    manifest = open_manifest(cfg, "certify")
    cert = extract_certificate(x, instance)
    verdict = verify_certificate(x, cert, instance, tol)
    gap, per_player = nash_gap(x, instance.model, instance.kernels, discount=instance.discount)
    items = [("tol", tol), ("passed", verdict.passed)]
    items += sorted(verdict.residuals.items())
    items += [("min_mu", float(cert.mu.min())), ("nash_gap", gap)]
    items += [(f"nash_gap_{i + 1}", g) for i, g in enumerate(per_player)]
    for key, values in cert.per_player.items():
        items += [(f"{key}_{i + 1}", v) for i, v in enumerate(values)]
    io.write_kv(cfg.out / "certificate.txt", items)
    close_manifest(manifest, "certify", "pass" if verdict.passed else "fail")
    if not verdict.passed:
        worst = max(verdict.residuals, key=verdict.residuals.get)
        log.error("certificate rejected: %s = %.3g > %.3g (nash_gap %.3g)", worst, verdict.residuals[worst], tol, gap)
        return EXIT_UNCERTIFIED
    return EXIT_OK


SUMMARY_HEADER = [
    "player", "alpha", "mean_collisions", "collisions_per_step", "mean_wait", "worst_wait",
    "completed_packages", "incomplete_cycles", "trials", "seed",
]


def cmd_simulate(cfg: RunConfig, equilibrium: Path) -> int:
    from .rollout import run_rollouts

    instance, scenario = cfg.build()
    if scenario is None:
        raise ConfigError("simulate needs a warehouse scenario (collisions and waits are grid quantities)")
    x = _load_equilibrium(instance, equilibrium)
    manifest = open_manifest(cfg, "simulate")
    N = instance.n_players
    players_cols = [f"player{i + 1}" for i in range(N)]
    if cfg.trials == 0:
        io.write_csv(cfg.out / "rollout_summary.csv", SUMMARY_HEADER, [])
        io.write_csv(cfg.out / "collisions_by_t.csv", ["t", *players_cols], [])
    else:
        report = run_rollouts(instance, x, scenario.grid, scenario.players, cfg.trials, cfg.rollout_seed)
        rows = ([r[k] for k in SUMMARY_HEADER] for r in report.rows(scenario.players))
        io.write_csv(cfg.out / "rollout_summary.csv", SUMMARY_HEADER, rows)
        by_t = report.collisions_by_t
        io.write_csv(cfg.out / "collisions_by_t.csv", ["t", *players_cols], ([t, *by_t[:, t]] for t in range(by_t.shape[1])))
    close_manifest(manifest, "simulate", "ok")
    return EXIT_OK


def cmd_report(run_dir: Path) -> int:
    from . import plotting

    run_dir = Path(run_dir)
    jobs = [
        ("trace.csv", "convergence.svg", plotting.plot_convergence),
        ("collisions_by_t.csv", "collisions.svg", plotting.plot_collisions),
        ("rollout_summary.csv", "wait_times.svg", plotting.plot_wait_times),
    ]
    written = 0
    for source, target, plot in jobs:
        path = run_dir / source
        rows = io.read_csv(path) if path.exists() else []
        if not rows:
            log.warning("skipping %s: %s missing or empty", target, source)
            continue
        plot(rows, run_dir / target)
        written += 1
    if not written:
        log.error("no report inputs found in %s", run_dir)
        return EXIT_INPUT
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output (run) directory")
    common.add_argument("--seed", type=int, help="seed for curvature sampling and rollouts")
    common.add_argument("--tol", type=float, help="FW gap tolerance (solve) or certificate tolerance (certify)")
    common.add_argument("--max-iters", type=int, dest="max_iters")
    common.add_argument("--trials", type=int)
    common.add_argument("--paper-literal-congestion-sign", action="store_true")
    common.add_argument("--arrival-complement", action="store_true")
    common.add_argument("--equilibrium", help="directory holding x_player*.csv (default: --out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mdpcg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="compute an equilibrium with Frank-Wolfe")
    sub.add_parser("certify", parents=[common], help="check KKT residuals and Nash gap of an equilibrium")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo rollouts of an equilibrium")
    sub.add_parser("report", parents=[common], help="render SVG figures for a run directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            return cmd_report(Path(args.out or "run"))
        cfg = resolve(args)
        equilibrium = Path(args.equilibrium) if args.equilibrium else cfg.out
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "certify":
            return cmd_certify(cfg, equilibrium, args.tol if args.tol is not None else 1e-6)
        return cmd_simulate(cfg, equilibrium)
    except (ConfigError, StructureError, io.FormatError, ValueError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
