"""End-to-end execution of run documents: validate, simulate, log."""

from __future__ import annotations

import concurrent.futures
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from . import scenario as scn
from .environment import (
    AgentRunState,
    Environment,
    LearnerConfig,
    PhaseReport,
    objective_from_config,
    run_phase,
)
from .feeders import FeederError
from .kernel import KernelError
from .telemetry import RunSink, TelemetryError, canonical_json
from .validation import document_kind, validate_document

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SIMULATION = 3
EXIT_IO = 4


class RunError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass
class RunResult:
    run_id: str
    log_path: Path
    reports: list[PhaseReport] = field(default_factory=list)


def run_envelope(doc: dict) -> tuple[str, int, str | None, dict, dict]:
    """(run_id, seed, experiment, factors, scenario) from a run or scenario doc."""
    kind = document_kind(doc)
    if kind == "run":
        return (
            str(doc["run_id"]),
            int(doc["seed"]),
            doc.get("experiment") or None,
            dict(doc.get("factors", {})),
            doc["scenario"],
        )
    if kind == "scenario":
        return (str(doc.get("name", "scenario")), int(doc.get("seed", 0)), None, {}, doc)
    raise RunError("document is neither a run nor a scenario", EXIT_VALIDATION)


def execute_run(
    doc: dict,
    base_dir: Path,
    out_dir: Path,
    seed_override: int | None = None,
) -> RunResult:
    """Run all schedule phases and write <run_id>.jsonl into out_dir.

    Raises RunError with the documented exit code on validation failure (2),
    simulation abort (3), or I/O trouble (4). Validation failures leave no
    partial log behind because the sink is only opened after they pass.
    """
    run_id, seed, experiment, factors, scenario_doc = run_envelope(doc)
    violations = validate_document(doc, base_dir)
    if violations:
        lines = "\n".join(f"  {path}: {msg}" for path, msg in violations)
        raise RunError(f"validation failed for {run_id}:\n{lines}", EXIT_VALIDATION)

    seed_overridden = seed_override is not None
    if seed_overridden:
        seed = int(seed_override)

    config = scn.parse_scenario(scenario_doc, base_dir)
    try:
        data = scn.load_data_series(config)
    except FeederError as exc:
        raise RunError(f"bad data series: {exc}", EXIT_VALIDATION) from exc
    except OSError as exc:
        raise RunError(f"cannot read data series: {exc}", EXIT_IO) from exc

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        sink = RunSink(out_dir / f"{run_id}.jsonl", run_id)
    except OSError as exc:
        raise RunError(f"cannot open log sink: {exc}", EXIT_IO) from exc

    digest = hashlib.sha256(canonical_json(scenario_doc).encode("utf-8")).hexdigest()
    sink.emit("runner", "run.header", 0.0, {
        "run_id": run_id,
        "seed": seed,
        "seed_overridden": seed_overridden,
        "experiment": experiment,
        "factors": factors,
        "scenario": config.name,
        "scenario_sha256": digest,
        "schema_version": scn.SCHEMA_VERSION,
        "band": {
            "v_min_pu": config.market.band.v_min_pu,
            "v_max_pu": config.market.band.v_max_pu,
        },
        "agent": config.agent.agent_id,
        "agent_kind": config.agent.kind,
    })

    agent = config.agent
    env = Environment(
        builder=lambda ep_seed, emit: scn.assemble(config, ep_seed, emit, data),
        sensors=agent.sensors,
        actuators=agent.actuators,
        objective=objective_from_config(agent.objective),
        sink=sink,
        band=(config.market.band.v_min_pu, config.market.band.v_max_pu),
        agent_id=agent.agent_id,
    )
    learner = LearnerConfig(
        kind=agent.kind,
        population=agent.population,
        generations=agent.generations,
        sigma0=agent.sigma0,
        replay=agent.replay,
    )
    state = AgentRunState()
    reports: list[PhaseReport] = []
    try:
        for phase in config.schedule.phases:
            reports.append(run_phase(env, learner, phase, seed, state))
    except (KernelError, scn.ScenarioError, TelemetryError) as exc:
        sink.emit("runner", "run.abort", env.telemetry_time, {"error": str(exc)})
        sink.close()
        raise RunError(f"simulation aborted: {exc}", EXIT_SIMULATION) from exc

    sink.emit("runner", "run.end", env.telemetry_time, {
        "status": "ok",
        "phases": [
            {
                "name": r.name,
                "mode": r.mode,
                "episodes": len(r.returns),
                "mean_return": r.mean_return,
                "best_return": r.best_return,
            }
            for r in reports
        ],
    })
    sink.close()
    return RunResult(run_id=run_id, log_path=sink.path, reports=reports)


def _run_one_file(path_str: str, out_dir_str: str, seed_override: int | None) -> tuple[str, int, str]:
    """Worker for directory execution; returns (file, exit code, message)."""
    import yaml

    from .scenario import load_document

    path = Path(path_str)
    try:
        doc = load_document(path)
        result = execute_run(doc, path.parent, Path(out_dir_str), seed_override)
        return (path.name, EXIT_OK, f"log at {result.log_path}")
    except RunError as exc:
        return (path.name, exc.exit_code, str(exc))
    except (OSError, yaml.YAMLError) as exc:
        return (path.name, EXIT_IO, str(exc))


def execute_run_directory(
    run_dir: Path,
    out_dir: Path,
    parallel: int = 1,
    seed_override: int | None = None,
) -> list[tuple[str, int, str]]:
    """Execute every run YAML in a directory, up to `parallel` at a time.

    Runs are fully isolated (one kernel and one log sink each), so worker
    processes never share state; results come back in file-name order.
    """
    run_files = sorted(p for p in run_dir.glob("*.yaml") if p.name != "index.yaml")
    if not run_files:
        raise RunError(f"no run files found under {run_dir}", EXIT_IO)
    out_dir.mkdir(parents=True, exist_ok=True)
    if parallel <= 1:
        return [_run_one_file(str(p), str(out_dir), seed_override) for p in run_files]
    with concurrent.futures.ProcessPoolExecutor(max_workers=parallel) as pool:
        futures = [
            pool.submit(_run_one_file, str(p), str(out_dir), seed_override)
            for p in run_files
        ]
        return [f.result() for f in futures]
