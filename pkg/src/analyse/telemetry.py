"""Structured event logging and post-hoc aggregation.

Every component writes LogRecords through a single RunSink per run. Records
are serialized as canonical JSON (sorted keys, compact separators, floats at
9 significant digits, no wall-clock fields), one record per line, so that two
runs of the same seeded scenario produce byte-identical log files.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class TelemetryError(Exception):
    pass


class SinkClosedError(TelemetryError):
    pass


class UnserializableError(TelemetryError):
    pass


class LogParseError(TelemetryError):
    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        raise UnserializableError(f"non-finite float in payload: {x!r}")
    return f"{x:.9g}"


def _canonical(value: Any, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(_format_float(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=True))
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise UnserializableError(f"non-string key: {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _canonical(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _canonical(item, out)
        out.append("]")
    else:
        raise UnserializableError(f"unsupported payload type: {type(value).__name__}")


def canonical_json(value: Any) -> str:
    """Serialize to the canonical form used for log lines and wire payloads."""
    out: list[str] = []
    _canonical(value, out)
    return "".join(out)


@dataclass(frozen=True)
class LogRecord:
    run_id: str
    seq: int
    t_sim: float
    source: str
    kind: str
    payload: dict

    def to_line(self) -> str:
        return canonical_json(
            {
                "run_id": self.run_id,
                "seq": self.seq,
                "t_sim": self.t_sim,
                "source": self.source,
                "kind": self.kind,
                "payload": self.payload,
            }
        )


class RunSink:
    """Single-writer, append-only JSONL sink for one run.

    Assigns the per-run seq counter, enforces non-decreasing t_sim per source,
    and keeps the emitted records in memory for same-process consumers (the
    environment reads back the window of records between agent steps).
    """

    def __init__(self, path: str | Path, run_id: str):
        self.path = Path(path)
        self.run_id = run_id
        self.records: list[LogRecord] = []
        self._last_t: dict[str, float] = {}
        self._fh = self.path.open("w", encoding="utf-8", newline="\n")
        self._closed = False

    def emit(self, source: str, kind: str, t_sim: float, payload: dict) -> LogRecord:
        if self._closed:
            raise SinkClosedError(f"emit on closed sink for run {self.run_id}")
        last = self._last_t.get(source)
        if last is not None and t_sim < last:
            raise TelemetryError(
                f"t_sim went backwards for source {source!r}: {t_sim} < {last}"
            )
        record = LogRecord(self.run_id, len(self.records), t_sim, source, kind, payload)
        line = record.to_line()
        self._fh.write(line + "\n")
        self._last_t[source] = t_sim
        self.records.append(record)
        return record

    def close(self) -> None:
        if not self._closed:
            self._fh.flush()
            self._fh.close()
            self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed

    def __enter__(self) -> "RunSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class RunSummary:
    """Aggregates recomputable by re-scanning a run's log file."""

    run_id: str = ""
    experiment: str | None = None
    factors: dict = field(default_factory=dict)
    seed: int | None = None
    violation_count: int = 0
    max_excursion_pu: float = 0.0
    diverged_count: int = 0
    payments_eur: dict = field(default_factory=dict)
    accepted_mvar: dict = field(default_factory=dict)
    clearings: int = 0
    clearings_resolved: int = 0
    total_cost_eur: float = 0.0
    frames_sent: int = 0
    frames_delivered: int = 0
    frames_dropped: int = 0
    returns: dict = field(default_factory=dict)
    unknown_kinds: dict = field(default_factory=dict)
    parse_errors: list = field(default_factory=list)

    @property
    def resolution_rate(self) -> float:
        return self.clearings_resolved / self.clearings if self.clearings else 1.0

    def episode_stats(self, agent_id: str) -> dict:
        rs = self.returns.get(agent_id, [])
        if not rs:
            return {"episodes": 0, "mean": 0.0, "min": 0.0, "max": 0.0}
        return {
            "episodes": len(rs),
            "mean": statistics.fmean(rs),
            "min": min(rs),
            "max": max(rs),
        }


_REQUIRED_FIELDS = ("run_id", "seq", "t_sim", "source", "kind", "payload")


def summarize(path: str | Path, strict: bool = False) -> RunSummary:
    """Scan one JSONL log and aggregate it into a RunSummary.

    Malformed lines are recorded as (line_no, message) in parse_errors and
    skipped unless strict=True, in which case the first one raises
    LogParseError. Unknown record kinds are tolerated and counted.
    """
    path = Path(path)
    summary = RunSummary()
    band_lo, band_hi = 0.95, 1.05
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
                missing = [f for f in _REQUIRED_FIELDS if f not in rec]
                if missing:
                    raise ValueError(f"missing fields: {', '.join(missing)}")
            except ValueError as exc:
                if strict:
                    raise LogParseError(str(path), line_no, str(exc)) from exc
                summary.parse_errors.append((line_no, str(exc)))
                continue
            kind = rec["kind"]
            payload = rec["payload"]
            if not summary.run_id:
                summary.run_id = rec["run_id"]
            if kind == "run.header":
                summary.experiment = payload.get("experiment")
                summary.factors = payload.get("factors", {})
                summary.seed = payload.get("seed")
                band = payload.get("band", {})
                band_lo = band.get("v_min_pu", band_lo)
                band_hi = band.get("v_max_pu", band_hi)
            elif kind == "grid.step":
                if not payload.get("converged", True):
                    summary.diverged_count += 1
                for vm in payload.get("vm", {}).values():
                    excursion = max(band_lo - vm, vm - band_hi, 0.0)
                    if excursion > 0.0:
                        summary.violation_count += 1
                        summary.max_excursion_pu = max(summary.max_excursion_pu, excursion)
            elif kind == "market.clearing":
                summary.clearings += 1
                if payload.get("resolved", False):
                    summary.clearings_resolved += 1
                summary.total_cost_eur += payload.get("total_cost_eur", 0.0)
                for agent, eur in payload.get("payments_eur", {}).items():
                    summary.payments_eur[agent] = summary.payments_eur.get(agent, 0.0) + eur
                for agent, q in payload.get("accepted_mvar", {}).items():
                    summary.accepted_mvar[agent] = summary.accepted_mvar.get(agent, 0.0) + q
            elif kind == "net.send":
                summary.frames_sent += 1
            elif kind == "net.deliver":
                summary.frames_delivered += 1
            elif kind == "net.drop":
                summary.frames_dropped += 1
            elif kind == "agent.episode":
                agent = payload.get("agent", "agent")
                summary.returns.setdefault(agent, []).append(payload.get("return", 0.0))
            elif kind in (
                "run.end",
                "run.abort",
                "kernel.step",
                "agent.generation",
                "agent.action",
                "agent.clamp",
                "net.rule",
                "net.restart",
            ):
                pass
            else:
                summary.unknown_kinds[kind] = summary.unknown_kinds.get(kind, 0) + 1
    return summary


_METRIC_KEYS = (
    "violation_count",
    "max_excursion_pu",
    "diverged_count",
    "clearings",
    "clearings_resolved",
    "resolution_rate",
    "total_cost_eur",
    "frames_sent",
    "frames_delivered",
    "frames_dropped",
)


@dataclass
class ComparisonTable:
    factor: str
    columns: list[str]
    rows: list[dict]  # one per factor level: {"level": .., metric: mean, ..}
    deltas: list[dict]  # same shape, each level minus the first level


def _summary_metrics(s: RunSummary) -> dict[str, float]:
    metrics: dict[str, float] = {k: float(getattr(s, k)) for k in _METRIC_KEYS}
    for agent in sorted(s.payments_eur):
        metrics[f"payments_eur.{agent}"] = s.payments_eur[agent]
    for agent in sorted(s.accepted_mvar):
        metrics[f"accepted_mvar.{agent}"] = s.accepted_mvar[agent]
    for agent in sorted(s.returns):
        metrics[f"mean_return.{agent}"] = statistics.fmean(s.returns[agent])
    return metrics


def compare(summaries: list[RunSummary], group_by: str) -> ComparisonTable:
    """Group run summaries by one factor's levels and tabulate metric means.

    Levels are ordered by first appearance (summaries are expected in run_id
    order, which follows the expansion order of the experiment). Deltas are
    taken against the first level.
    """
    if len(summaries) < 2:
        raise ValueError("compare needs at least two run summaries")
    experiments = {s.experiment for s in summaries}
    if len(experiments) > 1:
        raise ValueError(f"summaries from different experiments: {sorted(map(str, experiments))}")
    known = sorted({name for s in summaries for name in s.factors})
    if any(group_by not in s.factors for s in summaries):
        raise ValueError(
            f"unknown factor {group_by!r}; known factors: {', '.join(known) or '(none)'}"
        )

    levels: list[Any] = []
    grouped: dict[str, list[RunSummary]] = {}
    for s in sorted(summaries, key=lambda s: s.run_id):
        level = s.factors[group_by]
        key = canonical_json(level)
        if key not in grouped:
            levels.append(level)
            grouped[key] = []
        grouped[key].append(s)

    columns: list[str] = []
    per_level: list[dict] = []
    for level in levels:
        members = grouped[canonical_json(level)]
        metric_lists: dict[str, list[float]] = {}
        for s in members:
            for name, value in _summary_metrics(s).items():
                metric_lists.setdefault(name, []).append(value)
        means = {name: statistics.fmean(vals) for name, vals in metric_lists.items()}
        for name in means:
            if name not in columns:
                columns.append(name)
        row = {"level": level, "runs": len(members)}
        row.update(means)
        per_level.append(row)

    base = per_level[0]
    deltas = []
    for row in per_level:
        delta = {"level": row["level"], "runs": row["runs"]}
        for name in columns:
            delta[name] = row.get(name, 0.0) - base.get(name, 0.0)
        deltas.append(delta)
    return ComparisonTable(factor=group_by, columns=columns, rows=per_level, deltas=deltas)
