import json
import math

import pytest

from analyse.telemetry import (
    LogParseError,
    RunSink,
    SinkClosedError,
    TelemetryError,
    UnserializableError,
    canonical_json,
    compare,
    summarize,
)


def test_canonical_json_sorted_compact():
    value = {"b": 1, "a": {"z": True, "y": None}, "c": [1, 2.5, "s"]}
    assert canonical_json(value) == '{"a":{"y":null,"z":true},"b":1,"c":[1,2.5,"s"]}'


def test_canonical_json_float_formatting():
    assert canonical_json(0.1) == "0.1"
    assert canonical_json(1.0) == "1"
    assert canonical_json(1234567.891) == "1234567.89"  # 9 significant digits
    assert canonical_json(1e-7) == "1e-07"
    # formatted floats still parse as JSON numbers
    assert json.loads(canonical_json([1e20, -0.0, 3.14159265358979])) == [
        1e20, -0.0, 3.14159265,
    ]


def test_canonical_json_rejects_nonfinite_and_bad_types():
    with pytest.raises(UnserializableError):
        canonical_json(math.nan)
    with pytest.raises(UnserializableError):
        canonical_json(math.inf)
    with pytest.raises(UnserializableError):
        canonical_json({1: "non-string key"})
    with pytest.raises(UnserializableError):
        canonical_json(b"bytes")


def test_sink_assigns_sequential_seq(tmp_path):
    path = tmp_path / "r.jsonl"
    with RunSink(path, "r") as sink:
        first = sink.emit("a", "k.x", 0.0, {})
        second = sink.emit("a", "k.y", 1.0, {})
    assert (first.seq, second.seq) == (0, 1)
    lines = path.read_text().splitlines()
    assert [json.loads(l)["seq"] for l in lines] == [0, 1]


def test_sink_rejects_after_close(tmp_path):
    sink = RunSink(tmp_path / "r.jsonl", "r")
    sink.close()
    with pytest.raises(SinkClosedError):
        sink.emit("a", "k", 0.0, {})


def test_sink_enforces_time_order_per_source(tmp_path):
    sink = RunSink(tmp_path / "r.jsonl", "r")
    sink.emit("a", "k", 5.0, {})
    sink.emit("b", "k", 1.0, {})  # other source may lag
    with pytest.raises(TelemetryError, match="backwards"):
        sink.emit("a", "k", 4.0, {})
    sink.close()


def test_lines_are_self_contained(tmp_path):
    path = tmp_path / "r.jsonl"
    with RunSink(path, "r") as sink:
        sink.emit("s", "kind.one", 0.0, {"vm": {"1": 0.99}})
    record = json.loads(path.read_text().splitlines()[0])
    assert set(record) == {"run_id", "seq", "t_sim", "source", "kind", "payload"}


def write_fixture_log(path, run_id="fix", band=(0.95, 1.05), factors=None):
    with RunSink(path, run_id) as sink:
        sink.emit("runner", "run.header", 0.0, {
            "run_id": run_id, "seed": 7, "experiment": "exp",
            "factors": factors or {"dos": False},
            "band": {"v_min_pu": band[0], "v_max_pu": band[1]},
        })
        sink.emit("grid", "grid.step", 0.0,
                  {"vm": {"1": 1.0, "2": 0.94}, "converged": True})
        sink.emit("grid", "grid.step", 900.0,
                  {"vm": {"1": 1.0, "2": 0.97}, "converged": False})
        sink.emit("market", "market.clearing", 900.0, {
            "resolved": True, "total_cost_eur": 12.5,
            "payments_eur": {"a1": 12.5}, "accepted_mvar": {"a1": 2.5},
        })
        sink.emit("net", "net.send", 900.0, {})
        sink.emit("net", "net.deliver", 900.5, {})
        sink.emit("net", "net.drop", 901.0, {})
        sink.emit("agent", "agent.episode", 900.0, {"agent": "att", "return": 3.5})
        sink.emit("weird", "custom.kind", 901.0, {})
    return path


def test_summarize_counts(tmp_path):
    path = write_fixture_log(tmp_path / "fix.jsonl")
    s = summarize(path)
    assert s.run_id == "fix"
    assert s.violation_count == 1
    assert s.max_excursion_pu == pytest.approx(0.01)
    assert s.diverged_count == 1
    assert s.clearings == 1 and s.clearings_resolved == 1
    assert s.total_cost_eur == 12.5
    assert (s.frames_sent, s.frames_delivered, s.frames_dropped) == (1, 1, 1)
    assert s.payments_eur == {"a1": 12.5}
    assert s.returns == {"att": [3.5]}
    assert s.unknown_kinds == {"custom.kind": 1}
    assert s.episode_stats("att")["mean"] == 3.5


def test_summarize_empty_log(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    s = summarize(path)
    assert s.violation_count == 0
    assert s.clearings == 0
    assert s.resolution_rate == 1.0


def test_summarize_single_drop(tmp_path):
    path = tmp_path / "d.jsonl"
    with RunSink(path, "d") as sink:
        sink.emit("net", "net.drop", 0.0, {})
    assert summarize(path).frames_dropped == 1


def test_summarize_reports_malformed_line_numbers(tmp_path):
    path = write_fixture_log(tmp_path / "fix.jsonl")
    content = path.read_text().splitlines()
    content.insert(2, "{not json")
    content.insert(5, '{"missing": "fields"}')
    path.write_text("\n".join(content) + "\n", encoding="utf-8")
    s = summarize(path)
    assert [line for line, _ in s.parse_errors] == [3, 6]
    with pytest.raises(LogParseError) as info:
        summarize(path, strict=True)
    assert info.value.line_no == 3


def test_compare_identical_summaries_zero_deltas(tmp_path):
    a = summarize(write_fixture_log(tmp_path / "a.jsonl", "exp-0000", factors={"dos": False}))
    b = summarize(write_fixture_log(tmp_path / "b.jsonl", "exp-0001", factors={"dos": True}))
    table = compare([a, b], "dos")
    assert table.rows[0]["level"] is False
    for column in table.columns:
        assert table.deltas[1][column] == pytest.approx(0.0)
    assert table.deltas[0]["runs"] == 1


def test_compare_unknown_factor_named(tmp_path):
    a = summarize(write_fixture_log(tmp_path / "a.jsonl", "exp-0000"))
    b = summarize(write_fixture_log(tmp_path / "b.jsonl", "exp-0001"))
    with pytest.raises(ValueError, match="known factors: dos"):
        compare([a, b], "nope")


def test_compare_mismatched_experiments(tmp_path):
    a = summarize(write_fixture_log(tmp_path / "a.jsonl", "exp-0000"))
    b = summarize(write_fixture_log(tmp_path / "b.jsonl", "exp-0001"))
    b.experiment = "other"
    with pytest.raises(ValueError, match="different experiments"):
        compare([a, b], "dos")


def test_compare_needs_two_summaries(tmp_path):
    a = summarize(write_fixture_log(tmp_path / "a.jsonl"))
    with pytest.raises(ValueError):
        compare([a], "dos")
