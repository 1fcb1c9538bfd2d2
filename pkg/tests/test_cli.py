import json

import pytest
import yaml

from analyse.cli import main

from conftest import MINI, packaged


@pytest.fixture()
def mini_path(tmp_path, mini_doc):
    path = tmp_path / "mini.yaml"
    path.write_text(yaml.safe_dump(mini_doc, sort_keys=True), encoding="utf-8")
    return path


def experiment_path(tmp_path, scenario_name="mini.yaml", factors=None):
    doc = {
        "schema_version": 1,
        "kind": "experiment",
        "name": "miniexp",
        "base_scenario": scenario_name,
        "base_seed": 9,
        "strategy": "full_factorial",
        "factors": factors or [
            {"name": "price_b",
             "path": "market/bidders/1/price_eur_per_mvar",
             "levels": [5.0, 6.0, 7.0]},
            {"name": "gate", "path": "market/gate_closure_s", "levels": [0.0, 900.0]},
        ],
    }
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=True), encoding="utf-8")
    return path


def test_validate_ok_bundled(capsys):
    assert main(["validate", str(packaged("feeder4.yaml"))]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_reports_paths(tmp_path, capsys, mini_doc):
    mini_doc["agents"][0]["sensors"][0]["id"] = "grid.bus_9.vm_pu"
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(mini_doc), encoding="utf-8")
    assert main(["validate", str(bad)]) == 2
    out = capsys.readouterr().out
    assert "agents/0/sensors/0/id" in out


def test_validate_empty_file(tmp_path, capsys):
    empty = tmp_path / "empty.yaml"
    empty.write_text("", encoding="utf-8")
    assert main(["validate", str(empty)]) == 2


def test_design_counts_and_overwrite_guard(tmp_path, mini_path, capsys):
    exp = experiment_path(tmp_path)
    out = tmp_path / "runs"
    assert main(["design", str(exp), "-o", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["index.yaml"] + [f"miniexp-{i:04d}.yaml" for i in range(6)]
    # rerun without the flag refuses
    assert main(["design", str(exp), "-o", str(out)]) == 4
    # with the flag it rewrites byte-identically
    before = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["design", str(exp), "-o", str(out), "--overwrite"]) == 0
    after = {p.name: p.read_bytes() for p in out.iterdir()}
    assert before == after


def test_design_index_lists_factors(tmp_path, mini_path):
    exp = experiment_path(tmp_path)
    out = tmp_path / "runs"
    main(["design", str(exp), "-o", str(out)])
    index = yaml.safe_load((out / "index.yaml").read_text())
    assert index["experiment"] == "miniexp"
    assert index["runs"]["miniexp-0000"]["factors"] == {"price_b": 5.0, "gate": 0.0}
    run_doc = yaml.safe_load((out / "miniexp-0003.yaml").read_text())
    assert run_doc["scenario"]["market"]["gate_closure_s"] == 900.0


def test_designed_runs_validate_without_edits(tmp_path, mini_path):
    from analyse.validation import validate_document

    exp = experiment_path(tmp_path)
    out = tmp_path / "runs"
    main(["design", str(exp), "-o", str(out)])
    for run_file in sorted(out.glob("miniexp-*.yaml")):
        doc = yaml.safe_load(run_file.read_text())
        assert validate_document(doc, out) == [], run_file.name


def test_run_twice_identical_logs_and_seed_override(tmp_path, mini_path, capsys):
    log_a = tmp_path / "a"
    log_b = tmp_path / "b"
    assert main(["run", str(mini_path), "-o", str(log_a)]) == 0
    assert main(["run", str(mini_path), "-o", str(log_b)]) == 0
    assert (log_a / "mini.jsonl").read_bytes() == (log_b / "mini.jsonl").read_bytes()

    log_c = tmp_path / "c"
    assert main(["run", str(mini_path), "-o", str(log_c), "--seed", "777"]) == 0
    header = json.loads((log_c / "mini.jsonl").read_text().splitlines()[0])
    assert header["payload"]["seed"] == 777
    assert header["payload"]["seed_overridden"] is True


def test_run_env_var_default_dir(tmp_path, mini_path, monkeypatch):
    out = tmp_path / "from_env"
    monkeypatch.setenv("ANALYSE_LOG_DIR", str(out))
    assert main(["run", str(mini_path)]) == 0
    assert (out / "mini.jsonl").exists()


def test_run_invalid_grid_leaves_no_log(tmp_path, mini_doc):
    mini_doc["grid"]["lines"] = mini_doc["grid"]["lines"][:1]  # disconnect
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(mini_doc), encoding="utf-8")
    out = tmp_path / "logs"
    assert main(["run", str(bad), "-o", str(out)]) == 2
    assert not (out / "bad.jsonl").exists()


def test_report_single_log(tmp_path, mini_path, capsys):
    out = tmp_path / "logs"
    main(["run", str(mini_path), "-o", str(out)])
    capsys.readouterr()
    assert main(["report", str(out / "mini.jsonl")]) == 0
    text = capsys.readouterr().out
    assert "violation_count" in text
    assert "payments_eur.agent_b" in text


def test_report_csv_format(tmp_path, mini_path, capsys):
    out = tmp_path / "logs"
    main(["run", str(mini_path), "-o", str(out)])
    capsys.readouterr()
    assert main(["report", str(out), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("run_id,")
    assert len(lines) == 2  # header + one run


def test_report_group_by_unknown_factor(tmp_path, mini_path, capsys):
    exp = experiment_path(
        tmp_path,
        factors=[{"name": "gate", "path": "market/gate_closure_s", "levels": [0.0, 900.0]}],
    )
    runs = tmp_path / "runs"
    logs = tmp_path / "logs"
    main(["design", str(exp), "-o", str(runs)])
    for run_file in sorted(runs.glob("miniexp-*.yaml")):
        assert main(["run", str(run_file), "-o", str(logs)]) == 0
    capsys.readouterr()
    assert main(["report", str(logs), "--group-by", "nope"]) == 2
    err = capsys.readouterr().err
    assert "known factors: gate" in err
    assert main(["report", str(logs), "--group-by", "gate"]) == 0


def test_report_missing_logs(tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    assert main(["report", str(empty)]) == 4
    assert main(["report", str(tmp_path / "missing")]) == 4


def test_run_rejects_garbage_yaml(tmp_path):
    bad = tmp_path / "garbage.yaml"
    bad.write_text("kind: [unclosed", encoding="utf-8")
    assert main(["run", str(bad)]) == 2
    assert main(["validate", str(bad)]) == 2


def test_run_directory_sequential_and_parallel(tmp_path, mini_path):
    exp = experiment_path(
        tmp_path,
        factors=[{"name": "gate", "path": "market/gate_closure_s", "levels": [0.0, 900.0]}],
    )
    runs = tmp_path / "runs"
    main(["design", str(exp), "-o", str(runs)])
    seq_logs = tmp_path / "seq"
    par_logs = tmp_path / "par"
    assert main(["run", str(runs), "-o", str(seq_logs)]) == 0
    assert main(["run", str(runs), "-o", str(par_logs), "--parallel", "2"]) == 0
    for name in ("miniexp-0000.jsonl", "miniexp-0001.jsonl"):
        assert (seq_logs / name).read_bytes() == (par_logs / name).read_bytes()


def test_run_directory_empty_is_io_error(tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    assert main(["run", str(empty)]) == 4


def test_simulation_abort_exit_code_and_partial_log(tmp_path, mini_path, monkeypatch):
    import json

    from analyse.scenario import GridSimulator

    original = GridSimulator.__call__

    def failing(self, t, inputs):
        if t >= 900:
            raise RuntimeError("injected fault")
        return original(self, t, inputs)

    monkeypatch.setattr(GridSimulator, "__call__", failing)
    out = tmp_path / "logs"
    assert main(["run", str(mini_path), "-o", str(out)]) == 3
    lines = (out / "mini.jsonl").read_text().splitlines()
    last = json.loads(lines[-1])
    assert last["kind"] == "run.abort"
    assert "injected fault" in last["payload"]["error"]


def test_bad_data_series_is_validation_error(tmp_path, mini_doc):
    csv = tmp_path / "w.csv"
    csv.write_text("t_s,ghi_w_m2,t_air_c\n0,0,10\n900,1,11\n2000,2,12\n", encoding="utf-8")
    mini_doc["data"]["weather"]["path"] = str(csv)
    doc_path = tmp_path / "mini.yaml"
    doc_path.write_text(yaml.safe_dump(mini_doc), encoding="utf-8")
    out = tmp_path / "logs"
    assert main(["run", str(doc_path), "-o", str(out)]) == 2
    assert not (out / "mini.jsonl").exists()
