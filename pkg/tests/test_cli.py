import csv
import hashlib
import json
import time
from pathlib import Path

import pytest

from fuzzysched.cli import evaluation_rows, main, normalized_rows, rows_csv
from fuzzysched.graphs import parse_app_graph
from fuzzysched.scheduler import SimResult
from fuzzysched.validate import validate_schedule
from fuzzysched.graphs import default_arch


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_help_for_every_command(capsys):
    for cmd in ("generate", "train", "schedule", "evaluate"):
        assert main([cmd, "--help"]) == 0
        text = capsys.readouterr().out
        assert "--config" in text and "--out" in text


def test_generate_single_is_deterministic(work):
    assert main(["generate", "--n", "40", "--seed", "7", "--out", "a"]) == 0
    assert main(["generate", "--n", "40", "--seed", "7", "--out", "b"]) == 0
    files = sorted(p.name for p in (work / "a").glob("graph_*.json"))
    assert files == ["graph_n40_s7.json"]
    assert digest(work / "a" / files[0]) == digest(work / "b" / files[0])
    assert (work / "a" / "manifest.json").exists()


def test_generate_corpus_spans_sizes(work):
    assert main(["generate", "--corpus", "10", "--min", "6", "--max", "85", "--seed", "1", "--out", "c"]) == 0
    sizes = sorted(len(parse_app_graph((p).read_text()).tasks) for p in (work / "c").glob("graph_*.json"))
    assert len(sizes) == 10 and sizes[0] == 6 and sizes[-1] == 85


def test_generate_validation_errors(work, capsys):
    assert main(["generate", "--n", "0", "--seed", "1"]) == 2
    assert main(["generate", "--n", "5"]) == 2
    assert main(["generate", "--seed", "1"]) == 2
    assert "seed" in capsys.readouterr().err.lower()


@pytest.fixture
def tiny(work):
    assert main(["generate", "--n", "6", "--seed", "3", "--out", "g", "--arch-out", "arch.json"]) == 0
    return work / "g" / "graph_n6_s3.json"


def test_train_tiny_is_fast_and_reproducible(work, tiny):
    args = ["train", "--corpus", str(tiny), "--arch", "arch.json", "--seed", "5", "--pop", "20", "--iterations", "10"]
    t0 = time.perf_counter()
    assert main(args + ["--out", "t1"]) == 0
    assert time.perf_counter() - t0 < 60
    rb = json.loads((work / "t1" / "rulebase.json").read_text())
    assert len(rb["consequents"]) == 625
    assert main(args + ["--out", "t2"]) == 0
    assert digest(work / "t1" / "rulebase.json") == digest(work / "t2" / "rulebase.json")
    for rel in ("pareto/graph_000.csv", "stats/graph_000.csv"):
        assert (work / "t1" / rel).exists()
    manifest = json.loads((work / "t1" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 5
    assert manifest["inputs"][str(tiny)] == digest(tiny)
    assert "total" in manifest["wall_clock_s"]


def test_train_missing_arch_names_path(work, tiny, capsys):
    rc = main(["train", "--corpus", str(tiny), "--arch", "missing_arch.json", "--seed", "1",
               "--pop", "4", "--iterations", "1", "--out", "t"])
    assert rc == 4
    assert "missing_arch.json" in capsys.readouterr().err


def test_train_requires_seed(work, tiny):
    assert main(["train", "--corpus", str(tiny), "--pop", "4", "--iterations", "1"]) == 2


def test_schedule_outputs_and_policies(work, tiny):
    assert main(["train", "--corpus", str(tiny), "--seed", "2", "--pop", "4", "--iterations", "2", "--out", "t"]) == 0
    assert main(["schedule", "--app", str(tiny), "--rulebase", "t/rulebase.json", "--out", "s"]) == 0
    res = json.loads((work / "s" / "result.json").read_text())
    for key in ("makespan", "avg_temp", "avg_power", "gsfr"):
        assert res[key] > 0
    assert read_csv(work / "s" / "fired_rules.csv")
    graph = parse_app_graph(tiny.read_text())
    for pol, extra in (("greedy-eft", []), ("random", ["--seed", "3"])):
        assert main(["schedule", "--app", str(tiny), "--policy", pol, *extra, "--out", pol]) == 0
        sim = SimResult.from_dict(json.loads((work / pol / "result.json").read_text()))
        assert validate_schedule(graph, default_arch(), sim.records) == []
    assert main(["schedule", "--app", str(tiny), "--policy", "random", "--out", "x"]) == 2
    assert main(["schedule", "--app", str(tiny), "--out", "x"]) == 2


def test_schedule_trace_energy(work, tiny):
    assert main(["schedule", "--app", str(tiny), "--policy", "greedy-eft", "--trace", "--out", "s"]) == 0
    res = json.loads((work / "s" / "result.json").read_text())
    rows = read_csv(work / "s" / "trace.csv")
    energy = sum(float(r["power"]) * float(r["duration"]) for r in rows)
    assert energy == pytest.approx(res["avg_power"] * res["makespan"], rel=1e-6)


def test_runtime_error_exit_code(work, tiny, capsys):
    rc = main(["schedule", "--app", str(tiny), "--policy", "greedy-eft", "--t-max", "300", "--out", "s"])
    assert rc == 3
    assert "UncoolableError" in capsys.readouterr().err


def test_bad_graph_exit_code(work):
    Path("bad.json").write_text('{"tasks": [{"id": "A", "wcet": {"A": 1}}], "edges": [{"src": "A", "dst": "A"}]}')
    assert main(["schedule", "--app", "bad.json", "--policy", "greedy-eft"]) == 2


def test_config_file_and_precedence(work, tiny):
    Path("cfg.json").write_text(json.dumps({"policy": "random", "seed": 4, "out": "from_cfg"}))
    assert main(["schedule", "--app", str(tiny), "--config", "cfg.json"]) == 0
    assert (work / "from_cfg" / "result.json").exists()
    assert main(["schedule", "--app", str(tiny), "--config", "cfg.json", "--out", "override"]) == 0
    assert (work / "override" / "result.json").read_text() == (work / "from_cfg" / "result.json").read_text()
    Path("junk.json").write_text(json.dumps({"nonsense": 1}))
    assert main(["schedule", "--app", str(tiny), "--config", "junk.json"]) == 2


def test_manifest_replay_is_byte_identical(work, tiny):
    assert main(["schedule", "--app", str(tiny), "--policy", "random", "--seed", "9", "--trace", "--out", "s1"]) == 0
    assert main(["schedule", "--config", "s1/manifest.json", "--out", "s2"]) == 0
    for f in ("result.json", "gantt.csv", "trace.csv"):
        assert (work / "s1" / f).read_bytes() == (work / "s2" / f).read_bytes()
    assert main(["train", "--config", "s1/manifest.json"]) == 2


def test_evaluate_table(work):
    assert main(["generate", "--corpus", "2", "--min", "6", "--max", "10", "--seed", "2", "--out", "g"]) == 0
    rc = main(["evaluate", "--corpus", "g", "--policies", "greedy-eft,random", "--seed", "1", "--out", "e"])
    assert rc == 0
    table = read_csv(work / "e" / "table.csv")
    assert len(table) == 4
    norm = read_csv(work / "e" / "normalized.csv")
    cols = ("theta_K", "power_W", "gsfr_per_s", "exec_time_s")
    for graph in {r["graph"] for r in norm}:
        rows = [r for r in norm if r["graph"] == graph]
        for c in cols:
            vals = [float(r[c]) for r in rows]
            assert all(0.0 <= v <= 1.0 for v in vals) and max(vals) == 1.0
    # rebuild both tables from the stored results
    results = []
    for r in table:
        doc = json.loads((work / "e" / "results" / f"{r['graph']}__{r['policy']}.json").read_text())
        results.append((r["graph"], r["policy"], SimResult.from_dict(doc)))
    rows = evaluation_rows(results)
    assert rows_csv(rows) == (work / "e" / "table.csv").read_text()
    assert rows_csv(normalized_rows(rows)) == (work / "e" / "normalized.csv").read_text()


def test_evaluate_rejects_unknown_policy(work):
    assert main(["generate", "--n", "5", "--seed", "2", "--out", "g"]) == 0
    assert main(["evaluate", "--corpus", "g", "--policies", "oracle"]) == 2
    assert main(["evaluate", "--corpus", "g", "--policies", "random"]) == 2
