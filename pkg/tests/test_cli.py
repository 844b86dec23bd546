import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ncots.cli import DATA_ERROR, USAGE_ERROR, main
from ncots.heads import init_potential_from_embeddings, load_head
from ncots.env import EnvSpec
from ncots.search import SearchConfig
from ncots.traces import RANDOM8_SET, read_traces, validate_trace

FAST = {
    "search": {"step_budget": 30},
    "train": {
        "potential": {"learning_rate": 0.02, "epochs": 5, "batch_size": 64},
        "progress": {"learning_rate": 0.01, "epochs": 3, "batch_size": 256},
    },
    "explore": {"iterations": 20000},
}


def run(*argv) -> int:
    return main([str(a) for a in argv])


def artifacts(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(FAST))
    g = ["--config", cfg, "--seed", 3]
    assert run(*g, "--out", root / "env", "gen-env", "--n-queries", 12) == 0
    assert run(*g, "--out", root / "orig", "search", "--env", root / "env", "--policy", "original") == 0
    assert run(*g, "--out", root / "rand", "random", "--env", root / "env", "--repeats", 4) == 0
    assert run(*g, "--out", root / "heads", "train", "--env", root / "env",
               "--traces", root / "orig/traces.jsonl", root / "rand/traces.jsonl") == 0
    assert run(*g, "--out", root / "ncots", "search", "--env", root / "env", "--potential", root / "heads/potential.json",
               "--progress", root / "heads/progress.json", "--diagnostics") == 0
    return root, g


def test_gen_env_sizes_and_reruns(tmp_path):
    assert run("--out", tmp_path / "a", "gen-env", "--n-queries", 0) == 0
    assert (tmp_path / "a/queries.jsonl").read_text() == ""
    assert run("--out", tmp_path / "b", "gen-env", "--n-queries", 200) == 0
    assert run("--out", tmp_path / "c", "gen-env", "--n-queries", 200) == 0
    assert len((tmp_path / "b/queries.jsonl").read_text().splitlines()) == 200
    assert artifacts(tmp_path / "b") == artifacts(tmp_path / "c")
    assert EnvSpec.load(tmp_path / "b/env.json") == EnvSpec.load(tmp_path / "c/env.json")


def test_manifest(pipeline):
    root, _ = pipeline
    m = json.loads((root / "ncots/manifest.json").read_text())
    assert m["command"] == "search" and m["seed"] == 3
    assert set(m["outputs"]) == {"traces.jsonl", "diagnostics.jsonl"}
    assert all(len(h) == 64 for h in m["outputs"].values())
    assert len(m["inputs"]) == 4  # env.json, queries.jsonl and both heads


def test_train_outputs(pipeline):
    root, _ = pipeline
    rep = json.loads((root / "heads/train_report.json").read_text())
    # initial loss plus one entry per epoch
    assert len(rep["potential"]["loss_curve"]) == 6 and len(rep["progress"]["loss_curve"]) == 4
    assert rep["progress"]["loss_curve"][-1] <= rep["progress"]["loss_curve"][0]
    assert rep["potential"]["loss_curve"][-1] <= rep["potential"]["loss_curve"][0]
    assert load_head(root / "heads/potential.json").weights.shape == (8, 16)


def test_train_zero_epochs_returns_init(pipeline, tmp_path):
    root, g = pipeline
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"potential": {"epochs": 0}}}))
    assert run("--config", cfg, "--seed", 3, "--out", tmp_path, "train", "--heads", "potential",
               "--env", root / "env", "--traces", root / "orig/traces.jsonl") == 0
    head = load_head(tmp_path / "potential.json")
    init = init_potential_from_embeddings(EnvSpec.load(root / "env/env.json").operator_embeddings(RANDOM8_SET), "random8")
    assert np.allclose(head.weights, init.weights) and not (tmp_path / "progress.json").exists()


def test_search_outputs(pipeline):
    root, _ = pipeline
    traces = read_traces(root / "ncots/traces.jsonl")
    assert len(traces) == 12
    assert all(validate_trace(t, SearchConfig(step_budget=30)) == [] for t in traces)
    diag = (root / "ncots/diagnostics.jsonl").read_text().splitlines()
    assert len(diag) >= sum(len(t.architecture) for t in traces)


def test_random_and_aggregate(pipeline, tmp_path):
    root, g = pipeline
    assert len(read_traces(root / "rand/traces.jsonl")) == 12 * 4
    assert run(*g, "--out", tmp_path, "aggregate", "--path-matrix", root / "rand/path_matrix.jsonl",
               "--baseline-traces", root / "orig/traces.jsonl") == 0
    side = json.loads((tmp_path / "density.json").read_text())
    assert side["n_samples"] == 20000 and 0 <= side["superior_fraction"] <= 1
    counts = [int(r["count"]) for r in csv.DictReader(open(tmp_path / "density.csv"))]
    assert sum(counts) == 20000


def test_aggregate_fixture_has_four_points(tmp_path):
    pm = tmp_path / "pm.jsonl"
    pm.write_text('{"query_id":"q1","lengths":[100,200],"correct":[true,false]}\n'
                  '{"query_id":"q2","lengths":[150,50],"correct":[true,false]}\n')
    assert run("--out", tmp_path / "o", "aggregate", "--path-matrix", pm, "--iterations", 5000) == 0
    counts = [int(r["count"]) for r in csv.DictReader(open(tmp_path / "o/density.csv"))]
    assert sum(c > 0 for c in counts) == 4 and sum(counts) == 5000


def test_hybrid_emits_guiding_fraction(pipeline, tmp_path):
    root, g = pipeline
    assert run(*g, "--out", tmp_path, "hybrid", "--env", root / "env") == 0
    rows = [json.loads(x) for x in (tmp_path / "guidance.jsonl").read_text().splitlines()]
    assert len(rows) == 12 and all(0 < r["guiding_fraction"] < 1 for r in rows)


def test_metrics_identity(pipeline, tmp_path):
    root, g = pipeline
    t = root / "orig/traces.jsonl"
    assert run(*g, "--out", tmp_path, "metrics", "--baseline", t, "--run", f"same={t}", f"ncots={root / 'ncots/traces.jsonl'}", "--average") == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["rows"]["same"]["eta"] == 1.0 and "average" in doc


def test_analyze(pipeline, tmp_path):
    root, g = pipeline
    labels = tmp_path / "labels.jsonl"
    labels.write_text("".join(json.dumps({"operator": o, "mode": m}) + "\n"
                              for o, m in [("Wait", "reflection"), ("Wait", "statement"), ("So", "summary")]))
    assert run(*g, "--out", tmp_path / "o", "analyze", "--traces", root / "ncots/traces.jsonl",
               "--frequency", "--preceding", "Wait", "--modes", labels) == 0
    rows = list(csv.reader(open(tmp_path / "o/mode_correlation.csv")))
    for r in rows[1:]:
        assert sum(map(float, r[1:5])) == pytest.approx(1.0)
    freq = list(csv.reader(open(tmp_path / "o/operator_frequency.csv")))[1:]
    assert sum(float(r[1]) for r in freq) == pytest.approx(100.0)


def test_exit_codes(tmp_path):
    assert run("gen-env", "--bogus") == USAGE_ERROR
    assert run("--out", tmp_path, "search", "--env", tmp_path / "missing") == DATA_ERROR
    assert run("--out", tmp_path, "metrics", "--baseline", tmp_path / "nope.jsonl", "--run", "x") == DATA_ERROR
    assert run("--out", tmp_path, "analyze") == USAGE_ERROR
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run("--out", tmp_path / "o", "aggregate", "--traces", bad) == DATA_ERROR


@pytest.mark.parametrize("cmd", [
    ("search", "--policy", "original"),
    ("search", "--policy", "greedy", "--repeats", 2),
    ("random", "--repeats", 3),
    ("hybrid",),
])
def test_threads_do_not_change_artifacts(pipeline, tmp_path, cmd):
    root, g = pipeline
    assert run(*g, "--out", tmp_path / "t1", "--threads", 1, cmd[0], "--env", root / "env", *cmd[1:]) == 0
    assert run(*g, "--out", tmp_path / "t4", "--threads", 4, cmd[0], "--env", root / "env", *cmd[1:]) == 0
    assert artifacts(tmp_path / "t1") == artifacts(tmp_path / "t4")
