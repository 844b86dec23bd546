import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncots.metrics import (
    MODES,
    RunMetrics,
    average_metrics,
    efficiency_eta,
    mode_correlation,
    operator_frequency,
    summarize_run,
    write_frequency_csv,
    write_metrics,
    write_mode_csv,
)
from ncots.traces import RANDOM8_SET, ReasoningStep, ReasoningTrace
from reference_data import ABLATION_BASELINE, ABLATION_ROWS, REFERENCE_BASELINES, REFERENCE_ROWS, reference_cells

def test_eta_examples():
    assert efficiency_eta(47.5, 40.0, 1884, 2109) == pytest.approx(1.578, abs=0.005)
    assert efficiency_eta(48.7, 51.3, 6334, 8765) == pytest.approx(1.247, abs=0.005)
    assert efficiency_eta(0.7, 0.7, 300, 300) == 1.0


def test_eta_domain_errors():
    for args in ((1, 0, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)):
        with pytest.raises(ValueError):
            efficiency_eta(*args)


@pytest.mark.parametrize("name,A,A0,L,L0,eta", list(reference_cells()), ids=lambda x: x if isinstance(x, str) else "")
def test_reference_cells_reproduce(name, A, A0, L, L0, eta):
    assert efficiency_eta(A, A0, L, L0) == pytest.approx(eta, abs=0.005)


def test_reference_averages_reproduce():
    for model, rows in REFERENCE_ROWS.items():
        for method, (cells, (d_acc, d_len, eta)) in rows.items():
            per = [RunMetrics.from_values(A, L, *REFERENCE_BASELINES[model][b]) for b, (A, L, _) in enumerate(cells)]
            avg = average_metrics(per)
            assert avg["eta"] == pytest.approx(eta, abs=0.005), (model, method)
            # deltas are printed to one decimal; allow half a unit plus float slack
            assert avg["delta_acc"] == pytest.approx(d_acc, abs=0.05 + 1e-9), (model, method)
            assert avg["delta_length_pct"] == pytest.approx(d_len, abs=0.05 + 1e-9), (model, method)


def test_ablation_rows_reproduce():
    for name, (A, L, eta) in ABLATION_ROWS.items():
        assert efficiency_eta(A, ABLATION_BASELINE[0], L, ABLATION_BASELINE[1]) == pytest.approx(eta, abs=0.005), name


@given(st.floats(0.01, 1), st.floats(0.01, 1), st.floats(1, 1e4), st.floats(1, 1e4), st.floats(0.01, 100))
def test_eta_unit_invariance(A, A0, L, L0, c):
    assert efficiency_eta(A, A0, L * c, L0 * c) == pytest.approx(efficiency_eta(A, A0, L, L0), rel=1e-9)
    assert efficiency_eta(100 * A, 100 * A0, L, L0) == pytest.approx(efficiency_eta(A, A0, L, L0), rel=1e-9)


def _tr(qid, n, correct, ops=()):
    steps = [ReasoningStep(None, ("x",) * n)] + [ReasoningStep(o, (o.text,)) for o in ops]
    return ReasoningTrace(qid, tuple(steps), n + 2 * len(ops), correct, "answer", "t", 0)


def test_summarize_identity_and_hand_example():
    run = [_tr("a", 100, True), _tr("b", 300, False)]
    m = summarize_run(run, run)
    assert (m.eta, m.delta_acc, m.delta_length_pct) == (1.0, 0.0, 0.0)
    base = [_tr("a", 200, False), _tr("b", 200, True)]
    m = summarize_run(run, base)
    assert (m.accuracy, m.mean_length, m.eta) == (0.5, 200.0, 1.0)


def test_summarize_recomputes_a_reference_row():
    m = RunMetrics.from_values(84.1, 1211, 83.0, 1938)
    assert m.eta == pytest.approx(1.641, abs=0.005)
    assert m.delta_length_pct == pytest.approx((1211 - 1938) / 1938 * 100)


def test_summarize_rejects_mismatched_queries():
    with pytest.raises(ValueError):
        summarize_run([_tr("a", 1, True)], [_tr("b", 1, True)])
    with pytest.raises(ValueError):
        summarize_run([], [_tr("b", 1, True)])


def test_operator_frequency():
    wait = RANDOM8_SET.by_text("Wait")
    assert operator_frequency([_tr("a", 1, True, [wait, wait])]) == {"Wait": 100.0}
    rng = np.random.default_rng(0)
    ops = [RANDOM8_SET[i] for i in rng.integers(0, 8, 10_000)]
    freq = operator_frequency([_tr("a", 1, True, ops)])
    assert sum(freq.values()) == pytest.approx(100.0)
    assert all(abs(v - 12.5) < 1.0 for v in freq.values())
    assert operator_frequency([]) == {}


def test_mode_correlation_examples():
    t = mode_correlation([("Wait", "reflection")] * 5)
    assert t.row("Wait").tolist() == [0, 1, 0, 0]
    t = mode_correlation([("Wait", "reflection")] * 3 + [("Wait", "statement")])
    assert t.row("Wait").tolist() == [0.25, 0.75, 0, 0]
    assert MODES == ("statement", "reflection", "summary", "divergence")
    with pytest.raises(ValueError):
        mode_correlation([("Wait", "pondering")])


@given(st.lists(st.tuples(st.sampled_from(["So", "Wait", "Alternatively"]), st.sampled_from(MODES)), min_size=1, max_size=40))
def test_mode_rows_are_distributions(pairs):
    t = mode_correlation(pairs)
    assert np.allclose(t.probs.sum(axis=1), 1.0)
    doubled = mode_correlation(pairs * 2)
    assert np.array_equal(doubled.counts, 2 * t.counts) and np.allclose(doubled.probs, t.probs)


def test_metric_files(tmp_path):
    rows = {"a": RunMetrics.from_values(0.9, 400, 0.8, 500), "b": RunMetrics.from_values(0.8, 500, 0.8, 500)}
    doc = write_metrics(tmp_path / "m.json", tmp_path / "m.csv", rows, average=True)
    assert json.load(open(tmp_path / "m.json")) == doc
    lines = list(csv.reader(open(tmp_path / "m.csv")))
    assert lines[0] == ["label", "Acc", "Length", "eta", "dAcc", "dLength%"]
    assert lines[-1][0] == "average" and len(lines) == 4
    write_frequency_csv(tmp_path / "f.csv", {"So": 60.0, "Wait": 40.0})
    assert list(csv.reader(open(tmp_path / "f.csv")))[1] == ["So", "60.0"]
    write_mode_csv(tmp_path / "mo.csv", mode_correlation([("Wait", "reflection")]))
    assert list(csv.reader(open(tmp_path / "mo.csv")))[1][:5] == ["Wait", "0.0", "1.0", "0.0", "0.0"]
