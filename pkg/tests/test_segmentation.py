import csv

from hypothesis import given
from hypothesis import strategies as st

from ncots.segmentation import (
    DecisionPoint,
    find_decision_points,
    join_steps,
    keyword_core,
    preceding_token_distribution,
    split_steps,
    write_distribution_csv,
)
from ncots.traces import RANDOM8_SET, ReasoningStep, ReasoningTrace

import pytest

D = "\n\n"


def test_decision_points_examples():
    assert find_decision_points([]) == []
    assert find_decision_points(["a", "b", "c"]) == []
    pts = find_decision_points(["a", D, "b", D, "c"])
    assert [p.token_offset for p in pts] == [2, 4]
    assert [p.step_index for p in pts] == [1, 2]


def test_trailing_delimiter_yields_point_at_end():
    assert find_decision_points(["a", D]) == [DecisionPoint(1, 2)]


def test_substring_delimiters_toggle():
    toks = ["x", ").\n\n", "y"]
    assert len(find_decision_points(toks)) == 1
    assert find_decision_points(toks, match_substring=False) == []


def test_empty_delimiter_rejected():
    with pytest.raises(ValueError):
        find_decision_points(["a"], "")


def test_split_examples():
    assert split_steps(["a", D, "b"]) == [["a"], ["b"]]
    assert split_steps([D]) == [[], []]
    assert split_steps(["a"]) == [["a"]]


tokens = st.lists(st.sampled_from(["a", "b", "Wait", " ", D, "x\n\n"]), max_size=30)


@given(tokens)
def test_split_join_identity(toks):
    parts = split_steps(toks)
    assert join_steps(parts) == toks
    assert all(D not in p for p in parts)


@given(tokens)
def test_point_count_matches_segments(toks):
    if toks and toks[-1] == D:
        toks = toks + ["z"]
    n_points = len(find_decision_points(toks, match_substring=False))
    assert n_points == len(split_steps(toks)) - 1
    offs = [p.token_offset for p in find_decision_points(toks)]
    assert offs == sorted(set(offs))


def test_keyword_core():
    assert keyword_core(" Wait,") == "wait"
    assert keyword_core("ALTERNATIVELY") == "alternatively"


def test_single_bucket_corpus():
    streams = [["a", D, "Alternatively", "b"], ["c", "x\n\n", "alternatively"]]
    assert preceding_token_distribution(streams, "alternatively") == {"x\n\n": 1.0}


def test_hand_counted_wait_distribution():
    streams = [["a", D, "Wait"], ["b", ").\n\n", "wait"], [D, "Wait,"], ["ok", " ", "Wait"]]
    assert preceding_token_distribution(streams, "wait") == {"x\n\n": 0.75, " ": 0.25}


def test_missing_keyword_is_empty():
    assert preceding_token_distribution([["a", "b"]], "wait") == {}


def test_traces_are_flattened_with_delimiters():
    w = RANDOM8_SET.by_text("Wait")
    tr = ReasoningTrace("q", (ReasoningStep(None, ("a",)), ReasoningStep(w, ("Wait", "b"))), 4, True, "answer", "x", 0)
    assert preceding_token_distribution([tr], "wait") == {"x\n\n": 1.0}


@given(st.lists(st.lists(st.sampled_from(["Wait", " ", D, "so", "wait"]), max_size=12), max_size=6))
def test_distribution_is_normalised(streams):
    dist = preceding_token_distribution(streams, "wait")
    if dist:
        assert abs(sum(dist.values()) - 1.0) < 1e-12
        assert all(v >= 0 for v in dist.values())


def test_distribution_csv(tmp_path):
    p = tmp_path / "d.csv"
    write_distribution_csv(p, [("wait", "x\n\n", 0.75, 3), ("wait", " ", 0.25, 1)])
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["keyword", "bucket", "probability", "count"]
    assert rows[1] == ["wait", "x\\n\\n", "0.75", "3"]
