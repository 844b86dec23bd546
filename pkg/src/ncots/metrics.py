"""Efficiency metric, run summaries, operator frequencies and mode correlation."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .traces import Operator, ReasoningTrace

MODES = ("statement", "reflection", "summary", "divergence")


def efficiency_eta(A: float, A0: float, L: float, L0: float) -> float:
    """(A/A0)^2 * (L0/L). Accuracies may be fractions or percents; the ratio cancels units."""
    if not A0 > 0:
        raise ValueError("baseline accuracy must be positive")
    if not (L > 0 and L0 > 0):
        raise ValueError("lengths must be positive")
    if A < 0:
        raise ValueError("accuracy must be non-negative")
    return (A / A0) ** 2 * (L0 / L)


@dataclass(frozen=True)
class RunMetrics:
    accuracy: float
    mean_length: float
    baseline_accuracy: float
    baseline_length: float
    eta: float
    delta_acc: float
    delta_length_pct: float

    @classmethod
    def from_values(cls, A: float, L: float, A0: float, L0: float) -> "RunMetrics":
        return cls(A, L, A0, L0, efficiency_eta(A, A0, L, L0), A - A0, (L - L0) / L0 * 100.0)

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy_and_length(traces: Sequence[ReasoningTrace]) -> tuple[float, float]:
    if not traces:
        raise ValueError("no traces")
    return (
        sum(1 for t in traces if t.correct) / len(traces),
        sum(t.total_tokens for t in traces) / len(traces),
    )


def summarize_run(traces: Sequence[ReasoningTrace], baseline_traces: Sequence[ReasoningTrace]) -> RunMetrics:
    """Accuracy is the fraction correct and length the mean total_tokens."""
    if not traces or not baseline_traces:
        raise ValueError("both runs must be non-empty")
    if Counter(t.query_id for t in traces) != Counter(t.query_id for t in baseline_traces):
        raise ValueError("run and baseline cover different query sets")
    A, L = accuracy_and_length(traces)
    A0, L0 = accuracy_and_length(baseline_traces)
    return RunMetrics.from_values(A, L, A0, L0)


def average_metrics(rows: Sequence[RunMetrics]) -> dict:
    """Multi-benchmark summary: mean of per-benchmark deltas and of per-benchmark eta."""
    if not rows:
        raise ValueError("nothing to average")
    n = len(rows)
    return {
        "delta_acc": sum(r.delta_acc for r in rows) / n,
        "delta_length_pct": sum(r.delta_length_pct for r in rows) / n,
        "eta": sum(r.eta for r in rows) / n,
    }


def operator_frequency(traces: Iterable[ReasoningTrace]) -> dict[str, float]:
    """Percent of decision points choosing each operator, most frequent first."""
    counts: Counter = Counter()
    first_id: dict[str, int] = {}
    for t in traces:
        for op in t.architecture:
            counts[op.text] += 1
            first_id.setdefault(op.text, op.id)
    total = sum(counts.values())
    if not total:
        return {}
    order = sorted(counts, key=lambda k: (-counts[k], first_id[k]))
    return {k: 100.0 * counts[k] / total for k in order}


@dataclass(frozen=True)
class ModeTable:
    operators: tuple[str, ...]
    counts: np.ndarray  # operators x MODES
    probs: np.ndarray  # row-stochastic

    def row(self, text: str) -> np.ndarray:
        return self.probs[self.operators.index(text)]


def mode_correlation(labeled: Iterable[tuple[Operator | str, str]]) -> ModeTable:
    """Row-normalised operator x mode table from externally labelled steps."""
    counts: dict[str, np.ndarray] = {}
    for op, mode in labeled:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        text = op.text if isinstance(op, Operator) else str(op)
        counts.setdefault(text, np.zeros(len(MODES), dtype=np.int64))[MODES.index(mode)] += 1
    ops = tuple(counts)
    C = np.array([counts[o] for o in ops], dtype=np.int64).reshape(len(ops), len(MODES))
    P = C / C.sum(axis=1, keepdims=True) if len(ops) else np.zeros((0, len(MODES)))
    return ModeTable(ops, C, P)


# --- output --------------------------------------------------------------------

METRIC_COLUMNS = ("label", "Acc", "Length", "eta", "dAcc", "dLength%")


def _fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else str(x)


def write_metrics(json_path, csv_path, rows: dict[str, RunMetrics], average: bool = False) -> dict:
    """JSON of every row plus a CSV with Acc, Length, eta, dAcc and dLength% columns."""
    doc = {"rows": {k: v.to_dict() for k, v in rows.items()}}
    if average and rows:
        doc["average"] = average_metrics(list(rows.values()))
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for k, r in rows.items():
            w.writerow([k, _fmt(r.accuracy), _fmt(r.mean_length), _fmt(r.eta), _fmt(r.delta_acc), _fmt(r.delta_length_pct)])
        if "average" in doc:
            a = doc["average"]
            w.writerow(["average", "", "", _fmt(a["eta"]), _fmt(a["delta_acc"]), _fmt(a["delta_length_pct"])])
    return doc


def write_frequency_csv(path, freq: dict[str, float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["operator", "percent"])
        for k, v in freq.items():
            w.writerow([k, _fmt(v)])


def write_mode_csv(path, table: ModeTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["operator", *MODES, *(f"n_{m}" for m in MODES)])
        for i, op in enumerate(table.operators):
            w.writerow([op, *(_fmt(p) for p in table.probs[i]), *(int(c) for c in table.counts[i])])
