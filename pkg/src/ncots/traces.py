"""Core domain types: operators, queries, reasoning steps and traces.

Traces are immutable and persist as JSONL, one trace per line. Feature vectors
are kept as tuples of Python floats so that equality is exact and JSON
round-trips are lossless (``repr`` of a float is shortest-round-trip).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

DELIMITER = "\n\n"

FULL_TOKENS = (
    "The", "Thus", "Therefore", "So", "Then", "Let", "Wait", "Alternatively",
    "Now", "I", "First", "Option", "**", "-", "\\[", "\\",
)
# the restricted set is a prefix of the full one, so operator ids agree
RANDOM8_TOKENS = FULL_TOKENS[:8]

TERMINATIONS = ("answer", "step_budget", "token_budget")


class TraceFormatError(ValueError):
    """A trace file line could not be decoded."""


@dataclass(frozen=True)
class Operator:
    id: int
    text: str


@dataclass(frozen=True)
class OperatorSet:
    name: str
    operators: tuple[Operator, ...]

    def __post_init__(self):
        seen = set()
        for i, op in enumerate(self.operators):
            if op.id != i:
                raise ValueError(f"operator ids must be 0..n-1 in order; got id {op.id} at {i}")
            if not op.text:
                raise ValueError("operator text must be non-empty")
            if op.text in seen:
                raise ValueError(f"duplicate operator text {op.text!r}")
            seen.add(op.text)

    @classmethod
    def from_tokens(cls, name: str, tokens: Iterable[str]) -> "OperatorSet":
        return cls(name, tuple(Operator(i, t) for i, t in enumerate(tokens)))

    def __len__(self) -> int:
        return len(self.operators)

    def __iter__(self):
        return iter(self.operators)

    def __getitem__(self, i: int) -> Operator:
        return self.operators[i]

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(op.text for op in self.operators)

    def by_text(self, text: str) -> Operator:
        for op in self.operators:
            if op.text == text:
                return op
        raise KeyError(text)

    def __contains__(self, op) -> bool:
        return isinstance(op, Operator) and op.id < len(self.operators) and self.operators[op.id] == op

    def to_dict(self) -> dict:
        return {"name": self.name, "tokens": list(self.tokens)}

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorSet":
        return cls.from_tokens(d["name"], d["tokens"])


FULL_SET = OperatorSet.from_tokens("full", FULL_TOKENS)
RANDOM8_SET = OperatorSet.from_tokens("random8", RANDOM8_TOKENS)


def operator_set(name: str) -> OperatorSet:
    if name == "full":
        return FULL_SET
    if name == "random8":
        return RANDOM8_SET
    raise KeyError(f"unknown operator set {name!r}")


@dataclass(frozen=True)
class Query:
    id: str
    prompt: tuple[str, ...]
    answer_key: str = ""

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("query prompt must be non-empty")


def _as_features(v) -> tuple[float, ...] | None:
    if v is None:
        return None
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class ReasoningStep:
    operator: Operator | None
    tokens: tuple[str, ...]
    entry_features: tuple[float, ...] | None = None
    lookahead_features: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "entry_features", _as_features(self.entry_features))
        object.__setattr__(self, "lookahead_features", _as_features(self.lookahead_features))

    @property
    def token_count(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class ReasoningTrace:
    query_id: str
    steps: tuple[ReasoningStep, ...]
    total_tokens: int
    correct: bool
    terminated_by: str
    policy_tag: str
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def architecture(self) -> tuple[Operator, ...]:
        """Operator sequence of steps 2..T."""
        return tuple(s.operator for s in self.steps[1:] if s.operator is not None)

    @property
    def complete(self) -> bool:
        return self.terminated_by == "answer"

    def token_stream(self, delimiter: str = DELIMITER) -> list[str]:
        out: list[str] = []
        for i, s in enumerate(self.steps):
            if i:
                out.append(delimiter)
            out.extend(s.tokens)
        return out


def validate_trace(trace: ReasoningTrace, cfg) -> list[str]:
    """List invariant violations; empty when the trace is well formed.

    ``cfg`` needs ``step_budget``, ``token_budget`` and ``operator_set``.
    """
    problems: list[str] = []
    if not trace.steps:
        problems.append("steps empty")
    if len(trace.steps) > cfg.step_budget:
        problems.append("step budget exceeded")
    if trace.total_tokens > cfg.token_budget:
        problems.append("token budget exceeded")
    if trace.terminated_by not in TERMINATIONS:
        problems.append(f"unknown termination {trace.terminated_by!r}")
    if trace.total_tokens < sum(s.token_count for s in trace.steps):
        problems.append("total_tokens below sum of step token counts")
    ops = cfg.operator_set
    dim = None
    for i, s in enumerate(trace.steps):
        if s.operator is not None:
            if s.operator.id >= len(ops) or ops[s.operator.id].text != s.operator.text:
                problems.append(f"step {i}: operator {s.operator.text!r} not in set {ops.name!r}")
            if not s.tokens or s.tokens[0] != s.operator.text:
                problems.append(f"step {i}: tokens do not begin with operator text")
        for vec in (s.entry_features, s.lookahead_features):
            if vec is None:
                continue
            if not all(math.isfinite(x) for x in vec):
                problems.append(f"step {i}: non-finite feature")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                problems.append(f"step {i}: feature dim {len(vec)} != {dim}")
    return problems


def trace_to_dict(trace: ReasoningTrace) -> dict:
    return {
        "query_id": trace.query_id,
        "steps": [
            {
                "operator_id": None if s.operator is None else s.operator.id,
                "tokens": list(s.tokens),
                "entry_features": None if s.entry_features is None else list(s.entry_features),
                "lookahead_features": None if s.lookahead_features is None else list(s.lookahead_features),
            }
            for s in trace.steps
        ],
        "total_tokens": trace.total_tokens,
        "correct": trace.correct,
        "terminated_by": trace.terminated_by,
        "policy_tag": trace.policy_tag,
        "seed": trace.seed,
    }


def trace_from_dict(d: dict, ops: OperatorSet = FULL_SET) -> ReasoningTrace:
    steps = []
    for s in d["steps"]:
        oid = s["operator_id"]
        if oid is None:
            op = None
        else:
            if not isinstance(oid, int) or not 0 <= oid < len(ops):
                raise TraceFormatError(f"unknown operator id {oid}")
            op = ops[oid]
        steps.append(ReasoningStep(op, tuple(s["tokens"]), s.get("entry_features"), s.get("lookahead_features")))
    return ReasoningTrace(
        query_id=d["query_id"],
        steps=tuple(steps),
        total_tokens=int(d["total_tokens"]),
        correct=bool(d["correct"]),
        terminated_by=d["terminated_by"],
        policy_tag=d["policy_tag"],
        seed=int(d["seed"]),
    )


def write_traces(path, traces: Iterable[ReasoningTrace]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for t in traces:
            f.write(json.dumps(trace_to_dict(t), separators=(",", ":")))
            f.write("\n")
            n += 1
    return n


def read_traces(path, ops: OperatorSet = FULL_SET) -> list[ReasoningTrace]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            try:
                out.append(trace_from_dict(d, ops))
            except TraceFormatError as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceFormatError(f"line {lineno}: bad trace record ({exc})") from exc
    return out


def write_jsonl(path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, separators=(",", ":")))
            f.write("\n")
            n += 1
    return n


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"{Path(path).name} line {lineno}: malformed JSON ({exc.msg})") from exc
    return rows
