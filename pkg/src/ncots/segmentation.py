"""Step delimiters, decision points and preceding-token statistics."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .traces import DELIMITER, ReasoningTrace


@dataclass(frozen=True)
class DecisionPoint:
    step_index: int  # 0-based index of the step about to begin
    token_offset: int  # position right after the delimiter


def is_delimiter(token: str, delimiter: str = DELIMITER, match_substring: bool = True) -> bool:
    if match_substring:
        return delimiter in token
    return token == delimiter


def find_decision_points(
    tokens: Sequence[str], delimiter: str = DELIMITER, match_substring: bool = True
) -> list[DecisionPoint]:
    """One decision point per delimiter-bearing token, in stream order.

    With ``match_substring`` (the default) tokens such as ``").\\n\\n"`` also
    end a step.
    """
    if not delimiter:
        raise ValueError("delimiter must be non-empty")
    points = []
    for pos, tok in enumerate(tokens):
        if is_delimiter(tok, delimiter, match_substring):
            points.append(DecisionPoint(len(points) + 1, pos + 1))
    return points


def split_steps(tokens: Sequence[str], delimiter: str = DELIMITER) -> list[list[str]]:
    """Split on exact delimiter tokens; joining with the delimiter inverts it."""
    steps: list[list[str]] = [[]]
    for tok in tokens:
        if tok == delimiter:
            steps.append([])
        else:
            steps[-1].append(tok)
    return steps


def join_steps(steps: Sequence[Sequence[str]], delimiter: str = DELIMITER) -> list[str]:
    out: list[str] = []
    for i, s in enumerate(steps):
        if i:
            out.append(delimiter)
        out.extend(s)
    return out


BucketRules = Sequence[tuple[str, Callable[[str], bool]]]

# first matching rule wins; "other" catches the rest
DEFAULT_BUCKETS: BucketRules = (
    ("x\n\n", lambda tok: "\n\n" in tok),
    (" ", lambda tok: tok == " "),
    ("other", lambda tok: True),
)

_ALPHA = re.compile(r"[^A-Za-z]")


def keyword_core(token: str) -> str:
    return _ALPHA.sub("", token).lower()


def bucket_of(token: str, rules: BucketRules) -> str:
    for label, pred in rules:
        if pred(token):
            return label
    raise ValueError(f"bucket rules do not cover token {token!r}")


def preceding_token_counts(
    streams: Iterable[Sequence[str]], keyword: str, bucket_rules: BucketRules = DEFAULT_BUCKETS
) -> dict[str, int]:
    target = keyword_core(keyword)
    counts: dict[str, int] = {}
    for toks in streams:
        for i in range(1, len(toks)):
            if keyword_core(toks[i]) == target:
                label = bucket_of(toks[i - 1], bucket_rules)
                counts[label] = counts.get(label, 0) + 1
    return counts


def preceding_token_distribution(
    traces: Iterable[ReasoningTrace | Sequence[str]],
    keyword: str,
    bucket_rules: BucketRules = DEFAULT_BUCKETS,
) -> dict[str, float]:
    """Distribution over bucket labels of the token preceding ``keyword``.

    Traces are flattened with the step delimiter between steps, so a keyword
    that opens a step is preceded by the delimiter. Empty when the keyword
    never occurs.
    """
    streams = (t.token_stream() if isinstance(t, ReasoningTrace) else t for t in traces)
    counts = preceding_token_counts(streams, keyword, bucket_rules)
    total = sum(counts.values())
    if not total:
        return {}
    return {k: v / total for k, v in counts.items()}


def write_distribution_csv(path, rows: Iterable[tuple[str, str, float, int]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["keyword", "bucket", "probability", "count"])
        for kw, bucket, p, n in rows:
            w.writerow([kw, bucket.replace("\n", "\\n"), repr(float(p)), n])
