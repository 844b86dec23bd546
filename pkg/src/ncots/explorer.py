"""Solution-space characterization by uniform-random operator rollouts.

A path matrix holds K independent random-architecture rollouts per query.
Picking one path per query and averaging gives one point on the
(mean length, mean accuracy) plane; repeating that many times gives the
density of reachable operating points. For small matrices the same
distribution is computed exactly.
"""
from __future__ import annotations

import csv
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rng import derive_seed, stream
from .search import SearchConfig, run_random
from .traces import Query, ReasoningTrace

_MC = 0xA66
MAX_EXACT = 10**6
DEFAULT_LENGTH_WIDTH = 64
MC_CHUNK = 1 << 16


@dataclass(frozen=True)
class PathMatrix:
    queries: tuple[str, ...]
    lengths: np.ndarray  # N x K int
    correct: np.ndarray  # N x K bool
    traces: tuple[tuple[ReasoningTrace, ...], ...] | None = None

    def __post_init__(self):
        L = np.asarray(self.lengths, dtype=np.int64)
        C = np.asarray(self.correct, dtype=bool)
        if L.ndim != 2 or L.shape != C.shape:
            raise ValueError(f"lengths {L.shape} and correct {C.shape} must be matching N x K grids")
        if L.shape[0] != len(self.queries):
            raise ValueError(f"{len(self.queries)} query ids for {L.shape[0]} rows")
        if L.shape[1] < 1:
            raise ValueError("every row needs at least one path")
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "lengths", L)
        object.__setattr__(self, "correct", C)

    @property
    def n(self) -> int:
        return self.lengths.shape[0]

    @property
    def k(self) -> int:
        return self.lengths.shape[1]

    @classmethod
    def from_rows(cls, rows: Mapping[str, Sequence[tuple[int, bool]]]) -> "PathMatrix":
        ids = list(rows)
        widths = {len(rows[q]) for q in ids}
        if len(widths) > 1:
            raise ValueError(f"rows have differing path counts {sorted(widths)}")
        return cls(
            tuple(ids),
            np.array([[p[0] for p in rows[q]] for q in ids], dtype=np.int64).reshape(len(ids), -1),
            np.array([[p[1] for p in rows[q]] for q in ids], dtype=bool).reshape(len(ids), -1),
        )

    @classmethod
    def from_traces(cls, traces: Iterable[ReasoningTrace]) -> "PathMatrix":
        """Group traces by query id, keeping first-seen query order."""
        grouped: dict[str, list[ReasoningTrace]] = {}
        for t in traces:
            grouped.setdefault(t.query_id, []).append(t)
        rows = {q: [(t.total_tokens, t.correct) for t in ts] for q, ts in grouped.items()}
        pm = cls.from_rows(rows)
        return cls(pm.queries, pm.lengths, pm.correct, tuple(tuple(ts) for ts in grouped.values()))


@dataclass(frozen=True)
class DensityGrid:
    length_bins: np.ndarray  # edges, len n_len + 1
    accuracy_bins: np.ndarray  # edges, len n_acc + 1
    counts: np.ndarray  # n_len x n_acc
    n_samples: int
    points: dict | None = None  # (mean_len, mean_acc) -> count

    def __post_init__(self):
        if int(self.counts.sum()) != self.n_samples:
            raise ValueError("grid counts do not sum to n_samples")

    def distribution(self) -> dict:
        if self.points is None:
            raise ValueError("grid was built without point counts")
        return {p: c / self.n_samples for p, c in self.points.items()}


def random_rollout(query: Query, backend, cfg: SearchConfig = SearchConfig(), seed: int = 0) -> ReasoningTrace:
    """Uniform operator at every decision point, horizon = cfg.step_budget."""
    return run_random(query, backend, cfg, seed=seed)


def characterize(
    queries: Sequence[Query], backend, k: int = 16, cfg: SearchConfig = SearchConfig(), seed: int = 0, threads: int = 1
) -> PathMatrix:
    """N x K random rollouts; rollout (i, j) runs on the stream keyed (seed, i, j)."""
    if k < 1:
        raise ValueError("K must be >= 1")
    jobs = [(i, j) for i in range(len(queries)) for j in range(k)]

    def one(ij):
        i, j = ij
        return random_rollout(queries[i], backend, cfg, derive_seed(seed, i, j))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            flat = list(pool.map(one, jobs))
    else:
        flat = [one(ij) for ij in jobs]
    rows = tuple(tuple(flat[i * k:(i + 1) * k]) for i in range(len(queries)))
    return PathMatrix(
        tuple(q.id for q in queries),
        np.array([[t.total_tokens for t in r] for r in rows], dtype=np.int64).reshape(len(queries), k),
        np.array([[t.correct for t in r] for r in rows], dtype=bool).reshape(len(queries), k),
        rows,
    )


def default_bins(pm: PathMatrix, length_width: int = DEFAULT_LENGTH_WIDTH) -> tuple[np.ndarray, np.ndarray]:
    """Accuracy bins of width 1/N centred on k/N; length bins of fixed width
    covering every reachable mean length."""
    n = pm.n
    acc = (np.arange(n + 2) - 0.5) / n
    lo = pm.lengths.min(axis=1).mean()
    hi = pm.lengths.max(axis=1).mean()
    start = np.floor(lo / length_width) * length_width
    stop = (np.floor(hi / length_width) + 1) * length_width
    length = np.arange(start, stop + length_width / 2, length_width, dtype=float)
    return length, acc


def _bin_index(edges: np.ndarray, values: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[values == edges[-1]] = len(edges) - 2  # closed last bin
    if np.any((idx < 0) | (idx > len(edges) - 2)):
        raise ValueError("a point falls outside the bin edges")
    return idx


def _grid(pm: PathMatrix, keys: Counter, bins) -> DensityGrid:
    lb, ab = bins if bins is not None else default_bins(pm)
    lb, ab = np.asarray(lb, dtype=float), np.asarray(ab, dtype=float)
    pts = {(s / pm.n, c / pm.n): int(m) for (s, c), m in sorted(keys.items())}
    counts = np.zeros((len(lb) - 1, len(ab) - 1), dtype=np.int64)
    if pts:
        P = np.array(list(pts))
        w = np.array(list(pts.values()), dtype=np.int64)
        np.add.at(counts, (_bin_index(lb, P[:, 0]), _bin_index(ab, P[:, 1])), w)
    return DensityGrid(lb, ab, counts, int(sum(pts.values())), pts)


def monte_carlo_aggregate(pm: PathMatrix, iterations: int = 10**6, bins=None, seed: int = 0) -> DensityGrid:
    """Sample one path per query, ``iterations`` times, and histogram the means.

    Iterations are drawn in fixed-size chunks with chunk-keyed streams, so the
    result depends only on (pm, iterations, seed).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rows = np.arange(pm.n)
    keys: Counter = Counter()
    for c, start in enumerate(range(0, iterations, MC_CHUNK)):
        m = min(MC_CHUNK, iterations - start)
        pick = stream(seed, _MC, c).integers(pm.k, size=(m, pm.n))
        s = pm.lengths[rows, pick].sum(axis=1)
        a = pm.correct[rows, pick].sum(axis=1)
        uniq, cnt = np.unique(s * (pm.n + 1) + a, return_counts=True)
        for key, ci in zip(uniq.tolist(), cnt.tolist()):
            keys[divmod(key, pm.n + 1)] += ci
    return _grid(pm, keys, bins)


def _exact_keys(pm: PathMatrix) -> Counter:
    if pm.k ** pm.n > MAX_EXACT:
        raise ValueError(f"{pm.k}^{pm.n} combinations exceeds the exact bound {MAX_EXACT}")
    acc: Counter = Counter({(0, 0): 1})
    for i in range(pm.n):
        nxt: Counter = Counter()
        row = list(zip(pm.lengths[i].tolist(), pm.correct[i].astype(int).tolist()))
        for (s, a), m in acc.items():
            for ln, c in row:
                nxt[(s + ln, a + c)] += m
        acc = nxt
    return acc


def exact_aggregate(pm: PathMatrix) -> dict:
    """Exact (mean_len, mean_acc) -> probability over all K^N equally likely picks."""
    keys = _exact_keys(pm)
    total = pm.k ** pm.n
    return {(s / pm.n, c / pm.n): m / total for (s, c), m in sorted(keys.items())}


def exact_grid(pm: PathMatrix, bins=None) -> DensityGrid:
    return _grid(pm, _exact_keys(pm), bins)


def total_variation(p: Mapping, q: Mapping) -> float:
    return 0.5 * sum(abs(p.get(x, 0.0) - q.get(x, 0.0)) for x in set(p) | set(q))


def superior_fraction(points, baseline: tuple[float, float]) -> float:
    """Probability mass strictly shorter than L0 and strictly more accurate than A0.

    ``points`` is a DensityGrid or a mapping (mean_len, mean_acc) -> weight.
    """
    l0, a0 = baseline
    if np.isnan(l0) or np.isnan(a0):
        raise ValueError("baseline must not be NaN")
    dist = points.distribution() if isinstance(points, DensityGrid) else points
    total = sum(dist.values())
    if total <= 0:
        return 0.0
    good = sum(w for (ln, a), w in dist.items() if ln < l0 and a > a0)
    return good / total


# --- persistence -------------------------------------------------------------

def write_path_matrix(path, pm: PathMatrix) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for q, ls, cs in zip(pm.queries, pm.lengths.tolist(), pm.correct.tolist()):
            f.write(json.dumps({"query_id": q, "lengths": ls, "correct": cs}, separators=(",", ":")))
            f.write("\n")


def read_path_matrix(path) -> PathMatrix:
    rows = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rows[d["query_id"]] = list(zip(d["lengths"], d["correct"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"line {lineno}: bad path-matrix row ({exc})") from exc
    return PathMatrix.from_rows(rows)


def write_grid(csv_path, json_path, grid: DensityGrid, baseline: tuple[float, float] | None = None) -> dict:
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["length_bin_low", "acc_bin_low", "count"])
        for i, lo in enumerate(grid.length_bins[:-1]):
            for j, alo in enumerate(grid.accuracy_bins[:-1]):
                w.writerow([repr(float(lo)), repr(float(alo)), int(grid.counts[i, j])])
    side = {
        "length_bins": [float(x) for x in grid.length_bins],
        "accuracy_bins": [float(x) for x in grid.accuracy_bins],
        "n_samples": grid.n_samples,
        "baseline": None if baseline is None else {"length": float(baseline[0]), "accuracy": float(baseline[1])},
        "superior_fraction": None if baseline is None else superior_fraction(grid, baseline),
    }
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(side, f, indent=2, sort_keys=True)
        f.write("\n")
    return side
