"""Linear heuristic heads: path potential (operator logits) and reasoning progress.

The potential head is distilled from a teacher distribution over operators by
minimising KL(teacher || student); the progress head regresses normalised token
position k/L with a squared loss. Both are trained with plain mini-batch
gradient descent and a seed-derived batch order.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import stream

log = logging.getLogger(__name__)

_TRAIN_INIT = 0x1417
_TRAIN_ORDER = 0x0BDE


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


@dataclass(frozen=True, eq=False)
class PotentialHead:
    weights: np.ndarray  # |O| x d
    bias: np.ndarray  # |O|
    operator_set_name: str = "random8"
    train_seed: int | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.bias, dtype=float)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"bad potential head shapes {w.shape} / {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("potential head has non-finite entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_ops(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, n_ops: int, dim: int, operator_set_name: str = "random8") -> "PotentialHead":
        return cls(np.zeros((n_ops, dim)), np.zeros(n_ops), operator_set_name)


@dataclass(frozen=True, eq=False)
class ProgressHead:
    weights: np.ndarray  # d
    bias: float = 0.0
    train_seed: int | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or not np.isfinite(w).all() or not math.isfinite(self.bias):
            raise ValueError("progress head must have a finite weight vector and bias")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class TeacherSample:
    features: np.ndarray
    teacher_dist: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.teacher_dist, dtype=float)
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("teacher_dist must be a probability vector")


@dataclass(frozen=True, eq=False)
class ProgressSample:
    features: np.ndarray
    label: float

    def __post_init__(self):
        if not 0.0 < self.label <= 1.0:
            raise ValueError(f"progress label {self.label} outside (0, 1]")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _check_dim(h: np.ndarray, dim: int) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != dim:
        raise ValueError(f"feature dim {h.shape[-1]} does not match head dim {dim}")
    return h


def potential_forward(head: PotentialHead, h) -> tuple[np.ndarray, np.ndarray]:
    h = _check_dim(h, head.dim)
    logits = h @ head.weights.T + head.bias
    return logits, softmax(logits)


def kl_loss(teacher, student) -> float:
    """D_KL(teacher || student); ``inf`` if the student misses teacher support."""
    p = np.asarray(teacher, dtype=float)
    q = np.asarray(student, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must share the operator set")
    mask = p > 0
    if (q[mask] <= 0).any():
        return math.inf
    return max(float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask])))), 0.0)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def potential_loss_and_grad(W: np.ndarray, b: np.ndarray, H: np.ndarray, P: np.ndarray, l2: float = 0.0):
    """Mean KL(P || softmax(HW^T + b)) over rows and its gradient."""
    logits = H @ W.T + b
    logq = _log_softmax(logits)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    n = H.shape[0]
    loss = float((plogp.sum() - (P * logq).sum()) / n)
    diff = (np.exp(logq) - P) / n
    gW = diff.T @ H
    gb = diff.sum(axis=0)
    if l2:
        loss += 0.5 * l2 * float((W * W).sum())
        gW = gW + l2 * W
    return loss, gW, gb


def progress_loss_and_grad(w: np.ndarray, b: float, H: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean squared error of H w + b against y and its gradient."""
    r = H @ w + b - y
    n = H.shape[0]
    loss = float(r @ r / n)
    gw = 2.0 * (H.T @ r) / n
    gb = 2.0 * float(r.sum()) / n
    if l2:
        loss += 0.5 * l2 * float(w @ w)
        gw = gw + l2 * w
    return loss, gw, gb


def _batches(n: int, cfg: TrainConfig, epoch: int):
    order = stream(cfg.seed, _TRAIN_ORDER, epoch).permutation(n)
    for s in range(0, n, cfg.batch_size):
        yield order[s : s + cfg.batch_size]


def _stack_teacher(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        H, P = data
        return np.asarray(H, dtype=float), np.asarray(P, dtype=float)
    H = np.stack([np.asarray(s.features, dtype=float) for s in data])
    P = np.stack([np.asarray(s.teacher_dist, dtype=float) for s in data])
    return H, P


def train_potential(
    data: Sequence[TeacherSample] | tuple[np.ndarray, np.ndarray],
    init: PotentialHead,
    cfg: TrainConfig = TrainConfig(),
    history: list | None = None,
) -> PotentialHead:
    """Distil the teacher into the linear potential head.

    ``data`` is a list of samples or a ``(features, teacher_dists)`` pair.
    If ``history`` is given, the mean training KL is appended before the
    first epoch and after every epoch.
    """
    H, P = _stack_teacher(data)
    if H.shape[0] == 0:
        raise ValueError("empty distillation dataset")
    _check_dim(H, init.dim)
    if P.shape[1] != init.n_ops:
        raise ValueError(f"teacher has {P.shape[1]} operators, head has {init.n_ops}")
    W, b = init.weights.copy(), init.bias.copy()
    if history is not None:
        history.append(potential_loss_and_grad(W, b, H, P, cfg.l2)[0])
    for epoch in range(cfg.epochs):
        for idx in _batches(len(H), cfg, epoch):
            _, gW, gb = potential_loss_and_grad(W, b, H[idx], P[idx], cfg.l2)
            W -= cfg.learning_rate * gW
            b -= cfg.learning_rate * gb
        if history is not None:
            history.append(potential_loss_and_grad(W, b, H, P, cfg.l2)[0])
    if cfg.epochs == 0:
        return init
    return PotentialHead(W, b, init.operator_set_name, cfg.seed)


def init_potential_from_embeddings(embedding_rows, operator_set_name: str = "random8") -> PotentialHead:
    """Potential head whose weights copy the operator embedding rows."""
    E = np.array(embedding_rows, dtype=float)
    if E.ndim != 2:
        raise ValueError("embedding rows must form a |O| x d matrix")
    from .traces import operator_set

    try:
        n_ops = len(operator_set(operator_set_name))
    except KeyError:
        n_ops = E.shape[0]
    if E.shape[0] != n_ops:
        raise ValueError(f"{E.shape[0]} embedding rows for a {n_ops}-operator set")
    return PotentialHead(E, np.zeros(E.shape[0]), operator_set_name)


def progress_forward(head: ProgressHead, h) -> float | np.ndarray:
    """Raw affine output w.h + b; clamp with :func:`clamp_progress` for reporting."""
    h = _check_dim(h, head.dim)
    out = h @ head.weights + head.bias
    return float(out) if np.ndim(out) == 0 else out


def clamp_progress(v):
    return np.clip(v, 0.0, 1.0)


def random_progress_head(dim: int, seed: int) -> ProgressHead:
    g = stream(seed, _TRAIN_INIT)
    return ProgressHead(g.normal(0.0, 0.01, size=dim), 0.0, seed)


def _stack_progress(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple):
        H, y = data
        return np.asarray(H, dtype=float), np.asarray(y, dtype=float)
    H = np.stack([np.asarray(s.features, dtype=float) for s in data]) if data else np.zeros((0, 0))
    y = np.array([s.label for s in data], dtype=float)
    return H, y


def train_progress(
    data: Sequence[ProgressSample] | tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig = TrainConfig(),
    history: list | None = None,
    init: ProgressHead | None = None,
) -> ProgressHead:
    H, y = _stack_progress(data)
    if H.shape[0] == 0:
        raise ValueError("empty progress dataset")
    head = init if init is not None else random_progress_head(H.shape[1], cfg.seed)
    _check_dim(H, head.dim)
    w, b = head.weights.copy(), head.bias
    if history is not None:
        history.append(progress_loss_and_grad(w, b, H, y, cfg.l2)[0])
    for epoch in range(cfg.epochs):
        for idx in _batches(len(H), cfg, epoch):
            _, gw, gb = progress_loss_and_grad(w, b, H[idx], y[idx], cfg.l2)
            w -= cfg.learning_rate * gw
            b -= cfg.learning_rate * gb
        if history is not None:
            history.append(progress_loss_and_grad(w, b, H, y, cfg.l2)[0])
    if cfg.epochs == 0:
        return head
    return ProgressHead(w, b, cfg.seed)


def build_progress_dataset(traces, backend, queries) -> list[ProgressSample]:
    """Token-level (h_k, k/L) pairs for every complete trace.

    ``queries`` maps query id to the query the trace was generated for; the
    backend replays per-token features. Incomplete traces are skipped.
    """
    H, y, _ = progress_arrays(traces, backend, queries)
    return [ProgressSample(h, float(v)) for h, v in zip(H, y)]


def progress_arrays(traces, backend, queries) -> tuple[np.ndarray, np.ndarray, int]:
    """Array form of :func:`build_progress_dataset`: (features, labels, skipped)."""
    Hs, ys, skipped = [], [], 0
    for tr in traces:
        if not tr.complete:
            skipped += 1
            continue
        feats = backend.token_features(queries[tr.query_id], tr)
        L = feats.shape[0]
        Hs.append(feats)
        ys.append(np.arange(1, L + 1) / L)
    if skipped:
        log.warning("skipped %d incomplete traces", skipped)
    if not Hs:
        return np.zeros((0, backend.feature_dim)), np.zeros(0), skipped
    return np.concatenate(Hs), np.concatenate(ys), skipped


def ema(series, alpha: float) -> np.ndarray:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("smoothing must lie in (0, 1]")
    x = np.asarray(series, dtype=float)
    out = np.empty_like(x)
    if len(x):
        out[0] = x[0]
    for k in range(1, len(x)):
        out[k] = alpha * x[k] + (1.0 - alpha) * out[k - 1]
    return out


def evaluate_progress(head: ProgressHead, trace, backend, query, smoothing: float = 0.1):
    """Per-token predictions on a complete trace.

    Returns ``(raw, smoothed, mae)``; raw predictions are clamped to [0, 1]
    and the MAE is taken on the smoothed series against k/L.
    """
    feats = backend.token_features(query, trace)
    L = feats.shape[0]
    raw = clamp_progress(progress_forward(head, feats))
    sm = ema(raw, smoothing)
    truth = np.arange(1, L + 1) / L
    return raw, sm, float(np.mean(np.abs(sm - truth)))


def spearman(a, b) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(a, b).statistic)


# --- checkpoints ---------------------------------------------------------

def head_to_dict(head) -> dict:
    if isinstance(head, PotentialHead):
        return {
            "kind": "potential",
            "dim": head.dim,
            "operator_set_name": head.operator_set_name,
            "weights": head.weights.tolist(),
            "bias": head.bias.tolist(),
            "train_seed": head.train_seed,
        }
    return {
        "kind": "progress",
        "dim": head.dim,
        "weights": head.weights.tolist(),
        "bias": head.bias,
        "train_seed": head.train_seed,
    }


def head_from_dict(d: dict):
    if d["kind"] == "potential":
        head = PotentialHead(np.array(d["weights"]), np.array(d["bias"]), d.get("operator_set_name", "random8"), d.get("train_seed"))
    elif d["kind"] == "progress":
        head = ProgressHead(np.array(d["weights"]), float(d["bias"]), d.get("train_seed"))
    else:
        raise ValueError(f"unknown head kind {d['kind']!r}")
    if head.dim != d["dim"]:
        raise ValueError(f"checkpoint dim {d['dim']} does not match weights ({head.dim})")
    return head


def save_head(path, head) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(head_to_dict(head), f)


def load_head(path):
    with open(path, encoding="utf-8") as f:
        return head_from_dict(json.load(f))
