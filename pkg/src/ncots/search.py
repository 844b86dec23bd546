"""Operator-level search at step boundaries.

At every decision point the engine pauses, appends each candidate operator
for a one-token lookahead, scores the branches with

    S(o) = potential_logit(h_t)[o] + lam * progress(h'_{t,o})

and picks an operator from softmax(S / tau) (or the argmax). The chosen
operator is committed as the first token of the next step and the backend
generates the rest of it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .heads import PotentialHead, ProgressHead, potential_forward, progress_forward
from .rng import derive_seed, stream
from .traces import RANDOM8_SET, Operator, OperatorSet, Query, ReasoningStep, ReasoningTrace, operator_set

_SELECT = 0x5E1


@dataclass(frozen=True)
class SearchConfig:
    lam: float = 1.0
    tau: float = 1.0
    step_budget: int = 50
    token_budget: int = 4096
    operator_set: OperatorSet = RANDOM8_SET
    use_potential: bool = True
    use_progress: bool = True
    seed: int = 0
    sampling: str = "sample"  # or "argmax"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.step_budget < 1 or self.token_budget < 1:
            raise ValueError("budgets must be >= 1")
        if self.sampling not in ("sample", "argmax"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "tau": self.tau,
            "step_budget": self.step_budget,
            "token_budget": self.token_budget,
            "operator_set": self.operator_set.to_dict(),
            "use_potential": self.use_potential,
            "use_progress": self.use_progress,
            "seed": self.seed,
            "sampling": self.sampling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        ops = d.get("operator_set")
        if isinstance(ops, str):
            d["operator_set"] = operator_set(ops)
        elif isinstance(ops, dict):
            d["operator_set"] = OperatorSet.from_dict(ops)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SearchConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class BranchScore:
    operator: Operator
    potential: float
    progress: float
    total: float


def rollout_seed(cfg_seed: int, query: Query, repeat: int = 0) -> int:
    """Seed shared by every policy run on (query, repeat), for paired comparisons."""
    from .env import query_key

    return derive_seed(cfg_seed, query_key(query), repeat)


def lookahead(backend, state, operator: Operator, ops: OperatorSet | None = None) -> np.ndarray:
    """Features after appending ``operator``; the committed state is untouched."""
    if ops is not None and operator not in ops:
        raise ValueError(f"operator {operator.text!r} not in set {ops.name!r}")
    _, h = backend.apply_operator(state, operator)
    return np.asarray(h, dtype=float)


def score_branches(h_t, lookaheads, pot: PotentialHead, prog: ProgressHead, cfg: SearchConfig) -> list[BranchScore]:
    ops = cfg.operator_set
    H1 = np.asarray(lookaheads, dtype=float)
    if H1.shape[0] != len(ops):
        raise ValueError(f"{H1.shape[0]} lookahead vectors for {len(ops)} operators")
    logits, _ = potential_forward(pot, h_t)
    if logits.shape[0] != len(ops):
        raise ValueError(f"potential head scores {logits.shape[0]} operators, set has {len(ops)}")
    progress = np.atleast_1d(progress_forward(prog, H1))
    out = []
    for k, op in enumerate(ops):
        p, g = float(logits[k]), float(progress[k])
        s = (p if cfg.use_potential else 0.0) + (cfg.lam * g if cfg.use_progress else 0.0)
        out.append(BranchScore(op, p, g, s))
    return out


def search_policy(scores: Sequence[float], tau: float) -> np.ndarray:
    z = np.asarray(scores, dtype=float) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def select_operator(scores: Sequence[BranchScore], tau: float, mode: str = "sample", rng=None):
    """Return (operator, P_search). Argmax ties go to the lowest operator id."""
    if not scores:
        raise ValueError("no branches to select from")
    if not tau > 0:
        raise ValueError("tau must be positive")
    S = np.array([b.total for b in scores])
    P = search_policy(S, tau)
    if mode == "argmax":
        return scores[int(np.argmax(S))].operator, P
    u = rng.random()
    k = int(np.searchsorted(np.cumsum(P), u, side="right"))
    return scores[min(k, len(scores) - 1)].operator, P


# --- rollout loop ------------------------------------------------------------

Chooser = Callable[[object, np.ndarray, int], tuple]


def _rollout(query: Query, backend, cfg: SearchConfig, choose, tag: str, seed: int, diagnostics=None) -> ReasoningTrace:
    state = backend.begin(query, seed)
    out = backend.generate_step(state)
    first = out.tokens[: cfg.token_budget]
    steps = [ReasoningStep(None, first)]
    total = len(first)
    terminated = None
    if out.done:
        terminated = "answer"
    elif len(first) < len(out.tokens):
        terminated = "token_budget"
    while terminated is None:
        if len(steps) >= cfg.step_budget:
            terminated = "step_budget"
            break
        room = cfg.token_budget - total - 1  # one token for the delimiter
        if room < 1:
            terminated = "token_budget"
            break
        h_t = np.asarray(out.features, dtype=float)
        op, h_look, diag = choose(out.state, h_t, len(steps))
        if diagnostics is not None and diag is not None:
            diagnostics.append(diag)
        pending, h_chosen = backend.apply_operator(out.state, op)
        out = backend.generate_step(pending)
        toks = out.tokens[:room]
        steps.append(ReasoningStep(op, toks, h_t, h_look if h_look is not None else h_chosen))
        total += 1 + len(toks)
        if len(toks) < len(out.tokens):
            terminated = "token_budget"
        elif out.done:
            terminated = "answer"
    correct = terminated == "answer" and backend.judge(out.state, query)
    return ReasoningTrace(query.id, tuple(steps), total, bool(correct), terminated, tag, int(seed))


def run_search(
    query: Query,
    backend,
    pot: PotentialHead,
    prog: ProgressHead,
    cfg: SearchConfig = SearchConfig(),
    repeat: int = 0,
    diagnostics: list | None = None,
    seed: int | None = None,
) -> ReasoningTrace:
    """One guided rollout. ``diagnostics`` collects per-decision records."""
    ops = cfg.operator_set
    if pot.n_ops != len(ops):
        raise ValueError(f"potential head has {pot.n_ops} operators, set {ops.name!r} has {len(ops)}")
    if pot.dim != backend.feature_dim or prog.dim != backend.feature_dim:
        raise ValueError("head dims do not match the backend feature dim")
    seed = rollout_seed(cfg.seed, query, repeat) if seed is None else seed
    rng = stream(seed, _SELECT)

    def choose(state, h_t, step_index):
        H1 = np.stack([lookahead(backend, state, op) for op in ops])
        scores = score_branches(h_t, H1, pot, prog, cfg)
        op, P = select_operator(scores, cfg.tau, cfg.sampling, rng)
        diag = None
        if diagnostics is not None:
            diag = {
                "step_index": step_index,
                "scores": [
                    {"operator_id": b.operator.id, "potential": b.potential, "progress": b.progress, "S": b.total}
                    for b in scores
                ],
                "P_search": P.tolist(),
                "chosen": op.id,
            }
        return op, H1[op.id], diag

    return _rollout(query, backend, cfg, choose, "ncots", seed, diagnostics)


def run_random(query: Query, backend, cfg: SearchConfig = SearchConfig(), repeat: int = 0, seed: int | None = None) -> ReasoningTrace:
    """Uniform operator at every decision point (zero scores under the same selector)."""
    ops = cfg.operator_set
    seed = rollout_seed(cfg.seed, query, repeat) if seed is None else seed
    rng = stream(seed, _SELECT)
    zero = [BranchScore(op, 0.0, 0.0, 0.0) for op in ops]

    def choose(state, h_t, step_index):
        op, _ = select_operator(zero, 1.0, "sample", rng)
        return op, None, None

    return _rollout(query, backend, cfg, choose, "random", seed)


def run_unguided(query: Query, backend, cfg: SearchConfig = SearchConfig(), repeat: int = 0, tag: str = "original", seed: int | None = None) -> ReasoningTrace:
    """Let the backend pick its own operators (no intervention)."""
    seed = rollout_seed(cfg.seed, query, repeat) if seed is None else seed
    state = backend.begin(query, seed)
    steps, total, terminated = [], 0, None
    out = prev_features = None
    while terminated is None:
        room = cfg.token_budget - total - (1 if steps else 0)
        if steps and len(steps) >= cfg.step_budget:
            terminated = "step_budget"
            break
        if room < 1:
            terminated = "token_budget"
            break
        out = backend.generate_step(state if out is None else out.state)
        toks = out.tokens[:room]
        steps.append(ReasoningStep(out.operator, toks, prev_features))
        total += len(toks) + (1 if len(steps) > 1 else 0)
        prev_features = out.features
        if len(toks) < len(out.tokens):
            terminated = "token_budget"
        elif out.done:
            terminated = "answer"
    correct = terminated == "answer" and backend.judge(out.state, query)
    return ReasoningTrace(query.id, tuple(steps), total, bool(correct), terminated, tag, int(seed))


def run_hybrid_guidance(query: Query, executor_backend, planner, cfg: SearchConfig = SearchConfig(), repeat: int = 0, seed: int | None = None):
    """Planner forces one operator token per decision point; executor writes the rest.

    ``planner(state)`` returns a distribution over ``cfg.operator_set``; its
    argmax is forced. Returns (trace, guiding_fraction).
    """
    ops = cfg.operator_set
    seed = rollout_seed(cfg.seed, query, repeat) if seed is None else seed

    def choose(state, h_t, step_index):
        p = np.asarray(planner(state), dtype=float)
        return ops[int(np.argmax(p))], None, None

    tr = _rollout(query, executor_backend, cfg, choose, "hybrid", seed)
    return tr, guiding_fraction(tr)


def guiding_fraction(trace: ReasoningTrace) -> float:
    forced = sum(1 for s in trace.steps if s.operator is not None)
    return forced / trace.total_tokens if trace.total_tokens else 0.0


def write_diagnostics(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, separators=(",", ":")))
            f.write("\n")
