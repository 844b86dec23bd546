"""Reusable synthetic-environment experiments: head training and policy batches."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .env import EnvSpec, SyntheticEnv, generate_queries, teacher_policy, teacher_samples
from .heads import (
    PotentialHead,
    ProgressHead,
    TrainConfig,
    init_potential_from_embeddings,
    progress_arrays,
    train_potential,
    train_progress,
)
from .metrics import efficiency_eta
from .search import SearchConfig, run_hybrid_guidance, run_random, run_search, run_unguided

# features have norm ~4, so the potential head tolerates a larger step than the
# progress head, whose token-level dataset is also far bigger
POTENTIAL_TRAIN = TrainConfig(learning_rate=0.02, epochs=50, batch_size=64, seed=1)
PROGRESS_TRAIN = TrainConfig(learning_rate=0.01, epochs=20, batch_size=256, seed=2)


@dataclass
class TrainedHeads:
    potential: PotentialHead
    progress: ProgressHead
    potential_curve: list
    progress_curve: list


def train_heads(
    spec: EnvSpec = EnvSpec(),
    n_queries: int = 400,
    query_seed: int = 7,
    rollout_seed: int = 11,
    pot_cfg: TrainConfig = POTENTIAL_TRAIN,
    prog_cfg: TrainConfig = PROGRESS_TRAIN,
    ops=None,
) -> TrainedHeads:
    env = SyntheticEnv(spec)
    cfg = SearchConfig(seed=rollout_seed) if ops is None else SearchConfig(seed=rollout_seed, operator_set=ops)
    queries = generate_queries(spec, n_queries, query_seed)
    Q = {q.id: q for q in queries}
    natural = [run_unguided(q, env, cfg) for q in queries]
    rnd = [run_random(q, env, cfg) for q in queries]
    H, P = teacher_samples(env, natural + rnd, Q, cfg.operator_set)
    init = init_potential_from_embeddings(spec.operator_embeddings(cfg.operator_set), cfg.operator_set.name)
    pc: list = []
    pot = train_potential((H, P), init, pot_cfg, pc)
    Hp, y, _ = progress_arrays(natural, env, Q)
    gc: list = []
    prog = train_progress((Hp, y), prog_cfg, gc)
    return TrainedHeads(pot, prog, pc, gc)


@dataclass(frozen=True)
class BatchResult:
    accuracy: float
    mean_length: float
    traces: tuple

    @classmethod
    def of(cls, traces) -> "BatchResult":
        return cls(
            float(np.mean([t.correct for t in traces])),
            float(np.mean([t.total_tokens for t in traces])),
            tuple(traces),
        )

    def eta_vs(self, base: "BatchResult") -> float:
        return efficiency_eta(self.accuracy, base.accuracy, self.mean_length, base.mean_length)


def greedy_env(spec: EnvSpec) -> SyntheticEnv:
    """The environment's own policy with sampling switched off."""
    return SyntheticEnv(replace(spec, natural_temperature=0.0))


def policy_batch(policy: str, queries, spec: EnvSpec, cfg: SearchConfig, heads: TrainedHeads | None = None) -> BatchResult:
    """Run one named policy over ``queries`` with paired rollout seeds.

    ``policy`` is one of original, greedy, random, ncots, ncots-no-progress,
    ncots-no-potential, hybrid.
    """
    env = SyntheticEnv(spec)
    if policy == "original":
        trs = [run_unguided(q, env, cfg) for q in queries]
    elif policy == "greedy":
        g = greedy_env(spec)
        trs = [run_unguided(q, g, cfg, tag="greedy") for q in queries]
    elif policy == "random":
        trs = [run_random(q, env, cfg) for q in queries]
    elif policy.startswith("ncots"):
        c = cfg
        if policy == "ncots-no-progress":
            c = replace(cfg, use_progress=False)
        elif policy == "ncots-no-potential":
            c = replace(cfg, use_potential=False)
        elif policy != "ncots":
            raise ValueError(f"unknown policy {policy!r}")
        trs = [run_search(q, env, heads.potential, heads.progress, c) for q in queries]
    elif policy == "hybrid":
        planner = lambda s: teacher_policy(s, spec, cfg.operator_set)  # noqa: E731
        trs = [run_hybrid_guidance(q, env, planner, cfg)[0] for q in queries]
    else:
        raise ValueError(f"unknown policy {policy!r}")
    return BatchResult.of(trs)
