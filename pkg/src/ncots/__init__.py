"""Operator-level search over reasoning steps, with a synthetic test environment."""
from .env import EnvQuery, EnvSpec, SyntheticEnv, brute_force_optimal, generate_queries, teacher_policy
from .heads import PotentialHead, ProgressHead, TrainConfig, train_potential, train_progress
from .metrics import efficiency_eta, summarize_run
from .search import SearchConfig, run_hybrid_guidance, run_random, run_search, run_unguided
from .traces import FULL_SET, RANDOM8_SET, Operator, OperatorSet, ReasoningStep, ReasoningTrace

__all__ = [
    "EnvQuery", "EnvSpec", "SyntheticEnv", "brute_force_optimal", "generate_queries", "teacher_policy",
    "PotentialHead", "ProgressHead", "TrainConfig", "train_potential", "train_progress",
    "efficiency_eta", "summarize_run",
    "SearchConfig", "run_hybrid_guidance", "run_random", "run_search", "run_unguided",
    "FULL_SET", "RANDOM8_SET", "Operator", "OperatorSet", "ReasoningStep", "ReasoningTrace",
]
