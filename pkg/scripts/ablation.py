"""Heuristic ablation on a held-out batch with paired rollout seeds.

    python scripts/ablation.py --tau 0.3 --n-queries 200

Reports accuracy, mean length and efficiency of each policy against the
greedy environment policy.
"""
import argparse

from ncots.env import EnvSpec, generate_queries
from ncots.experiments import policy_batch, train_heads
from ncots.search import SearchConfig

POLICIES = ("greedy", "original", "random", "hybrid", "ncots-no-potential", "ncots-no-progress", "ncots")


def parse_args():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n-queries", type=int, default=200)
    p.add_argument("--query-seed", type=int, default=99)
    p.add_argument("--train-seed", type=int, default=7)
    p.add_argument("--seed", type=int, default=12)
    p.add_argument("--tau", type=float, default=0.3)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--sampling", choices=("sample", "argmax"), default="sample")
    return p.parse_args()


def main() -> None:
    a = parse_args()
    spec = EnvSpec()
    heads = train_heads(spec, query_seed=a.train_seed)
    queries = generate_queries(spec, a.n_queries, a.query_seed)
    cfg = SearchConfig(seed=a.seed, tau=a.tau, lam=a.lam, sampling=a.sampling)
    res = {p: policy_batch(p, queries, spec, cfg, heads) for p in POLICIES}
    base = res["greedy"]
    print(f"{'policy':<20}{'acc':>8}{'length':>10}{'eta':>8}")
    for p, r in res.items():
        print(f"{p:<20}{r.accuracy:>8.3f}{r.mean_length:>10.1f}{r.eta_vs(base):>8.3f}")


if __name__ == "__main__":
    main()
