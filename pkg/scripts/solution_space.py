"""Solution-space density from uniform-random operator rollouts.

    python scripts/solution_space.py --n-queries 100 --k 16 --plot density.png

Prints the fraction of sampled operating points that are both shorter and
more accurate than the environment's own policy.
"""
import argparse

import numpy as np

from ncots.env import EnvSpec, SyntheticEnv, generate_queries
from ncots.experiments import policy_batch
from ncots.explorer import characterize, monte_carlo_aggregate, superior_fraction
from ncots.search import SearchConfig


def parse_args():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--iterations", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--plot", help="optional PNG path (needs matplotlib)")
    return p.parse_args()


def main() -> None:
    a = parse_args()
    spec = EnvSpec()
    queries = generate_queries(spec, a.n_queries, a.seed)
    pm = characterize(queries, SyntheticEnv(spec), a.k, SearchConfig(), a.seed, a.threads)
    grid = monte_carlo_aggregate(pm, a.iterations, seed=a.seed)
    base = policy_batch("original", queries, spec, SearchConfig(seed=a.seed))
    point = (base.mean_length, base.accuracy)
    print(f"path matrix {pm.n}x{pm.k}; {len(grid.points)} distinct operating points")
    print(f"baseline length {point[0]:.1f}, accuracy {point[1]:.3f}")
    print(f"superior fraction {superior_fraction(grid, point):.4f}")
    if a.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        extent = [grid.length_bins[0], grid.length_bins[-1], grid.accuracy_bins[0], grid.accuracy_bins[-1]]
        ax.imshow(np.log1p(grid.counts.T), origin="lower", aspect="auto", extent=extent, cmap="viridis")
        ax.plot(*point, "r*", ms=12, label="environment policy")
        ax.set_xlabel("mean length (tokens)")
        ax.set_ylabel("mean accuracy")
        ax.legend()
        fig.tight_layout()
        fig.savefig(a.plot, dpi=150)


if __name__ == "__main__":
    main()
