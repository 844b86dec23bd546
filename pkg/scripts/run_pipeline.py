"""Full CLI pipeline on the synthetic environment.

    python scripts/run_pipeline.py --out runs/demo --n-queries 200 --threads 4

Runs gen-env, reference policies, random rollouts, head training, guided
search, hybrid guidance, aggregation, metrics and analysis in order.
"""
import argparse
import json
import sys
from pathlib import Path

from ncots.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(common: list, out: Path, *argv) -> None:
    code = main([*common, "--out", str(out), *map(str, argv)])
    if code:
        sys.exit(f"step {out.name} failed with exit code {code}")


def parse_args():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("runs/pipeline"))
    p.add_argument("--config", type=Path, default=ROOT / "configs" / "synthetic.json")
    p.add_argument("--n-queries", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    return p.parse_args()


def main_() -> None:
    a = parse_args()
    o = a.out
    common = ["--config", str(a.config), "--seed", str(a.seed), "--threads", str(a.threads)]
    heads = ["--potential", o / "heads/potential.json", "--progress", o / "heads/progress.json"]
    run(common, o / "env", "gen-env", "--n-queries", a.n_queries)
    run(common, o / "original", "search", "--env", o / "env", "--policy", "original")
    run(common, o / "greedy", "search", "--env", o / "env", "--policy", "greedy")
    run(common, o / "random", "random", "--env", o / "env", "--repeats", 16)
    run(common, o / "heads", "train", "--env", o / "env", "--traces", o / "original/traces.jsonl", o / "random/traces.jsonl")
    run(common, o / "ncots", "search", "--env", o / "env", *heads, "--diagnostics")
    run(common, o / "hybrid", "hybrid", "--env", o / "env")
    run(common, o / "density", "aggregate", "--path-matrix", o / "random/path_matrix.jsonl",
        "--baseline-traces", o / "original/traces.jsonl")
    run(common, o / "metrics", "metrics", "--baseline", o / "greedy/traces.jsonl",
        "--run", f"original={o / 'original/traces.jsonl'}", f"ncots={o / 'ncots/traces.jsonl'}",
        f"hybrid={o / 'hybrid/traces.jsonl'}")
    run(common, o / "analysis", "analyze", "--traces", o / "ncots/traces.jsonl", "--frequency",
        "--preceding", "Wait", "Alternatively")
    print(json.dumps(json.loads((o / "metrics/metrics.json").read_text())["rows"], indent=2))


if __name__ == "__main__":
    main_()
