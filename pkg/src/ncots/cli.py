"""Command-line pipelines over the synthetic environment.

    python -m ncots [--config PATH] [--seed N] [--out DIR] [--threads N] <command> ...

Commands: gen-env, train, search, random, hybrid, aggregate, metrics, analyze.
Every command writes its artifacts plus a manifest.json into --out. Results
depend only on (inputs, config, seed); --threads changes wall-clock only.
Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .env import EnvQuery, EnvSpec, SyntheticEnv, generate_queries, teacher_policy, teacher_samples
from .explorer import (
    PathMatrix,
    characterize,
    monte_carlo_aggregate,
    read_path_matrix,
    write_grid,
    write_path_matrix,
)
from .heads import (
    TrainConfig,
    init_potential_from_embeddings,
    load_head,
    progress_arrays,
    save_head,
    spearman,
    progress_forward,
    potential_forward,
    train_potential,
    train_progress,
)
from .metrics import (
    ModeTable,
    mode_correlation,
    operator_frequency,
    summarize_run,
    write_frequency_csv,
    write_metrics,
    write_mode_csv,
)
from .search import SearchConfig, run_hybrid_guidance, run_search, run_unguided
from .segmentation import preceding_token_counts, write_distribution_csv
from .traces import TraceFormatError, read_jsonl, read_traces, write_jsonl, write_traces

log = logging.getLogger("ncots")

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- config & manifest -----------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    known = {"env", "search", "train", "explore"}
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown config sections {sorted(unknown)}")
    return cfg


def _train_cfg(section: dict, seed: int) -> TrainConfig:
    return TrainConfig(**{"seed": seed, **section})


def _search_cfg(args, cfg: dict) -> SearchConfig:
    d = {"seed": args.seed, **cfg.get("search", {})}
    for key in ("lam", "tau", "sampling", "operator_set", "step_budget", "token_budget"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
            if key == "lam":
                d.pop("lambda", None)
    if getattr(args, "no_potential", False):
        d["use_potential"] = False
    if getattr(args, "no_progress", False):
        d["use_progress"] = False
    return SearchConfig.from_dict(d)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, args, inputs: list, outputs: list, started: float) -> None:
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:] if args.argv is None else args.argv,
        "config_path": args.config,
        "seed": args.seed,
        "threads": args.threads,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {Path(p).name: _sha256(Path(p)) for p in outputs},
        "version": _version(),
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _pmap(fn, items, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing input {p}")
    return p


def _load_env_dir(d) -> tuple[EnvSpec, list[EnvQuery], list[Path]]:
    d = _need(d)
    spec_path, q_path = _need(d / "env.json"), _need(d / "queries.jsonl")
    spec = EnvSpec.load(spec_path)
    queries = [EnvQuery.from_dict(r) for r in read_jsonl(q_path)]
    return spec, queries, [spec_path, q_path]


# --- commands --------------------------------------------------------------------------

def cmd_gen_env(args, cfg, out: Path):
    if args.spec:
        spec = EnvSpec.load(_need(args.spec))
        inputs = [Path(args.spec)]
    else:
        spec = EnvSpec.from_dict({"seed": args.seed, **cfg.get("env", {})})
        inputs = []
    if args.n_queries < 0:
        raise UsageError("--n-queries must be >= 0")
    queries = generate_queries(spec, args.n_queries, args.seed)
    spec.save(out / "env.json")
    write_jsonl(out / "queries.jsonl", [q.to_dict() for q in queries])
    log.info("wrote %d queries", len(queries))
    return inputs, [out / "env.json", out / "queries.jsonl"]


def cmd_train(args, cfg, out: Path):
    spec, queries, inputs = _load_env_dir(args.env)
    env = SyntheticEnv(spec)
    Q = {q.id: q for q in queries}
    traces = []
    for p in args.traces:
        traces.extend(read_traces(_need(p)))
        inputs.append(Path(p))
    missing = {t.query_id for t in traces} - set(Q)
    if missing:
        raise ValueError(f"traces reference unknown queries, e.g. {sorted(missing)[0]}")
    scfg = _search_cfg(args, cfg)
    ops = scfg.operator_set
    tcfg = cfg.get("train", {})
    report, outputs = {}, []
    if args.heads in ("potential", "both"):
        H, P = teacher_samples(env, traces, Q, ops)
        init = init_potential_from_embeddings(spec.operator_embeddings(ops), ops.name)
        hist: list = []
        head = train_potential((H, P), init, _train_cfg(tcfg.get("potential", {}), args.seed), hist)
        logits, _ = potential_forward(head, H)
        save_head(out / "potential.json", head)
        outputs.append(out / "potential.json")
        report["potential"] = {
            "n_samples": int(len(H)),
            "loss_curve": hist,
            "final_kl": hist[-1],
            "argmax_agreement": float(np.mean(logits.argmax(1) == P.argmax(1))),
        }
    if args.heads in ("progress", "both"):
        Hp, y, skipped = progress_arrays(traces, env, Q)
        pc = _train_cfg(tcfg.get("progress", {}), args.seed)
        if not len(Hp):
            raise ValueError("no complete traces to train the progress head on")
        hist = []
        head = train_progress((Hp, y), pc, hist)
        rho = spearman(progress_forward(head, Hp), y)
        save_head(out / "progress.json", head)
        outputs.append(out / "progress.json")
        report["progress"] = {
            "n_samples": int(len(Hp)),
            "skipped_traces": skipped,
            "loss_curve": hist,
            "final_mse": hist[-1],
            "spearman": rho,
        }
    (out / "train_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs.append(out / "train_report.json")
    return inputs, outputs


def _jobs(queries, repeats: int):
    if repeats < 1:
        raise UsageError("--repeats must be >= 1")
    return [(q, r) for q in queries for r in range(repeats)]


def cmd_search(args, cfg, out: Path):
    spec, queries, inputs = _load_env_dir(args.env)
    scfg = _search_cfg(args, cfg)
    jobs = _jobs(queries, args.repeats)
    if args.policy in ("original", "greedy"):
        env = SyntheticEnv(spec if args.policy == "original" else replace(spec, natural_temperature=0.0))
        traces = _pmap(lambda qr: run_unguided(qr[0], env, scfg, qr[1], tag=args.policy), jobs, args.threads)
        write_traces(out / "traces.jsonl", traces)
        return inputs, [out / "traces.jsonl"]
    if not (args.potential and args.progress):
        raise UsageError("--policy ncots needs --potential and --progress")
    pot, prog = load_head(_need(args.potential)), load_head(_need(args.progress))
    inputs += [Path(args.potential), Path(args.progress)]
    env = SyntheticEnv(spec)

    def one(qr):
        diag = [] if args.diagnostics else None
        tr = run_search(qr[0], env, pot, prog, scfg, qr[1], diag)
        return tr, diag

    results = _pmap(one, jobs, args.threads)
    write_traces(out / "traces.jsonl", [t for t, _ in results])
    outputs = [out / "traces.jsonl"]
    if args.diagnostics:
        rows = []
        for (q, r), (_, diag) in zip(jobs, results):
            rows.extend({"query_id": q.id, "repeat": r, **d} for d in diag)
        write_jsonl(out / "diagnostics.jsonl", rows)
        outputs.append(out / "diagnostics.jsonl")
    return inputs, outputs


def cmd_random(args, cfg, out: Path):
    spec, queries, inputs = _load_env_dir(args.env)
    scfg = _search_cfg(args, cfg)
    env = SyntheticEnv(spec)
    k = args.repeats
    if k < 1:
        raise UsageError("--repeats must be >= 1")
    pm = characterize(queries, env, k, scfg, args.seed, args.threads)
    write_traces(out / "traces.jsonl", [t for row in pm.traces for t in row])
    write_path_matrix(out / "path_matrix.jsonl", pm)
    return inputs, [out / "traces.jsonl", out / "path_matrix.jsonl"]


def cmd_hybrid(args, cfg, out: Path):
    spec, queries, inputs = _load_env_dir(args.env)
    scfg = _search_cfg(args, cfg)
    env = SyntheticEnv(spec)
    planner = lambda state: teacher_policy(state, spec, scfg.operator_set)  # noqa: E731
    results = _pmap(lambda qr: run_hybrid_guidance(qr[0], env, planner, scfg, qr[1]), _jobs(queries, args.repeats), args.threads)
    write_traces(out / "traces.jsonl", [t for t, _ in results])
    write_jsonl(
        out / "guidance.jsonl",
        [{"query_id": t.query_id, "seed": t.seed, "guiding_fraction": g, "total_tokens": t.total_tokens} for t, g in results],
    )
    return inputs, [out / "traces.jsonl", out / "guidance.jsonl"]


def _baseline_point(args, inputs) -> tuple[float, float] | None:
    if args.baseline_traces:
        bt = read_traces(_need(args.baseline_traces))
        inputs.append(Path(args.baseline_traces))
        if not bt:
            raise ValueError("baseline trace file is empty")
        return (sum(t.total_tokens for t in bt) / len(bt), sum(t.correct for t in bt) / len(bt))
    if args.baseline:
        try:
            l0, a0 = (float(x) for x in args.baseline.split(","))
        except ValueError as exc:
            raise UsageError("--baseline expects LENGTH,ACCURACY") from exc
        return (l0, a0)
    return None


def cmd_aggregate(args, cfg, out: Path):
    inputs: list = []
    if bool(args.traces) == bool(args.path_matrix):
        raise UsageError("give exactly one of --traces or --path-matrix")
    if args.traces:
        pm = PathMatrix.from_traces(read_traces(_need(args.traces)))
        inputs.append(Path(args.traces))
    else:
        pm = read_path_matrix(_need(args.path_matrix))
        inputs.append(Path(args.path_matrix))
    ex = cfg.get("explore", {})
    iters = args.iterations if args.iterations is not None else ex.get("iterations", 10**6)
    grid = monte_carlo_aggregate(pm, iters, seed=args.seed)
    base = _baseline_point(args, inputs)
    write_grid(out / "density.csv", out / "density.json", grid, base)
    write_path_matrix(out / "path_matrix.jsonl", pm)
    return inputs, [out / "density.csv", out / "density.json", out / "path_matrix.jsonl"]


def cmd_metrics(args, cfg, out: Path):
    inputs = [_need(args.baseline)]
    base = read_traces(inputs[0])
    rows = {}
    for spec in args.run:
        label, sep, path = spec.partition("=")
        if not sep:
            label, path = Path(spec).stem, spec
        rows[label] = summarize_run(read_traces(_need(path)), base)
        inputs.append(Path(path))
    write_metrics(out / "metrics.json", out / "metrics.csv", rows, args.average)
    return inputs, [out / "metrics.json", out / "metrics.csv"]


def cmd_analyze(args, cfg, out: Path):
    inputs, outputs = [], []
    traces = []
    for p in args.traces or []:
        traces.extend(read_traces(_need(p)))
        inputs.append(Path(p))
    if args.frequency:
        write_frequency_csv(out / "operator_frequency.csv", operator_frequency(traces))
        outputs.append(out / "operator_frequency.csv")
    if args.preceding:
        rows = []
        streams = [t.token_stream() for t in traces]
        for kw in args.preceding:
            counts = preceding_token_counts(streams, kw)
            total = sum(counts.values())
            rows.extend((kw, b, c / total, c) for b, c in sorted(counts.items()))
        write_distribution_csv(out / "preceding_tokens.csv", rows)
        outputs.append(out / "preceding_tokens.csv")
    if args.modes:
        labeled = [(r["operator"], r["mode"]) for r in read_jsonl(_need(args.modes))]
        inputs.append(Path(args.modes))
        table: ModeTable = mode_correlation(labeled)
        write_mode_csv(out / "mode_correlation.csv", table)
        outputs.append(out / "mode_correlation.csv")
    if not outputs:
        raise UsageError("nothing to analyze: pass --frequency, --preceding or --modes")
    return inputs, outputs


# --- parser ------------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config with env/search/train/explore sections")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    return p


def _search_flags(p):
    p.add_argument("--env", required=True, help="directory written by gen-env")
    p.add_argument("--operator-set", dest="operator_set", choices=("random8", "full"))
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--sampling", choices=("sample", "argmax"))
    p.add_argument("--step-budget", dest="step_budget", type=int)
    p.add_argument("--token-budget", dest="token_budget", type=int)
    p.add_argument("--repeats", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="ncots", description=__doc__.splitlines()[0], parents=[common])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-env", parents=[common], help="write an environment spec and query set")
    p.add_argument("--n-queries", type=int, default=200)
    p.add_argument("--spec", help="existing env.json to reuse")

    p = sub.add_parser("train", parents=[common], help="train potential and/or progress heads")
    p.add_argument("--heads", choices=("potential", "progress", "both"), default="both")
    p.add_argument("--traces", nargs="+", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--operator-set", dest="operator_set", choices=("random8", "full"))

    p = sub.add_parser("search", parents=[common], help="guided search or an unguided reference policy")
    _search_flags(p)
    p.add_argument("--policy", choices=("ncots", "original", "greedy"), default="ncots")
    p.add_argument("--potential")
    p.add_argument("--progress")
    p.add_argument("--no-potential", action="store_true")
    p.add_argument("--no-progress", action="store_true")
    p.add_argument("--diagnostics", action="store_true", help="also write per-decision scores")

    p = sub.add_parser("random", parents=[common], help="uniform-random operator rollouts (path matrix)")
    _search_flags(p)
    p.set_defaults(repeats=16)

    p = sub.add_parser("hybrid", parents=[common], help="teacher plans one token per step, env writes the rest")
    _search_flags(p)

    p = sub.add_parser("aggregate", parents=[common], help="Monte Carlo density of the solution space")
    p.add_argument("--traces")
    p.add_argument("--path-matrix")
    p.add_argument("--iterations", type=int)
    p.add_argument("--baseline-traces")
    p.add_argument("--baseline", help="LENGTH,ACCURACY of the reference point")

    p = sub.add_parser("metrics", parents=[common], help="accuracy, length and efficiency vs a baseline")
    p.add_argument("--baseline", required=True, help="baseline traces JSONL")
    p.add_argument("--run", nargs="+", required=True, help="LABEL=traces.jsonl")
    p.add_argument("--average", action="store_true", help="append mean eta and deltas over runs")

    p = sub.add_parser("analyze", parents=[common], help="operator frequency, preceding tokens, mode correlation")
    p.add_argument("--traces", nargs="*")
    p.add_argument("--frequency", action="store_true")
    p.add_argument("--preceding", nargs="*", metavar="KEYWORD")
    p.add_argument("--modes", help="JSONL of {operator, mode} labels")
    return ap


COMMANDS = {
    "gen-env": cmd_gen_env,
    "train": cmd_train,
    "search": cmd_search,
    "random": cmd_random,
    "hybrid": cmd_hybrid,
    "aggregate": cmd_aggregate,
    "metrics": cmd_metrics,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE_ERROR
    args.argv = None if argv is None else list(argv)
    args.config = getattr(args, "config", None)
    args.seed = getattr(args, "seed", 0)
    args.threads = getattr(args, "threads", 1)
    out = Path(getattr(args, "out", "out"))
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        cfg = load_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        inputs, outputs = COMMANDS[args.command](args, cfg, out)
        write_manifest(out, args, inputs, outputs, started)
    except UsageError as exc:
        print(f"ncots {args.command}: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (FileNotFoundError, TraceFormatError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"ncots {args.command}: error: {exc}", file=sys.stderr)
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
