"""Command-line front end.

Subcommands: simulate | cluster | train | eval | fairness | cost. Each run
takes one JSON configuration document (flags override individual keys),
writes its tables and figures under --out, and records a manifest with the
config, seed and input hashes needed to replay it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import emulator, harness, report, translog
from .core import TransferParams
from .harness import (
    FlowSpec,
    GreedyPolicy,
    StaticPolicy,
    amortized_cost,
    evaluate,
    fairness_experiment,
    jain_index,
    sweep_static,
    train,
)
from .nets import load_checkpoint, save_checkpoint
from .rewards import RewardConfig, RewardKind
from .simnet import EnvConfig, SyntheticEnv

__all__ = ["main"]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunContext:
    """Output directory plus the manifest accumulated over a run."""

    def __init__(self, args: argparse.Namespace, subcommand: str) -> None:
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest: dict = {
            "subcommand": subcommand,
            "argv": sys.argv[1:],
            "config_path": args.config,
            "seed": getattr(args, "seed", None),
            "inputs": {},
            "outputs": [],
            "started": time.time(),
            "status": "running",
        }

    def add_input(self, path: str | Path) -> Path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"input does not exist: {p}")
        self.manifest["inputs"][str(p)] = _sha256(p)
        return p

    def add_output(self, path: str | Path) -> Path:
        self.manifest["outputs"].append(str(path))
        return Path(path)

    def finish(self, config_doc: dict, status: str = "ok") -> None:
        self.manifest["config"] = config_doc
        self.manifest["config_fingerprint"] = cfgmod.fingerprint(config_doc)
        self.manifest["finished"] = time.time()
        self.manifest["status"] = status
        (self.out / "manifest.json").write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True), encoding="utf-8"
        )


def _load_doc(args: argparse.Namespace, ctx: RunContext) -> cfgmod.Document:
    if args.config:
        ctx.add_input(args.config)
    return cfgmod.load_document(args.config)


def _parse_grid(spec: str | None, doc: cfgmod.Document) -> list[tuple[int, int]]:
    b = doc.bounds
    if spec is None:
        grid = [
            (cc, p)
            for cc in range(b.cc_min, b.cc_max + 1)
            for p in range(b.p_min, b.p_max + 1)
            if cc * p <= b.n_streams_cap
        ]
    else:
        grid = []
        for part in spec.split(";"):
            part = part.strip()
            if not part:
                continue
            cc_s, p_s = part.split("x")
            grid.append((int(cc_s), int(p_s)))
    if not grid:
        raise ValueError("parameter grid is empty")
    return grid


def cmd_simulate(args: argparse.Namespace) -> int:
    ctx = RunContext(args, "simulate")
    doc = _load_doc(args, ctx)
    grid = _parse_grid(args.grid, doc)
    rows = sweep_static(
        doc.link, doc.energy, doc.bounds, grid, mis_per_setting=args.mis, seed=args.seed
    )
    csv_path = ctx.add_output(ctx.out / "sweep.csv")
    harness.write_sweep_csv(csv_path, rows)
    if args.plots:
        ctx.add_output(report.plot_sweep(rows, ctx.out / "sweep.png"))
    ctx.finish(doc.as_dict())
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    ctx = RunContext(args, "cluster")
    doc = _load_doc(args, ctx)
    datasets = []
    for log_path in args.logs:
        p = ctx.add_input(log_path)
        observations = translog.parse_log(p.read_text(encoding="utf-8"))
        datasets.append(translog.build_transitions(observations, doc.bounds, doc.reward))
    dataset = translog.merge_datasets(datasets)
    k = args.k if args.k is not None else doc.emulator.k
    dataset_path = ctx.add_output(ctx.out / "dataset.json")
    translog.save_dataset(dataset, dataset_path)
    model = emulator.fit_cluster_model(
        dataset,
        k,
        seed=args.seed,
        max_iter=doc.emulator.max_iter,
        tol=doc.emulator.tol,
        n_init=doc.emulator.n_init,
        dataset_ref=dataset_path.name,
    )
    model_path = ctx.add_output(ctx.out / "clusters.json")
    emulator.save_cluster_model(model, model_path)
    ctx.finish(doc.as_dict())
    print(f"clustered {len(dataset)} transitions into k={k} groups")
    return 0


def _resolve_dataset(cluster_path: Path, model: emulator.ClusterModel) -> translog.TransitionDataset:
    ref = Path(model.dataset_ref)
    if not ref.is_absolute():
        ref = cluster_path.parent / ref
    if not ref.exists():
        raise FileNotFoundError(f"dataset referenced by cluster model not found: {ref}")
    return translog.load_dataset(ref)


def _build_env(doc: cfgmod.Document, args: argparse.Namespace, ctx: RunContext, seed: int):
    if args.env == "synthetic":
        return SyntheticEnv(doc.link, doc.energy, doc.bounds, doc.env, seed=seed)
    if args.env == "emulator":
        if not args.cluster:
            raise ValueError("--env emulator requires --cluster pointing at a fitted model")
        cluster_path = ctx.add_input(args.cluster)
        model = emulator.load_cluster_model(cluster_path)
        dataset = _resolve_dataset(cluster_path, model)
        return emulator.EmulatorEnv(model, dataset, doc.env, seed=seed)
    raise ValueError(f"unknown env kind: {args.env!r}")


def _reward_with_kind(base: RewardConfig, kind: str | None) -> RewardConfig:
    if kind is None:
        return base
    return replace(base, kind=RewardKind(kind))


def _train_single(args: argparse.Namespace, seed: int, out_dir: Path) -> dict:
    sub = argparse.Namespace(**vars(args))
    sub.out = str(out_dir)
    sub.seed = seed
    ctx = RunContext(sub, "train")
    doc = _load_doc(sub, ctx)
    rcfg = _reward_with_kind(doc.reward, args.reward)
    tcfg = doc.train_config(args.agent, total_steps=args.total_steps, seed=seed)
    env = _build_env(doc, sub, ctx, seed)
    result = train(env, args.agent, tcfg, rcfg)
    ckpt_path = ctx.add_output(ctx.out / "checkpoint.json")
    save_checkpoint(
        ckpt_path,
        result.model,
        result.kind,
        result.scaler,
        result.history_n,
        seed,
        config_fingerprint=cfgmod.fingerprint(doc.as_dict()),
    )
    curve_path = ctx.add_output(ctx.out / "learning_curve.csv")
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("episode,return\n")
        for i, ret in enumerate(result.learning_curve):
            fh.write(f"{i},{ret}\n")
    if args.plots:
        ctx.add_output(report.plot_learning_curve(result.learning_curve, ctx.out / "learning_curve.png"))
    harness.summary_json(
        ctx.add_output(ctx.out / "summary.json"),
        {
            "agent": args.agent,
            "reward": args.reward,
            "env": args.env,
            "seed": seed,
            "episodes": len(result.learning_curve),
            "mean_return_last_10": float(np.mean(result.learning_curve[-10:]))
            if result.learning_curve
            else 0.0,
        },
    )
    ctx.finish(doc.as_dict())
    return {"seed": seed, "out": str(out_dir)}


def cmd_train(args: argparse.Namespace) -> int:
    seeds = [int(s) for s in str(args.seed).split(",")]
    if len(seeds) == 1:
        _train_single(args, seeds[0], Path(args.out))
        return 0
    results = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_train_single, args, seed, Path(args.out) / f"seed-{seed}")
                for seed in seeds
            ]
            results = [f.result() for f in futures]
    else:
        for seed in seeds:
            results.append(_train_single(args, seed, Path(args.out) / f"seed-{seed}"))
    top = RunContext(args, "train")
    top.manifest["children"] = results
    doc = cfgmod.load_document(args.config)
    top.finish(doc.as_dict())
    return 0


def _policy_from_checkpoint(path: Path) -> GreedyPolicy:
    model, kind, scaler, _history_n = load_checkpoint(path)
    return GreedyPolicy(model, kind, scaler)


def cmd_eval(args: argparse.Namespace) -> int:
    ctx = RunContext(args, "eval")
    doc = _load_doc(args, ctx)
    ckpt = ctx.add_input(args.checkpoint)
    policy = _policy_from_checkpoint(ckpt)
    rcfg = _reward_with_kind(doc.reward, args.reward)
    env = _build_env(doc, args, ctx, args.seed)
    result = evaluate(env, policy, args.episodes, rcfg)
    rows = []
    for i, trace in enumerate(result.traces):
        rows.extend(harness.trace_rows(trace, flow_id=i, mi_duration=doc.link.mi_duration))
    harness.write_metrics_csv(ctx.add_output(ctx.out / "metrics.csv"), rows)
    harness.summary_json(
        ctx.add_output(ctx.out / "summary.json"),
        {
            "mean_throughput_bps": result.mean_throughput,
            "std_throughput_bps": result.std_throughput,
            "total_energy_j": result.total_energy,
            "energy_per_bit_j": result.energy_per_bit,
            "mean_streams": result.mean_streams,
            "episode_returns": result.episode_returns,
            "seed": args.seed,
        },
    )
    if args.plots:
        ctx.add_output(report.plot_eval(rows, ctx.out / "eval.png"))
    ctx.finish(doc.as_dict())
    print(
        f"mean throughput {result.mean_throughput / 1e9:.3f} Gbit/s, "
        f"total energy {result.total_energy:.1f} J over {args.episodes} episodes"
    )
    return 0


def _parse_flow(spec: str, ctx: RunContext) -> FlowSpec:
    """Flow syntax: POLICY[:START[:DURATION]].

    POLICY is a checkpoint path or 'static=CCxP'. START and DURATION are MIs.
    """
    parts = spec.split(":")
    policy_part = parts[0]
    start = int(parts[1]) if len(parts) > 1 and parts[1] else 0
    duration = int(parts[2]) if len(parts) > 2 and parts[2] else None
    if policy_part.startswith("static="):
        cc_s, p_s = policy_part[len("static="):].split("x")
        params = TransferParams(int(cc_s), int(p_s))
        return FlowSpec(
            policy=StaticPolicy(params),
            start_mi=start,
            duration_mis=duration,
            initial=params,
            label=policy_part,
        )
    ckpt = ctx.add_input(policy_part)
    return FlowSpec(
        policy=_policy_from_checkpoint(ckpt),
        start_mi=start,
        duration_mis=duration,
        label=Path(policy_part).stem,
    )


def cmd_fairness(args: argparse.Namespace) -> int:
    ctx = RunContext(args, "fairness")
    doc = _load_doc(args, ctx)
    specs = [_parse_flow(spec, ctx) for spec in args.flow]
    result = fairness_experiment(
        specs,
        doc.link,
        doc.energy,
        doc.bounds,
        duration_mis=args.duration,
        rcfg=doc.reward,
        env_cfg=doc.env,
        seed=args.seed,
    )
    harness.write_metrics_csv(ctx.add_output(ctx.out / "metrics.csv"), result.rows)
    tail = [jfi for mi, jfi in result.jfi_series[len(result.jfi_series) // 2:]]
    harness.summary_json(
        ctx.add_output(ctx.out / "summary.json"),
        {
            "flows": [s.label for s in specs],
            "duration_mis": args.duration,
            "steady_state_jfi": float(np.mean(tail)) if tail else None,
            "seed": args.seed,
        },
    )
    if args.plots:
        ctx.add_output(
            report.plot_fairness(result.per_flow_throughput, result.jfi_series, ctx.out / "fairness.png")
        )
    ctx.finish(doc.as_dict())
    if tail:
        print(f"steady-state fairness index: {float(np.mean(tail)):.4f}")
    return 0


def cmd_cost(args: argparse.Namespace) -> int:
    ctx = RunContext(args, "cost")
    doc = _load_doc(args, ctx)
    methods: list[tuple[str, harness.CostModel]] = []
    for name in args.method:
        if name not in harness.REFERENCE_COSTS:
            raise ValueError(
                f"unknown method {name!r}; choices: {sorted(harness.REFERENCE_COSTS)}"
            )
        methods.append((name, harness.REFERENCE_COSTS[name]))
    if args.train_kj is not None or args.inf_j is not None:
        if args.train_kj is None or args.inf_j is None:
            raise ValueError("--train-kj and --inf-j must be given together")
        methods.append(("custom", harness.CostModel(args.train_kj * 1e3, args.inf_j)))
    if not methods:
        methods = [(name, cm) for name, cm in harness.REFERENCE_COSTS.items()]
    rows = []
    curves = []
    transfer_axis = [int(t) for t in np.unique(np.logspace(0, 6, 61).astype(int))]
    for name, cm in methods:
        total, per_transfer = amortized_cost(cm, args.steps_per_transfer, args.transfers)
        rows.append(
            {
                "method": name,
                "train_j": cm.train_energy,
                "inference_j_per_step": cm.inference_energy,
                "steps_per_transfer": args.steps_per_transfer,
                "transfers": args.transfers,
                "total_j": total,
                "per_transfer_j": per_transfer,
            }
        )
        curves.append(
            {
                "method": name,
                "transfers": transfer_axis,
                "per_transfer_j": [
                    amortized_cost(cm, args.steps_per_transfer, t)[1] for t in transfer_axis
                ],
            }
        )
        print(f"{name}: total {total:.1f} J, per transfer {per_transfer:.1f} J")
    import csv as _csv

    cost_path = ctx.add_output(ctx.out / "cost.csv")
    with open(cost_path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    if args.plots:
        ctx.add_output(report.plot_cost(curves, ctx.out / "cost.png"))
    ctx.finish(doc.as_dict())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xfertune",
        description="Reinforcement-learning lab for transfer concurrency/parallelism tuning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="JSON configuration document")
        p.add_argument("--seed", default=0, help="random seed (train accepts a comma list)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--plots", action=argparse.BooleanOptionalAction, default=True,
                       help="render figures next to the delimited outputs")

    p = sub.add_parser("simulate", help="static parameter sweep on the synthetic link")
    common(p)
    p.add_argument("--grid", default=None, help="semicolon list of CCxP points, e.g. '4x4;8x8'")
    p.add_argument("--mis", type=int, default=60, help="MIs per grid setting")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cluster", help="parse logs, build transitions, fit the lookup model")
    common(p)
    p.add_argument("logs", nargs="+", help="transfer log files, one session each")
    p.add_argument("--k", type=int, default=None, help="cluster count")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train an agent on either environment")
    common(p)
    p.add_argument("--env", choices=["synthetic", "emulator"], default="synthetic")
    p.add_argument("--agent", choices=["dqn", "ppo"], default="ppo")
    p.add_argument("--reward", choices=["fe", "te"], default="fe")
    p.add_argument("--total-steps", type=int, default=None, dest="total_steps")
    p.add_argument("--cluster", default=None, help="fitted cluster model (emulator env)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for multi-seed runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation rollouts of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", choices=["synthetic", "emulator"], default="synthetic")
    p.add_argument("--cluster", default=None)
    p.add_argument("--reward", choices=["fe", "te"], default=None)
    p.add_argument("--episodes", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fairness", help="multiple flows sharing one link")
    common(p)
    p.add_argument("--flow", action="append", required=True,
                   help="POLICY[:START[:DURATION]]; POLICY is a checkpoint or static=CCxP")
    p.add_argument("--duration", type=int, default=240, help="experiment length in MIs")
    p.set_defaults(func=cmd_fairness)

    p = sub.add_parser("cost", help="amortized train-vs-inference energy analysis")
    common(p)
    p.add_argument("--method", action="append", default=[],
                   help=f"preset method name ({', '.join(sorted(harness.REFERENCE_COSTS))})")
    p.add_argument("--train-kj", type=float, default=None, dest="train_kj")
    p.add_argument("--inf-j", type=float, default=None, dest="inf_j")
    p.add_argument("--steps-per-transfer", type=int, default=600, dest="steps_per_transfer")
    p.add_argument("--transfers", type=int, default=1000)
    p.set_defaults(func=cmd_cost)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "seed") and args.command != "train":
        args.seed = int(str(args.seed).split(",")[0])
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
