"""Command-line front end.

Verbs: ``gen`` (synthetic datasets), ``train`` (fold-averaged kernel training),
``hopf`` (iterative rounds), ``bench-scaling`` (epoch-time scaling table),
``neighbor-fraction`` (accuracy vs sampling caps), ``nim`` (self-information
decay table) and ``compare`` (shortfall / rank report). Every command writes a
``manifest.json`` into --out before any result file. Exit codes: 0 success,
1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .bench import run_scaling
from .data import (DatasetBundle, gen_benchmark_graph, gen_chain, gen_planted_partition,
                   load_dataset, row_normalize, save_dataset)
from .errors import ArgumentError, ConfigError, HopfError, IngestError, TrainingError
from .iterate import HopfConfig, run_hopf
from .kernels import ITERATIVE_MODELS, TRAINABLE_MODELS, make_kernel, nim_decay_table
from .manifest import RunManifest
from .metrics import (MetricsRecord, average_rank, read_scores_csv,
                      shortfall, write_records_csv, write_report_json)
from .training import TrainConfig, evaluate, make_splits, train


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _load_bundle(path) -> DatasetBundle:
    bundle = load_dataset(path)
    bundle.x = row_normalize(bundle.x)
    return bundle


def _train_config(args) -> TrainConfig:
    overrides: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        hopf_keys = set(HopfConfig.__dataclass_fields__)
        overrides.update({k: v for k, v in file_cfg.items() if k not in hopf_keys})
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    return TrainConfig.from_dict(overrides)


def _check_model(name: str, allowed) -> None:
    if name not in allowed:
        raise ConfigError(f"unknown model {name!r}; choose from: {', '.join(allowed)}")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _history_rows(history):
    return [[h["epoch"], repr(h["train_loss"]), repr(h["val_loss"]), repr(h["lr"])]
            for h in history]


def cmd_gen(args) -> int:
    out = Path(args.out)
    manifest = RunManifest.start("gen", {"kind": args.kind, **{k: getattr(args, k, None) for k in
                                 ("n", "blocks", "p_in", "p_out", "noise", "nodes", "edges",
                                  "features", "labels")}},
                                 seeds={"seed": args.seed})
    manifest.write(out)
    t0 = time.perf_counter()
    if args.kind == "chain":
        bundle = gen_chain(args.n)
    elif args.kind == "planted":
        bundle = gen_planted_partition(args.n, args.blocks, args.p_in, args.p_out,
                                       args.noise, args.seed)
    else:
        bundle = gen_benchmark_graph(args.nodes, args.edges, args.features,
                                     args.labels, args.seed)
    save_dataset(bundle, out / "dataset")
    manifest.timings = {"generate_seconds": time.perf_counter() - t0}
    manifest.write(out)
    print(f"wrote {bundle.name}: n={bundle.graph.n} |E|={bundle.graph.num_edges} "
          f"f={bundle.num_features} l={bundle.num_labels} -> {out / 'dataset'}")
    return 0


def cmd_train(args) -> int:
    _check_model(args.model, TRAINABLE_MODELS)
    config = _train_config(args)
    out = Path(args.out)
    manifest = RunManifest.start("train", {**asdict(config), "model": args.model,
                                           "hops": args.hops, "folds": args.folds,
                                           "sample_caps": args.sample_caps},
                                 seeds={"rng_seed": config.rng_seed},
                                 dataset_dir=args.dataset)
    manifest.write(out)

    t0 = time.perf_counter()
    bundle = _load_bundle(args.dataset)
    load_done = time.perf_counter()
    caps = _parse_ints(args.sample_caps) if args.sample_caps else None
    spec = make_kernel(args.model, depth=args.hops, hidden_dim=config.hidden_dim)
    if caps is not None and len(caps) != spec.depth:
        raise ConfigError(f"--sample-caps needs {spec.depth} entries, got {len(caps)}")
    splits = make_splits(bundle.graph.n, config.rng_seed, num_folds=args.folds)
    records = []
    for fold, split in enumerate(splits):
        weights, history = train(spec, bundle.graph, bundle.x, bundle.y, split, config,
                                 bundle.task, sample_caps=caps, workers=args.workers)
        ev = evaluate(spec, weights, bundle.graph, bundle.x, bundle.y,
                      split.test_nodes, bundle.task)
        records.append(MetricsRecord(args.model, bundle.name, fold, ev["micro_f1"], ev["loss"]))
        _write_csv(out / f"history_fold{fold}.csv", ["epoch", "train_loss", "val_loss", "lr"],
                   _history_rows(history))
        _write_csv(out / f"predictions_fold{fold}.csv",
                   ["node"] + [f"label_{j}" for j in range(bundle.num_labels)],
                   [[int(n)] + [repr(float(v)) for v in row]
                    for n, row in zip(split.test_nodes, ev["predictions"])])
    write_records_csv(records, out / "metrics.csv")
    f1s = [r.micro_f1 for r in records]
    report = {"model": args.model, "dataset": bundle.name, "folds": args.folds,
              "mean_micro_f1": float(np.mean(f1s)), "std_micro_f1": float(np.std(f1s))}
    write_report_json(report, out / "report.json")
    manifest.timings = {"load_seconds": load_done - t0,
                        "train_eval_seconds": time.perf_counter() - load_done,
                        "total_seconds": time.perf_counter() - t0}
    manifest.write(out)
    print(f"{args.model} on {bundle.name}: micro-F1 {report['mean_micro_f1']:.4f} "
          f"± {report['std_micro_f1']:.4f} over {args.folds} folds")
    return 0


def cmd_hopf(args) -> int:
    _check_model(args.model, ITERATIVE_MODELS)
    config = _train_config(args)
    c_hops = 1 if args.model == "ss_ica" else args.C
    hopf_config = HopfConfig(C=c_hops, T=args.T, warm_start=not args.cold_start,
                             shifted_averaging=args.shifted_averaging)
    out = Path(args.out)
    manifest = RunManifest.start("hopf", {**asdict(config), **asdict(hopf_config),
                                          "model": args.model, "fold": args.fold},
                                 seeds={"rng_seed": config.rng_seed},
                                 dataset_dir=args.dataset)
    manifest.write(out)

    t0 = time.perf_counter()
    bundle = _load_bundle(args.dataset)
    spec = make_kernel(args.model, depth=c_hops, hidden_dim=config.hidden_dim)
    splits = make_splits(bundle.graph.n, config.rng_seed, num_folds=args.fold + 1)
    result = run_hopf(spec, bundle.graph, bundle.x, bundle.y, splits[args.fold],
                      config, hopf_config, bundle.task, out_dir=out / "iterations",
                      workers=args.workers)
    _write_csv(out / "trajectory.csv", ["iteration", "micro_f1"],
               [[row["iteration"], repr(float(row["micro_f1"]))] for row in result.trajectory])
    _write_csv(out / "yhat_final.csv", [f"label_{j}" for j in range(bundle.num_labels)],
               [[repr(float(v)) for v in row] for row in result.yhat])
    _write_csv(out / "ytilde_final.csv", [f"label_{j}" for j in range(bundle.num_labels)],
               [[repr(float(v)) for v in row] for row in result.ytilde])
    records = [MetricsRecord(args.model, bundle.name, args.fold,
                             row["micro_f1"], float("nan")) for row in result.trajectory]
    write_records_csv(records, out / "metrics.csv")
    manifest.timings = {"total_seconds": time.perf_counter() - t0}
    manifest.write(out)
    final = result.trajectory[-1]["micro_f1"]
    print(f"{args.model} C={hopf_config.C} T={hopf_config.T}: "
          f"final-round test micro-F1 {final:.4f}")
    return 0


def cmd_bench_scaling(args) -> int:
    out = Path(args.out)
    config = _train_config(args)
    config = replace(config, batch_size=args.batch_size, hidden_dim=args.hidden_dim,
                     use_wce=False)
    manifest = RunManifest.start("bench-scaling",
                                 {"hops": args.hops, "variants": args.variants,
                                  "repeats": args.repeats, "nodes": args.nodes,
                                  "edges": args.edges, "memory_budget_gib": args.memory_budget,
                                  "batch_size": args.batch_size, "hidden_dim": args.hidden_dim,
                                  "workers": args.workers},
                                 seeds={"rng_seed": config.rng_seed})
    manifest.write(out)

    t0 = time.perf_counter()
    if args.dataset:
        bundle = _load_bundle(args.dataset)
    else:
        bundle = gen_benchmark_graph(args.nodes, args.edges, args.features, args.labels,
                                     rng_seed=config.rng_seed)
        bundle.x = row_normalize(bundle.x)
    split = make_splits(bundle.graph.n, config.rng_seed)[0]
    budget = None if args.memory_budget <= 0 else int(args.memory_budget * 2**30)
    cells = run_scaling(bundle, split, args.variants.split(","), _parse_ints(args.hops),
                        args.repeats, config, budget_bytes=budget, workers=args.workers)
    _write_csv(out / "timings.csv", ["variant", "hops", "mean_seconds", "status"],
               [[c.variant, c.hops, "" if c.mean_seconds is None else repr(c.mean_seconds),
                 c.status] for c in cells])
    manifest.timings = {"total_seconds": time.perf_counter() - t0}
    manifest.write(out)
    width = max(len(c.variant) for c in cells) + 2
    print(f"{'variant':<{width}}{'hops':>6}  {'mean epoch s':>14}  status")
    for c in cells:
        secs = "-" if c.mean_seconds is None else f"{c.mean_seconds:.3f}"
        print(f"{c.variant:<{width}}{c.hops:>6}  {secs:>14}  {c.status}")
    return 0


def cmd_neighbor_fraction(args) -> int:
    _check_model(args.model, TRAINABLE_MODELS)
    config = _train_config(args)
    fractions = _parse_floats(args.fractions)
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ConfigError("fractions must lie in (0, 1]")
    out = Path(args.out)
    manifest = RunManifest.start("neighbor-fraction",
                                 {**asdict(config), "model": args.model,
                                  "fractions": fractions, "hops": args.hops},
                                 seeds={"rng_seed": config.rng_seed},
                                 dataset_dir=args.dataset)
    manifest.write(out)

    t0 = time.perf_counter()
    bundle = _load_bundle(args.dataset)
    spec = make_kernel(args.model, depth=args.hops, hidden_dim=config.hidden_dim)
    split = make_splits(bundle.graph.n, config.rng_seed)[args.fold]
    max_degree = int(bundle.graph.degree.max())
    rows = []
    for frac in fractions:
        caps = [max(1, math.ceil(frac * max_degree))] * spec.depth
        weights, _ = train(spec, bundle.graph, bundle.x, bundle.y, split, config,
                           bundle.task, sample_caps=caps, workers=args.workers)
        ev = evaluate(spec, weights, bundle.graph, bundle.x, bundle.y,
                      split.test_nodes, bundle.task)
        rows.append([repr(frac), caps[0], repr(ev["micro_f1"]), repr(ev["loss"])])
    _write_csv(out / "fractions.csv", ["fraction", "cap_per_hop", "micro_f1", "loss"], rows)
    manifest.timings = {"total_seconds": time.perf_counter() - t0}
    manifest.write(out)
    return 0


def cmd_nim(args) -> int:
    if args.alpha == 0 and args.beta == 0:
        raise ConfigError("alpha and beta cannot both be zero")
    out = Path(args.out)
    manifest = RunManifest.start("nim", {"alpha": args.alpha, "beta": args.beta,
                                         "max_k": args.max_k, "skip": args.skip},
                                 seeds={})
    manifest.write(out)
    header, rows = nim_decay_table(args.alpha, args.beta, args.max_k, args.skip)
    _write_csv(out / "decay.csv", header, rows)
    for row in [header] + rows:
        print("\t".join(str(v) for v in row))
    return 0


def cmd_compare(args) -> int:
    out = Path(args.out)
    manifest = RunManifest.start("compare", {"scores": str(args.scores)}, seeds={})
    manifest.write(out)
    scores = read_scores_csv(args.scores)
    sf = shortfall(scores)
    ranks = average_rank(scores)
    order = sorted(sf, key=sf.get)
    _write_csv(out / "report.csv", ["model", "shortfall", "avg_rank"],
               [[m, repr(sf[m]), repr(ranks[m])] for m in order])
    detail = {"shortfall": sf, "avg_rank": ranks,
              "per_dataset_shortfall": {
                  m: {d: (max(v[d] for v in scores.values()) - scores[m][d])
                      / max(v[d] for v in scores.values())
                      for d in scores[m]} for m in scores}}
    write_report_json(detail, out / "report.json")
    width = max(len(m) for m in order) + 2
    print(f"{'model':<{width}}{'shortfall':>12}{'avg rank':>10}")
    for m in order:
        print(f"{m:<{width}}{sf[m]:>12.4f}{ranks[m]:>10.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hopf",
                                description="Collective classification with propagation kernels")
    sub = p.add_subparsers(dest="verb", metavar="verb")

    g = sub.add_parser("gen", help="generate a synthetic dataset directory")
    g.add_argument("kind", choices=["chain", "planted", "benchmark"])
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=400)
    g.add_argument("--blocks", type=int, default=4)
    g.add_argument("--p-in", dest="p_in", type=float, default=0.05)
    g.add_argument("--p-out", dest="p_out", type=float, default=0.002)
    g.add_argument("--noise", type=float, default=0.4)
    g.add_argument("--nodes", type=int, default=100_000)
    g.add_argument("--edges", type=int, default=500_000)
    g.add_argument("--features", type=int, default=100)
    g.add_argument("--labels", type=int, default=10)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one kernel over the standard folds")
    t.add_argument("--dataset", required=True)
    t.add_argument("--model", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None, help="JSON file with training-config keys")
    t.add_argument("--folds", type=int, default=5)
    t.add_argument("-C", "--hops", dest="hops", type=int, default=2)
    t.add_argument("--sample-caps", default=None, help="comma list, one cap per hop")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--workers", type=int, default=0)
    t.set_defaults(func=cmd_train)

    h = sub.add_parser("hopf", help="iterative rounds of train + infer + label feedback")
    h.add_argument("--dataset", required=True)
    h.add_argument("--model", required=True, help="i_nip_mean or ss_ica")
    h.add_argument("--out", required=True)
    h.add_argument("--config", default=None)
    h.add_argument("-C", type=int, default=2, help="differentiable hops per round")
    h.add_argument("-T", type=int, default=1, help="number of rounds")
    h.add_argument("--cold-start", action="store_true",
                   help="re-initialize weights each round instead of continuing")
    h.add_argument("--shifted-averaging", action="store_true",
                   help="weight fresh predictions by (T-t+1)/T instead of (T-t)/T")
    h.add_argument("--fold", type=int, default=0)
    h.add_argument("--seed", type=int, default=None)
    h.add_argument("--workers", type=int, default=0)
    h.set_defaults(func=cmd_hopf)

    b = sub.add_parser("bench-scaling", help="epoch-time scaling across total hops")
    b.add_argument("--hops", required=True, help="comma list of total hop counts K")
    b.add_argument("--variants", required=True,
                   help="comma list: nip_mean, i_nip_mean_c1, i_nip_mean_c2, ...")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out", required=True)
    b.add_argument("--dataset", default=None, help="reuse a generated benchmark bundle")
    b.add_argument("--nodes", type=int, default=100_000)
    b.add_argument("--edges", type=int, default=500_000)
    b.add_argument("--features", type=int, default=100)
    b.add_argument("--labels", type=int, default=10)
    b.add_argument("--batch-size", type=int, default=128)
    b.add_argument("--hidden-dim", type=int, default=128)
    b.add_argument("--memory-budget", type=float, default=4.0,
                   help="GiB allowed for per-batch activations/gradients; <=0 disables")
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--config", default=None)
    b.add_argument("--workers", type=int, default=0)
    b.set_defaults(func=cmd_bench_scaling)

    f = sub.add_parser("neighbor-fraction", help="micro-F1 vs neighbor sampling fraction")
    f.add_argument("--dataset", required=True)
    f.add_argument("--model", required=True)
    f.add_argument("--fractions", required=True, help="comma list in (0, 1]")
    f.add_argument("--out", required=True)
    f.add_argument("-C", "--hops", dest="hops", type=int, default=2)
    f.add_argument("--fold", type=int, default=0)
    f.add_argument("--config", default=None)
    f.add_argument("--seed", type=int, default=None)
    f.add_argument("--workers", type=int, default=0)
    f.set_defaults(func=cmd_neighbor_fraction)

    n = sub.add_parser("nim", help="self-information decay table")
    n.add_argument("--alpha", type=float, required=True)
    n.add_argument("--beta", type=float, required=True)
    n.add_argument("--max-k", type=int, default=10)
    n.add_argument("--skip", action="store_true", help="also tabulate the skip-connection decay")
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_nim)

    c = sub.add_parser("compare", help="shortfall and average-rank report from a scores CSV")
    c.add_argument("--scores", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return int(args.func(args) or 0)
    except (ConfigError, IngestError, ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training failed (epoch={exc.epoch}, batch={exc.batch}): {exc}", file=sys.stderr)
        return 1
    except HopfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
