"""Command line entry point: `gcontrast train|attack|eval|diagnose`.

One process per subcommand, no shared state. All randomness flows from a
single seed (config `seed` key, overridable with --seed-override);
subcommands derive their streams through fixed role labels so each
report is independently reproducible.

Exit codes: 0 success, 2 usage error (bad flags, mode/bundle mismatch,
config parse failure), 1 runtime error (unreadable or malformed inputs,
numeric failures).
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from .attack import compute_gradients, structural_perturb
from .diagnostics import (eq4_decomposition_check, gradient_scatter,
                          write_eq4_residuals, write_scatter)
from .evaluate import (EvalReport, degree_bucket_accuracy, kmeans_nmi,
                       linear_probe, link_prediction_auc, ol_score)
from .graph import SparseGraph, load_graph_bundle, random_attack, save_graph_bundle
from .model import encode_graph, load_model, save_model
from .train import (TrainConfig, export_embeddings, load_config,
                    read_embeddings, rng_for, train)

EVAL_TASKS = ("classify", "degree", "link", "cluster", "ol")


class UsageError(Exception):
    pass


def _load_config(args):
    if getattr(args, "config", None):
        try:
            return load_config(args.config)
        except ValueError as exc:
            raise UsageError(str(exc))
    return TrainConfig()


def _seed(args, config):
    if args.seed_override is not None:
        return args.seed_override
    return config.seed


def cmd_train(args):
    config = _load_config(args)
    seed = _seed(args, config)
    config.seed = seed
    if args.mode in ("poisoning", "evasive") and not args.attacked_bundle:
        raise UsageError("mode %s requires --attacked-bundle" % args.mode)

    clean = load_graph_bundle(args.bundle)
    attacked = load_graph_bundle(args.attacked_bundle) if args.attacked_bundle else None

    train_graph = attacked if args.mode == "poisoning" else clean
    report = train(train_graph, config)
    if args.mode == "evasive":
        # parameters come from the clean graph; only the export-time
        # encoding sees the perturbations
        embeddings = encode_graph(report.encoder, attacked)
    else:
        embeddings = report.embeddings

    os.makedirs(args.out, exist_ok=True)
    export_embeddings(embeddings, os.path.join(args.out, "embeddings.tsv"))
    save_model(os.path.join(args.out, "model.npz"), report.encoder, report.projection)
    summary = {
        "mode": args.mode,
        "epochs": config.epochs,
        "wall_time": report.wall_time,
        "trace": [
            {"l_aug": t.l_aug, "l_adv": t.l_adv, "l_sp": t.l_sp, "total": t.total}
            for t in report.trace
        ],
    }
    with open(os.path.join(args.out, "train_report.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def cmd_attack(args):
    if args.ratio < 0:
        raise UsageError("--ratio must be >= 0")
    config = _load_config(args)
    seed = _seed(args, config)
    graph = load_graph_bundle(args.bundle)

    if args.method == "random":
        view = random_attack(graph, args.ratio, rng_for(seed, "attack"))
        new_adj = view.adjacency
    else:
        if not args.model:
            raise UsageError("gradient attack requires --model")
        enc, proj = load_model(args.model)
        view = graph.as_view()
        pair = compute_gradients(enc, proj, view, view, config.tau,
                                 max_dense_n=config.dense_attack_limit)
        count = math.ceil(args.ratio * graph.num_edges)
        new_adj = structural_perturb(pair.G_A, graph.adjacency, count)

    out_graph = SparseGraph(graph.n, new_adj, graph.features, graph.labels,
                            graph.split)
    save_graph_bundle(out_graph, args.out)
    return 0


def _parse_tasks(raw):
    tasks = [t for t in raw.split(",") if t]
    for t in tasks:
        if t not in EVAL_TASKS:
            raise UsageError("unknown eval task %r (choose from %s)"
                             % (t, ", ".join(EVAL_TASKS)))
    return tasks


def cmd_eval(args):
    tasks = _parse_tasks(args.tasks)
    config = _load_config(args)
    seed = _seed(args, config)
    graph = load_graph_bundle(args.bundle)
    Z = read_embeddings(args.embeddings)
    if Z.shape[0] != graph.n:
        raise ValueError(
            "embeddings cover %d nodes but bundle has %d" % (Z.shape[0], graph.n))

    report = EvalReport(metadata={
        "n": graph.n,
        "dim": int(Z.shape[1]),
        "tasks": sorted(tasks),
        "seed": int(seed),
    })

    probe = None
    if "classify" in tasks or "degree" in tasks:
        if graph.labels is None:
            raise ValueError("classify/degree need labels.tsv in the bundle")
        if graph.split is None:
            raise ValueError("classify/degree need splits.tsv in the bundle")
        probe_seeds = [int(s) for s in
                       rng_for(seed, "probe").integers(0, 2**31 - 1, size=5)]
        probe = linear_probe(Z, graph.labels, graph.split, probe_seeds)
    if "classify" in tasks:
        report.accuracy_mean = probe.mean
        report.accuracy_std = probe.std
    if "degree" in tasks:
        report.degree_buckets = degree_bucket_accuracy(
            probe, graph.labels, graph.adjacency,
            thresholds=(args.degree_threshold,))
    if "link" in tasks:
        report.auc = link_prediction_auc(Z, graph.adjacency, args.holdout,
                                         rng_for(seed, "eval", 1))
    if "cluster" in tasks:
        if graph.labels is None:
            raise ValueError("cluster needs labels.tsv in the bundle")
        num_classes = int(graph.labels.max()) + 1
        report.nmi = kmeans_nmi(Z, graph.labels, num_classes,
                                rng=rng_for(seed, "eval", 2))
    if "ol" in tasks:
        ks = [int(t) for t in args.ol_k.split(",") if t]
        report.ol = {str(k): ol_score(Z, graph.features, k) for k in ks}

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    return 0


def cmd_diagnose(args):
    config = _load_config(args)
    seed = _seed(args, config)
    graph = load_graph_bundle(args.bundle)
    enc, proj = load_model(args.model)
    os.makedirs(args.out, exist_ok=True)

    records = gradient_scatter(graph, enc, proj, config, args.sample_size,
                               rng_for(seed, "scatter", 0))
    write_scatter(records, os.path.join(args.out, "scatter.tsv"))

    rng = rng_for(seed, "scatter", 1)
    deg = graph.degrees()
    eligible = np.flatnonzero(deg >= 1)
    if eligible.size == 0:
        raise ValueError("no node with degree >= 1; cannot run the "
                         "decomposition check")
    w = rng.standard_normal((config.out_dim, graph.num_features))
    rows = []
    for _ in range(20):
        for _attempt in range(1000):
            i = int(rng.choice(eligible))
            k = int(rng.integers(0, graph.n))
            if k != i and graph.adjacency[i, k] == 0:
                break
        else:
            raise RuntimeError("could not sample a non-neighbor pair")
        rows.append((i, k, deg[i], eq4_decomposition_check(graph, w, i, k)))
    write_eq4_residuals(rows, os.path.join(args.out, "eq4_residuals.tsv"))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gcontrast",
        description="Contrastive node embeddings with similarity-preserving "
                    "and adversarial views.")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and export embeddings")
    t.add_argument("--bundle", required=True, help="clean graph bundle directory")
    t.add_argument("--attacked-bundle", help="perturbed bundle for poisoning/evasive")
    t.add_argument("--mode", choices=("clean", "poisoning", "evasive"),
                   default="clean")
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--out", required=True)
    t.add_argument("--seed-override", type=int)

    a = sub.add_parser("attack", help="write a perturbed copy of a bundle")
    a.add_argument("--bundle", required=True)
    a.add_argument("--method", choices=("random", "gradient"), required=True)
    a.add_argument("--ratio", type=float, required=True,
                   help="perturbation budget as a fraction of |E|")
    a.add_argument("--model", help="model.npz (required for gradient method)")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--seed-override", type=int)

    e = sub.add_parser("eval", help="score an embeddings file against a bundle")
    e.add_argument("--bundle", required=True,
                   help="bundle the embeddings are evaluated against")
    e.add_argument("--embeddings", required=True)
    e.add_argument("--tasks", default="classify",
                   help="comma list from: %s (empty for metadata only)"
                        % ",".join(EVAL_TASKS))
    e.add_argument("--ol-k", default="10", help="comma list of k for the ol task")
    e.add_argument("--holdout", type=float, default=0.1)
    e.add_argument("--degree-threshold", type=float, default=2.0)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--seed-override", type=int)

    d = sub.add_parser("diagnose", help="gradient scatter and decomposition residuals")
    d.add_argument("--bundle", required=True)
    d.add_argument("--model", required=True)
    d.add_argument("--config")
    d.add_argument("--out", required=True)
    d.add_argument("--sample-size", type=int, default=1000)
    d.add_argument("--seed-override", type=int)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    handlers = {
        "train": cmd_train,
        "attack": cmd_attack,
        "eval": cmd_eval,
        "diagnose": cmd_diagnose,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
