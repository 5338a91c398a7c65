"""Command-line entry point: ``eqgnn <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import fields, replace

import numpy as np

from . import two_sample as ts
from .classifier import ClassifierShape, init_classifier, predict_proba
from .graph_data import (DatasetError, k_hop_nodes, load_manifest, make_biased_graph, save_dataset,
                         write_manifest)
from .gradsuite import COMPONENTS, run_suite
from .metrics import TABLE_HEADER, MetricsReport, average_reports, evaluate
from .optim import load_checkpoint, save_checkpoint
from .rng import deterministic
from .trainer import TrainConfig, TrainResult, config_dict, grid_search, prepare, run_many

log = logging.getLogger("eqgnn")

RATIOS = (0.5, 0.25, 0.25)
# manifest "train" keys that differ from the TrainConfig field names
_ALIASES = {"lambda": "lam", "loss-variant": "loss_variant", "weight-decay": "weight_decay"}


class CliError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def parse_seeds(text: str) -> list[int]:
    """``"40"`` means seeds 0..39, ``"3,7"`` an explicit list, ``"5-9"`` a range."""
    text = text.strip()
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        elif "-" in text[1:]:
            lo, hi = text.split("-", 1)
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = list(range(int(text)))
    except ValueError:
        raise CliError(f"cannot parse seed list {text!r}") from None
    if not seeds:
        raise CliError("the seed list is empty")
    return seeds


def parse_floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"cannot parse number list {text!r}") from None
    if not vals:
        raise CliError("empty number list")
    return vals


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class Staging:
    """Collect outputs in a scratch directory and publish them only on success."""

    def __init__(self, out_dir: str):
        self.out_dir = os.path.abspath(out_dir)
        parent = os.path.dirname(self.out_dir)
        os.makedirs(parent, exist_ok=True)
        if not os.access(parent, os.W_OK):
            raise CliError(f"output location {parent} is not writable")
        self.tmp = tempfile.mkdtemp(prefix=".eqgnn-", dir=parent)
        self.files: list[str] = []

    def path(self, rel: str) -> str:
        full = os.path.join(self.tmp, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.files.append(rel)
        return full

    def write_text(self, rel: str, text: str) -> None:
        with open(self.path(rel), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)

    def commit(self) -> None:
        for rel in self.files:
            dst = os.path.join(self.out_dir, rel)
            os.makedirs(os.path.dirname(dst), exist_ok=True)
            os.replace(os.path.join(self.tmp, rel), dst)
        self.discard()

    def discard(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            self.commit()
        else:
            self.discard()


def _load(path: str):
    if not path:
        raise CliError("a dataset manifest is required (--manifest)")
    try:
        return load_manifest(path)
    except FileNotFoundError as e:
        raise CliError(f"cannot read {e.filename}") from None


def build_config(args, manifest: dict) -> TrainConfig:
    """CLI flags override the manifest's ``train`` section, which overrides defaults."""
    known = {f.name for f in fields(TrainConfig)}
    values = {}
    for key, val in (manifest.get("train") or {}).items():
        name = _ALIASES.get(key, key)
        if name not in known:
            raise CliError(f"manifest train section has unknown key {key!r}")
        values[name] = val
    flags = {"lam": args.lam, "gamma": args.gamma, "lr": args.lr, "weight_decay": args.weight_decay,
             "patience": args.patience, "max_epochs": args.max_epochs,
             "loss_variant": args.loss_variant, "disc_hidden": args.disc_hidden,
             "smoothing": args.smoothing, "dropout": args.dropout,
             "standardize": args.standardize, "deterministic": args.deterministic}
    if args.hidden is not None:
        flags["hidden"] = args.hidden
    values.update({k: v for k, v in flags.items() if v is not None})
    if "hidden" in values:
        values["hidden"] = tuple(int(h) for h in values["hidden"])
        if len(values["hidden"]) != 2:
            raise CliError("--hidden takes two layer widths, e.g. 64,64")
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as e:
        raise CliError(str(e)) from None


def checkpoint_meta(result: TrainResult, dataset) -> dict:
    cfg = result.config
    return {
        "config": config_dict(cfg), "split_seed": cfg.seed, "split_ratios": list(RATIOS),
        "standardize": cfg.standardize, "hidden": list(cfg.hidden),
        "in_dim": dataset.feature_dim, "class_count": dataset.class_count,
        "node_count": dataset.node_count, "best_epoch": result.best_epoch,
    }


def _fmt_row(summary: dict) -> str:
    return "  ".join(f"{100 * summary[k][0]:6.2f} ± {100 * summary[k][1]:5.2f}" for k in TABLE_HEADER)


def _header() -> str:
    return "  ".join(f"{k:>15s}" for k in TABLE_HEADER)


def _summary_json(reports: list[MetricsReport], seeds: list[int], extra: dict) -> str:
    summary = average_reports(reports)
    doc = {**extra, "seeds": seeds, "runs": len(reports),
           "mean": {k: v[0] for k, v in summary.items()},
           "se": {k: v[1] for k, v in summary.items()}}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


# ----------------------------------------------------------------- commands

def cmd_train(args) -> int:
    dataset, manifest = _load(args.manifest)
    base = build_config(args, manifest)
    seeds = parse_seeds(args.seeds)
    configs = [replace(base, seed=s) for s in seeds]
    results = run_many(dataset, configs, args.workers, RATIOS)
    reports = [r.test_metrics for r in results]
    with Staging(args.out) as stage:
        for res in results:
            d = f"seed_{res.config.seed}"
            stage.write_text(f"{d}/history.csv", res.history_csv())
            stage.write_text(f"{d}/metrics.json", res.test_metrics.to_json() + "\n")
            save_checkpoint(stage.path(f"{d}/checkpoint.npz"), res.best_state,
                            checkpoint_meta(res, dataset))
        stage.write_text("summary.json", _summary_json(reports, seeds, {"config": config_dict(base)}))
        summary = average_reports(reports)
        stage.write_text("summary.csv", _csv_text(
            ["lambda", "gamma", "loss_variant", "runs", *TABLE_HEADER, *(f"{k}_se" for k in TABLE_HEADER)],
            [[base.lam, base.gamma, base.loss_variant, len(reports),
              *(summary[k][0] for k in TABLE_HEADER), *(summary[k][1] for k in TABLE_HEADER)]]))
    print(f"{'model':>24s}  {_header()}")
    label = "GCN" if base.lam == 0 else f"{base.loss_variant} λ={base.lam:g} γ={base.gamma:g}"
    print(f"{label:>24s}  {_fmt_row(summary)}")
    return 0


def cmd_grid(args) -> int:
    dataset, manifest = _load(args.manifest)
    base = build_config(args, manifest)
    seeds = parse_seeds(args.seeds)
    lams, gams = parse_floats(args.lambda_grid), parse_floats(args.gamma_grid)
    rows = grid_search(dataset, seeds, lams, gams, base, args.workers, RATIOS)
    header = ["lambda", "gamma", "runs", *TABLE_HEADER, *(f"{k}_se" for k in TABLE_HEADER)]
    with Staging(args.out) as stage:
        stage.write_text("grid.csv", _csv_text(header, [[r[h] for h in header] for r in rows]))
        stage.write_text("grid.json", json.dumps(
            {"config": config_dict(base), "seeds": seeds, "rows": rows}, sort_keys=True, indent=2) + "\n")
    print(f"{'lambda':>8s} {'gamma':>8s}  {_header()}")
    for r in rows:
        print(f"{r['lambda']:8g} {r['gamma']:8g}  "
              + _fmt_row({k: (r[k], r[f'{k}_se']) for k in TABLE_HEADER}))
    return 0


def _restore(checkpoint: str, dataset):
    """Rebuild the trained classifier and the exact feature preprocessing it saw."""
    try:
        state, meta = load_checkpoint(checkpoint)
    except FileNotFoundError:
        raise CliError(f"cannot read checkpoint {checkpoint}") from None
    if meta.get("node_count") != dataset.node_count or meta.get("in_dim") != dataset.feature_dim:
        raise CliError(f"{checkpoint} was trained on a different dataset "
                       f"({meta.get('node_count')} nodes, {meta.get('in_dim')} features)")
    prepared, split = prepare(dataset, int(meta["split_seed"]), bool(meta["standardize"]),
                              tuple(meta.get("split_ratios", RATIOS)))
    shape = ClassifierShape(dataset.feature_dim, dataset.class_count, *meta["hidden"])
    params = init_classifier(shape, np.random.default_rng(0))
    params.load_state_dict(state)
    return params, prepared, split, meta


def cmd_eval(args) -> int:
    dataset, _ = _load(args.manifest)
    with deterministic(args.deterministic is not False):
        params, prepared, split, _ = _restore(args.checkpoint, dataset)
        pred = np.argmax(predict_proba(params, prepared), axis=1)
    idx = {"train": split.train_idx, "val": split.val_idx, "test": split.test_idx,
           "all": np.arange(dataset.node_count)}[args.subset]
    report = evaluate(pred[idx], dataset.labels[idx], dataset.sensitive[idx], dataset.class_count)
    text = report.to_json() + "\n"
    if args.out:
        with Staging(os.path.dirname(os.path.abspath(args.out))) as stage:
            stage.write_text(os.path.basename(args.out), text)
    print(_header())
    print("  ".join(f"{v:15.2f}" for v in report.table_row()))
    return 0


def cmd_synth(args) -> int:
    if args.n < 2:
        raise CliError("--n must be at least 2")
    gens = {"Identical": ts.gen_identical} if args.identical else ts.DATASETS
    with deterministic(args.deterministic is not False):
        table = ts.p_value_table(n_pairs=2 * args.n, runs=args.runs, seed=args.seed,
                                 epochs=args.epochs, generators=gens)
    cols = list(gens)
    text = _csv_text(["test", *cols], [[name, *(repr(table[name][c]) for c in cols)] for name in ts.TESTS])
    if args.out:
        with Staging(os.path.dirname(os.path.abspath(args.out))) as stage:
            stage.write_text(os.path.basename(args.out), text)
    sys.stdout.write(text)
    if args.identical:
        print("note: identical pairs leave zero paired differences; that test reports p = 1 "
              "with a zero-variance flag", file=sys.stderr)
    return 0


def neighbourhood_report(dataset, node: int, hops: int = 2) -> dict:
    hood = k_hop_nodes(dataset.adjacency, node, hops)
    others = hood[hood != node]
    a, y = dataset.sensitive, dataset.labels
    return {
        "node_id": dataset.node_ids[node] if dataset.node_ids else str(node),
        "label": int(y[node]), "sensitive": int(a[node]),
        "neighbourhood_size": int(hood.size),
        "same_sensitive_fraction": float(np.mean(a[others] == a[node])) if others.size else None,
        "sensitive_counts": {str(v): int(np.sum(a[others] == v)) for v in (0, 1)},
        "label_counts": {str(c): int(np.sum(y[others] == c)) for c in range(dataset.class_count)},
    }


def cmd_inspect_node(args) -> int:
    dataset, _ = _load(args.manifest)
    try:
        node = dataset.index_of(args.node)
    except DatasetError as e:
        raise CliError(str(e)) from None
    report = neighbourhood_report(dataset, node, args.hops)
    report["probabilities"] = {}
    with deterministic(args.deterministic is not False):
        for ck in args.checkpoint:
            params, prepared, _, meta = _restore(ck, dataset)
            probs = predict_proba(params, prepared)[node]
            report["probabilities"][ck] = {"lambda": meta["config"]["lam"], "p": probs.tolist()}
    if args.json:
        print(json.dumps(report, sort_keys=True, indent=2))
        return 0
    print(f"node {report['node_id']}: label {report['label']}, sensitive {report['sensitive']}")
    print(f"{args.hops}-hop neighbourhood: {report['neighbourhood_size']} nodes (itself included)")
    if report["same_sensitive_fraction"] is None:
        print("  no neighbours")
    else:
        print(f"  share the node's sensitive value: {100 * report['same_sensitive_fraction']:.1f}%")
        print(f"  sensitive counts: {report['sensitive_counts']}")
        print(f"  label counts:     {report['label_counts']}")
    for ck, entry in report["probabilities"].items():
        vec = " ".join(f"{p:.4f}" for p in entry["p"])
        print(f"  λ={entry['lambda']:g} [{ck}]: {vec}")
    return 0


def cmd_gradcheck(args) -> int:
    comps = args.component or None
    if comps:
        unknown = [c for c in comps if c not in COMPONENTS]
        if unknown:
            raise CliError(f"unknown component(s) {unknown}; choose from {sorted(COMPONENTS)}")
    with deterministic(args.deterministic is not False):
        results = run_suite(args.trials, args.seed, args.tolerance, args.max_nodes, comps)
    rows = [[name, r.trials, r.failures, f"{r.worst:.3e}", r.kinks] for name, r in results.items()]
    text = _csv_text(["component", "checks", "failures", "max_rel_error", "skipped_kinks"], rows)
    if args.out:
        with Staging(os.path.dirname(os.path.abspath(args.out))) as stage:
            stage.write_text(os.path.basename(args.out), text)
    sys.stdout.write(text)
    bad = [name for name, r in results.items() if r.failures]
    if bad:
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def cmd_make_toy(args) -> int:
    ds = make_biased_graph(n=args.nodes, n_features=args.features, class_count=args.classes,
                           seed=args.seed, bias=args.bias)
    with Staging(args.out) as stage:
        schema = save_dataset(ds, stage.path("nodes.csv"), stage.path("edges.txt"))
        write_manifest(stage.path("manifest.json"), "nodes.csv", "edges.txt", schema)
    print(os.path.join(os.path.abspath(args.out), "manifest.json"))
    return 0


# ------------------------------------------------------------------- parser

def _hidden(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", default="1", help="count N (seeds 0..N-1), list a,b,c or range lo-hi")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--loss-variant", choices=["permutation", "permutation_no_h", "unpaired",
                                              "paired", "debias", "sp"])
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--hidden", type=_hidden, help="two classifier widths, e.g. 64,64")
    p.add_argument("--disc-hidden", type=int)
    p.add_argument("--smoothing", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eqgnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                        help="single-threaded BLAS for reproducible output (default on)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train over one or more seeds")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", parents=[common], help="lambda x gamma sweep")
    _add_train_flags(p)
    p.add_argument("--lambda-grid", default="0,0.01,0.1,1,10")
    p.add_argument("--gamma-grid", default="50")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", parents=[common], help="score a saved checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--out", help="metrics JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="p-value table on Shift and Rotation pairs")
    p.add_argument("--n", type=int, default=10000, help="pairs per half (train and test)")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identical", action="store_true", help="null diagnostic with X2 == X1")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect-node", parents=[common], help="neighbourhood and predictions for one node")
    p.add_argument("--manifest", required=True)
    p.add_argument("--node", required=True, help="node id as in the nodes file")
    p.add_argument("--checkpoint", action="append", default=[], help="repeat to compare models")
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect_node)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-nodes", type=int, default=20)
    p.add_argument("--component", action="append", help="restrict to a component (repeatable)")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-toy", help="write a small synthetic biased graph and its manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", type=int, default=400)
    p.add_argument("--features", type=int, default=16)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--bias", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, DatasetError, ValueError, OSError) as e:
        print(f"eqgnn {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
