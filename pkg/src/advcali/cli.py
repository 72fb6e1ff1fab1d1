"""Command-line entry point: ``advcali {synth,calibrate,evaluate,crossval,diagnose}``.

Exit codes: 0 success, 2 usage, 3 invalid input, 4 numeric failure, 5 I/O.
Every command prints one JSON summary line on stdout and writes a
``manifest.json`` into its output directory.
"""

import argparse
import csv
import hashlib
import itertools
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .community import louvain, write_partition_csv
from .exceptions import DomainError, NumericError, ParseError, ShapeError, ValidationError
from .graph import (
    Graph,
    load_dataset,
    read_edges,
    read_masks,
    read_labels,
    read_logits,
    write_edges,
    write_labels,
    write_logits,
    write_masks,
    write_matrix,
)
from .metrics import evaluate, write_reliability_csv
from .models import save_checkpoint, softmax, ts_fit, vs_fit
from .synth import PlantRule, SbmSpec, build_instance
from .trainer import (
    VARIANTS,
    AdvCaliTrainer,
    ClassifierConfig,
    TrainConfig,
    TrainTrace,
    config_hash,
    cross_validate,
)

EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 2, 3, 4, 5
METHODS = ("uncal", "ts", "vs", "advcali")
METRICS = ("global", "degree", "class", "subgraph")


class UsageError(Exception):
    pass


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out, command, inputs, config, seed, started, outputs):
    manifest = {
        "command": command,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "config_hash": config_hash(config),
        "config": config,
        "seed": seed,
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{path}: no such file")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from None


def _dataset_paths(data):
    data = Path(data)
    return [data / "edges.tsv", data / "logits.csv", data / "labels.csv", data / "masks.json"]


def _load(data):
    paths = _dataset_paths(data)
    for p in paths:
        if not p.exists():
            raise UsageError(f"{p}: missing dataset file")
    return paths, load_dataset(*paths)


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ synth

SYNTH_KEYS = {"block_sizes", "p_in", "p_out", "seed", "feature_noise", "label_ratio", "base_ts",
              "classifier", "plant"}


def cmd_synth(args):
    started = time.perf_counter()
    cfg = _read_json(args.spec)
    if not isinstance(cfg, dict):
        raise ValueError("spec must be a JSON object")
    unknown = set(cfg) - SYNTH_KEYS
    if unknown:
        raise ValueError(f"unknown spec field(s): {', '.join(sorted(unknown))}")
    spec = SbmSpec(**{f.name: cfg[f.name] for f in fields(SbmSpec) if f.name in cfg})
    rule = PlantRule(**cfg["plant"]) if cfg.get("plant") else None
    clf = cfg.get("classifier")
    if clf is True:
        clf = {}
    clf_cfg = None
    if clf is not None and clf is not False:
        clf_cfg = ClassifierConfig(**{"seed": spec.seed, **clf})
    inst = build_instance(spec, rule, clf_cfg, cfg.get("label_ratio", 0.15), bool(cfg.get("base_ts", False)))

    out = _outdir(args.out)
    written = ["edges.tsv", "labels.csv", "masks.json", "features.cgm", "provenance.json"]
    write_edges(out / "edges.tsv", inst.graph)
    write_labels(out / "labels.csv", inst.labels)
    write_masks(out / "masks.json", inst.labeled_mask, inst.test_mask)
    write_matrix(out / "features.cgm", inst.features)
    if inst.logits is not None:
        write_logits(out / "logits.csv", inst.logits)
        written.append("logits.csv")
    if inst.planted_mask is not None:
        write_logits(out / "clean_logits.csv", inst.clean_logits)
        written.append("clean_logits.csv")
    provenance = {
        "sbm": spec.to_dict(),
        "plant": rule.to_dict() if rule else None,
        "classifier": None if clf_cfg is None else clf_cfg.__dict__,
        "label_ratio": cfg.get("label_ratio", 0.15),
        "base_temperature": inst.base_temperature,
        "planted_nodes": None if inst.planted_mask is None else [int(i) for i in np.flatnonzero(inst.planted_mask)],
    }
    (out / "provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "synth", [args.spec], cfg, spec.seed, started, written)
    return {"command": "synth", "out": str(out), "nodes": inst.graph.num_nodes, "edges": inst.graph.num_edges,
            "files": sorted(written)}


# ------------------------------------------------------------------ calibrate

def _train_config(args):
    cfg = _read_json(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    for key, val in (("lam", args.lam), ("n_groups", args.groups), ("epochs", args.epochs),
                     ("seed", args.seed), ("variant", args.variant)):
        if val is not None:
            cfg[key] = val
    return TrainConfig.from_dict(cfg)


def _write_temperatures(path, t):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "t"])
        for i, v in enumerate(t):
            w.writerow([i, repr(float(v))])


class _Holder:
    # adapts a plain dict of arrays to the checkpoint writer
    def __init__(self, params):
        from .autodiff import Tensor
        self.param_names = tuple(params)
        self.params = {k: Tensor(np.atleast_2d(v)) for k, v in params.items()}


def cmd_calibrate(args):
    started = time.perf_counter()
    if args.method != "advcali" and (args.variant or args.config):
        raise UsageError("--variant and --config apply to --method advcali only")
    inputs, (g, ds) = _load(args.data)
    out = _outdir(args.out)
    z = ds.logits
    written = ["probs.csv", "checkpoint.bin"]
    header = {"method": args.method, "num_nodes": ds.num_nodes, "num_classes": ds.num_classes}
    config = {"method": args.method}
    seed = None
    summary = {"command": "calibrate", "method": args.method}
    models = {}
    if args.method == "uncal":
        t = np.ones(ds.num_nodes)
        probs = softmax(z)
    elif args.method == "ts":
        temp = ts_fit(z, ds.labels, ds.labeled_mask)
        t = np.full(ds.num_nodes, temp)
        probs = softmax(z / temp)
        models["ts"] = _Holder({"T": np.array([[temp]])})
        summary["temperature"] = temp
    elif args.method == "vs":
        p = vs_fit(z, ds.labels, ds.labeled_mask)
        t = None
        probs = softmax(p.apply(z))
        models["vs"] = _Holder({"w": p.w, "b": p.b})
    else:
        cfg = _train_config(args)
        config.update(cfg.to_dict())
        seed = cfg.seed
        trainer = AdvCaliTrainer(g, ds, cfg)
        calibrator, detector, trace = trainer.run()
        t = calibrator.temperatures(trainer.adj, z)
        probs = softmax(z / t[:, None])
        models = {"calibrator": calibrator}
        if trainer.use_detector:
            models["detector"] = detector
        header["config"] = cfg.to_dict()
        trace.write_csv(out / "trace.csv")
        written.append("trace.csv")
        summary["final_objective"] = trace.records[-1].total
    if t is not None:
        _write_temperatures(out / "temperatures.csv", t)
        written.append("temperatures.csv")
    write_logits(out / "probs.csv", probs, tag="probs")
    save_checkpoint(out / "checkpoint.bin", header, models)
    _write_manifest(out, "calibrate", inputs, config, seed, started, written)
    summary.update(out=str(out), files=sorted(written))
    return summary


# ------------------------------------------------------------------ evaluate

def cmd_evaluate(args):
    started = time.perf_counter()
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    bad = [m for m in metrics if m not in METRICS]
    if bad or not metrics:
        raise UsageError(f"unknown metric(s) {bad}; choose from {','.join(METRICS)}")
    data = Path(args.data)
    paths = [data / "edges.tsv", data / "labels.csv", data / "masks.json"]
    for p in paths + [Path(args.probs)]:
        if not p.exists():
            raise UsageError(f"{p}: missing input file")
    probs = read_logits(args.probs, tag="probs")
    n_decl, src, dst, w = read_edges(paths[0])
    labels = read_labels(paths[1])
    n = labels.size if n_decl is None else n_decl
    if labels.size != n:
        raise ShapeError(f"labels have {labels.size} entries for a {n}-node graph")
    g = Graph.from_edges(n, src, dst, w)
    if probs.shape[0] != n:
        raise ShapeError(f"probabilities have {probs.shape[0]} rows for a {n}-node graph")
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise DomainError("probability rows must be nonnegative and sum to 1")
    if np.any(labels >= probs.shape[1]):
        raise ValidationError(f"labels outside [0, {probs.shape[1]})")
    labeled, test = read_masks(paths[2], n)
    eval_mask = {"test": test, "labeled": labeled}.get(args.split, np.ones(n, dtype=bool))
    out = _outdir(args.out)
    partition = None
    written = ["metrics.json", "reliability.csv"]
    if "subgraph" in metrics:
        partition = louvain(g, seed=args.seed)
        write_partition_csv(out / "partition.csv", partition)
        written.append("partition.csv")
    report = evaluate(probs, labels, eval_mask, g, partition, metrics, args.bins, args.fraction)
    payload = report.to_dict()
    payload = {k: v for k, v in payload.items() if k in ("bins", "population") or k.split("_")[0] in metrics}
    for key, val in payload.items():
        if key.endswith("_ece") and val is None:
            print(f"warning: {key} undefined (empty population); written as null", file=sys.stderr)
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    write_reliability_csv(out / "reliability.csv", report.bins)
    _write_manifest(out, "evaluate", [args.probs] + paths, {"metrics": list(metrics), "split": args.split,
                    "bins": args.bins, "fraction": args.fraction}, args.seed, started, written)
    summary = {"command": "evaluate", "out": str(out)}
    summary.update({k: v for k, v in payload.items() if k.endswith("_ece")})
    return summary


# ------------------------------------------------------------------ crossval

def _expand_grid(grid):
    """A list of config dicts, or a dict of value lists expanded as a product."""
    if isinstance(grid, dict):
        keys = sorted(grid)
        values = [grid[k] if isinstance(grid[k], list) else [grid[k]] for k in keys]
        return [dict(zip(keys, combo)) for combo in itertools.product(*values)]
    if isinstance(grid, list) and all(isinstance(c, dict) for c in grid):
        return grid
    raise ValueError("grid must be a list of objects or an object of lists")


def cmd_crossval(args):
    started = time.perf_counter()
    raw = _read_json(args.grid)
    grid = _expand_grid(raw)
    if not grid:
        raise UsageError("empty configuration grid")
    base = {"epochs": args.epochs} if args.epochs is not None else {}
    configs = [TrainConfig.from_dict({**base, **c}) for c in grid]
    inputs, (g, ds) = _load(args.data)
    out = _outdir(args.out)
    fold_log = out / "folds.jsonl"
    hashes = [config_hash(c.to_dict()) for c in configs]
    done = {}
    if fold_log.exists():
        for line in fold_log.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            # only reuse records whose config still sits at the same grid slot
            if rec["config"] < len(hashes) and rec["hash"] == hashes[rec["config"]]:
                done[(rec["config"], rec["fold"])] = rec["ece"]
    resumed = len(done)

    def on_fold(ci, f, val):
        with open(fold_log, "a") as fh:
            fh.write(json.dumps({"config": ci, "fold": f, "hash": hashes[ci], "ece": val}) + "\n")

    res = cross_validate(g, ds, configs, args.folds, args.seed, args.bins, done, on_fold)
    (out / "cv.json").write_text(json.dumps(res.to_dict(), indent=2) + "\n")
    _write_manifest(out, "crossval", inputs + [args.grid], {"grid": [c.to_dict() for c in configs],
                    "folds": args.folds}, args.seed, started, ["cv.json", "folds.jsonl"])
    return {"command": "crossval", "out": str(out), "configs": len(configs), "folds": args.folds,
            "resumed_folds": resumed, "selected": res.selected, "mean_ece": res.mean_ece[res.selected]}


# ------------------------------------------------------------------ diagnose

def cmd_diagnose(args):
    started = time.perf_counter()
    path = Path(args.trace)
    if not path.exists():
        raise UsageError(f"{path}: trace not found")
    trace = TrainTrace.read_csv(path)
    if not len(trace):
        raise ValueError(f"{path}: trace has no epochs")
    out = _outdir(args.out)
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "degree_std", "class0_std"])
        for r in trace.records:
            w.writerow([r.epoch, "" if r.degree_std is None else repr(r.degree_std),
                        "" if r.class0_std is None else repr(r.class0_std)])
    first, last = trace.records[0], trace.records[-1]
    summary = {
        "command": "diagnose",
        "epochs": len(trace),
        "degree_std_first": first.degree_std,
        "degree_std_last": last.degree_std,
        "class0_std_first": first.class0_std,
        "class0_std_last": last.class0_std,
        "degree_std_increased": (None if first.degree_std is None or last.degree_std is None
                                 else last.degree_std > first.degree_std),
    }
    (out / "diagnostics.json").write_text(json.dumps(summary, indent=2) + "\n")
    _write_manifest(out, "diagnose", [path], {}, None, started, ["diagnostics.csv", "diagnostics.json"])
    return summary


# ------------------------------------------------------------------ main

def build_parser():
    p = argparse.ArgumentParser(prog="advcali", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"advcali {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate an SBM dataset directory")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("calibrate", help="fit a calibrator on a dataset directory")
    c.add_argument("--data", required=True)
    c.add_argument("--method", required=True, choices=METHODS)
    c.add_argument("--variant", choices=VARIANTS)
    c.add_argument("--config", help="JSON object of training options")
    c.add_argument("--lam", type=float)
    c.add_argument("--groups", type=int)
    c.add_argument("--epochs", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="calibration metrics of a probability file")
    e.add_argument("--data", required=True)
    e.add_argument("--probs", required=True)
    e.add_argument("--metrics", default=",".join(METRICS))
    e.add_argument("--split", choices=("test", "labeled", "all"), default="test")
    e.add_argument("--bins", type=int, default=15)
    e.add_argument("--fraction", type=float, default=0.25)
    e.add_argument("--seed", type=int, default=0, help="Louvain seed")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("crossval", help="k-fold selection over a config grid")
    v.add_argument("--data", required=True)
    v.add_argument("--grid", required=True)
    v.add_argument("--folds", type=int, default=3)
    v.add_argument("--epochs", type=int)
    v.add_argument("--bins", type=int, default=15)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_crossval)

    d = sub.add_parser("diagnose", help="group-detector diagnostics from a trace")
    d.add_argument("--trace", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        summary = args.func(args)
    except UsageError as e:
        print(f"advcali: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"advcali: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError) as e:
        print(f"advcali: invalid input: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"advcali: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
