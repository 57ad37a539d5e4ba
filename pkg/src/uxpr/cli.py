"""Command-line front end.

Subcommands cover the whole pipeline: simulate bags, decompose volumes,
unpack and extract per-bag segments, train/predict/evaluate classifiers,
repack verdict maps, flatten projections, or run everything end to end.

Every run writes a `run.json` provenance record (tool versions, resolved
config including defaulted seeds, timestamps) into its output directory,
written last so the data artifacts themselves are byte-identical across
reruns. Exit codes: 0 success, 1 usage, 2 bad input file, 3 violated
invariant.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bagsim import generate_phantom_pool, load_bag, load_pool, pack_bag, save_bag, save_pool
from .classify import (Dataset, ForestParams, NearestNeighbour, Prediction,
                       forest_train, load_model, load_predictions,
                       predict_records, save_model, save_predictions, train_ensemble)
from .evaluate import (leave_one_class_out_evaluate, lobo_evaluate,
                       save_report, save_roc_csv, save_summary_csv)
from .repack import (flatten2d, mip_projection, render_verdict_maps,
                     repack_vote, save_pgm, save_repack)
from .segments import (build_records, electrical_probability, extract_segments,
                       ground_truth_segments, load_segments, parse_task,
                       save_segments)
from .sieve import decompose as sieve_decompose
from .sieve import load_decomposition, save_decomposition
from .uxv import UxvError, load_volume
from .volume import InvariantError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; route through our own codes
    def error(self, message):
        raise UsageError(message)


def _parse_ints(text):
    try:
        return tuple(int(p) for p in str(text).split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _parse_dims(text):
    parts = _parse_ints(text)
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3 or any(d < 1 for d in parts):
        raise UsageError(f"dims must be one or three positive integers, got {text!r}")
    return parts


DEFAULT_SCALES = "8,64,512,4096,32768"


# ---------------------------------------------------------------------------
# Config resolution: flags beat config-file values beat per-command defaults.

def _resolve(args, defaults):
    cfg = {}
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise UxvError(path, 0, "config file not found") from None
        except json.JSONDecodeError as e:
            raise UxvError(path, e.pos, f"config is not valid JSON: {e.msg}") from None
        if not isinstance(cfg, dict):
            raise UxvError(path, 0, "config must be a JSON object")
    out = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = cfg.get(key, default)
        out[key] = value
    for key, value in out.items():
        if value is None and not key.endswith("_optional"):
            raise UsageError(f"missing required option --{key.replace('_', '-')}")
    return out


def _jobs(value):
    if value is None:
        value = os.environ.get("UXPR_JOBS", "1")
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"--jobs expects an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("--jobs must be >= 1")
    return n


def _int_opt(value, name):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise UsageError(f"--{name} expects an integer, got {value!r}") from None


def _pmap(fn, items, jobs):
    """Order-preserving map, across processes when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def _write_run(out_dir, subcommand, argv, config, started):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "tool": "uxpr",
        "version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "subcommand": subcommand,
        "argv": list(argv),
        "config": {k.removesuffix("_optional"): (list(v) if isinstance(v, tuple) else v)
                   for k, v in config.items()},
        "started": started,
        "finished": _now(),
    }
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _bag_dirs(root):
    root = Path(root)
    if not root.is_dir():
        raise UxvError(str(root), 0, "bag directory not found")
    if (root / "bags").is_dir() and not (root / "bag.json").exists():
        root = root / "bags"
    dirs = sorted(p for p in root.iterdir() if (p / "bag.json").is_file())
    if not dirs:
        raise UxvError(str(root), 0, "no bag directories found (need bag.json inside each)")
    return dirs


def _pool_dir(path):
    p = Path(path)
    return p.parent if p.is_file() else p


def _positive_classes(task):
    task = parse_task(task)
    return 1 if task.class_count == 2 else frozenset(range(1, task.class_count))


def _fit_factory(name, task, opts):
    task = parse_task(task)
    if name == "knn":
        return lambda ds: NearestNeighbour(ds)
    depth = opts.get("depth")
    params = ForestParams(
        tree_count=_int_opt(opts.get("trees") or 500, "trees"),
        features_per_split=_int_opt(opts.get("features") or 16, "features"),
        max_depth=None if depth is None else _int_opt(depth, "depth"),
        min_leaf=_int_opt(opts.get("min_leaf") or 1, "min-leaf"),
        seed=_int_opt(opts.get("seed") or 0, "seed"),
    )
    if name == "forest":
        return lambda ds: forest_train(ds, params)
    if name == "ensemble":
        folds = _int_opt(opts.get("folds") or 10, "folds")
        seed = _int_opt(opts.get("seed") or 0, "seed")
        members = [("knn", lambda d: NearestNeighbour(d)),
                   ("forest", lambda d: forest_train(d, params))]
        return lambda ds: train_ensemble(ds, members, fold_count=folds, seed=seed)
    raise UsageError(f"unknown classifier {name!r}, expected knn, forest or ensemble")


# ---------------------------------------------------------------------------
# Subcommands.

def _cmd_simulate(args, argv):
    started = _now()
    cfg = _resolve(args, {
        "out": None, "bags": 5, "seed": 0, "dims": "64", "objects": 20,
        "pool_optional": None, "pool_seed": 0,
    })
    out = Path(cfg["out"])
    dims = _parse_dims(cfg["dims"])
    if cfg["pool_optional"]:
        pool = load_pool(_pool_dir(cfg["pool_optional"]))
    else:
        pool = generate_phantom_pool(seed=int(cfg["pool_seed"]))
        save_pool(out / "pool", pool)
    for i in range(int(cfg["bags"])):
        bag = pack_bag(pool, seed=int(cfg["seed"]) + i,
                       object_count=int(cfg["objects"]), dims=dims)
        save_bag(out / "bags" / f"bag_{i:03d}", bag)
    cfg["dims"] = dims
    _write_run(out, "simulate", argv, cfg, started)
    print(f"wrote {cfg['bags']} bags under {out / 'bags'}")
    return 0


def _cmd_decompose(args, argv):
    started = _now()
    cfg = _resolve(args, {"input": None, "out": None,
                          "scales": DEFAULT_SCALES, "filter": "m"})
    v = load_volume(cfg["input"])
    scales = _parse_ints(cfg["scales"])
    d = sieve_decompose(v, scales, cfg["filter"])
    save_decomposition(cfg["out"], d)
    cfg["scales"] = scales
    _write_run(cfg["out"], "decompose", argv, cfg, started)
    print(f"decomposed {cfg['input']} at {len(scales)} scales into {cfg['out']}")
    return 0


def _unpack_one(job):
    bag_dir, scales, kind = job
    v = load_volume(str(Path(bag_dir) / "volume.uxv"))
    save_decomposition(str(Path(bag_dir) / "unpacked"), sieve_decompose(v, scales, kind))
    return Path(bag_dir).name


def _cmd_unpack(args, argv):
    started = _now()
    cfg = _resolve(args, {"bags": None, "scales": DEFAULT_SCALES,
                          "filter": "m", "jobs_optional": None})
    scales = _parse_ints(cfg["scales"])
    jobs = _jobs(cfg["jobs_optional"])
    dirs = _bag_dirs(cfg["bags"])
    names = _pmap(_unpack_one, [(str(p), scales, cfg["filter"]) for p in dirs], jobs)
    cfg["scales"] = scales
    cfg["jobs_optional"] = jobs
    _write_run(cfg["bags"], "unpack", argv, cfg, started)
    print(f"unpacked {len(names)} bags at {len(scales)} scales")
    return 0


def _extract_one(job):
    bag_dir, task, bounds_mode, use_gt, name = job
    bag_dir = Path(bag_dir)
    bag = load_bag(str(bag_dir))
    if use_gt:
        segs = ground_truth_segments(bag.volume, bag.labels, bag_id=bag_dir.name)
    else:
        d = load_decomposition(str(bag_dir / "unpacked"))
        segs = extract_segments(d, bounds_mode=bounds_mode, bag_id=bag_dir.name)
    records = build_records(segs, bag.labels, task)
    save_segments(str(bag_dir / name), records)
    return len(records)


def _cmd_extract(args, argv):
    started = _now()
    cfg = _resolve(args, {
        "bags": None, "task": "two_class", "bounds_mode": "bracketing",
        "ground_truth": False, "name_optional": None, "jobs_optional": None,
    })
    use_gt = bool(cfg["ground_truth"])
    name = cfg["name_optional"] or ("segments_gt.jsonl" if use_gt else "segments.jsonl")
    jobs = _jobs(cfg["jobs_optional"])
    dirs = _bag_dirs(cfg["bags"])
    counts = _pmap(_extract_one,
                   [(str(p), cfg["task"], cfg["bounds_mode"], use_gt, name) for p in dirs],
                   jobs)
    cfg["name_optional"] = name
    cfg["jobs_optional"] = jobs
    _write_run(cfg["bags"], "extract", argv, cfg, started)
    print(f"extracted {sum(counts)} segments across {len(dirs)} bags into {name}")
    return 0


def _gather_records(cfg):
    if cfg.get("segments_optional"):
        paths = [Path(p) for p in str(cfg["segments_optional"]).split(",")]
    else:
        name = cfg.get("name_optional") or "segments.jsonl"
        paths = [p / name for p in _bag_dirs(cfg["bags_optional"])]
    records = []
    for p in paths:
        if not p.is_file():
            raise UxvError(str(p), 0, "segment file not found")
        records.extend(load_segments(str(p)))
    if not records:
        raise UxvError(str(paths[0]), 0, "no segment records found")
    return records


def _cmd_train(args, argv):
    started = _now()
    cfg = _resolve(args, {
        "out": None, "classifier": "forest", "task": "two_class",
        "segments_optional": None, "bags_optional": None, "name_optional": None,
        "trees_optional": None, "features_optional": None, "depth_optional": None,
        "min_leaf_optional": None, "folds_optional": None, "seed": 0,
    })
    if not cfg["segments_optional"] and not cfg["bags_optional"]:
        raise UsageError("train needs --segments or --bags")
    task = parse_task(cfg["task"])
    records = _gather_records(cfg)
    ds = Dataset.from_records(records, task.class_count)
    fit = _fit_factory(cfg["classifier"], task, {
        "trees": cfg["trees_optional"], "features": cfg["features_optional"],
        "depth": cfg["depth_optional"], "min_leaf": cfg["min_leaf_optional"],
        "folds": cfg["folds_optional"], "seed": cfg["seed"],
    })
    model = fit(ds)
    save_model(cfg["out"], model)
    _write_run(Path(cfg["out"]).parent, "train", argv, cfg, started)
    print(f"trained {cfg['classifier']} on {len(records)} segments -> {cfg['out']}")
    return 0


def _cmd_predict(args, argv):
    started = _now()
    cfg = _resolve(args, {"model": None, "segments": None,
                          "out": None, "task": "two_class"})
    model = load_model(cfg["model"])
    records = load_segments(cfg["segments"])
    rows = predict_records(model, records, cfg["task"])
    save_predictions(cfg["out"], rows)
    _write_run(Path(cfg["out"]).parent, "predict", argv, cfg, started)
    print(f"predicted {len(rows)} segments -> {cfg['out']}")
    return 0


def _case_rows(cases, task):
    rows = []
    for c in cases:
        channel = int(c.segment_id.rsplit("/", 2)[1])
        rows.append({"segment_id": c.segment_id, "bag": c.bag_id, "channel": channel,
                     "pred": c.predicted,
                     "p_electrical": electrical_probability(c.probs, task)})
    return rows


def _save_eval(out, res, task):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_report(out / "report.json", res)
    save_summary_csv(out / "summary.csv", res)
    if res.roc_points is not None:
        save_roc_csv(out / "roc.csv", res.roc_points)
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    rows = _case_rows(res.cases, task)
    for bag in sorted({r["bag"] for r in rows}):
        save_predictions(pred_dir / f"{bag}.csv", [r for r in rows if r["bag"] == bag])
    return out


def _run_lobo(cfg, task):
    per_bag = []
    name = cfg["name_optional"] or "segments.jsonl"
    for p in _bag_dirs(cfg["bags"]):
        f = p / name
        if not f.is_file():
            raise UxvError(str(f), 0, "segment file not found (run extract first)")
        per_bag.append((p.name, load_segments(str(f))))
    fit = _fit_factory(cfg["classifier"], task, {
        "trees": cfg["trees_optional"], "features": cfg["features_optional"],
        "depth": cfg["depth_optional"], "min_leaf": cfg["min_leaf_optional"],
        "folds": cfg["folds_optional"], "seed": cfg["seed"],
    })
    meta = {"task": task.name, "classifier": cfg["classifier"], "seed": int(cfg["seed"])}
    return lobo_evaluate(per_bag, fit, task.class_count,
                         positive_classes=_positive_classes(task), meta=meta)


def _cmd_evaluate(args, argv):
    started = _now()
    cfg = _resolve(args, {
        "bags": None, "protocol": "lobo", "classifier": "knn", "task": "two_class",
        "name_optional": None, "out_optional": None, "seed": 0,
        "held_out_class_optional": None, "pool_optional": None,
        "test_bags": 3, "eval_dims": "64",
        "trees_optional": None, "features_optional": None, "depth_optional": None,
        "min_leaf_optional": None, "folds_optional": None,
    })
    task = parse_task(cfg["task"])
    if cfg["protocol"] == "lobo":
        res = _run_lobo(cfg, task)
    elif cfg["protocol"] == "loco":
        if not cfg["held_out_class_optional"] or not cfg["pool_optional"]:
            raise UsageError("protocol loco needs --held-out-class and --pool")
        name = cfg["name_optional"] or "segments.jsonl"
        per_bag = []
        for p in _bag_dirs(cfg["bags"]):
            f = p / name
            if not f.is_file():
                raise UxvError(str(f), 0, "segment file not found (run extract first)")
            per_bag.append((p.name, load_segments(str(f))))
        pool = load_pool(_pool_dir(cfg["pool_optional"]))
        fit = _fit_factory(cfg["classifier"], task, {
            "trees": cfg["trees_optional"], "features": cfg["features_optional"],
            "depth": cfg["depth_optional"], "min_leaf": cfg["min_leaf_optional"],
            "folds": cfg["folds_optional"], "seed": cfg["seed"],
        })
        res = leave_one_class_out_evaluate(
            per_bag, cfg["held_out_class_optional"], pool, fit, task,
            seed=int(cfg["seed"]), test_bag_count=int(cfg["test_bags"]),
            dims=_parse_dims(cfg["eval_dims"]),
            positive_classes=_positive_classes(task),
            meta={"classifier": cfg["classifier"], "task": task.name})
    else:
        raise UsageError(f"unknown protocol {cfg['protocol']!r}, expected lobo or loco")
    out = _save_eval(cfg["out_optional"] or Path(cfg["bags"]) / "report", res, task)
    cfg["out_optional"] = str(out)
    _write_run(out, "evaluate", argv, cfg, started)
    m = res.pooled
    auroc = "NA" if m.auroc is None else f"{m.auroc:.4f}"
    print(f"{cfg['protocol']} {cfg['classifier']}: n={m.count} accuracy={m.accuracy:.4f} "
          f"auroc={auroc} sensitivity={m.sensitivity} specificity={m.specificity}")
    return 0


def _repack_bag(bag_dir, rows, bounds_mode, out):
    """Join prediction rows onto freshly re-extracted segments by id."""
    bag_dir = Path(bag_dir)
    bag = load_bag(str(bag_dir))
    d = load_decomposition(str(bag_dir / "unpacked"))
    segs = extract_segments(d, bounds_mode=bounds_mode, bag_id=bag_dir.name)
    by_id = {}
    for row in rows:
        if row["bag"] != bag_dir.name:
            continue
        if row["segment_id"] in by_id:
            raise InvariantError(f"duplicate prediction for {row['segment_id']}")
        by_id[row["segment_id"]] = row
    pairs = []
    counters = {}
    for seg in segs:
        key = (seg.bag_id, seg.channel_index)
        k = counters.get(key, 0)
        counters[key] = k + 1
        seg_id = f"{seg.bag_id}/{seg.channel_index}/{k}"
        row = by_id.pop(seg_id, None)
        if row is None:
            raise InvariantError(f"no prediction for segment {seg_id}; "
                                 "extraction settings must match the prediction run")
        pred = int(row["pred"])
        probs = [0.0] * max(pred + 1, 2)
        probs[pred] = 1.0
        pairs.append((seg, Prediction(probs=tuple(probs))))
    if by_id:
        stale = next(iter(by_id))
        raise InvariantError(f"prediction {stale} matches no extracted segment")
    m = repack_vote(pairs, bag.volume.dims)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_repack(str(out / "verdict.uxv"), m)
    render_verdict_maps(str(out), bag.volume, m)
    return m


def _cmd_repack(args, argv):
    started = _now()
    cfg = _resolve(args, {"bag": None, "predictions": None,
                          "out_optional": None, "bounds_mode": "bracketing"})
    try:
        rows = load_predictions(cfg["predictions"])
    except ValueError as e:
        raise UxvError(cfg["predictions"], 0, str(e)) from None
    out = cfg["out_optional"] or str(Path(cfg["bag"]) / "repack")
    m = _repack_bag(cfg["bag"], rows, cfg["bounds_mode"], out)
    cfg["out_optional"] = str(out)
    _write_run(out, "repack", argv, cfg, started)
    print(f"verdict map -> {out} (likely fraction {m.fraction(2):.4f})")
    return 0


def _cmd_flatten(args, argv):
    started = _now()
    cfg = _resolve(args, {"input": None, "axis": "z",
                          "out_optional": None, "mip": False})
    src = Path(cfg["input"])
    if src.is_dir():
        src = src / "volume.uxv"
    v = load_volume(str(src))
    image = mip_projection(v, cfg["axis"]) if cfg["mip"] else flatten2d(v, cfg["axis"])
    kind = "mip" if cfg["mip"] else "flat"
    out = cfg["out_optional"] or str(src.parent / f"{kind}_{cfg['axis']}.pgm")
    save_pgm(out, image)
    cfg["out_optional"] = str(out)
    _write_run(Path(out).parent, "flatten", argv, cfg, started)
    print(f"{kind} projection -> {out}")
    return 0


def _cmd_pipeline(args, argv):
    started = _now()
    cfg = _resolve(args, {
        "bags": None, "task": "two_class", "classifier": "forest",
        "scales": DEFAULT_SCALES, "filter": "m", "bounds_mode": "bracketing",
        "axis": "z", "seed": 0, "out_optional": None, "jobs_optional": None,
        "trees_optional": None, "features_optional": None, "depth_optional": None,
        "min_leaf_optional": None, "folds_optional": None,
    })
    task = parse_task(cfg["task"])
    scales = _parse_ints(cfg["scales"])
    jobs = _jobs(cfg["jobs_optional"])
    dirs = _bag_dirs(cfg["bags"])
    _pmap(_unpack_one, [(str(p), scales, cfg["filter"]) for p in dirs], jobs)
    _pmap(_extract_one,
          [(str(p), task.name, cfg["bounds_mode"], False, "segments.jsonl") for p in dirs],
          jobs)
    cfg["name_optional"] = None
    res = _run_lobo(cfg, task)
    out = _save_eval(cfg["out_optional"] or Path(cfg["bags"]) / "report", res, task)
    rows = _case_rows(res.cases, task)
    for p in dirs:
        _repack_bag(str(p), rows, cfg["bounds_mode"], p / "repack")
        v = load_bag(str(p)).volume
        save_pgm(str(p / "repack" / f"flat_{cfg['axis']}.pgm"), flatten2d(v, cfg["axis"]))
    cfg.pop("name_optional")
    cfg.update(scales=scales, jobs_optional=jobs, out_optional=str(out))
    _write_run(out, "pipeline", argv, cfg, started)
    m = res.pooled
    auroc = "NA" if m.auroc is None else f"{m.auroc:.4f}"
    print(f"pipeline done: {len(dirs)} bags, accuracy={m.accuracy:.4f} auroc={auroc}, "
          f"report in {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser plumbing.

def _add_common(p):
    p.add_argument("--config", help="JSON file with option defaults")


def _build_parser():
    top = _Parser(prog="uxpr", description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="generate a phantom pool and packed bags")
    p.add_argument("--out")
    p.add_argument("--bags", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dims")
    p.add_argument("--objects", type=int)
    p.add_argument("--pool", dest="pool_optional", help="reuse an existing pool directory")
    p.add_argument("--pool-seed", type=int, dest="pool_seed")
    _add_common(p)

    p = sub.add_parser("decompose", help="sieve one volume into scale channels")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--scales")
    p.add_argument("--filter")
    _add_common(p)

    p = sub.add_parser("unpack", help="decompose every bag volume in place")
    p.add_argument("--bags")
    p.add_argument("--scales")
    p.add_argument("--filter")
    p.add_argument("--jobs", dest="jobs_optional")
    _add_common(p)

    p = sub.add_parser("extract", help="extract, histogram and auto-label segments")
    p.add_argument("--bags")
    p.add_argument("--task")
    p.add_argument("--bounds-mode", dest="bounds_mode")
    p.add_argument("--ground-truth", dest="ground_truth",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="use ground-truth object supports instead of sieve segments")
    p.add_argument("--name", dest="name_optional", help="segment file name per bag")
    p.add_argument("--jobs", dest="jobs_optional")
    _add_common(p)

    p = sub.add_parser("train", help="fit a classifier on segment records")
    p.add_argument("--segments", dest="segments_optional",
                   help="comma-separated segment JSONL files")
    p.add_argument("--bags", dest="bags_optional")
    p.add_argument("--name", dest="name_optional")
    p.add_argument("--classifier")
    p.add_argument("--task")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--trees", type=int, dest="trees_optional")
    p.add_argument("--features", type=int, dest="features_optional")
    p.add_argument("--depth", type=int, dest="depth_optional")
    p.add_argument("--min-leaf", type=int, dest="min_leaf_optional")
    p.add_argument("--folds", type=int, dest="folds_optional")
    _add_common(p)

    p = sub.add_parser("predict", help="score segment records with a saved model")
    p.add_argument("--model")
    p.add_argument("--segments")
    p.add_argument("--out")
    p.add_argument("--task")
    _add_common(p)

    p = sub.add_parser("evaluate", help="run a held-out protocol and write a report")
    p.add_argument("--bags")
    p.add_argument("--protocol")
    p.add_argument("--classifier")
    p.add_argument("--task")
    p.add_argument("--name", dest="name_optional")
    p.add_argument("--out", dest="out_optional")
    p.add_argument("--seed", type=int)
    p.add_argument("--held-out-class", dest="held_out_class_optional")
    p.add_argument("--pool", dest="pool_optional")
    p.add_argument("--test-bags", type=int, dest="test_bags")
    p.add_argument("--eval-dims", dest="eval_dims")
    p.add_argument("--trees", type=int, dest="trees_optional")
    p.add_argument("--features", type=int, dest="features_optional")
    p.add_argument("--depth", type=int, dest="depth_optional")
    p.add_argument("--min-leaf", type=int, dest="min_leaf_optional")
    p.add_argument("--folds", type=int, dest="folds_optional")
    _add_common(p)

    p = sub.add_parser("repack", help="fuse predictions into a per-voxel verdict map")
    p.add_argument("--bag")
    p.add_argument("--predictions")
    p.add_argument("--out", dest="out_optional")
    p.add_argument("--bounds-mode", dest="bounds_mode")
    _add_common(p)

    p = sub.add_parser("flatten", help="project a volume to a PGM image")
    p.add_argument("--in", dest="input")
    p.add_argument("--axis")
    p.add_argument("--out", dest="out_optional")
    p.add_argument("--mip", action=argparse.BooleanOptionalAction, default=None,
                   help="maximum intensity projection instead of a sum")
    _add_common(p)

    p = sub.add_parser("pipeline", help="unpack, extract, evaluate and repack a corpus")
    p.add_argument("--bags")
    p.add_argument("--task")
    p.add_argument("--classifier")
    p.add_argument("--scales")
    p.add_argument("--filter")
    p.add_argument("--bounds-mode", dest="bounds_mode")
    p.add_argument("--axis")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_optional")
    p.add_argument("--jobs", dest="jobs_optional")
    p.add_argument("--trees", type=int, dest="trees_optional")
    p.add_argument("--features", type=int, dest="features_optional")
    p.add_argument("--depth", type=int, dest="depth_optional")
    p.add_argument("--min-leaf", type=int, dest="min_leaf_optional")
    p.add_argument("--folds", type=int, dest="folds_optional")
    _add_common(p)

    return top


_COMMANDS = {
    "simulate": _cmd_simulate,
    "decompose": _cmd_decompose,
    "unpack": _cmd_unpack,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "repack": _cmd_repack,
    "flatten": _cmd_flatten,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.subcommand](args, argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return 1
    except UxvError as e:
        print(f"bad input file: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"bad input file: {e.filename or e}", file=sys.stderr)
        return 2
    except (InvariantError, ValueError) as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
