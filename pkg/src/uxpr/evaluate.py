"""Evaluation protocols and metrics: held-out-bag folds, held-out-device-class
runs, a degraded 2D comparison path, and the usual rates.

AUROC is the Mann-Whitney statistic on the positive-class probability
(ties count half) and must agree with the trapezoid area under our own
ROC curve; that identity doubles as an internal consistency check. NLL
uses log base 2 with probabilities floored at 2^-10; both conventions
ride along in report metadata.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .bagsim import pack_bag
from .classify import Dataset
from .repack import flatten2d, image_volume, parse_axis
from .segments import build_records, ground_truth_segments, parse_task
from .volume import LabelVolume, Volume

NLL_FLOOR = 2.0 ** -10
NLL_LOG_BASE = 2

# non-electrical instances per electrical one in the corpus this protocol
# mirrors; held-out-class test bags reproduce the imbalance
DEFAULT_IMBALANCE = 543 / 81

REPORT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CaseRecord:
    """One test prediction: who was asked, the truth, and the probabilities."""

    segment_id: str
    bag_id: str
    true_class: int
    probs: tuple

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.probs))


@dataclass(frozen=True)
class Metrics:
    count: int
    accuracy: float
    error_count: int
    sensitivity: float | None
    specificity: float | None
    auroc: float | None
    nll: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_doc(self):
        return {
            "count": self.count, "accuracy": self.accuracy, "error_count": self.error_count,
            "sensitivity": self.sensitivity, "specificity": self.specificity,
            "auroc": self.auroc, "nll": self.nll,
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
        }


def _positive_set(positive_classes):
    if isinstance(positive_classes, int):
        return frozenset((positive_classes,))
    s = frozenset(int(c) for c in positive_classes)
    if not s:
        raise ValueError("need at least one positive class")
    return s


def positive_probability(case: CaseRecord, positive_classes) -> float:
    pos = _positive_set(positive_classes)
    return float(sum(case.probs[c] for c in pos if c < len(case.probs)))


def mann_whitney_auroc(scores, is_positive) -> float:
    """Probability a random positive outscores a random negative, ties half."""
    scores = np.asarray(scores, dtype=float)
    is_positive = np.asarray(is_positive, dtype=bool)
    n_pos = int(is_positive.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=float)
    i = 0
    while i < scores.size:
        j = i
        while j < scores.size and scores[order[j]] == scores[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # average of 1-based ranks
        i = j
    u = ranks[is_positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metrics(records, positive_classes=1) -> Metrics:
    """Pooled rates over case records; AUROC reported as None when it is
    undefined: a class missing, or every probability already 0/1."""
    records = list(records)
    if not records:
        raise ValueError("no records to score")
    pos = _positive_set(positive_classes)
    correct = sum(r.predicted == r.true_class for r in records)
    tp = fp = tn = fn = 0
    for r in records:
        truth = r.true_class in pos
        called = r.predicted in pos
        if truth and called:
            tp += 1
        elif truth:
            fn += 1
        elif called:
            fp += 1
        else:
            tn += 1
    p_pos = [positive_probability(r, pos) for r in records]
    truth = [r.true_class in pos for r in records]
    degenerate = all(p in (0.0, 1.0) for p in p_pos)
    if tp + fn == 0 or tn + fp == 0 or degenerate:
        auroc = None
    else:
        auroc = mann_whitney_auroc(p_pos, truth)
    nll = 0.0
    for r in records:
        p_true = r.probs[r.true_class] if r.true_class < len(r.probs) else 0.0
        nll -= math.log2(max(p_true, NLL_FLOOR))
    return Metrics(
        count=len(records),
        accuracy=correct / len(records),
        error_count=len(records) - correct,
        sensitivity=tp / (tp + fn) if tp + fn else None,
        specificity=tn / (tn + fp) if tn + fp else None,
        auroc=auroc,
        nll=nll,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def roc_curve(records, positive_classes=1) -> list:
    """(FPR, TPR) swept over every distinct score, (0,0) and (1,1) included."""
    records = list(records)
    pos = _positive_set(positive_classes)
    scores = np.array([positive_probability(r, pos) for r in records])
    truth = np.array([r.true_class in pos for r in records])
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < order.size:
        j = i
        while j < order.size and scores[order[j]] == scores[order[i]]:
            if truth[order[j]]:
                tp += 1
            else:
                fp += 1
            j += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return points


def trapezoid_area(points) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


# ---------------------------------------------------------------------------
# Protocols.

@dataclass(frozen=True)
class EvalResult:
    cases: tuple
    pooled: Metrics
    per_bag: dict
    roc_points: tuple | None
    meta: dict


def _finish(cases, positive_classes, meta) -> EvalResult:
    pooled = compute_metrics(cases, positive_classes)
    per_bag = {}
    for bag in sorted({c.bag_id for c in cases}):
        per_bag[bag] = compute_metrics([c for c in cases if c.bag_id == bag],
                                       positive_classes)
    try:
        roc = tuple(roc_curve(cases, positive_classes))
    except ValueError:
        roc = None
    meta = dict(meta or {})
    meta.setdefault("nll_log_base", NLL_LOG_BASE)
    meta.setdefault("nll_floor", NLL_FLOOR)
    return EvalResult(tuple(cases), pooled, per_bag, roc, meta)


def group_by_bag(records) -> list:
    """Records regrouped as (bag_id, records) pairs, bags sorted by id."""
    groups = {}
    for r in records:
        groups.setdefault(r.bag_id, []).append(r)
    return sorted(groups.items())


def _predict_cases(model, records) -> list:
    hists = np.stack([r.hist for r in records])
    preds = model.predict_many(hists)
    return [CaseRecord(r.segment_id, r.bag_id, int(r.label), p.probs)
            for r, p in zip(records, preds)]


def lobo_evaluate(bags, fit, class_count, positive_classes=1, meta=None) -> EvalResult:
    """Hold each bag out in turn: train on the rest, score the held-out
    segments, pool every prediction into one result.

    `bags` is a list of (bag_id, segment records); `fit` maps a Dataset
    to a model with predict_many.
    """
    bags = list(bags)
    if len(bags) < 2:
        raise ValueError("need at least 2 bags to hold one out")
    cases = []
    for i, (bag_id, test) in enumerate(bags):
        if not test:
            warnings.warn(f"bag {bag_id!r} has no segments, contributes nothing",
                          stacklevel=2)
            continue
        train = [r for j, (_, rs) in enumerate(bags) if j != i for r in rs]
        if not train:
            warnings.warn(f"bag {bag_id!r} has nothing to train on, skipped",
                          stacklevel=2)
            continue
        model = fit(Dataset.from_records(train, class_count))
        cases.extend(_predict_cases(model, test))
    if not cases:
        raise ValueError("no bag produced scorable predictions")
    meta = dict(meta or {})
    meta.setdefault("protocol", "lobo")
    meta["bag_count"] = len(bags)
    return _finish(cases, positive_classes, meta)


def _round_half_up(x) -> int:
    return int(math.floor(x + 0.5))


def leave_one_class_out_evaluate(bags, held_out_class, pool, fit, task,
                                 seed=0, test_bag_count=3, electrical_per_bag=1,
                                 imbalance=DEFAULT_IMBALANCE, dims=(64, 64, 64),
                                 attempts=5, positive_classes=None, meta=None) -> EvalResult:
    """Train without one device class, test on fresh bags that contain it.

    Training drops every segment whose provenance object is of the held
    out class. Each test bag packs `electrical_per_bag` instances of the
    unseen device plus round(imbalance) non-electrical objects per
    instance, then is scored on its ground-truth segments.
    """
    task = parse_task(task)
    pool = list(pool)
    classes = {o.class_name for o in pool}
    if held_out_class not in classes:
        raise ValueError(f"unknown device class {held_out_class!r}, pool has {sorted(classes)}")
    train = [r for _, rs in bags for r in rs if r.object_class != held_out_class]
    if not train:
        raise ValueError("no training segments left after exclusion")
    model = fit(Dataset.from_records(train, task.class_count))
    device_idx = [i for i, o in enumerate(pool)
                  if o.class_name == held_out_class and o.electrical]
    if not device_idx:
        raise ValueError(f"held-out class {held_out_class!r} is not an electrical device class")
    other_idx = [i for i, o in enumerate(pool) if not o.electrical]
    if not other_idx:
        raise ValueError("pool has no non-electrical objects for test bags")
    if positive_classes is None:
        positive_classes = frozenset(range(1, task.class_count))
    cases = []
    children = np.random.SeedSequence(seed).spawn(test_bag_count)
    for b in range(test_bag_count):
        rng = np.random.default_rng(children[b])
        k_e = int(electrical_per_bag)
        k_n = _round_half_up(imbalance * k_e)
        sub = [pool[i] for i in rng.choice(device_idx, size=k_e,
                                           replace=len(device_idx) < k_e)]
        sub += [pool[i] for i in rng.choice(other_idx, size=k_n,
                                            replace=len(other_idx) < k_n)]
        bag = None
        for _ in range(32):
            bag_seed = int(rng.integers(0, 2 ** 31 - 1))
            candidate = pack_bag(sub, bag_seed, object_count=len(sub),
                                 attempts=attempts, dims=dims)
            if any(p.class_name == held_out_class for p in candidate.placed):
                bag = candidate
                break
        if bag is None:
            raise RuntimeError(f"could not place a {held_out_class!r} instance in {dims}")
        segments = ground_truth_segments(bag.volume, bag.labels, bag_id=f"heldout_{b}")
        records = build_records(segments, bag.labels, task)
        cases.extend(_predict_cases(model, records))
    meta = dict(meta or {})
    meta.setdefault("protocol", "leave_one_class_out")
    meta.update(held_out_class=held_out_class, seed=int(seed),
                test_bag_count=int(test_bag_count), imbalance=float(imbalance),
                electrical_per_bag=int(electrical_per_bag))
    return _finish(cases, positive_classes, meta)


# ---------------------------------------------------------------------------
# Degraded 2D path: project the volume and its ground truth, then reuse
# the ordinary segment machinery on the flat image.

def flatten_ground_truth(v: Volume, labels: LabelVolume, axis="z"):
    """Sum-project intensities and give each pixel the label that owns the
    most voxels in its column (ties to the smaller id)."""
    if v.dims != labels.dims:
        raise ValueError(f"dims mismatch: volume {v.dims} vs labels {labels.dims}")
    a = parse_axis(axis)
    image = flatten2d(v, a)
    vol2 = image_volume(image)
    lgrid = labels.labels.reshape(labels.dims[::-1])
    best = np.zeros(image.shape, np.int64)
    winner = np.zeros(image.shape, np.uint16)
    for label_id in sorted(labels.table):
        count = (lgrid == label_id).sum(axis=2 - a)
        better = count > best
        winner[better] = label_id
        best[better] = count[better]
    present = set(np.unique(winner).tolist()) - {0}
    table = {i: labels.table[i] for i in sorted(present)}
    return vol2, LabelVolume(vol2.dims, winner.reshape(-1), table)


# ---------------------------------------------------------------------------
# Reports.

def result_to_doc(res: EvalResult) -> dict:
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "meta": res.meta,
        "pooled": res.pooled.to_doc(),
        "per_bag": {b: m.to_doc() for b, m in res.per_bag.items()},
        "roc": [list(p) for p in res.roc_points] if res.roc_points is not None else None,
        "cases": [{"id": c.segment_id, "bag": c.bag_id, "true": c.true_class,
                   "probs": list(c.probs)} for c in res.cases],
    }


def save_report(path, res: EvalResult):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_doc(res), fh, indent=1)
        fh.write("\n")


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != REPORT_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported report format version")
    return doc


_SUMMARY_FIELDS = ("scope", "count", "accuracy", "error_count", "sensitivity",
                   "specificity", "auroc", "nll")


def _summary_row(scope, m: Metrics):
    doc = m.to_doc()
    row = {"scope": scope}
    for k in _SUMMARY_FIELDS[1:]:
        v = doc[k]
        row[k] = "NA" if v is None else v
    return row


def save_summary_csv(path, res: EvalResult):
    """Pooled metrics first, then one row per bag."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_SUMMARY_FIELDS)
        w.writeheader()
        w.writerow(_summary_row("pooled", res.pooled))
        for bag, m in res.per_bag.items():
            w.writerow(_summary_row(f"bag:{bag}", m))


def save_roc_csv(path, points):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("fpr", "tpr"))
        for x, y in points:
            w.writerow((repr(float(x)), repr(float(y))))
