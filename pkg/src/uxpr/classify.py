"""Histogram classifiers: nearest neighbour, bagged trees, weighted ensemble.

All classifiers work on raw 256-bin counts. Distances and split searches
stay in integer arithmetic where possible so ties are exact and every
model is a pure function of (training data, seed), independent of
instance order and thread count.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .segments import HIST_BINS, electrical_probability, parse_task

MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Training data and predictions.

class Dataset:
    """Instances as parallel arrays: histograms, class ids, provenance."""

    __slots__ = ("hists", "labels", "bags", "ids", "class_count")

    def __init__(self, hists, labels, bags, ids, class_count):
        hists = np.asarray(hists, dtype=np.int64).reshape(-1, HIST_BINS)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.size != hists.shape[0]:
            raise ValueError(f"{hists.shape[0]} histograms but {labels.size} labels")
        class_count = int(class_count)
        if labels.size and not (0 <= labels.min() and labels.max() < class_count):
            raise ValueError(f"class ids outside [0, {class_count})")
        self.hists = hists
        self.labels = labels
        self.bags = list(bags)
        self.ids = list(ids)
        if len(self.bags) != labels.size or len(self.ids) != labels.size:
            raise ValueError("bags and ids must match instance count")
        self.class_count = class_count

    @classmethod
    def from_records(cls, records, task_or_class_count):
        if isinstance(task_or_class_count, int):
            class_count = task_or_class_count
        else:
            class_count = parse_task(task_or_class_count).class_count
        records = list(records)
        return cls(
            np.stack([r.hist for r in records]) if records else np.empty((0, HIST_BINS), np.int64),
            [r.label for r in records],
            [r.bag_id for r in records],
            [r.segment_id for r in records],
            class_count,
        )

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(self.hists[indices], self.labels[indices],
                       [self.bags[i] for i in indices], [self.ids[i] for i in indices],
                       self.class_count)

    def __len__(self):
        return self.labels.size


@dataclass(frozen=True)
class Prediction:
    """Per-class probabilities; the prediction is the argmax, ties to the
    lowest class id."""

    probs: tuple

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if not probs:
            raise ValueError("prediction needs at least one class")
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError(f"probabilities outside [0, 1]: {probs}")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {sum(probs)}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.probs))


def _as_query(hist):
    q = np.asarray(hist, dtype=np.int64).reshape(-1)
    if q.size != HIST_BINS:
        raise ValueError(f"query histogram must have {HIST_BINS} bins, got {q.size}")
    return q


# ---------------------------------------------------------------------------
# 1-nearest-neighbour.

@njit(cache=True)
def _nearest_rows(train, queries, out):
    # squared distances stay in int64: counts < 2^21, so each row sum < 2^50
    n = train.shape[0]
    for j in range(queries.shape[0]):
        best = np.int64(2 ** 62)
        arg = 0
        for i in range(n):
            acc = np.int64(0)
            for b in range(train.shape[1]):
                d = train[i, b] - queries[j, b]
                acc += d * d
            if acc < best:
                best = acc
                arg = i
        out[j] = arg


def nearest_index(train: Dataset, hist) -> int:
    """Index of the closest training instance by Euclidean distance on raw
    counts; exact integer ties go to the earliest instance."""
    if len(train) == 0:
        raise ValueError("empty training set")
    out = np.empty(1, np.int64)
    _nearest_rows(train.hists, _as_query(hist).reshape(1, -1), out)
    return int(out[0])


def knn_predict(train: Dataset, query) -> Prediction:
    """All probability mass on the nearest neighbour's class."""
    cls = int(train.labels[nearest_index(train, query)])
    probs = [0.0] * train.class_count
    probs[cls] = 1.0
    return Prediction(tuple(probs))


class NearestNeighbour:
    """knn_predict packaged as a model object."""

    kind = "knn"

    def __init__(self, train: Dataset):
        if len(train) == 0:
            raise ValueError("empty training set")
        self.train = train

    @property
    def class_count(self):
        return self.train.class_count

    def predict(self, hist) -> Prediction:
        return knn_predict(self.train, hist)

    def predict_many(self, hists) -> list:
        hists = np.asarray(hists, dtype=np.int64).reshape(-1, HIST_BINS)
        out = np.empty(hists.shape[0], np.int64)
        _nearest_rows(self.train.hists, hists, out)
        preds = []
        for i in out:
            probs = [0.0] * self.class_count
            probs[int(self.train.labels[i])] = 1.0
            preds.append(Prediction(tuple(probs)))
        return preds


# ---------------------------------------------------------------------------
# Bagged decision-tree forest.

@dataclass(frozen=True)
class ForestParams:
    tree_count: int = 500
    features_per_split: int = 16  # floor(sqrt(256))
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if not 1 <= self.features_per_split <= HIST_BINS:
            raise ValueError(f"features_per_split must be in 1..{HIST_BINS}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@njit(cache=True)
def _node_split(X, y, idx, perm, budget, min_leaf, class_count):
    """Best Gini split for one node, features tried in `perm` order.

    Constant features do not count against the feature budget, so sparse
    histograms (mostly all-zero bins) still get real split candidates.
    Minimizing weighted child Gini is maximizing S_L/n_L + S_R/n_R where
    S is the sum of squared class counts, kept incrementally in int64;
    any partition qualifies, first best candidate wins.
    """
    m = idx.size
    total = np.zeros(class_count, np.int64)
    for i in range(m):
        total[y[idx[i]]] += 1
    s_all = np.int64(0)
    for c in range(class_count):
        s_all += total[c] * total[c]
    best_score = -1.0
    best_f = -1
    best_thr = 0.0
    x = np.empty(m, np.int64)
    left = np.empty(class_count, np.int64)
    examined = 0
    for fpos in range(perm.size):
        if examined >= budget:
            break
        f = perm[fpos]
        constant = True
        for i in range(m):
            x[i] = X[idx[i], f]
            if x[i] != x[0]:
                constant = False
        if constant:
            continue
        examined += 1
        order = np.argsort(x)
        for c in range(class_count):
            left[c] = 0
        s_left = np.int64(0)
        s_right = s_all
        n_left = 0
        for i in range(m - 1):
            j = order[i]
            c = y[idx[j]]
            # moving one class-c instance left changes both squared sums
            s_left += 2 * left[c] + 1
            s_right -= 2 * (total[c] - left[c]) - 1
            left[c] += 1
            n_left += 1
            lo = x[j]
            hi = x[order[i + 1]]
            if lo == hi:
                continue
            if n_left < min_leaf or m - n_left < min_leaf:
                continue
            score = s_left / n_left + s_right / (m - n_left)
            if score > best_score:
                best_score = score
                best_f = f
                best_thr = (lo + hi) / 2.0
    return best_f, best_thr


def _fit_tree(X, y, class_count, params, rng):
    """One tree as parallel arrays; leaves have feature -1 and carry a vote."""
    feature = []
    threshold = []
    left = []
    right = []
    vote = []

    def majority(yy):
        return int(np.argmax(np.bincount(yy, minlength=class_count)))

    # stack-driven preorder build; entries patch their parent on creation
    stack = [(np.arange(y.size, dtype=np.intp), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            if is_right:
                right[parent] = node
            else:
                left[parent] = node
        yy = y[idx]
        split = None
        if (yy.min() != yy.max()
                and (params.max_depth is None or depth < params.max_depth)
                and idx.size >= 2 * params.min_leaf):
            perm = rng.permutation(HIST_BINS)
            f, thr = _node_split(X, y, idx, perm, params.features_per_split,
                                 params.min_leaf, class_count)
            if f >= 0:
                split = (int(f), thr)
        if split is None:
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            vote.append(majority(yy))
            continue
        feature.append(split[0])
        threshold.append(split[1])
        left.append(-1)
        right.append(-1)
        vote.append(-1)
        mask = X[idx, split[0]] <= split[1]
        stack.append((idx[~mask], depth + 1, node, True))
        stack.append((idx[mask], depth + 1, node, False))
    return (np.array(feature, np.int64), np.array(threshold, np.float64),
            np.array(left, np.int64), np.array(right, np.int64), np.array(vote, np.int64))


@njit(cache=True)
def _forest_votes(feat, thr, left, right, vote, roots, queries, counts):
    for j in range(queries.shape[0]):
        for t in range(roots.size):
            i = roots[t]
            while feat[i] >= 0:
                if queries[j, feat[i]] <= thr[i]:
                    i = left[i]
                else:
                    i = right[i]
            counts[j, vote[i]] += 1


class ForestModel:
    """All trees packed into flat arrays, roots indexing into them."""

    kind = "forest"

    def __init__(self, class_count, params, feat, thr, left, right, vote, roots):
        self.class_count = int(class_count)
        self.params = params
        self.feat = np.asarray(feat, np.int64)
        self.thr = np.asarray(thr, np.float64)
        self.left = np.asarray(left, np.int64)
        self.right = np.asarray(right, np.int64)
        self.vote = np.asarray(vote, np.int64)
        self.roots = np.asarray(roots, np.int64)

    @property
    def tree_count(self):
        return self.roots.size

    def predict_many(self, hists) -> list:
        hists = np.asarray(hists, dtype=np.int64).reshape(-1, HIST_BINS)
        counts = np.zeros((hists.shape[0], self.class_count), np.int64)
        _forest_votes(self.feat, self.thr, self.left, self.right, self.vote,
                      self.roots, hists, counts)
        return [Prediction(tuple(row / self.tree_count)) for row in counts]

    def predict(self, hist) -> Prediction:
        return self.predict_many(_as_query(hist).reshape(1, -1))[0]


def _canonical_order(hists, labels):
    """Instance order independent of input order: byte-lexicographic on
    (histogram, label). Equal rows are interchangeable for fitting."""
    key = np.empty((hists.shape[0], HIST_BINS + 1), ">i8")
    key[:, :HIST_BINS] = hists
    key[:, HIST_BINS] = labels
    rows = np.ascontiguousarray(key).view(np.dtype((np.void, key.shape[1] * 8))).reshape(-1)
    return np.argsort(rows, kind="stable")


def forest_train(train: Dataset, params: ForestParams | None = None) -> ForestModel:
    """Fit tree_count trees on seeded bootstrap resamples.

    Per-tree seeds come from spawning the root seed sequence, so tree t
    sees the same randomness no matter how many trees run or in what
    order. A single-class training set degenerates to constant voting.
    """
    if params is None:
        params = ForestParams()
    if len(train) == 0:
        raise ValueError("empty training set")
    order = _canonical_order(train.hists, train.labels)
    X = train.hists[order]
    y = train.labels[order]
    classes = np.unique(y)
    if classes.size < 2:
        warnings.warn("single-class training set, forest degenerates to a constant",
                      stacklevel=2)
    feat, thr, lft, rgt, vote, roots = [], [], [], [], [], []
    children = np.random.SeedSequence(params.seed).spawn(params.tree_count)
    offset = 0
    for t in range(params.tree_count):
        rng = np.random.default_rng(children[t])
        sample = rng.integers(0, y.size, size=y.size)
        tf, tt, tl, tr, tv = _fit_tree(X[sample], y[sample], train.class_count, params, rng)
        roots.append(offset)
        feat.append(tf)
        thr.append(tt)
        lft.append(np.where(tl >= 0, tl + offset, -1))
        rgt.append(np.where(tr >= 0, tr + offset, -1))
        vote.append(tv)
        offset += tf.size
    return ForestModel(train.class_count, params,
                       np.concatenate(feat), np.concatenate(thr),
                       np.concatenate(lft), np.concatenate(rgt),
                       np.concatenate(vote), np.array(roots, np.int64))


def forest_predict(model: ForestModel, query) -> Prediction:
    """Probabilities are the fraction of trees voting each class."""
    return model.predict(query)


# ---------------------------------------------------------------------------
# Probability-weighted ensemble.

def ensemble_predict(members, query) -> Prediction:
    """Weighted mean of member probabilities, renormalized."""
    members = list(members)
    if not members:
        raise ValueError("ensemble needs at least one member")
    weights = [float(w) for _, w in members]
    if any(w < 0 for w in weights):
        raise ValueError("weights must be >= 0")
    if sum(weights) == 0:
        raise ValueError("weights must not all be zero")
    class_count = members[0][0].class_count
    acc = np.zeros(class_count)
    for (model, w) in members:
        if model.class_count != class_count:
            raise ValueError("ensemble members disagree on class count")
        acc += w * np.asarray(model.predict(query).probs)
    return Prediction(tuple(acc / acc.sum()))


class Ensemble:
    """Members plus fixed weights; prediction delegates to ensemble_predict."""

    kind = "ensemble"

    def __init__(self, members):
        self.members = list(members)
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        weights = [float(w) for _, w in self.members]
        if any(w < 0 for w in weights):
            raise ValueError("weights must be >= 0")
        if sum(weights) == 0:
            raise ValueError("weights must not all be zero")
        self.class_count = self.members[0][0].class_count

    def predict(self, hist) -> Prediction:
        return ensemble_predict(self.members, hist)

    def predict_many(self, hists) -> list:
        hists = np.asarray(hists, dtype=np.int64).reshape(-1, HIST_BINS)
        total = np.zeros((hists.shape[0], self.class_count))
        for model, w in self.members:
            if w == 0:
                continue
            total += w * np.array([p.probs for p in model.predict_many(hists)])
        return [Prediction(tuple(row / row.sum())) for row in total]


def stratified_folds(labels, fold_count, seed):
    """Shuffle each class and deal round-robin; folds may differ by one."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    folds = [[] for _ in range(fold_count)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        for i, p in enumerate(idx):
            folds[i % fold_count].append(int(p))
    return [np.sort(np.array(f, dtype=np.intp)) for f in folds if f]


def cross_val_accuracy(ds: Dataset, fit, fold_count=10, seed=0) -> float:
    """Pooled accuracy over stratified folds; the ensemble's member weight."""
    if len(ds) < 2:
        return 1.0
    correct = 0
    for fold in stratified_folds(ds.labels, fold_count, seed):
        hold = np.zeros(len(ds), dtype=bool)
        hold[fold] = True
        if hold.all():
            continue
        model = fit(ds.subset(np.flatnonzero(~hold)))
        preds = model.predict_many(ds.hists[fold])
        correct += sum(p.predicted == int(ds.labels[i]) for p, i in zip(preds, fold))
    return correct / len(ds)


def train_ensemble(ds: Dataset, factories, fold_count=10, seed=0) -> Ensemble:
    """Weight each member by its cross-validation accuracy, then fit it on
    everything."""
    members = []
    for name, fit in factories:
        w = cross_val_accuracy(ds, fit, fold_count=fold_count, seed=seed)
        members.append((fit(ds), w))
    return Ensemble(members)


# ---------------------------------------------------------------------------
# Model files and prediction tables.

def _model_doc(model):
    if isinstance(model, NearestNeighbour):
        return {
            "kind": "knn",
            "class_count": model.class_count,
            "hists": model.train.hists.tolist(),
            "labels": model.train.labels.tolist(),
        }
    if isinstance(model, ForestModel):
        p = model.params
        return {
            "kind": "forest",
            "class_count": model.class_count,
            "params": {"tree_count": p.tree_count, "features_per_split": p.features_per_split,
                       "max_depth": p.max_depth, "min_leaf": p.min_leaf, "seed": p.seed},
            "feature": model.feat.tolist(),
            "threshold": model.thr.tolist(),
            "left": model.left.tolist(),
            "right": model.right.tolist(),
            "vote": model.vote.tolist(),
            "roots": model.roots.tolist(),
        }
    if isinstance(model, Ensemble):
        return {
            "kind": "ensemble",
            "members": [{"weight": w, "model": _model_doc(m)} for m, w in model.members],
        }
    raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def _model_from_doc(doc):
    kind = doc["kind"]
    if kind == "knn":
        n = len(doc["labels"])
        train = Dataset(doc["hists"], doc["labels"], [""] * n, [""] * n, doc["class_count"])
        return NearestNeighbour(train)
    if kind == "forest":
        p = doc["params"]
        params = ForestParams(p["tree_count"], p["features_per_split"],
                              p["max_depth"], p["min_leaf"], p["seed"])
        return ForestModel(doc["class_count"], params, doc["feature"], doc["threshold"],
                           doc["left"], doc["right"], doc["vote"], doc["roots"])
    if kind == "ensemble":
        return Ensemble([(_model_from_doc(m["model"]), float(m["weight"]))
                         for m in doc["members"]])
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(path, model):
    doc = {"format_version": MODEL_FORMAT_VERSION}
    doc.update(_model_doc(model))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {version!r}")
    return _model_from_doc(doc)


PREDICTION_FIELDS = ("segment_id", "bag", "channel", "pred", "p_electrical")


def predict_records(model, records, task) -> list:
    """Run a model over segment records; rows ready for the CSV table."""
    task = parse_task(task)
    records = list(records)
    preds = model.predict_many(np.stack([r.hist for r in records])) if records else []
    rows = []
    for r, p in zip(records, preds):
        rows.append({"segment_id": r.segment_id, "bag": r.bag_id, "channel": r.channel_index,
                     "pred": p.predicted, "p_electrical": electrical_probability(p.probs, task)})
    return rows


def save_predictions(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PREDICTION_FIELDS)
        w.writeheader()
        for row in rows:
            out = dict(row)
            out["p_electrical"] = repr(float(row["p_electrical"]))
            w.writerow(out)


def load_predictions(path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PREDICTION_FIELDS:
            raise ValueError(f"{path}: expected columns {','.join(PREDICTION_FIELDS)}")
        return [{"segment_id": row["segment_id"], "bag": row["bag"],
                 "channel": int(row["channel"]), "pred": int(row["pred"]),
                 "p_electrical": float(row["p_electrical"])} for row in reader]
