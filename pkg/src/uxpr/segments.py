"""Segment harvesting and histogram features (pipeline stages 1 and 2).

A segment is a connected set of voxels pulled from one absolute channel
volume of a decomposition, or from one ground-truth object mask. Its
feature is a plain 256-bin intensity histogram, unnormalized so that
object size stays visible to the classifier. Segments cross between
pipeline stages as JSON-lines records carrying the histogram, the task
label and provenance, but not the voxels themselves.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .sieve import ScaleSchedule, SieveDecomposition, abs_channel
from .uxv import UxvError
from .volume import LabelVolume, Volume, mask_components

HIST_BINS = 256


# ---------------------------------------------------------------------------
# Classification tasks.

@dataclass(frozen=True)
class Task:
    """A named classification task: ordered class names, ids by position.

    Class 0 is always non_electrical, so "predicted electrical" means a
    nonzero class id under either task.
    """

    name: str
    class_names: tuple

    @property
    def class_count(self):
        return len(self.class_names)

    def class_id(self, name) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise ValueError(f"task {self.name} has no class {name!r}") from None


TWO_CLASS = Task("two_class", ("non_electrical", "electrical"))
FIVE_CLASS = Task("five_class", (
    "non_electrical", "mobile_phone", "hard_drive", "laptop", "other_electrical"))

_TASKS = {t.name: t for t in (TWO_CLASS, FIVE_CLASS)}


def parse_task(value) -> Task:
    if isinstance(value, Task):
        return value
    key = str(value).strip().lower()
    if key not in _TASKS:
        raise ValueError(f"unknown task {value!r}, expected one of {sorted(_TASKS)}")
    return _TASKS[key]


def _five_class_id(class_name) -> int:
    # electrical device classes outside the named three fold into other_electrical
    if class_name in FIVE_CLASS.class_names:
        return FIVE_CLASS.class_id(class_name)
    return FIVE_CLASS.class_id("other_electrical")


# ---------------------------------------------------------------------------
# Scale schedules.

def default_schedule(n_scales, s_min, s_max) -> ScaleSchedule:
    """Geometric schedule: log10 of the scales equispaced, endpoints exact.

    Interior points are rounded half-up to whole voxel counts.
    """
    n_scales = int(n_scales)
    s_min = int(s_min)
    s_max = int(s_max)
    if n_scales < 2:
        raise ValueError(f"need at least 2 scales, got {n_scales}")
    if not 1 <= s_min < s_max:
        raise ValueError(f"need 1 <= s_min < s_max, got {s_min}, {s_max}")
    exps = np.linspace(math.log10(s_min), math.log10(s_max), n_scales)
    scales = [int(math.floor(10.0 ** e + 0.5)) for e in exps]
    scales[0] = s_min
    scales[-1] = s_max
    return ScaleSchedule(tuple(scales))


# ---------------------------------------------------------------------------
# Segments and their histograms.

class Segment:
    """A connected voxel set plus the intensities used for its features.

    `channel_index` is 2..N for sieve channels and 0 for ground-truth
    segments. `voxels` are flat indices into the source volume, aligned
    elementwise with `source_values`.
    """

    __slots__ = ("bag_id", "channel_index", "voxels", "source_values")

    def __init__(self, bag_id, channel_index, voxels, source_values):
        channel_index = int(channel_index)
        if channel_index < 0 or channel_index == 1:
            raise ValueError(f"channel index must be 0 or >= 2, got {channel_index}")
        voxels = np.asarray(voxels, dtype=np.int64).reshape(-1)
        source_values = np.asarray(source_values, dtype=np.uint8).reshape(-1)
        if voxels.size == 0:
            raise ValueError("segment must contain at least one voxel")
        if source_values.size != voxels.size:
            raise ValueError(f"{voxels.size} voxels but {source_values.size} values")
        voxels.setflags(write=False)
        source_values.setflags(write=False)
        self.bag_id = str(bag_id)
        self.channel_index = channel_index
        self.voxels = voxels
        self.source_values = source_values

    @property
    def area(self):
        return self.voxels.size

    def __repr__(self):
        return (f"Segment(bag={self.bag_id!r}, channel={self.channel_index}, "
                f"area={self.area})")


def segment_histogram(seg: Segment) -> np.ndarray:
    """256 intensity counts; their sum is the segment area, by construction."""
    values = np.asarray(seg.source_values)
    if values.size and (values.min() < 0 or values.max() > 255):
        raise ValueError("segment values outside [0, 255]")
    return np.bincount(values.astype(np.intp), minlength=HIST_BINS)


_BOUNDS_MODES = ("bracketing", "all")


def extract_segments(d: SieveDecomposition, bounds_mode="bracketing", bag_id="") -> list:
    """Connected nonzero components of every absolute channel 2..N.

    Under `bracketing` a component survives only if its area lies in
    (S_{n-1}, S_n], the sizes its channel is nominally responsible for;
    under `all` every component is kept. Feature intensities are the
    absolute channel values at the component's voxels.
    """
    mode = str(bounds_mode).strip().lower()
    if mode not in _BOUNDS_MODES:
        raise ValueError(f"unknown bounds mode {bounds_mode!r}, expected one of {_BOUNDS_MODES}")
    out = []
    for n in range(2, d.scale_count + 1):
        ch = abs_channel(d, n)
        lo = d.schedule[n - 2]
        hi = d.schedule[n - 1]
        for voxels in mask_components(ch.data != 0, d.dims):
            if mode == "bracketing" and not lo < voxels.size <= hi:
                continue
            out.append(Segment(bag_id, n, voxels, ch.data[voxels]))
    return out


def ground_truth_segments(v: Volume, labels: LabelVolume, bag_id="") -> list:
    """One segment per labeled object, with the original intensities."""
    if v.dims != labels.dims:
        raise ValueError(f"dims mismatch: volume {v.dims} vs labels {labels.dims}")
    out = []
    for label_id in sorted(labels.table):
        voxels = labels.voxels_of(label_id)
        if voxels.size == 0:
            warnings.warn(f"label {label_id} has empty support, skipped", stacklevel=2)
            continue
        out.append(Segment(bag_id, 0, voxels, v.data[voxels]))
    return out


# ---------------------------------------------------------------------------
# Auto-labeling against ground truth.

def _overlap_counts(seg: Segment, labels: LabelVolume):
    ids = labels.labels[seg.voxels]
    top = max(labels.table, default=0)
    return np.bincount(ids.astype(np.intp), minlength=top + 1)


def _winning_label(counts, labels: LabelVolume, electrical_only):
    """Label id with the largest overlap; ties go to the smaller id."""
    best_id = None
    best = 0
    for label_id in sorted(labels.table):
        if electrical_only and not labels.table[label_id].electrical:
            continue
        c = int(counts[label_id]) if label_id < counts.size else 0
        if c > best:
            best = c
            best_id = label_id
    return best_id


def auto_label_segment(seg: Segment, labels: LabelVolume, task) -> int:
    """Class id a segment earns from its overlap with the ground truth.

    two_class: electrical as soon as a single voxel overlaps any
    electrical object. five_class: the class of the electrical object
    with the largest overlap, non_electrical when there is none.
    """
    task = parse_task(task)
    counts = _overlap_counts(seg, labels)
    if task is TWO_CLASS:
        for label_id, entry in labels.table.items():
            if entry.electrical and label_id < counts.size and counts[label_id] > 0:
                return TWO_CLASS.class_id("electrical")
        return TWO_CLASS.class_id("non_electrical")
    winner = _winning_label(counts, labels, electrical_only=True)
    if winner is None:
        return FIVE_CLASS.class_id("non_electrical")
    return _five_class_id(labels.table[winner].class_name)


# ---------------------------------------------------------------------------
# The JSON-lines exchange format between stages.

@dataclass
class SegmentRecord:
    """What later stages see of a segment: features and provenance, no voxels.

    `object_class` is the class name of the ground-truth object the
    segment overlaps most (None when it overlaps nothing), kept so
    held-one-class-out protocols can exclude a device class.
    """

    segment_id: str
    bag_id: str
    channel_index: int
    area: int
    label: int
    hist: np.ndarray
    object_class: str | None = None

    def __post_init__(self):
        self.hist = np.asarray(self.hist, dtype=np.int64).reshape(-1)
        if self.hist.size != HIST_BINS:
            raise ValueError(f"histogram must have {HIST_BINS} bins, got {self.hist.size}")
        if self.hist.min() < 0:
            raise ValueError("histogram counts must be non-negative")
        if int(self.hist.sum()) != int(self.area):
            raise ValueError(f"histogram sums to {int(self.hist.sum())} but area is {self.area}")


def build_records(segments, labels: LabelVolume, task) -> list:
    """Label segments against ground truth and package them as records.

    Ids are `bag/channel/k` with k counting within each (bag, channel)
    pair in extraction order, so a rerun reproduces them exactly.
    """
    task = parse_task(task)
    counters = {}
    out = []
    for seg in segments:
        counts = _overlap_counts(seg, labels)
        if task is TWO_CLASS:
            label = TWO_CLASS.class_id("non_electrical")
            for label_id, entry in labels.table.items():
                if entry.electrical and label_id < counts.size and counts[label_id] > 0:
                    label = TWO_CLASS.class_id("electrical")
                    break
        else:
            winner_e = _winning_label(counts, labels, electrical_only=True)
            if winner_e is None:
                label = FIVE_CLASS.class_id("non_electrical")
            else:
                label = _five_class_id(labels.table[winner_e].class_name)
        provenance = _winning_label(counts, labels, electrical_only=False)
        object_class = labels.table[provenance].class_name if provenance is not None else None
        key = (seg.bag_id, seg.channel_index)
        k = counters.get(key, 0)
        counters[key] = k + 1
        out.append(SegmentRecord(
            segment_id=f"{seg.bag_id}/{seg.channel_index}/{k}",
            bag_id=seg.bag_id,
            channel_index=seg.channel_index,
            area=seg.area,
            label=label,
            hist=segment_histogram(seg),
            object_class=object_class,
        ))
    return out


def save_segments(path, records):
    """One JSON object per line: id, bag, channel, area, label, hist."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = {
                "id": r.segment_id,
                "bag": r.bag_id,
                "channel": int(r.channel_index),
                "area": int(r.area),
                "label": int(r.label),
                "hist": [int(c) for c in r.hist],
            }
            if r.object_class is not None:
                row["object_class"] = r.object_class
            fh.write(json.dumps(row, separators=(",", ":")))
            fh.write("\n")


def load_segments(path) -> list:
    records = []
    offset = 0
    with open(path, "rb") as fh:
        for i, raw in enumerate(fh):
            line = raw.strip()
            if line:
                try:
                    row = json.loads(line)
                    records.append(SegmentRecord(
                        segment_id=str(row.get("id", f"{row['bag']}/{row['channel']}/{i}")),
                        bag_id=str(row["bag"]),
                        channel_index=int(row["channel"]),
                        area=int(row["area"]),
                        label=int(row["label"]),
                        hist=row["hist"],
                        object_class=row.get("object_class"),
                    ))
                except (ValueError, KeyError, TypeError) as e:
                    raise UxvError(path, offset, f"bad segment record on line {i + 1}: {e}") from e
            offset += len(raw)
    return records


def electrical_probability(probs, task) -> float:
    """Mass a prediction puts on any electrical class."""
    task = parse_task(task)
    return float(sum(probs[1:task.class_count]))
