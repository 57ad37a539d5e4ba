"""Verdict fusion and 2D projections (pipeline stage 4).

Per-voxel voting counts how many distinct channels predicted a segment
containing the voxel as electrical: two or more channels agreeing makes
a voxel likely-electronics, one channel unlikely, none very-unlikely.
Ground-truth segments (channel 0) never vote. Projections collapse a
volume along one axis for quick 2D inspection and for the degraded-input
comparison in the evaluation harness.
"""

from __future__ import annotations

import os

import numpy as np

from . import uxv
from .volume import Volume

VERY_UNLIKELY = 0
UNLIKELY = 1
LIKELY = 2

VERDICT_NAMES = ("very_unlikely", "unlikely", "likely")

_AXES = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}


def parse_axis(axis) -> int:
    key = str(axis).strip().lower()
    if key not in _AXES:
        raise ValueError(f"unknown axis {axis!r}, expected x, y, z or 0..2")
    return _AXES[key]


class RepackMap:
    """Per-voxel verdicts, same dims as the source bag."""

    __slots__ = ("dims", "verdict")

    def __init__(self, dims, verdict):
        verdict = np.asarray(verdict, dtype=np.uint8).reshape(-1)
        n = 1
        for d in dims:
            n *= int(d)
        if verdict.size != n:
            raise ValueError(f"dims {tuple(dims)} need {n} voxels, got {verdict.size}")
        if verdict.size and verdict.max() > LIKELY:
            raise ValueError("verdicts must be 0, 1 or 2")
        verdict.setflags(write=False)
        self.dims = tuple(int(d) for d in dims)
        self.verdict = verdict

    def fraction(self, verdict_value) -> float:
        return float((self.verdict == verdict_value).mean())

    def __eq__(self, other):
        if not isinstance(other, RepackMap):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.verdict, other.verdict)

    def __repr__(self):
        return f"RepackMap(dims={self.dims})"


def repack_vote(segments, dims) -> RepackMap:
    """Fuse (segment, prediction) pairs into a verdict map.

    A channel votes for a voxel when any of its electrical-predicted
    segments covers it; several hits within one channel still count
    once. Only sieve channels vote, so channel-0 (ground truth) entries
    are ignored.
    """
    dims = tuple(int(d) for d in dims)
    n = 1
    for d in dims:
        n *= d
    by_channel = {}
    for seg, pred in segments:
        if seg.voxels.size and (seg.voxels.min() < 0 or seg.voxels.max() >= n):
            raise ValueError(f"segment voxels outside volume of {n} voxels")
        if seg.channel_index == 0 or pred.predicted == 0:
            continue
        by_channel.setdefault(seg.channel_index, []).append(seg)
    count = np.zeros(n, np.uint16)
    for channel, segs in by_channel.items():
        mask = np.zeros(n, bool)
        for seg in segs:
            mask[seg.voxels] = True
        count += mask
    return RepackMap(dims, np.minimum(count, LIKELY).astype(np.uint8))


def save_repack(path, m: RepackMap):
    uxv.write_uxv(path, m.dims, m.verdict, "u8")


def load_repack(path) -> RepackMap:
    dims, data, dtype = uxv.read_uxv(path)
    if dtype != "u8":
        raise uxv.UxvError(path, len(uxv.MAGIC), f"expected u8 verdict map, found {dtype}")
    if data.size and data.max() > LIKELY:
        raise uxv.UxvError(path, len(uxv.MAGIC), "verdict values outside 0..2")
    return RepackMap(dims, data)


# ---------------------------------------------------------------------------
# Projections.

def _require_3d(v: Volume):
    if v.ndim != 3:
        raise ValueError(f"projections need a 3D volume, got {v.ndim}D")


def flatten2d(v: Volume, axis) -> np.ndarray:
    """Sum along one axis and scale so the brightest column maps to 255.

    Pixels are rounded half-up; an all-zero volume stays all zero. The
    result is image[row, col] where (row, col) are the surviving voxel
    axes in descending order, matching the volume's grid layout.
    """
    _require_3d(v)
    a = parse_axis(axis)
    cols = v.grid.astype(np.int64).sum(axis=2 - a)
    top = int(cols.max()) if cols.size else 0
    if top == 0:
        return np.zeros(cols.shape, np.uint8)
    return np.floor(cols * (255.0 / top) + 0.5).astype(np.uint8)


def mip_projection(v: Volume, axis) -> np.ndarray:
    """Maximum intensity along the axis, same orientation as flatten2d."""
    _require_3d(v)
    a = parse_axis(axis)
    return v.grid.max(axis=2 - a)


def image_volume(image) -> Volume:
    """Wrap a 2D image as a Volume so segment machinery can run on it."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got {image.ndim}D")
    return Volume.from_grid(image)


# ---------------------------------------------------------------------------
# PGM output.

def save_pgm(path, image):
    """Binary PGM, maxval 255."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError(f"PGM wants a 2D image, got {image.ndim}D")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise uxv.UxvError(path, 0, "not a maxval-255 binary PGM")
    try:
        w, h = (int(t) for t in parts[1].split())
    except ValueError:
        raise uxv.UxvError(path, len(parts[0]) + 1, f"bad dimensions line {parts[1]!r}") from None
    if len(parts[3]) != w * h:
        raise uxv.UxvError(path, len(data) - len(parts[3]),
                           f"payload has {len(parts[3])} bytes, expected {w * h}")
    return np.frombuffer(parts[3], np.uint8).reshape(h, w)


def render_verdict_maps(directory, v: Volume, m: RepackMap, prefix="verdict") -> list:
    """One MIP per axis per verdict class: the volume's intensities where
    the verdict holds, black elsewhere. Nine images for a 3-class map."""
    if v.dims != m.dims:
        raise ValueError(f"dims mismatch: volume {v.dims} vs map {m.dims}")
    os.makedirs(directory, exist_ok=True)
    paths = []
    for value, name in enumerate(VERDICT_NAMES):
        masked = Volume(v.dims, np.where(m.verdict == value, v.data, 0))
        for axis in "xyz":
            path = os.path.join(directory, f"{prefix}_{name}_{axis}.pgm")
            save_pgm(path, mip_projection(masked, axis))
            paths.append(path)
    return paths
