"""Simulated bags: phantom objects, random rotation, collision-free packing.

Phantoms stand in for a scanned-object pool. Electrical phantoms are a
medium-intensity shell around a few high-intensity internals; everything
else is a homogeneous blob that never reaches the high band. Packing
draws objects from the pool, rotates each by uniform Euler
angles, and drops it at random offsets until it lands without touching
another object's voxels.

Every random decision comes from a seed-sequence stream spawned per
object, so a bag is a pure function of (pool, seed, parameters) and one
object's placement history cannot perturb another's.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import uxv
from .volume import LabelEntry, LabelVolume, Volume

POOL_MANIFEST = "pool.json"
BAG_MANIFEST = "bag.json"


@dataclass(frozen=True)
class PoolObject:
    """One placeable object: a tight volume whose nonzero voxels are the
    support, plus its class identity."""

    name: str
    class_name: str
    electrical: bool
    volume: Volume

    def __post_init__(self):
        if self.volume.ndim != 3:
            raise ValueError("pool objects must be 3D")
        if not (self.volume.data != 0).any():
            raise ValueError(f"object {self.name!r} has empty support")

    @property
    def support_size(self):
        return int((self.volume.data != 0).sum())


def tight_crop(v: Volume) -> Volume:
    """Shrink to the bounding box of the nonzero voxels."""
    g = v.grid
    nz = np.nonzero(g)
    if nz[0].size == 0:
        raise ValueError("cannot crop an all-zero volume")
    sl = tuple(slice(int(a.min()), int(a.max()) + 1) for a in nz)
    return Volume.from_grid(g[sl])


# ---------------------------------------------------------------------------
# Phantom generation.

DEFAULT_POOL_SPEC = {
    "mobile_phone": {"count": 4, "electrical": True},
    "hard_drive": {"count": 3, "electrical": True},
    "laptop": {"count": 3, "electrical": True},
    "clothing": {"count": 7, "electrical": False},
    "bottle": {"count": 7, "electrical": False},
    "food": {"count": 6, "electrical": False},
}

SHELL_BAND = (60, 75)        # electrical casing intensities
INTERNAL_FLOOR = 200         # every electrical phantom has voxels at or above this
BLOB_BANDS = ((20, 50), (85, 115))  # non-electrical bases, clear of the shell band


def _centered_grid(radii):
    dims = tuple(int(2 * math.ceil(r)) + 1 for r in radii)
    axes = [np.arange(d) - (d - 1) / 2 for d in dims]
    # grid layout is dims[::-1], so index order is (i2, i1, i0)
    z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return dims, x, y, z


def _stamp_box(g, extents, lo_corner, value):
    i0, i1, i2 = (int(c) for c in lo_corner)
    e0, e1, e2 = (int(e) for e in extents)
    g[i2:i2 + e2, i1:i1 + e1, i0:i0 + e0] = value


def _electrical_phantom(rng) -> Volume:
    """Shell in the medium band, 1..3 dense blocks and a filament inside."""
    radii = rng.uniform(3.5, 6.5, 3)
    dims, x, y, z = _centered_grid(radii)
    q = np.sqrt((x / radii[0]) ** 2 + (y / radii[1]) ** 2 + (z / radii[2]) ** 2)
    g = np.zeros(dims[::-1], np.uint8)
    base = int(rng.integers(SHELL_BAND[0], SHELL_BAND[1] + 1))
    shell = (q >= 0.72) & (q <= 1.0)
    g[shell] = base
    centre = (np.array(dims) - 1) / 2
    for _ in range(int(rng.integers(1, 4))):
        extents = rng.integers(2, 4, 3)
        if extents.prod() <= 8:
            extents[int(rng.integers(3))] = 3
        offset = rng.uniform(-0.5, 0.5, 3) * radii
        lo = np.clip(np.round(centre + offset - extents / 2).astype(int),
                     0, np.array(dims) - extents)
        _stamp_box(g, extents, lo, int(rng.integers(INTERNAL_FLOOR, 251)))
    axis = int(rng.integers(3))
    length = max(4, int(radii[axis]))
    extents = np.ones(3, int)
    extents[axis] = length
    offset = rng.uniform(-0.4, 0.4, 3) * radii
    lo = np.clip(np.round(centre + offset - extents / 2).astype(int),
                 0, np.array(dims) - extents)
    _stamp_box(g, extents, lo, int(rng.integers(210, 256)))
    return Volume.from_grid(g)


def _blob_phantom(rng) -> Volume:
    """Homogeneous lump; never reaches the internal band."""
    radii = rng.uniform(3.0, 6.5, 3)
    dims, x, y, z = _centered_grid(radii)
    band = BLOB_BANDS[int(rng.integers(len(BLOB_BANDS)))]
    base = int(rng.integers(band[0], band[1] + 1))
    if rng.integers(2):
        inside = (x / radii[0]) ** 2 + (y / radii[1]) ** 2 + (z / radii[2]) ** 2 <= 1.0
    else:
        inside = (np.abs(x) <= radii[0] * 0.8) & (np.abs(y) <= radii[1] * 0.8) \
            & (np.abs(z) <= radii[2] * 0.8)
    g = np.where(inside, base, 0).astype(np.uint8)
    return Volume.from_grid(g)


def generate_phantom_pool(spec=None, seed=0) -> list:
    """Deterministic pool: object k is built from the k-th spawned stream,
    classes in spec order."""
    if spec is None:
        spec = DEFAULT_POOL_SPEC
    entries = []
    for name, cfg in spec.items():
        count = int(cfg["count"])
        if count < 0:
            raise ValueError(f"negative count for class {name!r}")
        entries.append((str(name), count, bool(cfg["electrical"])))
    total = sum(c for _, c, _ in entries)
    children = np.random.SeedSequence(seed).spawn(total) if total else []
    pool = []
    k = 0
    for name, count, electrical in entries:
        for i in range(count):
            rng = np.random.default_rng(children[k])
            k += 1
            vol = _electrical_phantom(rng) if electrical else _blob_phantom(rng)
            pool.append(PoolObject(f"{name}_{i}", name, electrical, tight_crop(vol)))
    return pool


# ---------------------------------------------------------------------------
# Rotation.

def _rotation_matrix(angles):
    ax, ay, az = (float(a) for a in angles)
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def rotate_object(o: PoolObject, angles=None, seed=None) -> PoolObject:
    """Rotate about the object centre and resample to the nearest voxel.

    `angles` are Euler angles about the x, y then z axes; when omitted
    they are drawn uniformly from [0, 2pi). The output box is the tight
    hull of the rotated corners, so (0,0,0) reproduces the object
    exactly, and resampling may slightly change the voxel count.
    """
    if angles is None:
        angles = np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi, 3)
    r = _rotation_matrix(angles)
    src = o.volume
    sdims = np.array(src.dims)
    c_in = (sdims - 1) / 2
    corners = np.array([(i, j, k) for i in (0, sdims[0] - 1)
                        for j in (0, sdims[1] - 1) for k in (0, sdims[2] - 1)], float)
    h = np.abs((corners - c_in) @ r.T).max(axis=0)
    # floor(2h)+1 keeps the grid centred and reproduces axis-aligned cases exactly
    odims = tuple(int(math.floor(2 * hh)) + 1 for hh in h)
    c_out = (np.array(odims) - 1) / 2
    n0, n1, n2 = odims
    j2, j1, j0 = np.meshgrid(np.arange(n2), np.arange(n1), np.arange(n0), indexing="ij")
    out_coords = np.stack([j0.ravel(), j1.ravel(), j2.ravel()], axis=1)
    p = np.rint((out_coords - c_out) @ r + c_in).astype(np.int64)
    valid = ((p >= 0) & (p < sdims)).all(axis=1)
    flat = p[:, 0] + sdims[0] * (p[:, 1] + sdims[1] * p[:, 2])
    values = np.zeros(n0 * n1 * n2, np.uint8)
    # out_coords were generated in grid order (i2 fastest axis last), so the
    # raveled sample order is exactly the flat voxel order of the output
    values[valid] = src.data[flat[valid]]
    if not values.any():
        # inverse sampling can miss structures thinner than a voxel; push
        # every source voxel forward instead so the support survives
        sup = np.flatnonzero(src.data)
        s0 = sup % sdims[0]
        s1 = (sup // sdims[0]) % sdims[1]
        s2 = sup // (sdims[0] * sdims[1])
        f = np.rint((np.stack([s0, s1, s2], axis=1) - c_in) @ r.T + c_out).astype(np.int64)
        f = np.clip(f, 0, np.array(odims) - 1)
        values[f[:, 0] + n0 * (f[:, 1] + n1 * f[:, 2])] = src.data[sup]
    return PoolObject(o.name, o.class_name, o.electrical,
                      tight_crop(Volume(odims, values)))


# ---------------------------------------------------------------------------
# Packing.

@dataclass(frozen=True)
class Placement:
    pool_index: int
    name: str
    class_name: str
    electrical: bool
    label_id: int
    angles: tuple
    offset: tuple


@dataclass(frozen=True)
class Bag:
    """A packed volume, its ground truth, and how it was assembled."""

    volume: Volume
    labels: LabelVolume
    placed: tuple
    seed: int

    @property
    def dims(self):
        return self.volume.dims


def pack_bag(pool, seed, object_count=20, attempts=5, dims=(512, 512, 512)) -> Bag:
    """Draw, rotate and place objects; objects may touch but never overlap.

    Selection is uniform without replacement (with replacement only when
    the pool is smaller than object_count). Each object gets `attempts`
    uniform offsets with its box inside the volume; the first offset
    whose support hits nothing already placed wins, otherwise the object
    is skipped, so a bag may come out with fewer objects than asked.
    """
    pool = list(pool)
    if not pool:
        raise ValueError("empty pool")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError(f"bags are 3D, got dims {dims}")
    seed = int(seed)
    object_count = int(object_count)
    children = np.random.SeedSequence(seed).spawn(object_count + 1)
    rng_sel = np.random.default_rng(children[0])
    chosen = rng_sel.choice(len(pool), size=object_count, replace=len(pool) < object_count)
    d0, d1, d2 = dims
    volume = np.zeros(d0 * d1 * d2, np.uint8)
    labels = np.zeros(d0 * d1 * d2, np.uint16)
    occupied = np.zeros(d0 * d1 * d2, bool)
    placed = []
    table = {}
    next_id = 1
    for slot, pidx in enumerate(chosen):
        rng = np.random.default_rng(children[slot + 1])
        angles = tuple(float(a) for a in rng.uniform(0.0, 2.0 * math.pi, 3))
        obj = rotate_object(pool[pidx], angles)
        e0, e1, e2 = obj.volume.dims
        if e0 > d0 or e1 > d1 or e2 > d2:
            warnings.warn(f"object {obj.name!r} does not fit {dims}, skipped", stacklevel=2)
            continue
        sup = np.flatnonzero(obj.volume.data)
        s0 = sup % e0
        s1 = (sup // e0) % e1
        s2 = sup // (e0 * e1)
        for _ in range(int(attempts)):
            o0 = int(rng.integers(0, d0 - e0 + 1))
            o1 = int(rng.integers(0, d1 - e1 + 1))
            o2 = int(rng.integers(0, d2 - e2 + 1))
            target = (s0 + o0) + d0 * ((s1 + o1) + d1 * (s2 + o2))
            if occupied[target].any():
                continue
            occupied[target] = True
            volume[target] = obj.volume.data[sup]
            labels[target] = next_id
            table[next_id] = LabelEntry(obj.name, obj.class_name, obj.electrical)
            placed.append(Placement(int(pidx), obj.name, obj.class_name, obj.electrical,
                                    next_id, angles, (o0, o1, o2)))
            next_id += 1
            break
    return Bag(Volume(dims, volume), LabelVolume(dims, labels, table), tuple(placed), seed)


# ---------------------------------------------------------------------------
# Pool and bag directories.

def save_pool(directory, pool):
    os.makedirs(directory, exist_ok=True)
    rows = []
    for i, obj in enumerate(pool):
        name = f"object_{i:03d}.uxv"
        uxv.save_volume(os.path.join(directory, name), obj.volume)
        rows.append({"file": name, "name": obj.name, "class": obj.class_name,
                     "electrical": obj.electrical})
    with open(os.path.join(directory, POOL_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump({"format_version": 1, "objects": rows}, fh, indent=1)
        fh.write("\n")


def load_pool(directory) -> list:
    manifest = os.path.join(directory, POOL_MANIFEST)
    try:
        with open(manifest, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise uxv.UxvError(manifest, 0, "pool manifest missing") from None
    except ValueError as e:
        raise uxv.UxvError(manifest, 0, f"pool manifest is not valid JSON: {e}") from e
    pool = []
    try:
        for row in doc["objects"]:
            vol = uxv.load_volume(os.path.join(directory, row["file"]))
            pool.append(PoolObject(str(row["name"]), str(row["class"]),
                                   bool(row["electrical"]), vol))
    except (KeyError, TypeError) as e:
        raise uxv.UxvError(manifest, 0, f"malformed pool manifest: {e}") from e
    return pool


def save_bag(directory, bag: Bag):
    os.makedirs(directory, exist_ok=True)
    uxv.save_volume(os.path.join(directory, "volume.uxv"), bag.volume)
    uxv.save_labels(os.path.join(directory, "labels.uxv"), bag.labels)
    doc = {
        "format_version": 1,
        "seed": bag.seed,
        "dims": list(bag.dims),
        "placed": [{
            "pool_index": p.pool_index, "name": p.name, "class": p.class_name,
            "electrical": p.electrical, "label_id": p.label_id,
            "angles": list(p.angles), "offset": list(p.offset),
        } for p in bag.placed],
    }
    with open(os.path.join(directory, BAG_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_bag(directory) -> Bag:
    manifest = os.path.join(directory, BAG_MANIFEST)
    try:
        with open(manifest, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise uxv.UxvError(manifest, 0, "bag manifest missing") from None
    except ValueError as e:
        raise uxv.UxvError(manifest, 0, f"bag manifest is not valid JSON: {e}") from e
    volume = uxv.load_volume(os.path.join(directory, "volume.uxv"))
    labels = uxv.load_labels(os.path.join(directory, "labels.uxv"))
    try:
        placed = tuple(Placement(int(p["pool_index"]), str(p["name"]), str(p["class"]),
                                 bool(p["electrical"]), int(p["label_id"]),
                                 tuple(float(a) for a in p["angles"]),
                                 tuple(int(x) for x in p["offset"]))
                       for p in doc["placed"])
        seed = int(doc["seed"])
    except (KeyError, TypeError, ValueError) as e:
        raise uxv.UxvError(manifest, 0, f"malformed bag manifest: {e}") from e
    return Bag(volume, labels, placed, seed)
