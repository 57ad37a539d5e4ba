"""Dense intensity volumes, flat zones and connected components.

A volume is a 1D, 2D or 3D grid of uint8 intensities stored flat,
first-axis-fastest: voxel (i0, i1, i2) sits at flat index
i0 + dims[0]*(i1 + dims[1]*i2). Adjacency is always face adjacency
(2-neighbour in 1D, 4 in 2D, 6 in 3D); diagonal voxels never touch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import _flat_zone_labels


class InvariantError(RuntimeError):
    """An internal consistency guarantee was violated."""


@dataclass(frozen=True)
class Connectivity:
    """Face adjacency for a given dimensionality."""

    ndim: int

    def __post_init__(self):
        if self.ndim not in (1, 2, 3):
            raise ValueError(f"unsupported dimensionality: {self.ndim}")

    @property
    def neighbour_count(self):
        return 2 * self.ndim


def _check_dims(dims):
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= 3:
        raise ValueError(f"dims must have 1..3 axes, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ValueError(f"all extents must be >= 1, got {dims}")
    return dims


def _padded(dims):
    # kernels always see three axes; missing ones get extent 1
    d = dims + (1,) * (3 - len(dims))
    return d[0], d[1], d[2]


class Volume:
    """Immutable uint8 intensity grid.

    `data` is the flat voxel array (first axis fastest). Use `grid` for a
    numpy view with shape dims[::-1], i.e. grid[i2, i1, i0] == voxel
    (i0, i1, i2).
    """

    __slots__ = ("dims", "data")

    def __init__(self, dims, data):
        dims = _check_dims(dims)
        data = np.asarray(data)
        if data.dtype != np.uint8:
            if not np.issubdtype(data.dtype, np.integer):
                raise ValueError(f"voxel data must be integer, got {data.dtype}")
            if data.size and (data.min() < 0 or data.max() > 255):
                raise ValueError("voxel values outside [0, 255]")
        n = 1
        for d in dims:
            n *= d
        if data.size != n:
            raise ValueError(f"dims {dims} need {n} voxels, got {data.size}")
        data = np.array(data, dtype=np.uint8).reshape(-1)
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("Volume is immutable")

    @classmethod
    def from_grid(cls, grid):
        """Build from an array shaped dims[::-1] (numpy C order)."""
        grid = np.asarray(grid)
        return cls(grid.shape[::-1], np.ascontiguousarray(grid).reshape(-1))

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def size(self):
        return self.data.size

    @property
    def grid(self):
        return self.data.reshape(self.dims[::-1])

    @property
    def connectivity(self):
        return Connectivity(self.ndim)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.dims, self.data.tobytes()))

    def __repr__(self):
        return f"Volume(dims={self.dims})"


class SignedVolume:
    """Signed difference of two volumes; values in [-255, 255], int16 flat."""

    __slots__ = ("dims", "data")

    def __init__(self, dims, data):
        dims = _check_dims(dims)
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.integer):
            raise ValueError(f"signed voxel data must be integer, got {data.dtype}")
        if data.size and (data.min() < -255 or data.max() > 255):
            raise ValueError("signed voxel values outside [-255, 255]")
        data = data.astype(np.int16).reshape(-1)
        n = 1
        for d in dims:
            n *= d
        if data.size != n:
            raise ValueError(f"dims {dims} need {n} voxels, got {data.size}")
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("SignedVolume is immutable")

    @classmethod
    def difference(cls, a: Volume, b: Volume):
        """a - b, voxelwise."""
        if a.dims != b.dims:
            raise ValueError(f"dims mismatch: {a.dims} vs {b.dims}")
        return cls(a.dims, a.data.astype(np.int16) - b.data.astype(np.int16))

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def size(self):
        return self.data.size

    @property
    def grid(self):
        return self.data.reshape(self.dims[::-1])

    def abs_view(self):
        """Magnitudes as a Volume (|v| <= 255 always fits uint8)."""
        return Volume(self.dims, np.abs(self.data).astype(np.uint8))

    def __eq__(self, other):
        if not isinstance(other, SignedVolume):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"SignedVolume(dims={self.dims})"


@dataclass
class LabelEntry:
    name: str
    class_name: str
    electrical: bool


class LabelVolume:
    """Per-voxel object ids (0 = background) plus a table describing each id."""

    __slots__ = ("dims", "labels", "table")

    def __init__(self, dims, labels, table):
        dims = _check_dims(dims)
        labels = np.asarray(labels)
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError(f"labels must be integer, got {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise ValueError("label ids must be >= 0")
        if labels.size and labels.max() > np.iinfo(np.uint16).max:
            raise ValueError("label ids exceed uint16 range")
        labels = labels.astype(np.uint16).reshape(-1)
        n = 1
        for d in dims:
            n *= d
        if labels.size != n:
            raise ValueError(f"dims {dims} need {n} voxels, got {labels.size}")
        labels.setflags(write=False)
        table = dict(table)
        present = set(np.unique(labels).tolist()) - {0}
        missing = present - set(table)
        if missing:
            raise ValueError(f"label ids missing from table: {sorted(missing)}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "table", table)

    def __setattr__(self, name, value):
        raise AttributeError("LabelVolume is immutable")

    @property
    def ndim(self):
        return len(self.dims)

    def voxels_of(self, label_id):
        """Sorted flat indices of one object's support."""
        return np.flatnonzero(self.labels == label_id)

    def __repr__(self):
        return f"LabelVolume(dims={self.dims}, objects={len(self.table)})"


class FlatZoneGraph:
    """Partition of a volume into maximal constant-value connected zones.

    Zones get dense ids ordered by their smallest flat voxel index.
    `zone_of[p]` maps voxel to zone; `zone_values`/`zone_areas` describe
    zones; adjacency is kept in CSR form (`indptr`, `indices`).
    """

    __slots__ = ("dims", "zone_of", "zone_values", "zone_areas", "indptr", "indices")

    def __init__(self, dims, zone_of, zone_values, zone_areas, indptr, indices):
        self.dims = dims
        self.zone_of = zone_of
        self.zone_values = zone_values
        self.zone_areas = zone_areas
        self.indptr = indptr
        self.indices = indices

    @property
    def zone_count(self):
        return self.zone_values.size

    def neighbours(self, zone_id):
        return self.indices[self.indptr[zone_id]:self.indptr[zone_id + 1]]

    def voxels_of(self, zone_id):
        return np.flatnonzero(self.zone_of == zone_id)

    def __repr__(self):
        return f"FlatZoneGraph(dims={self.dims}, zones={self.zone_count})"


def _directed_zone_edges(zone_of, dims):
    """All ordered (a, b) pairs of distinct face-adjacent zones, deduplicated."""
    g = zone_of.reshape(dims[::-1])
    pairs = []
    for ax in range(g.ndim):
        a = np.moveaxis(g, ax, 0)
        lo = a[:-1].reshape(-1)
        hi = a[1:].reshape(-1)
        m = lo != hi
        if m.any():
            pairs.append(np.stack([lo[m], hi[m]], axis=1))
            pairs.append(np.stack([hi[m], lo[m]], axis=1))
    if not pairs:
        return np.empty((0, 2), np.int64)
    return np.unique(np.concatenate(pairs), axis=0)


def flat_zones(volume: Volume, connectivity: Connectivity | None = None) -> FlatZoneGraph:
    """Partition `volume` into flat zones and build their adjacency graph."""
    if connectivity is not None and connectivity.ndim != volume.ndim:
        raise ValueError(f"connectivity is {connectivity.ndim}D but volume is {volume.ndim}D")
    d0, d1, d2 = _padded(volume.dims)
    zone_of, count = _flat_zone_labels(volume.data.astype(np.int64), d0, d1, d2)
    zone_values = np.empty(count, np.int64)
    zone_values[zone_of] = volume.data
    zone_areas = np.bincount(zone_of, minlength=count)
    edges = _directed_zone_edges(zone_of, volume.dims)
    indptr = np.zeros(count + 1, np.int64)
    np.cumsum(np.bincount(edges[:, 0], minlength=count), out=indptr[1:])
    return FlatZoneGraph(volume.dims, zone_of, zone_values, zone_areas, indptr, edges[:, 1])


def extremal_zones(graph: FlatZoneGraph):
    """Regional extrema as (zone_id, "maximum"|"minimum"), ascending by id.

    A zone is a maximum if strictly brighter than every neighbour, a
    minimum if strictly darker. A zone with no neighbours (constant
    volume) is neither.
    """
    out = []
    for z in range(graph.zone_count):
        nbs = graph.neighbours(z)
        if nbs.size == 0:
            continue
        nv = graph.zone_values[nbs]
        v = graph.zone_values[z]
        if (nv < v).all():
            out.append((z, "maximum"))
        elif (nv > v).all():
            out.append((z, "minimum"))
    return out


def connected_components(volume, predicate, connectivity: Connectivity | None = None):
    """Connected sets of voxels satisfying `predicate`, under face adjacency.

    `predicate` is applied vectorized to the flat data array and must
    yield a boolean mask. Returns a list of sorted flat-index arrays,
    ordered by smallest member index.
    """
    if connectivity is not None and connectivity.ndim != volume.ndim:
        raise ValueError(f"connectivity is {connectivity.ndim}D but volume is {volume.ndim}D")
    mask = np.asarray(predicate(volume.data), dtype=bool).reshape(-1)
    if mask.size != volume.size:
        raise ValueError("predicate did not produce one value per voxel")
    return mask_components(mask, volume.dims)


def mask_components(mask, dims):
    """connected_components for a precomputed flat boolean mask."""
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    d0, d1, d2 = _padded(_check_dims(dims))
    if mask.size != d0 * d1 * d2:
        raise ValueError("mask size does not match dims")
    if not mask.any():
        return []
    zone_of, _ = _flat_zone_labels(mask.astype(np.int64), d0, d1, d2)
    sel = np.flatnonzero(mask)
    zones = zone_of[sel]
    order = np.argsort(zones, kind="stable")
    sel = sel[order]
    zones = zones[order]
    cuts = np.flatnonzero(np.diff(zones)) + 1
    return np.split(sel, cuts)


def overlap_count(voxels, labels: LabelVolume, label_id: int) -> int:
    """How many of `voxels` (flat indices) carry `label_id`."""
    label_id = int(label_id)
    if label_id not in labels.table:
        raise ValueError(f"unknown label id {label_id}")
    voxels = np.asarray(voxels)
    if voxels.size == 0:
        return 0
    return int((labels.labels[voxels] == label_id).sum())
