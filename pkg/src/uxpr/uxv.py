"""Reading and writing the UXV1 volume container.

Layout: the 5 magic bytes ``UXV1\\n``, one line of JSON metadata
(``{"dims": [...], "dtype": "u8"|"i16"|"u16"}``, newline-terminated),
then the raw voxel payload, little-endian, first axis fastest. Label
volumes (u16) carry their object table in a JSON sidecar file.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .volume import LabelEntry, LabelVolume, SignedVolume, Volume

MAGIC = b"UXV1\n"

_DTYPES = {"u8": np.dtype("u1"), "i16": np.dtype("<i2"), "u16": np.dtype("<u2")}


class UxvError(Exception):
    """Malformed container; carries the offending file and byte offset."""

    def __init__(self, path, offset, message):
        self.path = os.fspath(path)
        self.offset = offset
        super().__init__(f"{self.path} (byte {offset}): {message}")


def write_uxv(path, dims, data, dtype):
    """Write one volume. `data` is flat or grid-shaped; `dtype` names the on-disk type."""
    if dtype not in _DTYPES:
        raise ValueError(f"unknown dtype {dtype!r}, expected one of {sorted(_DTYPES)}")
    dims = [int(d) for d in dims]
    arr = np.asarray(data).reshape(-1).astype(_DTYPES[dtype], copy=False)
    n = 1
    for d in dims:
        n *= d
    if arr.size != n:
        raise ValueError(f"dims {dims} need {n} voxels, got {arr.size}")
    header = json.dumps({"dims": dims, "dtype": dtype}, separators=(",", ":")) + "\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("ascii"))
        fh.write(arr.tobytes())


def read_uxv(path):
    """Read one volume. Returns (dims tuple, flat numpy array, dtype name)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise UxvError(path, 0, f"bad magic {magic!r}")
        header_line = fh.readline(65536)
        if not header_line.endswith(b"\n"):
            raise UxvError(path, len(MAGIC), "metadata line missing newline")
        header_end = len(MAGIC) + len(header_line)
        try:
            meta = json.loads(header_line)
        except ValueError as e:
            raise UxvError(path, len(MAGIC), f"metadata is not valid JSON: {e}") from e
        if not isinstance(meta, dict) or "dims" not in meta or "dtype" not in meta:
            raise UxvError(path, len(MAGIC), "metadata must carry dims and dtype")
        dtype = meta["dtype"]
        if dtype not in _DTYPES:
            raise UxvError(path, len(MAGIC), f"unknown dtype {dtype!r}")
        dims = meta["dims"]
        if (not isinstance(dims, list) or not 1 <= len(dims) <= 3
                or not all(isinstance(d, int) and d >= 1 for d in dims)):
            raise UxvError(path, len(MAGIC), f"bad dims {dims!r}")
        n = 1
        for d in dims:
            n *= d
        expected = n * _DTYPES[dtype].itemsize
        payload = fh.read(expected)
        if len(payload) != expected:
            raise UxvError(path, header_end + len(payload),
                           f"payload truncated: expected {expected} bytes, got {len(payload)}")
        if fh.read(1):
            raise UxvError(path, header_end + expected, "trailing bytes after payload")
    return tuple(dims), np.frombuffer(payload, dtype=_DTYPES[dtype]), dtype


def save_volume(path, volume: Volume):
    write_uxv(path, volume.dims, volume.data, "u8")


def load_volume(path) -> Volume:
    dims, data, dtype = read_uxv(path)
    if dtype != "u8":
        raise UxvError(path, len(MAGIC), f"expected u8 intensity volume, found {dtype}")
    return Volume(dims, data)


def save_signed(path, volume: SignedVolume):
    write_uxv(path, volume.dims, volume.data, "i16")


def load_signed(path) -> SignedVolume:
    dims, data, dtype = read_uxv(path)
    if dtype != "i16":
        raise UxvError(path, len(MAGIC), f"expected i16 signed volume, found {dtype}")
    return SignedVolume(dims, data)


def _sidecar_path(path, sidecar):
    if sidecar is not None:
        return sidecar
    base, _ = os.path.splitext(os.fspath(path))
    return base + ".json"


def save_labels(path, labels: LabelVolume, sidecar=None):
    """Write label ids as u16 plus the object table sidecar (default: same stem, .json)."""
    write_uxv(path, labels.dims, labels.labels, "u16")
    table = [
        {"id": int(i), "name": e.name, "class": e.class_name, "electrical": bool(e.electrical)}
        for i, e in sorted(labels.table.items())
    ]
    with open(_sidecar_path(path, sidecar), "w", encoding="utf-8") as fh:
        json.dump({"labels": table}, fh, indent=1)
        fh.write("\n")


def load_labels(path, sidecar=None) -> LabelVolume:
    dims, data, dtype = read_uxv(path)
    if dtype != "u16":
        raise UxvError(path, len(MAGIC), f"expected u16 label volume, found {dtype}")
    side = _sidecar_path(path, sidecar)
    try:
        with open(side, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise UxvError(side, 0, "label table sidecar missing") from None
    except ValueError as e:
        raise UxvError(side, 0, f"label table is not valid JSON: {e}") from e
    try:
        table = {
            int(row["id"]): LabelEntry(str(row["name"]), str(row["class"]), bool(row["electrical"]))
            for row in doc["labels"]
        }
    except (KeyError, TypeError) as e:
        raise UxvError(side, 0, f"malformed label table: {e}") from e
    return LabelVolume(dims, data, table)
