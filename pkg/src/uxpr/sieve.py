"""Scale-space sieve: extremum-removal filters, cascade decomposition, reconstruction.

A sieve stage at scale s removes every regional extremum whose flat zone
has area (voxel count) <= s, merging each removed zone into its nearest
neighbouring value. Cascading stages at increasing scales splits a volume
into "channels", the voxelwise differences between successive low-pass
outputs. Channels are kept signed so the original volume is recovered
exactly as final low-pass + sum of channels.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass

import numpy as np

from ._kernels import apply_mode
from .volume import Connectivity, SignedVolume, Volume, _padded
from . import uxv


class FilterKind(enum.Enum):
    """Which extrema a stage removes.

    OPENING removes maxima (never raises a voxel), CLOSING removes minima
    (never lowers one). M is opening then closing at the same scale; N is
    the reverse. All four are idempotent.
    """

    OPENING = "opening"
    CLOSING = "closing"
    M = "m"
    N = "n"

    @classmethod
    def parse(cls, value) -> "FilterKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "opening": cls.OPENING, "open": cls.OPENING, "o": cls.OPENING,
            "closing": cls.CLOSING, "close": cls.CLOSING, "c": cls.CLOSING,
            "m": cls.M, "m_filter": cls.M, "mfilter": cls.M,
            "n": cls.N, "n_filter": cls.N, "nfilter": cls.N,
        }
        if key not in aliases:
            raise ValueError(f"unknown filter kind {value!r}")
        return aliases[key]

    @property
    def _mode(self) -> int:
        return {FilterKind.OPENING: 0, FilterKind.CLOSING: 1,
                FilterKind.M: 2, FilterKind.N: 3}[self]


@dataclass(frozen=True)
class ScaleSchedule:
    """Strictly increasing positive scales S_1..S_N."""

    scales: tuple

    def __post_init__(self):
        scales = tuple(int(s) for s in self.scales)
        if not scales:
            raise ValueError("schedule must contain at least one scale")
        if scales[0] < 1:
            raise ValueError(f"scales must be >= 1, got {scales[0]}")
        for a, b in zip(scales, scales[1:]):
            if b <= a:
                raise ValueError(f"scales must be strictly increasing, got {a} then {b}")
        object.__setattr__(self, "scales", scales)

    def __iter__(self):
        return iter(self.scales)

    def __len__(self):
        return len(self.scales)

    def __getitem__(self, i):
        return self.scales[i]


def _check_scale(s):
    s = int(s)
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    return s


def apply_filter(v: Volume, s, k, c: Connectivity | None = None) -> Volume:
    """Remove every extremal zone of area <= s (opening: maxima; closing: minima).

    M applies opening then closing; N the reverse. The result has no
    surviving extremum of area <= s, whichever kinds the filter targets.
    """
    s = _check_scale(s)
    k = FilterKind.parse(k)
    if c is not None and c.ndim != v.ndim:
        raise ValueError(f"connectivity is {c.ndim}D but volume is {v.ndim}D")
    if v.size >= 2 ** 31:
        raise ValueError("volumes beyond 2^31 voxels are not supported")
    d0, d1, d2 = _padded(v.dims)
    out = apply_mode(v.data, d0, d1, d2, s, k._mode)
    return Volume(v.dims, out)


@dataclass(frozen=True)
class SieveDecomposition:
    """Cascade output: original f_0, low-pass f_1..f_N, signed channels 1..N.

    channel n = f_{n-1} - f_n, so f_0 = f_N + sum of all channels, exactly.
    Channel 1 holds sub-S_1 residue; the analysis channels are 2..N.
    """

    original: Volume
    lowpass: tuple
    channels_signed: tuple
    schedule: ScaleSchedule
    filter_kind: FilterKind

    @property
    def scale_count(self):
        return len(self.schedule)

    @property
    def dims(self):
        return self.original.dims

    @property
    def residual(self) -> Volume:
        return self.lowpass[-1]

    def channel(self, n: int) -> SignedVolume:
        """Signed channel n, 1-based."""
        if not 1 <= n <= self.scale_count:
            raise ValueError(f"channel index {n} outside 1..{self.scale_count}")
        return self.channels_signed[n - 1]

    def reconstruct(self) -> Volume:
        total = self.lowpass[-1].data.astype(np.int64)
        for ch in self.channels_signed:
            total = total + ch.data
        return Volume(self.dims, total)


def decompose(v: Volume, sched, k=FilterKind.M, c: Connectivity | None = None) -> SieveDecomposition:
    """Run the cascade f_n = filter(f_{n-1}, S_n) over the whole schedule."""
    if not isinstance(sched, ScaleSchedule):
        sched = ScaleSchedule(tuple(sched))
    k = FilterKind.parse(k)
    lowpass = []
    channels = []
    prev = v
    for s in sched:
        cur = apply_filter(prev, s, k, c)
        lowpass.append(cur)
        channels.append(SignedVolume.difference(prev, cur))
        prev = cur
    return SieveDecomposition(v, tuple(lowpass), tuple(channels), sched, k)


def abs_channel(d: SieveDecomposition, n: int) -> Volume:
    """|channel n| as a plain volume. Only the analysis channels 2..N are valid."""
    if not 2 <= n <= d.scale_count:
        raise ValueError(f"abs channel index {n} outside 2..{d.scale_count}")
    return d.channel(n).abs_view()


# ---------------------------------------------------------------------------
# Independent 1D oracle: literal smallest-first zone merging, no zone graph.

def _remove_extrema_1d(values, scale, want_max):
    """One repeated-scan pass removing all maxima (or minima) of length <= scale."""
    values = list(values)
    n = len(values)
    while True:
        zones = []
        start = 0
        for i in range(1, n + 1):
            if i == n or values[i] != values[start]:
                zones.append((start, i - 1))
                start = i
        best = None
        best_len = 0
        for a, b in zones:
            length = b - a + 1
            if length > scale:
                continue
            v = values[a]
            left = values[a - 1] if a > 0 else None
            right = values[b + 1] if b < n - 1 else None
            if left is None and right is None:
                continue
            if want_max:
                extremal = (left is None or left < v) and (right is None or right < v)
            else:
                extremal = (left is None or left > v) and (right is None or right > v)
            if extremal and (best is None or length < best_len):
                best = (a, b)
                best_len = length
        if best is None:
            return values
        a, b = best
        neighbours = []
        if a > 0:
            neighbours.append(values[a - 1])
        if b < n - 1:
            neighbours.append(values[b + 1])
        target = max(neighbours) if want_max else min(neighbours)
        for i in range(a, b + 1):
            values[i] = target


def brute_force_sieve_1d(signal, s, k) -> list:
    """Reference filter for 1D signals of length <= 64.

    Same contract as apply_filter, implemented by naive full rescans so it
    shares no code with the production path. The production engine must
    match this exactly; the equivalence tests treat this as ground truth.
    """
    s = _check_scale(s)
    k = FilterKind.parse(k)
    if isinstance(signal, Volume):
        if signal.ndim != 1:
            raise ValueError("oracle accepts 1D signals only")
        signal = signal.data
    elif hasattr(signal, "ndim") and signal.ndim != 1:
        raise ValueError("oracle accepts 1D signals only")
    values = [int(x) for x in signal]
    if not values:
        raise ValueError("signal must be non-empty")
    if len(values) > 64:
        raise ValueError(f"oracle limited to length <= 64, got {len(values)}")
    if min(values) < 0 or max(values) > 255:
        raise ValueError("signal values outside [0, 255]")
    if k is FilterKind.OPENING:
        return _remove_extrema_1d(values, s, True)
    if k is FilterKind.CLOSING:
        return _remove_extrema_1d(values, s, False)
    if k is FilterKind.M:
        return _remove_extrema_1d(_remove_extrema_1d(values, s, True), s, False)
    return _remove_extrema_1d(_remove_extrema_1d(values, s, False), s, True)


# ---------------------------------------------------------------------------
# On-disk layout: directory of UXV1 files plus a manifest.

MANIFEST_NAME = "manifest.json"


def save_decomposition(directory, d: SieveDecomposition):
    """Write original, every low-pass stage, signed channels 2..N, and a manifest.

    Channel 1 is not materialized; it is recovered on load as
    original - lowpass_1.
    """
    os.makedirs(directory, exist_ok=True)
    files = {"original": "original.uxv", "lowpass": [], "channels_signed": {}}
    uxv.save_volume(os.path.join(directory, "original.uxv"), d.original)
    for i, low in enumerate(d.lowpass, start=1):
        name = f"lowpass_{i}.uxv"
        uxv.save_volume(os.path.join(directory, name), low)
        files["lowpass"].append(name)
    for n in range(2, d.scale_count + 1):
        name = f"channel_{n}.uxv"
        uxv.save_signed(os.path.join(directory, name), d.channel(n))
        files["channels_signed"][str(n)] = name
    manifest = {
        "format_version": 1,
        "dims": list(d.dims),
        "scales": list(d.schedule),
        "filter": d.filter_kind.value,
        "files": files,
    }
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_decomposition(directory) -> SieveDecomposition:
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise uxv.UxvError(manifest_path, 0, "decomposition manifest missing") from None
    except ValueError as e:
        raise uxv.UxvError(manifest_path, 0, f"manifest is not valid JSON: {e}") from e
    try:
        schedule = ScaleSchedule(tuple(manifest["scales"]))
        kind = FilterKind.parse(manifest["filter"])
        files = manifest["files"]
        original = uxv.load_volume(os.path.join(directory, files["original"]))
        lowpass = tuple(uxv.load_volume(os.path.join(directory, name))
                        for name in files["lowpass"])
    except (KeyError, TypeError) as e:
        raise uxv.UxvError(manifest_path, 0, f"malformed manifest: {e}") from e
    if len(lowpass) != len(schedule):
        raise uxv.UxvError(manifest_path, 0,
                           f"{len(schedule)} scales but {len(lowpass)} low-pass files")
    channels = [SignedVolume.difference(original, lowpass[0])]
    for n in range(2, len(schedule) + 1):
        name = files["channels_signed"][str(n)]
        channels.append(uxv.load_signed(os.path.join(directory, name)))
    return SieveDecomposition(original, lowpass, tuple(channels), schedule, kind)

