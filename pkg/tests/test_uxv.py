import numpy as np
import pytest

from uxpr.uxv import (MAGIC, UxvError, load_labels, load_signed, load_volume,
                      read_uxv, save_labels, save_signed, save_volume, write_uxv)
from uxpr.volume import LabelEntry, LabelVolume, SignedVolume, Volume


def test_roundtrip_u8(tmp_path):
    p = tmp_path / "v.uxv"
    v = Volume((4, 3, 2), np.arange(24, dtype=np.uint8))
    save_volume(p, v)
    back = load_volume(p)
    assert back.dims == v.dims
    assert np.array_equal(back.data, v.data)


def test_roundtrip_signed(tmp_path):
    p = tmp_path / "s.uxv"
    a = Volume((6,), np.array([0, 250, 3, 9, 9, 1], np.uint8))
    b = Volume((6,), np.array([250, 0, 3, 1, 19, 1], np.uint8))
    s = SignedVolume.difference(a, b)
    save_signed(p, s)
    back = load_signed(p)
    assert back.dims == s.dims
    assert np.array_equal(back.data, s.data)
    assert back.data.dtype == np.int16


def test_roundtrip_labels_with_sidecar(tmp_path):
    p = tmp_path / "labels.uxv"
    labels = np.zeros(12, np.uint16)
    labels[3:7] = 1
    labels[9] = 40000  # u16 range survives
    lv = LabelVolume((12,), labels, {
        1: LabelEntry("phone", "mobile_phone", True),
        40000: LabelEntry("sock", "clothing", False),
    })
    save_labels(p, lv)
    assert (tmp_path / "labels.json").exists()
    back = load_labels(p)
    assert np.array_equal(back.labels, lv.labels)
    assert back.table[1].class_name == "mobile_phone"
    assert back.table[1].electrical
    assert not back.table[40000].electrical


def test_write_read_raw(tmp_path):
    p = tmp_path / "raw.uxv"
    data = np.array([0, 1, 65535], np.uint16)
    write_uxv(p, (3,), data, "u16")
    dims, back, dtype = read_uxv(p)
    assert dims == (3,) and dtype == "u16"
    assert np.array_equal(back, data)


def test_read_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.uxv"
    p.write_bytes(b"nope!" + b"\x00" * 10)
    with pytest.raises(UxvError) as e:
        read_uxv(p)
    assert e.value.offset == 0
    assert str(p) in str(e.value)


def test_read_rejects_bad_metadata(tmp_path):
    p = tmp_path / "bad.uxv"
    p.write_bytes(MAGIC + b"not json\n")
    with pytest.raises(UxvError) as e:
        read_uxv(p)
    assert e.value.offset == len(MAGIC)


def test_read_rejects_truncated_payload(tmp_path):
    p = tmp_path / "t.uxv"
    save_volume(p, Volume((8,), np.arange(8, dtype=np.uint8)))
    whole = p.read_bytes()
    p.write_bytes(whole[:-3])
    with pytest.raises(UxvError) as e:
        read_uxv(p)
    assert "truncated" in str(e.value)
    assert e.value.offset == len(whole) - 3


def test_read_rejects_trailing_bytes(tmp_path):
    p = tmp_path / "t.uxv"
    save_volume(p, Volume((8,), np.arange(8, dtype=np.uint8)))
    p.write_bytes(p.read_bytes() + b"x")
    with pytest.raises(UxvError) as e:
        read_uxv(p)
    assert "trailing" in str(e.value)


def test_write_rejects_mismatched_dims(tmp_path):
    with pytest.raises(ValueError):
        write_uxv(tmp_path / "x.uxv", (3, 3), np.zeros(8), "u8")
    with pytest.raises(ValueError):
        write_uxv(tmp_path / "x.uxv", (8,), np.zeros(8), "f32")


def test_payload_is_little_endian_first_axis_fastest(tmp_path):
    p = tmp_path / "v.uxv"
    g = np.array([[1, 2], [3, 4]], np.uint8)  # grid[i1, i0]
    save_volume(p, Volume.from_grid(g))
    raw = p.read_bytes()
    payload = raw.split(b"\n", 2)[2]
    assert payload == bytes([1, 2, 3, 4])
