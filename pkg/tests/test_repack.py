import numpy as np
import pytest

from uxpr.classify import Prediction
from uxpr.repack import (LIKELY, UNLIKELY, VERY_UNLIKELY, RepackMap, flatten2d,
                         image_volume, load_pgm, load_repack, mip_projection,
                         parse_axis, render_verdict_maps, repack_vote,
                         save_pgm, save_repack)
from uxpr.segments import Segment
from uxpr.uxv import UxvError
from uxpr.volume import Volume


ELECTRICAL = Prediction((0.0, 1.0))
BENIGN = Prediction((1.0, 0.0))


def seg(channel, voxels):
    return Segment("bag", channel, voxels, [1] * len(voxels))


def test_verdict_vote_rules():
    m = repack_vote([
        (seg(2, [0, 1]), ELECTRICAL),
        (seg(3, [1, 2]), ELECTRICAL),
        (seg(4, [5]), BENIGN),
    ], (8,))
    assert list(m.verdict) == [UNLIKELY, LIKELY, UNLIKELY, 0, 0, 0, 0, 0]
    assert m.fraction(VERY_UNLIKELY) == pytest.approx(5 / 8)


def test_same_channel_votes_once():
    m = repack_vote([
        (seg(2, [3]), ELECTRICAL),
        (seg(2, [3, 4]), ELECTRICAL),
    ], (6,))
    assert m.verdict[3] == UNLIKELY
    assert m.verdict[4] == UNLIKELY


def test_ground_truth_segments_never_vote():
    m = repack_vote([
        (seg(0, [0, 1, 2]), ELECTRICAL),
        (seg(2, [2]), ELECTRICAL),
    ], (4,))
    assert list(m.verdict) == [0, 0, UNLIKELY, 0]


def test_vote_matches_brute_force_recount():
    rng = np.random.default_rng(51)
    dims = (5, 4, 3)
    n = 60
    pairs = []
    for _ in range(12):
        channel = int(rng.integers(2, 6))
        voxels = rng.choice(n, size=int(rng.integers(1, 9)), replace=False)
        pred = ELECTRICAL if rng.integers(0, 2) else BENIGN
        pairs.append((seg(channel, voxels.tolist()), pred))
    m = repack_vote(pairs, dims)
    for voxel in range(n):
        channels = {s.channel_index for s, p in pairs
                    if p.predicted == 1 and voxel in s.voxels.tolist()}
        assert m.verdict[voxel] == min(len(channels), 2)


def test_vote_input_guards():
    with pytest.raises(ValueError):
        repack_vote([(seg(2, [9]), ELECTRICAL)], (4,))


def test_repack_map_validation_and_io(tmp_path):
    m = RepackMap((2, 3), [0, 1, 2, 0, 0, 1])
    save_repack(tmp_path / "verdict.uxv", m)
    assert load_repack(tmp_path / "verdict.uxv") == m
    with pytest.raises(ValueError):
        RepackMap((2, 3), [0, 1])
    with pytest.raises(ValueError):
        RepackMap((2,), [0, 3])
    (tmp_path / "junk.uxv").write_bytes(b"junk")
    with pytest.raises(UxvError):
        load_repack(tmp_path / "junk.uxv")


def test_flatten2d_scaling():
    g = np.zeros((2, 2, 2), np.uint8)
    g[:, 0, 0] = 4   # column sums along z: 8 at (0,0)
    g[0, 1, 1] = 4   # 4 at (1,1)
    v = Volume.from_grid(g)
    img = flatten2d(v, "z")
    assert img.shape == (2, 2)
    assert img[0, 0] == 255
    assert img[1, 1] == 128  # round(4/8 * 255) rounds half up
    assert img[0, 1] == 0


def test_flatten2d_zero_volume_and_axes():
    v = Volume((3, 4, 5), np.zeros(60, np.uint8))
    assert not flatten2d(v, "y").any()
    assert flatten2d(v, "x").shape == (5, 4)
    assert flatten2d(v, 0).shape == (5, 4)
    with pytest.raises(ValueError):
        flatten2d(Volume((4, 5), np.zeros(20, np.uint8)), "z")
    with pytest.raises(ValueError):
        parse_axis("w")


def test_mip_projection():
    g = np.zeros((2, 3, 4), np.uint8)
    g[1, 2, 3] = 77
    g[0, 2, 3] = 11
    v = Volume.from_grid(g)
    mip = mip_projection(v, "z")
    assert mip.shape == (3, 4)
    assert mip[2, 3] == 77
    assert mip_projection(v, "x").max() == 77


def test_image_volume_is_2d():
    img = np.array([[1, 2, 3], [4, 5, 6]], np.uint8)
    v = image_volume(img)
    assert v.ndim == 2
    assert v.dims == (3, 2)
    assert (v.grid == img).all()
    with pytest.raises(ValueError):
        image_volume(np.zeros((2, 2, 2), np.uint8))


def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(52)
    img = rng.integers(0, 256, (7, 5), np.uint8)
    path = tmp_path / "img.pgm"
    save_pgm(path, img)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n5 7\n255\n")
    assert (load_pgm(path) == img).all()


def test_pgm_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6\n2 2\n255\nxxxx")
    with pytest.raises(UxvError):
        load_pgm(bad)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\nxx")
    with pytest.raises(UxvError) as err:
        load_pgm(short)
    assert "expected 16" in str(err.value)


def test_render_verdict_maps(tmp_path):
    v = Volume((4, 4, 4), np.full(64, 100, np.uint8))
    verdict = np.zeros(64, np.uint8)
    verdict[:8] = LIKELY
    verdict[8:12] = UNLIKELY
    paths = render_verdict_maps(tmp_path, v, RepackMap((4, 4, 4), verdict))
    assert len(paths) == 9
    names = sorted(p.rsplit("/", 1)[1] for p in paths)
    assert names[0] == "verdict_likely_x.pgm"
    assert all((tmp_path / n).exists() for n in names)
    likely = load_pgm(tmp_path / "verdict_likely_z.pgm")
    assert likely.max() == 100
    with pytest.raises(ValueError):
        render_verdict_maps(tmp_path, v, RepackMap((2, 2), [0, 0, 0, 0]))
