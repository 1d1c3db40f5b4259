from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vimunet.harness.data import SyntheticDatasetSpec, generate_dataset
from vimunet.instseg import (
    connected_components,
    distance_transform,
    make_targets_boundary,
    make_targets_distance,
    priority_flood,
    read_pgm,
    relabel_sequential,
    remove_small,
    watershed_from_boundary,
    watershed_from_distance,
    write_pgm,
)
from vimunet.metrics import mean_segmentation_accuracy


def _flood_fill_components(mask):
    """BFS labeling in raster order of first pixel, 4-connected."""
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.int64)
    nxt = 0
    for i in range(h):
        for j in range(w):
            if mask[i, j] and not out[i, j]:
                nxt += 1
                out[i, j] = nxt
                queue = deque([(i, j)])
                while queue:
                    y, x = queue.popleft()
                    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                        v, u = y + dy, x + dx
                        if 0 <= v < h and 0 <= u < w and mask[v, u] and not out[v, u]:
                            out[v, u] = nxt
                            queue.append((v, u))
    return out


def _brute_force_edt(mask):
    """Nearest background over every pixel, outside-the-image counted as background."""
    h, w = mask.shape
    padded = np.pad(mask, 1)
    bg = np.argwhere(~padded)
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if mask[i, j]:
                d2 = ((bg - (i + 1, j + 1)) ** 2).sum(axis=1)
                out[i, j] = np.sqrt(d2.min())
    return out


# -- connected components -------------------------------------------------------------


def test_cc_trivial_cases():
    assert connected_components(np.zeros((5, 5), bool)).max() == 0
    diag = np.array([[1, 0], [0, 1]], bool)
    assert connected_components(diag).max() == 2


@pytest.mark.parametrize("seed", range(20))
def test_cc_matches_flood_fill(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((16, 16)) < rng.uniform(0.3, 0.7)
    assert np.array_equal(connected_components(mask), _flood_fill_components(mask))


# -- distance transform ------------------------------------------------------------------


def test_edt_simple_cases():
    full = np.ones((7, 7), bool)
    assert distance_transform(full)[3, 3] == 4.0  # nearest outside pixel is 4 steps away
    one = np.zeros((5, 5), bool)
    one[2, 2] = True
    dt = distance_transform(one)
    assert dt[2, 2] == 1.0 and dt.sum() == 1.0


def test_edt_matches_brute_force_on_100_masks():
    rng = np.random.default_rng(7)
    for _ in range(100):
        h, w = rng.integers(1, 13, size=2)
        mask = rng.random((h, w)) < rng.uniform(0.2, 0.95)
        assert np.array_equal(distance_transform(mask), _brute_force_edt(mask))


@settings(max_examples=50, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 10), st.integers(1, 10))))
def test_edt_property(mask):
    assert np.array_equal(distance_transform(mask), _brute_force_edt(mask))


# -- targets -------------------------------------------------------------------------------


def test_boundary_targets():
    assert not make_targets_boundary(np.zeros((6, 6), int)).any()
    square = np.zeros((7, 7), int)
    square[2:5, 2:5] = 1
    t = make_targets_boundary(square)
    assert t.shape == (2, 7, 7) and t[0].sum() == 9 and t[1].sum() == 8 and t[1][3, 3] == 0
    pair = np.zeros((6, 8), int)
    pair[1:5, 1:4] = 1
    pair[1:5, 4:7] = 2
    b = make_targets_boundary(pair)[1]
    assert b[2:4, 3].all() and b[2:4, 4].all()  # shared edge on both sides
    # neighbour-scan oracle
    oracle = np.zeros_like(b)
    for i in range(6):
        for j in range(8):
            if pair[i, j]:
                for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    v, u = i + di, j + dj
                    if 0 <= v < 6 and 0 <= u < 8 and pair[v, u] != pair[i, j]:
                        oracle[i, j] = 1
    assert np.array_equal(b, oracle)


def test_distance_targets():
    assert not make_targets_distance(np.zeros((5, 5), int)).any()
    one = np.zeros((5, 5), int)
    one[2, 2] = 3
    t = make_targets_distance(one)
    assert t[1, 2, 2] == 1.0 and t[2, 2, 2] == 1.0
    yy, xx = np.mgrid[0:21, 0:21]
    disk = ((yy - 10) ** 2 + (xx - 10) ** 2 <= 64).astype(int)
    t = make_targets_distance(disk)
    assert t.min() >= 0 and t.max() <= 1
    for ray in (t[1, 10, 10:19], t[2, 10, 10:19], t[1, 10:19, 10], t[2, 10:19, 10]):
        assert np.all(np.diff(ray) <= 1e-7)  # non-increasing moving out from the center
    assert t[1, 10, 10] == 1.0 and t[2, 10, 10] == 1.0


# -- watershed -------------------------------------------------------------------------------


def test_watershed_boundary_examples():
    assert watershed_from_boundary(np.zeros((6, 6)), np.zeros((6, 6))).max() == 0
    fg = np.ones((8, 8))
    bnd = np.zeros((8, 8))
    bnd[:, 4] = 0.9
    out = watershed_from_boundary(fg, bnd)
    assert out.max() == 2 and (out > 0).all()
    # the ridge column goes to whichever basin reaches it first: the left one, by raster order
    assert set(np.unique(out[:, :4])) == {1} and set(np.unique(out[:, 5:])) == {2}
    assert (out[:, 4] == 1).all()


def _flood_oracle(elev, seeds, mask):
    """Reference priority flood with an explicit sorted frontier."""
    h, w = elev.shape
    out = np.where(mask, seeds, 0)
    frontier = [(elev[i, j], n, i, j) for n, (i, j) in enumerate(np.argwhere(out > 0))]
    counter = len(frontier)
    while frontier:
        frontier.sort()
        _, _, i, j = frontier.pop(0)
        for di, dj in ((-1, 0), (0, -1), (0, 1), (1, 0)):
            v, u = i + di, j + dj
            if 0 <= v < h and 0 <= u < w and mask[v, u] and out[v, u] == 0:
                out[v, u] = out[i, j]
                frontier.append((elev[v, u], counter, v, u))
                counter += 1
    return out


@pytest.mark.parametrize("seed", range(10))
def test_priority_flood_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    elev = rng.random((9, 9)).round(1)  # ties exercise the insertion-order rule
    mask = rng.random((9, 9)) < 0.85
    seeds = np.zeros((9, 9), int)
    for k, (i, j) in enumerate(rng.integers(0, 9, size=(4, 2)), start=1):
        seeds[i, j] = k
    assert np.array_equal(priority_flood(elev, seeds, mask), _flood_oracle(elev, seeds, mask))


def test_watershed_distance_examples():
    gt = np.zeros((12, 12), int)
    gt[2:9, 3:10] = 1
    t = make_targets_distance(gt)
    out = watershed_from_distance(t[0], t[1], t[2])
    assert np.array_equal(out > 0, gt > 0) and out.max() == 1
    assert watershed_from_distance(t[0], t[1], t[2], seed_threshold=1.0).max() == 0


@pytest.mark.parametrize("kind", ["blobs-small", "regions-large"])
def test_round_trips(kind):
    ds = generate_dataset(SyntheticDatasetSpec(kind=kind, n_images=20, seed=3))
    for s in ds.train[:8]:
        tb = make_targets_boundary(s.labels)
        assert mean_segmentation_accuracy(watershed_from_boundary(tb[0], tb[1]), s.labels)[0] >= 0.8
        td = make_targets_distance(s.labels)
        assert mean_segmentation_accuracy(watershed_from_distance(*td), s.labels)[0] >= 0.7


def test_watershed_is_deterministic():
    rng = np.random.default_rng(0)
    fg, bnd = rng.random((20, 20)), rng.random((20, 20))
    assert np.array_equal(watershed_from_boundary(fg, bnd), watershed_from_boundary(fg, bnd))


def test_remove_small_and_relabel():
    lab = np.array([[1, 1, 0, 5], [1, 1, 0, 0], [1, 0, 0, 9], [0, 0, 9, 9]])
    assert np.array_equal(relabel_sequential(lab), np.array(
        [[1, 1, 0, 2], [1, 1, 0, 0], [1, 0, 0, 3], [0, 0, 3, 3]]))
    kept = remove_small(lab, 5)
    assert kept.max() == 1 and kept.sum() == 5


# -- PGM ---------------------------------------------------------------------------------------


def test_pgm_round_trip(tmp_path):
    lab = np.random.default_rng(0).integers(0, 65536, size=(7, 11))
    path = tmp_path / "x.pgm"
    write_pgm(path, lab)
    assert path.read_bytes().startswith(b"P5\n11 7\n65535\n")
    assert np.array_equal(read_pgm(path), lab)
    write_pgm(path, lab)  # overwrite
    assert np.array_equal(read_pgm(path), lab)
    with pytest.raises(ValueError):
        write_pgm(path, lab[None])
    with pytest.raises(ValueError):
        write_pgm(path, -lab - 1)


def test_pgm_reader_skips_comments(tmp_path):
    path = tmp_path / "c.pgm"
    body = np.array([[1, 2], [3, 4]], dtype=">u2").tobytes()
    path.write_bytes(b"P5\n# made by hand\n2 2\n65535\n" + body)
    assert read_pgm(path).tolist() == [[1, 2], [3, 4]]
