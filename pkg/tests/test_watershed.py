from collections import deque
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from demgrade.errors import ArgumentError, MarkerError
from demgrade.watershed import (
    BACKGROUND,
    BOUNDARY,
    WatershedParams,
    connected_components,
    dilate,
    distance_transform,
    erode,
    extract_markers,
    morphology,
    otsu_threshold,
    segment,
    watershed_features,
    watershed_flood,
)

# -- oracles -----------------------------------------------------------------


def otsu_oracle(img):
    """Exhaustive search over all 256 thresholds using per-pixel sums."""
    px = [int(v) for v in np.asarray(img).ravel()]
    if len(set(px)) == 1:
        return px[0]
    best, best_t = None, None
    for t in range(256):
        lo = [v for v in px if v <= t]
        hi = [v for v in px if v > t]
        if not lo or not hi:
            continue
        w0 = Fraction(len(lo), len(px))
        w1 = 1 - w0
        mu0 = Fraction(sum(lo), len(lo))
        mu1 = Fraction(sum(hi), len(hi))
        var = w0 * w1 * (mu0 - mu1) ** 2
        if best is None or var > best:
            best, best_t = var, t
    return best_t


def edt_oracle(mask):
    """Nearest background pixel by brute force; the ring outside the grid is background."""
    h, w = mask.shape
    bg = [(y, x) for y in range(-1, h + 1) for x in range(-1, w + 1) if not (0 <= y < h and 0 <= x < w) or not mask[y, x]]
    bg = np.array(bg, dtype=np.float64)
    out = np.zeros((h, w))
    for y, x in zip(*np.nonzero(mask)):
        out[y, x] = np.sqrt(((bg - (y, x)) ** 2).sum(axis=1).min())
    return out


def components_oracle(mask):
    """Union-find over 8-neighbourhoods; returns the partition as a set of frozensets."""
    h, w = mask.shape
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for y, x in zip(*np.nonzero(mask)):
        parent[(y, x)] = (y, x)
    for y, x in list(parent):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                q = (y + dy, x + dx)
                if q in parent:
                    parent[find((y, x))] = find(q)
    groups = {}
    for p in parent:
        groups.setdefault(find(p), set()).add(p)
    return {frozenset(g) for g in groups.values()}


def dilate_oracle(mask):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            out[y, x] = mask[max(0, y - 1) : y + 2, max(0, x - 1) : x + 2].any()
    return out


def is_4_connected(pixels):
    pixels = set(pixels)
    start = next(iter(pixels))
    seen = {start}
    todo = deque([start])
    while todo:
        y, x = todo.popleft()
        for q in ((y + 1, x), (y - 1, x), (y, x + 1), (y, x - 1)):
            if q in pixels and q not in seen:
                seen.add(q)
                todo.append(q)
    return len(seen) == len(pixels)


def check_flood_partition(markers, labels):
    h, w = markers.shape
    assert np.all(labels != 0)
    basins = [int(v) for v in np.unique(labels) if v != BOUNDARY]
    assert set(basins) <= set(np.unique(markers[markers > 0]).tolist()) | {BACKGROUND}
    assert (labels == BOUNDARY).sum() + sum((labels == b).sum() for b in basins) == h * w
    for b in basins:
        region = labels == b
        assert np.any(region & (markers == b))
        # every connected piece of a basin holds one of that basin's markers
        for piece in components4(region):
            assert any(markers[p] == b for p in piece)


def components4(region):
    pixels = set(zip(*np.nonzero(region)))
    pieces = []
    while pixels:
        start = pixels.pop()
        piece = {start}
        todo = [start]
        while todo:
            y, x = todo.pop()
            for q in ((y + 1, x), (y - 1, x), (y, x + 1), (y, x - 1)):
                if q in pixels:
                    pixels.remove(q)
                    piece.add(q)
                    todo.append(q)
        pieces.append(piece)
    return pieces


def disc_image(size=32, centres=((16, 9), (16, 23)), radius=7):
    yy, xx = np.mgrid[:size, :size]
    img = np.zeros((size, size), np.uint8)
    for cy, cx in centres:
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius] = 220
    return img


# -- otsu --------------------------------------------------------------------


def test_otsu_constant():
    level, mask = otsu_threshold(np.full((8, 8), 77, np.uint8))
    assert level == 77
    assert not mask.any()


def test_otsu_two_modes():
    img = np.zeros((4, 4), np.uint8)
    img[:, 2:] = 255
    level, mask = otsu_threshold(img)
    assert 0 <= level <= 254
    assert np.array_equal(mask, img == 255)


def test_otsu_three_level_histogram():
    img = np.array([0] * 6 + [100] * 4 + [200] * 6, np.uint8).reshape(4, 4)
    level, _ = otsu_threshold(img)
    assert level == otsu_oracle(img)
    assert level == 0  # {0} vs {100,200} ties {0,100} vs {200}; smallest wins


def test_otsu_invert_flips_mask(rng):
    img = rng.integers(0, 256, (9, 9)).astype(np.uint8)
    level, mask = otsu_threshold(img)
    level2, inv = otsu_threshold(img, invert=True)
    assert level == level2
    assert np.array_equal(mask, ~inv)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8))))
def test_otsu_matches_oracle_property(img):
    level, mask = otsu_threshold(img)
    assert level == otsu_oracle(img)
    assert np.array_equal(mask, img > level)


# -- morphology --------------------------------------------------------------


def test_dilate_full_mask_fixed_point():
    assert morphology(np.ones((5, 5), bool), "dilate").all()


def test_erode_removes_isolated_pixel():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    assert not morphology(m, "erode").any()


def test_dilate_grows_block():
    m = np.zeros((7, 7), bool)
    m[2:5, 2:5] = True
    want = np.zeros((7, 7), bool)
    want[1:6, 1:6] = True
    out = morphology(m, "dilate")
    assert np.array_equal(out, want)
    assert np.array_equal(out, dilate_oracle(m))


def test_open_is_erode_then_dilate(rng):
    m = rng.random((12, 12)) > 0.4
    assert np.array_equal(morphology(m, "open", 2), dilate(erode(m, 2), 2))


def test_morphology_rejects_unknown_op():
    with pytest.raises(ArgumentError):
        morphology(np.ones((3, 3), bool), "close")


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))), st.integers(1, 3))
def test_erode_dilate_duality(mask, k):
    # outside the grid is false for both ops, so the dual of dilation sees a
    # true border; erode(ones) removes exactly that border band
    ones = np.ones_like(mask)
    assert np.array_equal(erode(mask, k), ~dilate(~mask, k) & erode(ones, k))


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(bool, st.tuples(st.integers(1, 10), st.integers(1, 10))))
def test_dilate_matches_oracle(mask):
    assert np.array_equal(dilate(mask), dilate_oracle(mask))


# -- distance transform ------------------------------------------------------


def test_edt_all_background():
    assert not distance_transform(np.zeros((6, 4), bool)).any()


def test_edt_single_pixel():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    assert distance_transform(m)[2, 2] == 1.0


def test_edt_full_square_uses_border():
    d = distance_transform(np.ones((5, 5), bool))
    assert d[2, 2] == 3.0
    assert np.array_equal(d, edt_oracle(np.ones((5, 5), bool)))
    assert d[0, 0] == 1.0


def test_edt_matches_oracle_random(rng):
    for _ in range(40):
        h, w = rng.integers(1, 33, 2)
        m = rng.random((h, w)) < rng.uniform(0.3, 0.95)
        assert np.allclose(distance_transform(m), edt_oracle(m), rtol=0, atol=1e-9)


# -- markers -----------------------------------------------------------------


def test_markers_empty_fg():
    markers, overlap = extract_markers(np.zeros((4, 4), bool), np.ones((4, 4), bool))
    assert np.all(markers == BACKGROUND)
    assert overlap == 0


def test_markers_two_blobs_row_major():
    fg = np.zeros((6, 6), bool)
    fg[4, 0] = True  # first pixel comes later in row-major order
    fg[1, 4:6] = True
    markers, _ = extract_markers(fg, np.zeros_like(fg))
    assert markers[1, 4] == 2 and markers[1, 5] == 2
    assert markers[4, 0] == 3
    assert (markers == 0).sum() == 33


def test_markers_diagonal_pair_is_one_component():
    fg = np.zeros((3, 3), bool)
    fg[0, 0] = fg[1, 1] = True
    markers, _ = extract_markers(fg, np.zeros_like(fg))
    assert markers[0, 0] == markers[1, 1] == 2


def test_markers_overlap_prefers_fg():
    fg = np.zeros((3, 3), bool)
    fg[1, 1] = True
    markers, overlap = extract_markers(fg, np.ones((3, 3), bool))
    assert overlap == 1
    assert markers[1, 1] == 2
    assert (markers == BACKGROUND).sum() == 8


def test_components_match_union_find(rng):
    for _ in range(50):
        m = rng.random(tuple(rng.integers(1, 16, 2))) < 0.45
        labels, count = connected_components(m, 8, start=2)
        ours = {frozenset(zip(*np.nonzero(labels == v))) for v in range(2, 2 + count)}
        assert ours == components_oracle(m)
        # row-major first-pixel order
        firsts = [min(zip(*np.nonzero(labels == v))) for v in range(2, 2 + count)]
        assert firsts == sorted(firsts)


# -- flooding ----------------------------------------------------------------


def test_flood_uniform_single_marker():
    markers = np.zeros((5, 6), np.int64)
    markers[2, 3] = 2
    out = watershed_flood(np.full((5, 6), 40), markers)
    assert np.all(out == 2)


def test_flood_ramp_has_middle_boundary():
    out = watershed_flood(np.array([[0, 1, 9, 1, 0]]), np.array([[2, 0, 0, 0, 3]]))
    assert out.tolist() == [[2, 2, BOUNDARY, 3, 3]]


def test_flood_saturated_markers_unchanged(rng):
    markers = rng.integers(1, 5, (6, 6))
    assert np.array_equal(watershed_flood(rng.integers(0, 256, (6, 6)), markers), markers)


def test_flood_without_markers():
    with pytest.raises(MarkerError):
        watershed_flood(np.zeros((3, 3)), np.zeros((3, 3), np.int64))


def test_flood_pop_order_monotone(rng):
    img = rng.integers(0, 256, (16, 16))
    markers = np.zeros((16, 16), np.int64)
    markers[3, 3], markers[12, 10], markers[0, 15] = 2, 3, 1
    trace = []
    watershed_flood(img, markers, trace)
    assert len(trace) == 16 * 16 - 3
    assert all(a <= b for a, b in zip(trace, trace[1:]))


def random_markers(rng, shape):
    markers = np.zeros(shape, np.int64)
    n = rng.integers(1, 6)
    for lab in range(1, n + 1):
        y, x = rng.integers(0, shape[0]), rng.integers(0, shape[1])
        markers[y : y + rng.integers(1, 3), x : x + rng.integers(1, 3)] = lab
    return markers


def test_flood_partition_invariants(rng):
    for _ in range(60):
        img = rng.integers(0, 256, (16, 16))
        markers = random_markers(rng, (16, 16))
        check_flood_partition(markers, watershed_flood(img, markers))


# -- full chain --------------------------------------------------------------


def test_features_constant_image_is_degenerate():
    img = np.full((32, 32), 90, np.uint8)
    out, degenerate = watershed_features(img)
    assert degenerate
    assert np.array_equal(out, img)


def test_features_two_discs():
    img = disc_image()
    seg = segment(img)
    assert not seg.degenerate
    assert seg.markers.max() == 3  # two object markers
    assert set(np.unique(seg.labels).tolist()) == {BOUNDARY, 1, 2, 3}
    # the ridge between the discs, on the centre row, is burned in
    row = seg.features[16, 9:24]
    assert (row == 255).any()
    assert np.array_equal(seg.features == 255, (seg.labels == BOUNDARY) | (img == 255))
    # every per-step output agrees with the standalone oracles
    assert seg.level == otsu_oracle(img)
    assert np.allclose(seg.distance, edt_oracle(seg.opened))
    check_flood_partition(seg.markers, seg.labels)


def test_features_left_disc_and_right_disc_in_separate_basins():
    seg = segment(disc_image())
    assert seg.labels[16, 9] != seg.labels[16, 23]
    assert {seg.labels[16, 9], seg.labels[16, 23]} == {2, 3}


def test_features_deterministic(rng):
    img = rng.integers(0, 256, (32, 32)).astype(np.uint8)
    a, fa = watershed_features(img)
    b, fb = watershed_features(img.copy())
    assert fa == fb
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.uint8, st.tuples(st.integers(2, 24), st.integers(2, 24))))
def test_features_shape_and_range(img):
    out, _ = watershed_features(img)
    assert out.shape == img.shape
    assert out.dtype == np.uint8


def test_params_change_result():
    img = disc_image()
    a = segment(img, WatershedParams(fg_ratio=0.7))
    b = segment(img, WatershedParams(fg_ratio=0.99))
    assert (a.sure_fg.sum()) > (b.sure_fg.sum())
