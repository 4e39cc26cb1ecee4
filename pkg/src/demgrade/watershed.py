"""Marker-based watershed segmentation and the boundary-overlay feature image.

The chain is: Otsu threshold -> opening -> dilated sure background ->
Euclidean distance transform -> thresholded sure foreground -> 8-connected
markers -> priority flooding. Boundary pixels of the final label map are
burned into the grayscale input at intensity 255 and that overlay is what
the classifiers see.
"""

from __future__ import annotations

import heapq
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .dataset import as_image
from .errors import ArgumentError, MarkerError

BOUNDARY = -1
UNKNOWN = 0
BACKGROUND = 1
FIRST_OBJECT = 2

_N4 = ((-1, 0), (0, -1), (0, 1), (1, 0))
_N8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class WatershedParams:
    open_iterations: int = 2
    dilate_iterations: int = 3
    fg_ratio: float = 0.7
    element_size: int = 3
    invert: bool = False

    def __post_init__(self):
        if self.open_iterations < 1 or self.dilate_iterations < 1:
            raise ArgumentError("morphology iteration counts must be >= 1")
        if not 0.0 <= self.fg_ratio < 1.0:
            raise ArgumentError("fg_ratio must lie in [0, 1)")
        if self.element_size < 1 or self.element_size % 2 == 0:
            raise ArgumentError("structuring element size must be a positive odd number")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Segmentation:
    """Every intermediate of one watershed run, kept for auditing."""

    level: int
    mask: np.ndarray
    opened: np.ndarray
    sure_bg: np.ndarray
    distance: np.ndarray
    sure_fg: np.ndarray
    markers: np.ndarray
    labels: np.ndarray | None
    features: np.ndarray
    degenerate: bool
    overlap: int = 0


# -- thresholding ------------------------------------------------------------


def _between_class_score(n0, s0, n1, s1):
    # n^2 * sigma_between^2 == (s0*n1 - s1*n0)^2 / (n0*n1); exact rational
    return Fraction((s0 * n1 - s1 * n0) ** 2, n0 * n1)


def otsu_threshold(img, invert=False):
    """Return ``(level, mask)`` with ``mask = img > level`` (or ``<=`` when
    inverted).

    ``level`` maximizes between-class variance over every threshold that
    leaves both classes non-empty; ties go to the smallest level. Scores are
    compared as exact rationals so the result never depends on rounding.
    A single-valued image yields that value as the level.
    """
    arr = np.asarray(img)
    if arr.size == 0:
        raise ArgumentError("otsu_threshold needs a non-empty image")
    hist = np.bincount(arr.ravel().astype(np.int64), minlength=256).tolist()
    n = arr.size
    total = sum(i * h for i, h in enumerate(hist))
    best_level, best_score = int(arr.max()), None
    n0 = s0 = 0
    for t in range(256):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        score = _between_class_score(n0, s0, n1, total - s0)
        if best_score is None or score > best_score:
            best_level, best_score = t, score
    mask = arr <= best_level if invert else arr > best_level
    return best_level, mask


# -- binary morphology -------------------------------------------------------


def _shift_reduce(mask, reducer, size):
    r = size // 2
    h, w = mask.shape
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    padded[r : r + h, r : r + w] = mask
    out = None
    for dy in range(size):
        for dx in range(size):
            window = padded[dy : dy + h, dx : dx + w]
            out = window.copy() if out is None else reducer(out, window)
    return out


def erode(mask, iterations=1, size=3):
    out = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        out = _shift_reduce(out, np.logical_and, size)
    return out


def dilate(mask, iterations=1, size=3):
    out = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        out = _shift_reduce(out, np.logical_or, size)
    return out


def morphology(mask, op, iterations=1, size=3):
    """Square-element binary morphology; pixels outside the grid count as false.

    ``op`` is ``"erode"``, ``"dilate"`` or ``"open"`` (erode ``iterations``
    times, then dilate ``iterations`` times).
    """
    if iterations < 1:
        raise ArgumentError("iterations must be >= 1")
    if op == "erode":
        return erode(mask, iterations, size)
    if op == "dilate":
        return dilate(mask, iterations, size)
    if op == "open":
        return dilate(erode(mask, iterations, size), iterations, size)
    raise ArgumentError(f"unknown morphology op {op!r}")


# -- distance transform ------------------------------------------------------


def _column_distance(bg):
    # per column, |row offset| to the nearest background pixel (two scans)
    h, w = bg.shape
    big = h + w
    g = np.full((h, w), big, dtype=np.int64)
    g[0] = np.where(bg[0], 0, big)
    for y in range(1, h):
        g[y] = np.where(bg[y], 0, g[y - 1] + 1)
    for y in range(h - 2, -1, -1):
        g[y] = np.minimum(g[y], g[y + 1] + 1)
    return g


def distance_transform(mask):
    """Exact Euclidean distance from each foreground pixel to the nearest
    background pixel, treating everything outside the grid as background.

    Two-phase separable scheme: column-wise nearest background, then for each
    row an exact minimum of ``(x - x')**2 + g(x')**2`` over all ``x'``.
    """
    fg = np.asarray(mask, dtype=bool)
    h, w = fg.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = fg
    g2 = _column_distance(~padded) ** 2
    xs = np.arange(w + 2)
    dx2 = (xs[:, None] - xs[None, :]) ** 2
    sq = (g2[:, None, :] + dx2[None, :, :]).min(axis=2)
    out = np.sqrt(sq[1:-1, 1:-1].astype(np.float64))
    out[~fg] = 0.0
    return out


# -- markers -----------------------------------------------------------------


def connected_components(mask, connectivity=8, start=1):
    """Label connected components in row-major order of their first pixel."""
    fg = np.asarray(mask, dtype=bool)
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=np.int64)
    offsets = _N8 if connectivity == 8 else _N4
    nxt = start
    for y0, x0 in zip(*np.nonzero(fg)):
        if labels[y0, x0]:
            continue
        labels[y0, x0] = nxt
        stack = [(y0, x0)]
        while stack:
            y, x = stack.pop()
            for dy, dx in offsets:
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and fg[yy, xx] and not labels[yy, xx]:
                    labels[yy, xx] = nxt
                    stack.append((yy, xx))
        nxt += 1
    return labels, nxt - start


def extract_markers(sure_fg, sure_bg):
    """Build a marker map: 0 unknown, 1 background, 2.. object components.

    Returns ``(markers, overlap)`` where ``overlap`` counts pixels flagged as
    both sure foreground and sure background; foreground wins there.
    """
    fg = np.asarray(sure_fg, dtype=bool)
    bg = np.asarray(sure_bg, dtype=bool)
    if fg.shape != bg.shape:
        raise ArgumentError(f"marker masks disagree in shape: {fg.shape} vs {bg.shape}")
    overlap = int(np.count_nonzero(fg & bg))
    markers, _ = connected_components(fg, connectivity=8, start=FIRST_OBJECT)
    markers[bg & ~fg] = BACKGROUND
    return markers, overlap


# -- flooding ----------------------------------------------------------------


def watershed_flood(img, markers, trace=None):
    """Meyer priority flooding from ``markers`` over intensity ``img``.

    Queue keys are ``(level, sequence)``. A pixel's level is its intensity,
    raised to the level of the pixel that queued it, so pops never go
    downhill. When a pixel is popped it takes the single label found among
    its labelled 4-neighbours, or becomes a boundary (-1) when it sees two or
    more. A pixel reached only through boundary pixels is itself a boundary.

    If ``trace`` is a list, popped keys are appended to it.
    """
    inten = np.asarray(img, dtype=np.int64)
    labels = np.array(markers, dtype=np.int64, copy=True)
    if inten.shape != labels.shape:
        raise ArgumentError(f"image {inten.shape} and markers {labels.shape} differ in shape")
    if not np.any(labels > 0):
        raise MarkerError("watershed_flood needs at least one nonzero marker")
    h, w = labels.shape
    queued = labels != UNKNOWN
    heap = []
    seq = 0
    for y, x in zip(*np.nonzero(labels > 0)):
        for dy, dx in _N4:
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and not queued[yy, xx]:
                queued[yy, xx] = True
                heapq.heappush(heap, (int(inten[yy, xx]), seq, yy, xx))
                seq += 1
    while heap:
        level, _, y, x = heapq.heappop(heap)
        if trace is not None:
            trace.append(level)
        found = None
        for dy, dx in _N4:
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w:
                lab = labels[yy, xx]
                if lab > 0:
                    if found is None:
                        found = lab
                    elif lab != found:
                        found = BOUNDARY
                        break
        labels[y, x] = BOUNDARY if found is None else found
        for dy, dx in _N4:
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and not queued[yy, xx]:
                queued[yy, xx] = True
                heapq.heappush(heap, (max(level, int(inten[yy, xx])), seq, yy, xx))
                seq += 1
    return labels


# -- full pipeline -----------------------------------------------------------


def segment(img, params: WatershedParams | None = None) -> Segmentation:
    """Run the full marker-watershed chain and keep every intermediate."""
    p = params or WatershedParams()
    gray = np.asarray(img, dtype=np.uint8)
    level, mask = otsu_threshold(gray, invert=p.invert)
    opened = morphology(mask, "open", p.open_iterations, p.element_size)
    region = dilate(opened, p.dilate_iterations, p.element_size)
    sure_bg = ~region
    distance = distance_transform(opened)
    peak = distance.max()
    sure_fg = distance > p.fg_ratio * peak if peak > 0 else np.zeros_like(opened)
    markers, overlap = extract_markers(sure_fg, sure_bg)
    if markers.max() < FIRST_OBJECT:
        return Segmentation(
            level, mask, opened, sure_bg, distance, sure_fg, markers, None, as_image(gray), True, overlap
        )
    labels = watershed_flood(gray, markers)
    feats = gray.copy()
    feats[labels == BOUNDARY] = 255
    return Segmentation(
        level, mask, opened, sure_bg, distance, sure_fg, markers, labels, as_image(feats), False, overlap
    )


def watershed_features(img, params: WatershedParams | None = None):
    """Return ``(feature_image, degenerate)`` for one working-resolution image.

    With no object markers the input comes back unchanged and ``degenerate``
    is True.
    """
    seg = segment(img, params)
    return seg.features, seg.degenerate
