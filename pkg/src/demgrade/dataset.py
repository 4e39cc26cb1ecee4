"""Image ingestion, grayscale decoding, area resizing and stratified splits.

Images are plain 2-D ``uint8`` numpy arrays of shape ``(height, width)``.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from ._parallel import ordered_map
from .errors import ArgumentError, DecodeError, EmptyDatasetError, PathError, StratifyError

logger = logging.getLogger(__name__)

CLASS_NAMES = ("MildDemented", "ModerateDemented", "NonDemented", "VeryMildDemented")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
NATIVE_SIZE = (128, 128)


def as_image(pixels) -> np.ndarray:
    """Validate and freeze a 2-D intensity grid as a read-only uint8 array."""
    arr = np.asarray(pixels)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ArgumentError(f"image must be a non-empty 2-D grid, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ArgumentError("image intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    else:
        arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    label: int
    path: str  # relative to the dataset root, '/'-separated
    original_size: tuple[int, int]  # (width, height)
    sha256: str


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    class_names: tuple[str, ...] = CLASS_NAMES
    root: str | None = None
    nonstandard_size_count: int = 0

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def images(self) -> list[np.ndarray]:
        return [s.image for s in self.samples]

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=len(self.class_names)).tolist()


@dataclass(frozen=True)
class SplitPartition:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]
    seed: int
    sizes_per_class: dict = field(default_factory=dict, compare=False)

    def as_dict(self):
        return {
            "train": list(self.train),
            "validation": list(self.validation),
            "test": list(self.test),
            "seed": self.seed,
        }


def decode_to_grayscale(encoded: bytes) -> np.ndarray:
    """Decode PNG/JPEG bytes to an 8-bit grayscale image.

    Single-channel sources pass through unchanged. Colour sources are reduced
    with integer-exact luma ``round(0.299 R + 0.587 G + 0.114 B)``; any alpha
    channel is dropped.
    """
    try:
        with PILImage.open(io.BytesIO(encoded)) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "1"):
                return as_image(np.asarray(im.convert("L")))
            if mode == "LA":
                return as_image(np.asarray(im.getchannel("L")))
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                arr = np.asarray(im, dtype=np.float64)
                hi = arr.max() if arr.size else 0.0
                if hi > 255:
                    arr = arr * (255.0 / hi)
                return as_image(np.clip(np.floor(arr + 0.5), 0, 255))
            rgb = np.asarray(im.convert("RGB"), dtype=np.int64)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image stream ({exc})") from exc
    luma = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    return as_image(np.clip(luma, 0, 255))


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def resize_area(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Box-filter resize: each output pixel is the rounded mean of the source
    area it covers. Fractional source coverage is weighted by overlap."""
    if out_w < 1 or out_h < 1:
        raise ArgumentError(f"target dimensions must be >= 1, got {out_w}x{out_h}")
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape
    if (h, w) == (out_h, out_w):
        return as_image(img)
    if h % out_h == 0 and w % out_w == 0:
        fy, fx = h // out_h, w // out_w
        means = src.reshape(out_h, fy, out_w, fx).mean(axis=(1, 3))
    else:
        means = _overlap_matrix(h, out_h) @ src @ _overlap_matrix(w, out_w).T
    return as_image(np.clip(np.floor(means + 0.5), 0, 255))


def _overlap_matrix(n_in, n_out):
    # row i: fraction of each source cell covered by output cell i, normalized
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / m.sum(axis=1, keepdims=True)


def _list_class_files(root: Path):
    entries = []
    for label, name in enumerate(CLASS_NAMES):
        class_dir = root / name
        if not class_dir.is_dir():
            continue
        files = sorted(
            (p for p in class_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
            key=lambda p: p.name,
        )
        entries.extend((label, p) for p in files)
    unknown = sorted(
        p.name for p in root.iterdir() if p.is_dir() and p.name not in CLASS_NAMES
    )
    if unknown:
        logger.warning("ignoring unrecognized class directories: %s", ", ".join(unknown))
    return entries


def load_image_file(path: Path, label: int, root: Path) -> Sample:
    data = path.read_bytes()
    try:
        img = decode_to_grayscale(data)
    except DecodeError as exc:
        raise DecodeError(str(exc.__cause__ or exc), path=str(path)) from exc
    return Sample(
        image=img,
        label=label,
        path=path.relative_to(root).as_posix(),
        original_size=(img.shape[1], img.shape[0]),
        sha256=hashlib.sha256(data).hexdigest(),
    )


def load_dataset(root_path) -> Dataset:
    """Load ``root/<ClassName>/<file>`` images in (class, file name) order."""
    root = Path(root_path)
    if not root.is_dir():
        raise PathError(f"dataset root not found: {root}")
    entries = _list_class_files(root)
    if not entries:
        raise EmptyDatasetError(f"no images found under {root}")
    samples = ordered_map(lambda e: load_image_file(e[1], e[0], root), entries)
    odd = sum(1 for s in samples if s.original_size != NATIVE_SIZE)
    if odd:
        logger.warning("%d image(s) are not %dx%d; they will be resized", odd, *NATIVE_SIZE)
    return Dataset(tuple(samples), CLASS_NAMES, str(root), odd)


def _part_sizes(n, ratios):
    # largest-remainder apportionment; remainder ties go to the earlier part
    raw = [n * r for r in ratios]
    sizes = [int(np.floor(x + 1e-9)) for x in raw]
    while sum(sizes) > n:
        sizes[int(np.argmax(sizes))] -= 1
    rest = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def stratified_split(labels, ratios=(0.8, 0.0, 0.2), seed=0, class_names=CLASS_NAMES) -> SplitPartition:
    """Seeded per-class split into train / validation / test index lists.

    Each class is shuffled with its own PCG-64 stream keyed by
    ``SeedSequence([seed, class_index])``, so partitions are identical across
    platforms and unaffected by the other classes' sizes.

    ``labels`` may be a :class:`Dataset` or a sequence of class indices.
    """
    if isinstance(labels, Dataset):
        class_names = labels.class_names
        labels = labels.labels
    labels = np.asarray(labels, dtype=np.int64)
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ArgumentError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    nonzero_parts = sum(1 for r in ratios if r > 0)
    parts = ([], [], [])
    sizes = {}
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        name = class_names[c] if c < len(class_names) else str(c)
        if len(idx) < nonzero_parts:
            raise StratifyError(
                f"class {name} has {len(idx)} sample(s), fewer than the {nonzero_parts} requested parts",
                class_name=name,
            )
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(c)])))
        shuffled = idx[rng.permutation(len(idx))]
        counts = _part_sizes(len(idx), ratios)
        sizes[name] = counts
        start = 0
        for part, k in zip(parts, counts):
            part.extend(shuffled[start : start + k].tolist())
            start += k
    train, val, test = (tuple(sorted(p)) for p in parts)
    return SplitPartition(train, val, test, int(seed), sizes)


def write_manifest(ds: Dataset, path) -> dict:
    manifest = {
        "root": str(Path(ds.root).resolve()) if ds.root else None,
        "class_names": list(ds.class_names),
        "nonstandard_size_count": ds.nonstandard_size_count,
        "samples": [
            {
                "path": s.path,
                "class_index": s.label,
                "width": s.original_size[0],
                "height": s.original_size[1],
                "sha256": s.sha256,
            }
            for s in ds.samples
        ],
    }
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_manifest_dataset(manifest) -> Dataset:
    """Rebuild a :class:`Dataset` from an ingest manifest (dict or path)."""
    if not isinstance(manifest, dict):
        manifest = json.loads(Path(manifest).read_text())
    root = Path(manifest["root"])
    if not root.is_dir():
        raise PathError(f"dataset root not found: {root}")
    entries = [(e["class_index"], root / e["path"]) for e in manifest["samples"]]
    if not entries:
        raise EmptyDatasetError("manifest lists no samples")
    samples = ordered_map(lambda e: load_image_file(e[1], e[0], root), entries)
    odd = sum(1 for s in samples if s.original_size != NATIVE_SIZE)
    return Dataset(tuple(samples), tuple(manifest.get("class_names", CLASS_NAMES)), str(root), odd)
