"""Dataset scanning, image decoding, batching and the synthetic benchmark set.

Two on-disk layouts are understood:

* ``root/<ClassName>/*.png|*.ppm`` (one directory per class), and
* a UTF-8 CSV with header ``path,label`` whose paths are relative to the CSV.

Label indices follow the alphabetical order of :data:`CLASS_NAMES`.
"""

from __future__ import annotations

import colorsys
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, DecodeError, LabelError
from .layers import one_hot
from .model import CLASS_NAMES
from .rng import SplitMix64
from .tensor import Tensor

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")
_SIGNATURES = {".png": b"\x89PNG\r\n\x1a\n", ".ppm": b"P6"}
LABEL_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}


@dataclass
class DatasetIndex:
    entries: list[tuple[Path, int]]
    class_names: tuple[str, ...] = CLASS_NAMES
    split: str | None = None
    skipped: list[tuple[Path, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[int]:
        return [label for _, label in self.entries]


@dataclass
class Dataset:
    """Decoded images ``[N, 3, H, W]`` in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...] = CLASS_NAMES
    paths: list[Path] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        paths = [self.paths[i] for i in indices] if self.paths is not None else None
        return Dataset(self.images[indices], self.labels[indices], self.class_names, paths)


@dataclass
class Batch:
    images: Tensor  # [N, 3, H, W]
    labels: list[int]
    onehot: Tensor  # [N, num_classes]

    def __len__(self) -> int:
        return len(self.labels)


def label_index(name: str) -> int:
    try:
        return LABEL_INDEX[name]
    except KeyError:
        raise LabelError(f"unknown class name {name!r}; expected one of {', '.join(CLASS_NAMES)}") from None


def _readable_image(path: Path) -> str | None:
    """None when the file looks decodable, else the reason it will be skipped."""
    suffix = path.suffix.lower()
    if suffix not in IMAGE_SUFFIXES:
        return f"unsupported extension {path.suffix!r}"
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        return f"unreadable: {exc.strerror or exc}"
    if not head.startswith(_SIGNATURES[suffix]):
        return "file signature does not match its extension"
    return None


def scan_dataset(source, split: str | None = None) -> DatasetIndex:
    """Index a class-per-directory tree or a ``path,label`` CSV.

    Entries come back sorted by path. Unknown class names raise
    :class:`LabelError`; files that cannot be images land in ``skipped``.
    """
    source = Path(source)
    entries: list[tuple[Path, int]] = []
    skipped: list[tuple[Path, str]] = []
    if source.is_file():
        base = source.parent
        try:
            with open(source, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header is None or [h.strip() for h in header] != ["path", "label"]:
                    raise DataError(f"{source}: CSV header must be 'path,label', got {header}")
                for lineno, row in enumerate(reader, start=2):
                    if not row:
                        continue
                    if len(row) != 2:
                        raise DataError(f"{source}:{lineno}: expected 2 columns, got {len(row)}")
                    rel, name = row[0].strip(), row[1].strip()
                    if name not in LABEL_INDEX:
                        raise LabelError(f"{source}:{lineno}: unknown class name {name!r}")
                    path = base / rel
                    reason = _readable_image(path) if path.exists() else "file not found"
                    if reason:
                        skipped.append((path, reason))
                    else:
                        entries.append((path, LABEL_INDEX[name]))
        except UnicodeDecodeError as exc:
            raise DataError(f"{source}: labels file is not UTF-8") from exc
    elif source.is_dir():
        class_dirs = sorted(p for p in source.iterdir() if p.is_dir())
        if not class_dirs:
            raise DataError(f"{source}: no class directories found")
        for d in class_dirs:
            if d.name not in LABEL_INDEX:
                raise LabelError(f"{d}: directory {d.name!r} is not a known class name")
        for name in CLASS_NAMES:
            d = source / name
            files = sorted(p for p in d.iterdir() if p.is_file()) if d.is_dir() else []
            count = 0
            for path in files:
                reason = _readable_image(path)
                if reason:
                    skipped.append((path, reason))
                    continue
                entries.append((path, LABEL_INDEX[name]))
                count += 1
            if count == 0:
                log.warning("class %r has no images under %s", name, source)
    else:
        raise DataError(f"{source}: no such file or directory")
    for path, reason in skipped:
        log.warning("skipping %s: %s", path, reason)
    entries.sort(key=lambda e: str(e[0]))
    return DatasetIndex(entries, CLASS_NAMES, split, skipped)


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an ``[H, W, C]`` array with half-pixel centres.

    Source coordinates are ``(dst + 0.5) * in / out - 0.5`` clamped to the
    image; there is no anti-aliasing prefilter.
    """
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (height, width):
        return img.copy()

    def axis(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(height, in_h)
    x0, x1, fx = axis(width, in_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def decode_rgb(path) -> np.ndarray:
    """Decode a PNG or binary PPM to a uint8 ``[H, W, 3]`` array."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise DecodeError(path, f"unsupported format {im.format}")
            if im.mode in ("I;16", "I;16B", "I"):
                im = im.point(lambda v: v / 257).convert("L")
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise DecodeError(path, str(exc)) from exc
    if rgb.ndim != 3 or rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise DecodeError(path, "image has a zero dimension")
    return rgb


def load_image(path, target_size: Sequence[int]) -> Tensor:
    """Decode, resize and scale one image to a float32 ``[3, H, W]`` tensor in [0, 1]."""
    height, width = target_size
    rgb = decode_rgb(path).astype(np.float64)
    resized = resize_bilinear(rgb, height, width) / 255.0
    return Tensor(np.clip(resized, 0.0, 1.0).transpose(2, 0, 1), dtype=np.float32)


def load_dataset(index: DatasetIndex, target_size: Sequence[int], workers: int = 4) -> Dataset:
    """Decode every entry of ``index``; output order always follows the index."""
    if not index.entries:
        raise DataError("dataset is empty")
    paths = [p for p, _ in index.entries]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        tensors = list(pool.map(lambda p: load_image(p, target_size).array, paths))
    images = np.stack(tensors).astype(np.float32)
    labels = np.asarray(index.labels, dtype=np.int64)
    return Dataset(images, labels, index.class_names, paths)


def batch_order(n: int, batch_size: int, shuffle: bool, rng: SplitMix64 | None = None) -> list[np.ndarray]:
    """Index groups for one pass over ``n`` items; the final short group is kept."""
    if n < 1:
        raise DataError("cannot batch an empty dataset")
    if batch_size < 1:
        raise DataError(f"batch size must be >= 1, got {batch_size}")
    if shuffle:
        if rng is None:
            raise DataError("shuffling needs a PRNG")
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def make_batches(
    data: Dataset, batch_size: int = 32, shuffle: bool = False, rng: SplitMix64 | None = None
) -> Iterator[Batch]:
    num_classes = len(data.class_names)
    for idx in batch_order(len(data), batch_size, shuffle, rng):
        labels = data.labels[idx]
        yield Batch(
            Tensor.wrap(data.images[idx]),
            [int(v) for v in labels],
            Tensor.wrap(one_hot(labels, num_classes, data.images.dtype)),
        )


# Synthetic data: one hue and one spatial motif per class, plus seeded jitter.


def _class_color(k: int) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(k / 10.0, 0.75, 0.85))


def _motif(k: int, yy: np.ndarray, xx: np.ndarray, rng: SplitMix64) -> np.ndarray:
    phase, jy, jx = rng.random(3)
    phase *= 2 * np.pi
    jy, jx = 0.2 * (jy - 0.5), 0.2 * (jx - 0.5)
    tau = 2 * np.pi
    if k == 0:
        m = 0.5 + 0.5 * np.sin(tau * 4 * yy + phase)
    elif k == 1:
        m = 0.5 + 0.5 * np.sin(tau * 4 * xx + phase)
    elif k == 2:
        m = 0.5 + 0.5 * np.sin(tau * 3 * (xx + yy) + phase)
    elif k == 3:
        m = (np.sin(tau * 3 * xx + phase) * np.sin(tau * 3 * yy + phase) > 0).astype(float)
    elif k == 4:
        m = np.exp(-((yy - 0.5 - jy) ** 2 + (xx - 0.5 - jx) ** 2) / (2 * 0.15**2))
    elif k == 5:
        r = np.sqrt((yy - 0.5 - jy) ** 2 + (xx - 0.5 - jx) ** 2)
        m = np.exp(-(((r - 0.3) / 0.06) ** 2))
    elif k == 6:
        m = xx
    elif k == 7:
        m = yy
    elif k == 8:
        m = sum(
            np.exp(-((yy - cy - jy) ** 2 + (xx - cx - jx) ** 2) / (2 * 0.08**2))
            for cy, cx in ((0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75))
        )
    else:
        m = ((np.sin(tau * 5 * xx + phase) > 0.6) & (np.sin(tau * 5 * yy + phase) > 0.6)).astype(float)
    return np.clip(m, 0.0, 1.0)


def synth_image(label: int, size: int, rng: SplitMix64) -> np.ndarray:
    """One ``[3, size, size]`` float32 image quantised to multiples of 1/255."""
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    m = _motif(label, yy, xx, rng)
    brightness = 0.85 + 0.3 * rng.random(1)[0]
    img = _class_color(label)[:, None, None] * (0.45 + 0.55 * m)[None] * brightness
    img = img + 0.04 * rng.normal(3 * size * size).reshape(3, size, size)
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def synth_dataset(n_per_class: int, size: int = 64, seed: int = 42) -> Dataset:
    """``10 * n_per_class`` separable images, class-major order, fully determined by ``seed``."""
    if n_per_class < 1:
        raise DataError("n_per_class must be >= 1")
    rng = SplitMix64.substream(seed, "synth")
    images, labels = [], []
    for k in range(len(CLASS_NAMES)):
        for _ in range(n_per_class):
            images.append(synth_image(k, size, rng))
            labels.append(k)
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64))


def synth_split(data: Dataset, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Per-class deterministic train/val split: returns (train indices, val indices).

    A class with at least two members always contributes to both splits.
    """
    rng = SplitMix64.substream(seed, "split")
    train, val = [], []
    for k in range(len(data.class_names)):
        members = np.flatnonzero(data.labels == k)
        perm = members[rng.permutation(len(members))]
        cut = int(round(train_fraction * len(members)))
        if len(members) > 1:
            cut = min(max(cut, 1), len(members) - 1)  # both splits see every class
        train.extend(sorted(perm[:cut]))
        val.extend(sorted(perm[cut:]))
    return np.asarray(train, dtype=np.int64), np.asarray(val, dtype=np.int64)


def write_png(path, image: np.ndarray) -> None:
    """Store a ``[3, H, W]`` image in [0, 1] as an 8-bit RGB PNG."""
    rgb = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(rgb).save(path, format="PNG")
