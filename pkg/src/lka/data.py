"""Dataset container, LKDS binary I/O, the synthetic long-range task, and
the 80/20 split.

LKDS layout (little-endian): magic "LKDS", version u32=1, N u32, C u16,
H u16, W u16, classes u16, then N records of [label u16, C*H*W pixel
bytes]. Pixels are stored channel-major ([C][H][W] row-major) and map to
reals in [0,1] by dividing by 255.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, LengthError, ValidationError

MAGIC = b"LKDS"
VERSION = 1
_HEADER = struct.Struct("<4sIIHHHH")

BLOB_MAIN_AMPLITUDE = 1.0
BLOB_SECOND_AMPLITUDE = 0.5


@dataclass
class Dataset:
    images: np.ndarray  # [N,C,S,S] float64 in [0,1]
    labels: np.ndarray  # [N] int
    classes: int
    seed: int = 0

    def __len__(self) -> int:
        return self.images.shape[0]


def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    n, c, h, w = ds.images.shape
    pixels = np.round(np.clip(ds.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, n, c, h, w, ds.classes))
        for i in range(n):
            f.write(struct.pack("<H", int(ds.labels[i])))
            f.write(pixels[i].tobytes())
    return path


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise LengthError(f"{path}: file shorter than the LKDS header")
    magic, version, n, c, h, w, classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported LKDS version {version}")
    record = 2 + c * h * w
    expected = _HEADER.size + n * record
    if len(raw) != expected:
        raise LengthError(
            f"{path}: header promises {n} records ({expected} bytes), file has {len(raw)} bytes")
    images = np.empty((n, c, h, w), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    off = _HEADER.size
    for i in range(n):
        (labels[i],) = struct.unpack_from("<H", raw, off)
        pix = np.frombuffer(raw, dtype=np.uint8, count=c * h * w, offset=off + 2)
        images[i] = pix.reshape(c, h, w) / 255.0
        off += record
    bad = np.nonzero(labels >= classes)[0]
    if bad.size:
        raise ValidationError(
            f"{path}: record {bad[0]} has label {labels[bad[0]]} >= classes {classes}")
    return Dataset(images=images, labels=labels, classes=classes)


def _sample_blob_pair(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Two uniform centers with separation >= size/2, by rejection."""
    while True:
        pts = rng.uniform(0.0, size, size=(2, 2))
        if np.hypot(*(pts[1] - pts[0])) >= size / 2:
            return pts[0], pts[1]


def _quadrant(delta: np.ndarray) -> int:
    return (1 if delta[0] > 0 else 0) + 2 * (1 if delta[1] > 0 else 0)


def gen_longrange(seed: int, n: int, size: int, classes: int = 4,
                  return_centers: bool = False):
    """Synthetic task requiring long-range relations: each image holds a
    bright and a dim Gaussian blob (sigma = size/16) at least size/2
    apart; the label is the quadrant of the dim blob relative to the
    bright one. Deterministic given the seed.
    """
    if size < 32:
        raise ContractError(f"image size must be >= 32, got {size}")
    if classes != 4:
        raise ContractError("the quadrant task defines exactly 4 classes")
    rng = np.random.default_rng(seed)
    sigma = size / 16.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((n, 1, size, size), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    centers = np.empty((n, 2, 2), dtype=np.float64)
    for i in range(n):
        c1, c2 = _sample_blob_pair(rng, size)
        centers[i, 0], centers[i, 1] = c1, c2
        labels[i] = _quadrant(c2 - c1)
        img = BLOB_MAIN_AMPLITUDE * np.exp(-((xx - c1[0]) ** 2 + (yy - c1[1]) ** 2) / (2 * sigma ** 2))
        img += BLOB_SECOND_AMPLITUDE * np.exp(-((xx - c2[0]) ** 2 + (yy - c2[1]) ** 2) / (2 * sigma ** 2))
        images[i, 0] = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    ds = Dataset(images=images, labels=labels, classes=classes, seed=seed)
    return (ds, centers) if return_centers else ds


def split_80_20(ds: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, first 80% train; the two parts partition the data."""
    n = len(ds)
    if n < 5:
        raise ContractError(f"split needs at least 5 samples, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    cut = (4 * n) // 5
    tr, te = perm[:cut], perm[cut:]
    train = Dataset(images=ds.images[tr], labels=ds.labels[tr], classes=ds.classes, seed=seed)
    test = Dataset(images=ds.images[te], labels=ds.labels[te], classes=ds.classes, seed=seed)
    return train, test
