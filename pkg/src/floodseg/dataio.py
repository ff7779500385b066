"""Netpbm image I/O and the dataset preparation pipeline.

Images are binary color pixmaps (P6 .ppm) and masks are binary graymaps
(P5 .pgm), both with max value 255. Loading scales bytes to floats in
[0, 1]; saving rounds back, so a save/load round trip is bit-exact.

The preparation pipeline mirrors how the training corpus is produced from
raw pairs: binarize the mask, resize to a working resolution with
half-pixel-center bilinear interpolation, take the four corner crops and the
center crop, and repeat for the horizontally and vertically flipped pair,
giving 15 augmented pairs per source pair. Augmentation is applied to the
train split only; test pairs pass through untouched.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRAIN_FRACTION_NUM = 7    # train split is floor(0.7 * N), done in integers
TRAIN_FRACTION_DEN = 10

FLIP_VARIANTS = ("id", "hf", "vf")
CROP_NAMES = ("tl", "tr", "bl", "br", "c")


class DataError(Exception):
    """A dataset-level problem: missing, unmatched, or malformed inputs."""


class PnmError(DataError):
    """Malformed netpbm payload; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


# ---- netpbm parsing and writing -------------------------------------------

_WHITESPACE = b" \t\r\n"


def _parse_pnm(raw: bytes, want_magic: bytes, path) -> tuple[int, int, bytes]:
    pos = 0

    def skip_separators():
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos:pos + 1]
            if ch in (b" ", b"\t", b"\r", b"\n"):
                pos += 1
            elif ch == b"#":
                while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                    pos += 1
            else:
                return

    def read_token(what: str) -> bytes:
        nonlocal pos
        skip_separators()
        start = pos
        while pos < len(raw) and raw[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n", b"#"):
            pos += 1
        if start == pos:
            raise PnmError(f"{path}: missing {what}", start)
        return raw[start:pos]

    def read_int(what: str) -> int:
        start = pos
        token = read_token(what)
        try:
            value = int(token)
        except ValueError:
            raise PnmError(f"{path}: invalid {what} {token!r}", start) from None
        if value <= 0:
            raise PnmError(f"{path}: {what} must be positive, got {value}", start)
        return value

    magic = read_token("magic number")
    if magic != want_magic:
        raise PnmError(f"{path}: expected magic {want_magic.decode()}, got {magic!r}", 0)
    width = read_int("width")
    height = read_int("height")
    maxval = read_int("max value")
    if maxval != 255:
        raise PnmError(f"{path}: unsupported max value {maxval}, only 255 is handled", pos)
    if pos >= len(raw) or raw[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise PnmError(f"{path}: missing whitespace before pixel data", pos)
    pos += 1
    channels = 3 if want_magic == b"P6" else 1
    need = width * height * channels
    payload = raw[pos:]
    if len(payload) < need:
        raise PnmError(f"{path}: truncated pixel data, need {need} bytes, have {len(payload)}",
                       len(raw))
    if len(payload) > need:
        raise PnmError(f"{path}: {len(payload) - need} trailing bytes after pixel data",
                       pos + need)
    return width, height, payload


def load_image(path) -> np.ndarray:
    """Read a P6 color pixmap into a float32 (H, W, 3) array in [0, 1]."""
    raw = Path(path).read_bytes()
    width, height, payload = _parse_pnm(raw, b"P6", path)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return (pixels / np.float32(255.0)).astype(np.float32)


def load_mask(path) -> np.ndarray:
    """Read a P5 graymap into a float32 (H, W) array in [0, 1]."""
    raw = Path(path).read_bytes()
    width, height, payload = _parse_pnm(raw, b"P5", path)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return (pixels / np.float32(255.0)).astype(np.float32)


def _to_bytes(array: np.ndarray) -> bytes:
    return np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes()


def save_image(path, image: np.ndarray):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"save_image: expected (H, W, 3), got shape {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(_to_bytes(image))


def save_mask(path, mask: np.ndarray):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DataError(f"save_mask: expected (H, W), got shape {mask.shape}")
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(_to_bytes(mask))


# ---- pairs and transforms ---------------------------------------------------


@dataclass
class ImagePair:
    """A color image, its binary mask, and an identifier used for filenames."""

    image: np.ndarray         # (H, W, 3) float32 in [0, 1]
    mask: np.ndarray          # (H, W) float32
    source_id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DataError(f"ImagePair {self.source_id}: image shape {self.image.shape} "
                            "is not (H, W, 3)")
        if self.mask.shape != self.image.shape[:2]:
            raise DataError(f"ImagePair {self.source_id}: mask shape {self.mask.shape} "
                            f"does not match image {self.image.shape[:2]}")


def binarize_mask(mask: np.ndarray) -> np.ndarray:
    """Strictly-above-one-half threshold onto {0.0, 1.0}."""
    return (np.asarray(mask) > 0.5).astype(np.float32)


def resize_bilinear(array: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers and edge clamping.

    Works on (H, W) and (H, W, C) arrays. Identical input and output extents
    return an exact copy.
    """
    arr = np.asarray(array, dtype=np.float32)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize_bilinear: target {(out_h, out_w)} is empty")
    in_h, in_w = arr.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return arr.copy()

    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(np.float32)[:, None]
    wx = (xs - x0).astype(np.float32)[None, :]
    if arr.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = arr[y0][:, x0] * (1 - wx) + arr[y0][:, x1] * wx
    bottom = arr[y1][:, x0] * (1 - wx) + arr[y1][:, x1] * wx
    return (top * (1 - wy) + bottom * wy).astype(np.float32)


def resize_pair(pair: ImagePair, size: int) -> ImagePair:
    """Resize both members to size x size; the mask is re-binarized."""
    return ImagePair(resize_bilinear(pair.image, size, size),
                     binarize_mask(resize_bilinear(pair.mask, size, size)),
                     pair.source_id)


def flip_horizontal(pair: ImagePair) -> ImagePair:
    return ImagePair(pair.image[:, ::-1].copy(), pair.mask[:, ::-1].copy(), pair.source_id)


def flip_vertical(pair: ImagePair) -> ImagePair:
    return ImagePair(pair.image[::-1].copy(), pair.mask[::-1].copy(), pair.source_id)


def five_crop(pair: ImagePair, crop: int = 256) -> list[ImagePair]:
    """Four corner crops plus the centered crop, in tl/tr/bl/br/c order."""
    h, w = pair.mask.shape
    if crop > h or crop > w:
        raise DataError(f"five_crop: crop {crop} exceeds input {(h, w)} for {pair.source_id}")
    cy, cx = (h - crop) // 2, (w - crop) // 2
    offsets = ((0, 0), (0, w - crop), (h - crop, 0), (h - crop, w - crop), (cy, cx))
    out = []
    for name, (r, c) in zip(CROP_NAMES, offsets):
        out.append(ImagePair(pair.image[r:r + crop, c:c + crop].copy(),
                             pair.mask[r:r + crop, c:c + crop].copy(),
                             f"{pair.source_id}_{name}"))
    return out


def augment_expand(pair: ImagePair, crop: int = 256) -> list[ImagePair]:
    """Expand one pair into 15: five crops of the pair and of both flips."""
    variants = (pair, flip_horizontal(pair), flip_vertical(pair))
    out = []
    for tag, variant in zip(FLIP_VARIANTS, variants):
        for cropped in five_crop(variant, crop):
            crop_name = cropped.source_id.rsplit("_", 1)[1]
            out.append(ImagePair(cropped.image, cropped.mask,
                                 f"{pair.source_id}_{tag}_{crop_name}"))
    return out


# ---- corpus discovery, splitting, manifests --------------------------------


def discover_pairs(dataset_dir) -> list[tuple[Path, Path]]:
    """Match *.ppm images to *.pgm masks by stem; any unmatched file is fatal."""
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    images = {p.stem: p for p in sorted(root.glob("*.ppm"))}
    masks = {p.stem: p for p in sorted(root.glob("*.pgm"))}
    unmatched = sorted(set(images) ^ set(masks))
    if unmatched:
        raise DataError("unmatched image/mask stems: " + ", ".join(unmatched))
    if not images:
        raise DataError(f"no .ppm/.pgm pairs found in {root}")
    return [(images[stem], masks[stem]) for stem in sorted(images)]


def split_dataset(pairs, seed: int) -> tuple[list, list]:
    """Deterministic 70/30 split: sort by image path, shuffle with the seed.

    The train side takes the first floor(0.7 * N) entries of the shuffled
    order; computed in integer arithmetic so e.g. N=290 gives exactly 203.
    """
    pairs = sorted(pairs, key=lambda pair: str(pair[0]))
    n = len(pairs)
    if n < 2:
        raise DataError(f"split_dataset: need at least 2 pairs, got {n}")
    order = np.random.RandomState(seed).permutation(n)
    train_n = (TRAIN_FRACTION_NUM * n) // TRAIN_FRACTION_DEN
    train = [pairs[i] for i in order[:train_n]]
    test = [pairs[i] for i in order[train_n:]]
    return train, test


@dataclass
class ManifestEntry:
    image_path: str
    mask_path: str
    split: str                # "train" or "test"


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.image_path}\t{e.mask_path}\t{e.split}\n")


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3 or fields[2] not in ("train", "test"):
            raise DataError(f"{path}:{lineno}: malformed manifest line {line!r}")
        entries.append(ManifestEntry(*fields))
    if not entries:
        raise DataError(f"manifest is empty: {path}")
    return entries


@dataclass
class PrepareResult:
    train_count: int
    test_count: int
    augmented_count: int
    positive_fraction: float
    manifest_path: str


def prepare_dataset(dataset_dir, out_dir, seed: int = 0, *,
                    resize: int = 512, crop: int = 256) -> PrepareResult:
    """Split a raw corpus, augment the train side 15x, and write a manifest.

    Train pairs are binarized, resized to ``resize``, and expanded with
    ``augment_expand``; each augmented pair lands in ``out_dir`` as
    ``<stem>_<variant>_<crop>.ppm/.pgm``. Test pairs are referenced at their
    original paths. The positive-pixel fraction is measured over every
    source mask at native resolution.
    """
    pairs = discover_pairs(dataset_dir)
    train, test = split_dataset(pairs, seed)
    out_root = Path(out_dir)
    os.makedirs(out_root, exist_ok=True)

    positive = 0
    total = 0
    entries = []
    for image_path, mask_path in train:
        pair = ImagePair(load_image(image_path), binarize_mask(load_mask(mask_path)),
                         image_path.stem)
        positive += int(pair.mask.sum())
        total += pair.mask.size
        for aug in augment_expand(resize_pair(pair, resize), crop):
            img_out = out_root / f"{aug.source_id}.ppm"
            mask_out = out_root / f"{aug.source_id}.pgm"
            save_image(img_out, aug.image)
            save_mask(mask_out, aug.mask)
            entries.append(ManifestEntry(str(img_out), str(mask_out), "train"))
    for image_path, mask_path in test:
        mask = binarize_mask(load_mask(mask_path))
        positive += int(mask.sum())
        total += mask.size
        entries.append(ManifestEntry(str(image_path), str(mask_path), "test"))

    entries.sort(key=lambda e: (e.split, e.image_path))
    manifest_path = out_root / "manifest.tsv"
    write_manifest(manifest_path, entries)
    return PrepareResult(len(train), len(test), 15 * len(train),
                         positive / total, str(manifest_path))


def dataset_stats(dataset_dir) -> tuple[int, float]:
    """Pair count and binarized positive-pixel fraction of a raw corpus."""
    pairs = discover_pairs(dataset_dir)
    positive = 0
    total = 0
    for _, mask_path in pairs:
        mask = binarize_mask(load_mask(mask_path))
        positive += int(mask.sum())
        total += mask.size
    return len(pairs), positive / total
