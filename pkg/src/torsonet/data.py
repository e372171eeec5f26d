"""Dataset discovery, image decoding and batching.

Layout on disk is ``<root>/<class_name>/<image files>``. Binary and ASCII
portable graymaps decode natively; other raster formats go through a decoder
registered with :func:`register_decoder` (Pillow is used when installed).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import ArgumentError, DatasetError, FormatError, ShapeError

log = logging.getLogger(__name__)

TARGET_HW = (224, 224)
DEFAULT_CLASSES = ["dv_upper", "dv_lower", "lat_upper", "lat_lower"]
LUMA = np.array([0.299, 0.587, 0.114])

# extension -> decoder(path) -> (array (H, W) or (H, W, 3|4), max representable value)
_DECODERS: dict[str, Callable] = {}


def register_decoder(extensions, fn):
    for ext in extensions:
        _DECODERS[ext.lower()] = fn


def supported_extensions():
    return sorted(_DECODERS)


@dataclass
class DatasetIndex:
    entries: list = field(default_factory=list)  # (path, class_index)
    class_names: list = field(default_factory=lambda: list(DEFAULT_CLASSES))

    def __post_init__(self):
        k = len(self.class_names)
        paths = set()
        for path, label in self.entries:
            if not 0 <= label < k:
                raise DatasetError(f"class index {label} out of range for {k} classes ({path})")
            if path in paths:
                raise DatasetError(f"duplicate path in index: {path}")
            paths.add(path)

    def __len__(self):
        return len(self.entries)

    @property
    def num_classes(self):
        return len(self.class_names)

    def labels(self):
        return np.array([c for _, c in self.entries], dtype=np.int64)

    def class_counts(self):
        return np.bincount(self.labels(), minlength=self.num_classes)

    def write_manifest(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for p, c in self.entries:
                fh.write(f"{p}\t{self.class_names[c]}\n")


def index_dataset(root_dir) -> DatasetIndex:
    """Index a class-per-directory tree; classes are sorted directory names."""
    root = Path(root_dir)
    try:
        subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    except OSError as exc:
        raise OSError(f"cannot read dataset directory {root}: {exc}") from exc
    exts = set(_DECODERS)
    classes, files = [], []
    for d in subdirs:
        found = sorted(str(p) for p in d.iterdir() if p.is_file() and p.suffix.lower() in exts)
        if not found:
            log.warning("skipping class directory %s: no readable images", d)
            continue
        classes.append(d.name)
        files.append(found)
    if len(classes) < 2:
        raise DatasetError(f"{root} holds {len(classes)} non-empty class directories, need at least 2")
    entries = [(p, k) for k, found in enumerate(files) for p in found]
    return DatasetIndex(entries, classes)


# ---------------------------------------------------------------------------
# decoding

def _pnm_tokens(data, count, pos):
    out = []
    while len(out) < count:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        out.append(data[start:pos])
    return out, pos


def read_pgm(path):
    """Decode a P2 (ASCII) or P5 (binary) graymap; returns ``(pixels, maxval)``."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"not a PGM file (magic {magic!r})", path)
    try:
        (w, h, maxval), pos = _pnm_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, FormatError) as exc:
        raise FormatError(f"bad PGM header: {exc}", path) from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"bad PGM geometry {w}x{h} maxval {maxval}", path)
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        raw = data[pos:pos + need]
        if len(raw) != need:
            raise FormatError(f"PGM payload truncated ({len(raw)} of {need} bytes)", path)
        pix = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    else:
        try:
            vals, _ = _pnm_tokens(data, w * h, pos)
        except FormatError:
            raise FormatError("PGM payload truncated", path) from None
        pix = np.array([int(v) for v in vals]).reshape(h, w)
    return pix.astype(np.float64), maxval


def write_pgm(path, pixels, maxval=255):
    """Write a binary graymap from an integer array in ``[0, maxval]``."""
    pix = np.asarray(pixels)
    if pix.ndim != 2:
        raise ShapeError(f"PGM needs a 2-D array, got {pix.shape}")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.clip(pix, 0, maxval).astype(dtype).tobytes())


def _read_with_pillow(path):
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.float64), 65535
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64), 255


register_decoder([".pgm"], read_pgm)
try:
    import PIL  # noqa: F401
except ImportError:  # pragma: no cover - optional adapter
    pass
else:
    register_decoder([".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"], _read_with_pillow)


def to_luminance(pixels):
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 2:
        return pixels
    if pixels.ndim == 3 and pixels.shape[2] in (3, 4):
        return pixels[..., :3] @ LUMA
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        return pixels[..., 0]
    raise ShapeError(f"cannot convert array of shape {pixels.shape} to luminance")


def resize_bilinear(img, out_h, out_w):
    """Corner-aligned bilinear resize of a 2-D array.

    Output pixel ``i`` samples source coordinate ``i * (in - 1) / (out - 1)``,
    so the four corners map onto the source corners exactly.
    """
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape

    def axis(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis(in_h, out_h)
    c0, c1, fc = axis(in_w, out_w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


@dataclass
class ImageSample:
    pixels: np.ndarray  # (224, 224, 1), values in [0, 1]
    label: int


def decode_image(path, size=TARGET_HW, dtype=np.float32):
    """Decode, convert to luminance, resize and scale into ``[0, 1]``."""
    path = str(path)
    decoder = _DECODERS.get(Path(path).suffix.lower())
    if decoder is None:
        raise FormatError(f"no decoder registered for {path}", path)
    try:
        raw, maxval = decoder(path)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}", path) from exc
    except Exception as exc:
        raise FormatError(f"cannot decode {path}: {exc}", path) from exc
    # clip absorbs interpolation rounding just outside [0, maxval]
    gray = np.clip(resize_bilinear(to_luminance(raw), *size) / maxval, 0.0, 1.0)
    pixels = gray[:, :, None].astype(dtype)
    if pixels.shape != (*size, 1) or not np.isfinite(pixels).all() \
            or pixels.min() < 0 or pixels.max() > 1:
        raise FormatError(f"{path}: decoded image violates shape/range contract", path)
    return pixels


def load_sample(path, class_index, size=TARGET_HW, dtype=np.float32) -> ImageSample:
    return ImageSample(decode_image(path, size, dtype), int(class_index))


# ---------------------------------------------------------------------------
# splitting and batching

def split(index: DatasetIndex, val_fraction=0.2, seed=0):
    """Stratified split: ``ceil(val_fraction * n_k)`` of each class go to validation."""
    if not 0 < val_fraction < 1:
        raise ArgumentError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for k, name in enumerate(index.class_names):
        members = [e for e in index.entries if e[1] == k]
        if not members:
            continue
        if len(members) < 2:
            raise DatasetError(f"class {name!r} has {len(members)} sample(s); need at least 2 to split")
        order = rng.permutation(len(members))
        n_val = min(math.ceil(val_fraction * len(members)), len(members) - 1)
        val += [members[i] for i in sorted(order[:n_val])]
        train += [members[i] for i in sorted(order[n_val:])]
    key = {e: i for i, e in enumerate(index.entries)}
    train.sort(key=key.get)
    val.sort(key=key.get)
    return (DatasetIndex(train, list(index.class_names)),
            DatasetIndex(val, list(index.class_names)))


def epoch_order(n, seed, epoch):
    """Deterministic permutation of ``range(n)`` for a given (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(index: DatasetIndex, batch_size, seed=0, epoch=0, loader=None,
            shuffle=True) -> Iterator[tuple]:
    """Yield ``(pixels (b, 224, 224, 1), labels (b,))`` lazily; last batch may be short.

    ``loader(path)`` defaults to :func:`decode_image`.
    """
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
    loader = loader or decode_image
    order = epoch_order(len(index), seed, epoch) if shuffle else np.arange(len(index))
    for start in range(0, len(order), batch_size):
        chosen = [index.entries[i] for i in order[start:start + batch_size]]
        pixels = np.stack([loader(p) for p, _ in chosen])
        labels = np.array([c for _, c in chosen], dtype=np.int64)
        yield pixels, labels

