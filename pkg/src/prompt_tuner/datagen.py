"""Hermetic synthetic digit datasets with controlled distribution shifts.

Digits are rendered as seven-segment glyphs, so the repository needs no
bundled image data and every generator is a pure function of its spec
(including the seed). Two shift protocols are provided: a color-bias shift
where the background color correlates with the class label (correlation
inverted at test time), and a placement shift where the labelled digit sits
on an image edge while a larger distractor digit occupies the center. Real
digit scans can be ingested through the IDX reader instead.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, FormatError, InvalidInputError

# Segment layout: A top, B top-right, C bottom-right, D bottom, E bottom-left,
# F top-left, G middle.
SEGMENTS_BY_DIGIT = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGEDC",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}

# 10 background colors with pairwise RGB distance >= sqrt(0.5) ~ 0.707,
# comfortably above the 0.5 floor that keeps color a usable shortcut feature.
# White is excluded so the white glyph stays visible on every background.
BIAS_PALETTE = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [0.5, 0.5, 0.0],
    [0.5, 0.5, 1.0],
    [1.0, 0.5, 0.5],
])

LOC_CANVAS = 112  # fits a 4x-scaled 28px distractor exactly

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class GlyphSpec:
    digit: int
    canvas: int = 28
    thickness: int = 3


@dataclass(frozen=True)
class ShiftSpec:
    """Parameters of a synthetic distribution shift.

    kind 'biased': background color matches the class color with probability
    rho on the train split and 1-rho on the test split.
    kind 'loc': the labelled glyph sits on one of the four edges; a different
    digit sits at the center, same size (ratio '1:1') or 4x ('1:4').
    """

    kind: str
    rho: float = 0.9
    ratio: str = "1:1"
    split: str = "train"
    n_per_class: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("biased", "loc"):
            raise InvalidInputError(f"unknown shift kind {self.kind!r}")
        if not (0.0 <= self.rho <= 1.0):
            raise InvalidInputError("rho must lie in [0, 1]")
        if self.ratio not in ("1:1", "1:4"):
            raise InvalidInputError("ratio must be '1:1' or '1:4'")
        if self.split not in ("train", "test"):
            raise InvalidInputError("split must be 'train' or 'test'")


@dataclass(frozen=True)
class LabeledImages:
    images: np.ndarray  # (n, c, h, w), values in [0, 1]
    labels: np.ndarray  # (n,) int64

    def __len__(self):
        return self.images.shape[0]

    @property
    def shape(self):
        return self.images.shape[1:]


def render_glyph(spec):
    """Deterministic binary seven-segment rendering, shape (1, canvas, canvas)."""
    if isinstance(spec, int):
        spec = GlyphSpec(digit=spec)
    if spec.digit not in SEGMENTS_BY_DIGIT:
        raise InvalidInputError(f"digit must be 0..9, got {spec.digit}")
    canvas, t = spec.canvas, spec.thickness
    m = canvas // 7
    top, bottom = m, canvas - m
    left, right = m + 2, canvas - m - 2
    mid = (top + bottom) // 2
    rects = {
        "A": (top, top + t, left, right),
        "G": (mid - t // 2, mid - t // 2 + t, left, right),
        "D": (bottom - t, bottom, left, right),
        "F": (top, mid, left, left + t),
        "B": (top, mid, right - t, right),
        "E": (mid, bottom, left, left + t),
        "C": (mid, bottom, right - t, right),
    }
    img = np.zeros((1, canvas, canvas))
    for seg in SEGMENTS_BY_DIGIT[spec.digit]:
        r0, r1, c0, c1 = rects[seg]
        img[0, r0:r1, c0:c1] = 1.0
    return img


def biased_dataset(spec):
    """Color-bias shift: white glyphs over class-correlated background colors."""
    if spec.kind != "biased":
        raise InvalidInputError("spec.kind must be 'biased'")
    rng = np.random.default_rng([spec.seed, 0 if spec.split == "train" else 1])
    p_match = spec.rho if spec.split == "train" else 1.0 - spec.rho
    images, labels = [], []
    for cls in range(10):
        glyph = render_glyph(cls)[0]
        for _ in range(spec.n_per_class):
            if rng.random() < p_match:
                color_idx = cls
            else:
                others = [k for k in range(10) if k != cls]
                color_idx = others[rng.integers(0, 9)]
            img = BIAS_PALETTE[color_idx][:, None, None] * (1.0 - glyph)[None]
            img = img + glyph[None]
            images.append(img)
            labels.append(cls)
    return LabeledImages(np.stack(images), np.array(labels, dtype=np.int64))


def loc_dataset(spec):
    """Placement shift: labelled glyph on a random edge, distractor at center."""
    if spec.kind != "loc":
        raise InvalidInputError("spec.kind must be 'loc'")
    rng = np.random.default_rng([spec.seed, 2 if spec.split == "train" else 3])
    scale = 4 if spec.ratio == "1:4" else 1
    g = 28
    edge_slots = {
        0: (0, (LOC_CANVAS - g) // 2),                # top
        1: (LOC_CANVAS - g, (LOC_CANVAS - g) // 2),   # bottom
        2: ((LOC_CANVAS - g) // 2, 0),                # left
        3: ((LOC_CANVAS - g) // 2, LOC_CANVAS - g),   # right
    }
    center_off = (LOC_CANVAS - g * scale) // 2
    images, labels = [], []
    for cls in range(10):
        target = render_glyph(cls)[0]
        for _ in range(spec.n_per_class):
            edge = int(rng.integers(0, 4))
            others = [k for k in range(10) if k != cls]
            distractor_digit = others[int(rng.integers(0, 9))]
            distractor = render_glyph(distractor_digit)[0]
            if scale > 1:
                distractor = np.repeat(np.repeat(distractor, scale, 0), scale, 1)
            canvas = np.zeros((LOC_CANVAS, LOC_CANVAS))
            canvas[center_off:center_off + g * scale,
                   center_off:center_off + g * scale] = distractor
            r, c = edge_slots[edge]
            canvas[r:r + g, c:c + g] = np.maximum(canvas[r:r + g, c:c + g], target)
            images.append(np.repeat(canvas[None], 3, axis=0))
            labels.append(cls)
    return LabeledImages(np.stack(images), np.array(labels, dtype=np.int64))


def source_glyph_dataset(n_per_class=32, seed=0, noise=0.05, canvas=28):
    """Clean, uncolored glyphs (white on black) with mild pixel jitter.

    This is the source distribution the frozen toy classifier is fitted on;
    the biased/loc sets above are the shifted targets.
    """
    rng = np.random.default_rng([seed, 9])
    images, labels = [], []
    for cls in range(10):
        glyph = np.repeat(render_glyph(GlyphSpec(cls, canvas=canvas)), 3, axis=0)
        for _ in range(n_per_class):
            img = glyph + rng.normal(0.0, noise, size=glyph.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(cls)
    return LabeledImages(np.stack(images), np.array(labels, dtype=np.int64))


def few_shot_split(dataset, shots_train, shots_val, seed):
    """Class-balanced disjoint (train, val, remainder) split without replacement."""
    rng = np.random.default_rng([seed, 4])
    labels = dataset.labels
    train_idx, val_idx, rest_idx = [], [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < shots_train + shots_val:
            raise DatasetError(
                f"class {cls} has {members.size} examples, "
                f"need {shots_train + shots_val}"
            )
        perm = rng.permutation(members)
        train_idx.extend(perm[:shots_train])
        val_idx.extend(perm[shots_train:shots_train + shots_val])
        rest_idx.extend(perm[shots_train + shots_val:])
    def take(idx):
        idx = np.array(sorted(idx), dtype=int)
        return LabeledImages(dataset.images[idx], dataset.labels[idx])
    return take(train_idx), take(val_idx), take(rest_idx)


def load_idx(images_path, labels_path):
    """Read an IDX image/label file pair (big-endian, magics 0x803/0x801)."""
    img_bytes = Path(images_path).read_bytes()
    lbl_bytes = Path(labels_path).read_bytes()

    def be32(data, offset, what):
        if len(data) < offset + 4:
            raise FormatError(f"truncated {what}", offset=len(data))
        return struct.unpack(">I", data[offset:offset + 4])[0]

    magic = be32(img_bytes, 0, "image header")
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x}", offset=0)
    count = be32(img_bytes, 4, "image header")
    rows = be32(img_bytes, 8, "image header")
    cols = be32(img_bytes, 12, "image header")
    expected = 16 + count * rows * cols
    if len(img_bytes) < expected:
        raise FormatError(
            f"image payload truncated: expected {expected} bytes, got {len(img_bytes)}",
            offset=len(img_bytes),
        )

    lbl_magic = be32(lbl_bytes, 0, "label header")
    if lbl_magic != IDX_LABEL_MAGIC:
        raise FormatError(f"bad label magic 0x{lbl_magic:08x}", offset=0)
    lbl_count = be32(lbl_bytes, 4, "label header")
    if lbl_count != count:
        raise FormatError(
            f"count mismatch: {count} images vs {lbl_count} labels", offset=4
        )
    if len(lbl_bytes) < 8 + lbl_count:
        raise FormatError("label payload truncated", offset=len(lbl_bytes))

    pixels = np.frombuffer(img_bytes, dtype=np.uint8, count=count * rows * cols, offset=16)
    images = pixels.reshape(count, 1, rows, cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lbl_bytes, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    return LabeledImages(images, labels)


def save_dataset(dataset, out_dir):
    """Write one raw little-endian float32 tensor per image plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(dataset)):
        (out / f"{i:06d}.f32").write_bytes(
            dataset.images[i].astype("<f4").tobytes()
        )
    manifest = {
        "n": len(dataset),
        "shape": list(dataset.shape),
        "labels": dataset.labels.tolist(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest))
    return out / "manifest.json"


def load_dataset(in_dir):
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    shape = tuple(manifest["shape"])
    images = np.empty((manifest["n"],) + shape, dtype=np.float64)
    for i in range(manifest["n"]):
        raw = np.frombuffer((src / f"{i:06d}.f32").read_bytes(), dtype="<f4")
        images[i] = raw.reshape(shape)
    return LabeledImages(images, np.array(manifest["labels"], dtype=np.int64))
