"""Synthetic confounded dataset and the on-disk dataset format.

Layout of a dataset directory::

    images/NNNN.pgm   8-bit binary graymaps (P5, maxval 255)
    labels.csv        filename,label,split
    boxes.csv         filename,x0,y0,x1,y1   (one row per box, inclusive pixels)

Positives carry one or two Gaussian "lesions", each annotated by its extent
padded by 2 px. Most positives also get a bright square tag in the top-left
corner, outside every box, which a classifier can use as a shortcut.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .annotations import BBox
from .errors import DatasetError, InvalidParameterError, UnsupportedFormatError

SPLITS = ("train", "val", "test")
BOX_PAD = 2


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    n_samples: int = 1200
    positive_fraction: float = 0.5
    lesion_intensity_min: float = 0.5
    lesion_intensity_max: float = 0.8
    lesion_sigma_min: float = 3.0
    lesion_sigma_max: float = 5.0
    second_lesion_prob: float = 0.25
    confounder_rate: float = 0.9
    tag_size: int = 8
    tag_offset: int = 2
    tag_intensity: float = 0.6
    background_level: float = 0.10
    background_variation: float = 0.02
    noise_std: float = 0.01
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise InvalidParameterError(f"split fractions must be >= 0 and sum to 1, got {fr}")
        if not 0.0 <= self.positive_fraction <= 1.0 or not 0.0 <= self.confounder_rate <= 1.0:
            raise InvalidParameterError("positive_fraction and confounder_rate must be in [0, 1]")
        if self.n_samples < 1 or self.image_size < 16:
            raise InvalidParameterError("need n_samples >= 1 and image_size >= 16")
        if not 0 < self.lesion_sigma_min <= self.lesion_sigma_max:
            raise InvalidParameterError("lesion sigma range invalid")
        if self.lesion_intensity_min > self.lesion_intensity_max:
            raise InvalidParameterError("lesion intensity range invalid")
        reach = 2 * (math.ceil(2 * self.lesion_sigma_max) + BOX_PAD) + 1
        if self.tag_offset + self.tag_size + reach > self.image_size:
            raise InvalidParameterError("image too small for the tag plus a lesion box")

    @property
    def tag_box(self) -> BBox:
        a, b = self.tag_offset, self.tag_offset + self.tag_size - 1
        return BBox(a, a, b, b)


@dataclass
class Sample:
    filename: str
    image: np.ndarray           # (1, s, s) in [0, 1]
    label: int
    boxes: list = field(default_factory=list)
    split: str = ""


@dataclass
class Manifest:
    out_dir: Path
    n_samples: int
    n_positive: int
    n_boxes: int
    split_counts: dict
    tagged: list                # filenames carrying the confounder tag

    def summary(self) -> str:
        splits = ", ".join(f"{k}={v}" for k, v in self.split_counts.items())
        return (f"{self.n_samples} images ({self.n_positive} positive, {self.n_boxes} boxes, "
                f"{len(self.tagged)} tagged) in {self.out_dir} [{splits}]")


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def pgm_write(path, image) -> None:
    """Write a 2-d (or 1 x h x w) image in [0, 1] as binary P5, round(v * 255)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise InvalidParameterError(f"pgm_write expects a 2-d image, got {img.shape}")
    data = np.clip(np.round(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


def pgm_write_bytes(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


def _pgm_tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise UnsupportedFormatError("truncated PGM header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def pgm_read_bytes(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if not buf.startswith(b"P5"):
        raise UnsupportedFormatError(f"{path}: not a binary PGM (P5) file")
    (magic, w, h, maxval), pos = _pgm_tokens(buf, 4)
    if magic != b"P5":
        raise UnsupportedFormatError(f"{path}: not a binary PGM (P5) file")
    if int(maxval) != 255:
        raise UnsupportedFormatError(f"{path}: maxval {int(maxval)} unsupported, need 255")
    w, h = int(w), int(h)
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos) if len(buf) - pos >= w * h else None
    if data is None:
        raise UnsupportedFormatError(f"{path}: pixel data truncated")
    return data.reshape(h, w).copy()


def pgm_read(path) -> np.ndarray:
    """Read a P5 graymap as float64 in [0, 1]."""
    return pgm_read_bytes(path).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _boxes_intersect(a: BBox, b: BBox) -> bool:
    return not (a.x1 < b.x0 or b.x1 < a.x0 or a.y1 < b.y0 or b.y1 < a.y0)


def _background(cfg: SynthConfig, rng: np.random.Generator, yy, xx) -> np.ndarray:
    s = cfg.image_size
    img = np.full((s, s), cfg.background_level)
    for _ in range(3):
        cy, cx = rng.uniform(0, s, size=2)
        sig = rng.uniform(s / 6, s / 3)
        amp = rng.uniform(-cfg.background_variation, cfg.background_variation)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig ** 2))
    return img


def _place_lesion(cfg: SynthConfig, rng: np.random.Generator, taken: list):
    s = cfg.image_size
    for _ in range(1000):
        sigma = rng.uniform(cfg.lesion_sigma_min, cfg.lesion_sigma_max)
        r = math.ceil(2 * sigma) + BOX_PAD
        cx = int(rng.integers(r, s - r))
        cy = int(rng.integers(r, s - r))
        box = BBox(cx - r, cy - r, cx + r, cy + r)
        if _boxes_intersect(box, cfg.tag_box) or any(_boxes_intersect(box, t) for t in taken):
            continue
        return cx, cy, sigma, box
    raise DatasetError("could not place a lesion; image too crowded")


def render_sample(cfg: SynthConfig, rng: np.random.Generator, positive: bool, tagged: bool):
    """Draw one image; returns (image in [0,1], boxes)."""
    s = cfg.image_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    img = _background(cfg, rng, yy, xx)
    boxes = []
    if positive:
        n_lesions = 2 if rng.random() < cfg.second_lesion_prob else 1
        for j in range(n_lesions):
            try:
                cx, cy, sigma, box = _place_lesion(cfg, rng, boxes)
            except DatasetError:
                if j == 0:
                    raise
                break           # no room left for a second lesion
            amp = rng.uniform(cfg.lesion_intensity_min, cfg.lesion_intensity_max)
            img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
            boxes.append(box)
    if tagged:
        t = cfg.tag_box
        img[t.y0:t.y1 + 1, t.x0:t.x1 + 1] += cfg.tag_intensity
    img += rng.normal(0.0, cfg.noise_std, size=img.shape)
    return np.clip(img, 0.0, 1.0), boxes


def _assign_splits(cfg: SynthConfig, labels: np.ndarray, rng: np.random.Generator) -> list:
    """Stratified split assignment by label."""
    splits = [""] * len(labels)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(cfg.train_fraction * len(idx)))
        n_val = int(round(cfg.val_fraction * len(idx)))
        for j, i in enumerate(idx):
            splits[i] = "train" if j < n_train else ("val" if j < n_train + n_val else "test")
    return splits


def _width(n: int) -> int:
    return max(4, len(str(n - 1)))


def generate_dataset(config: SynthConfig, out_dir) -> Manifest:
    out_dir = Path(out_dir)
    if not out_dir.parent.exists():
        raise DatasetError(f"parent directory {out_dir.parent} does not exist")
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {out_dir}: {exc}") from exc

    rng = np.random.default_rng(config.seed)
    n = config.n_samples
    n_pos = int(round(config.positive_fraction * n))
    labels = np.array([1] * n_pos + [0] * (n - n_pos))
    labels = labels[rng.permutation(n)]
    splits = _assign_splits(config, labels, rng)

    width = _width(n)
    label_rows, box_rows, tagged = [], [], []
    for i in range(n):
        name = f"{i:0{width}d}.pgm"
        positive = bool(labels[i])
        tag = positive and rng.random() < config.confounder_rate
        img, boxes = render_sample(config, rng, positive, tag)
        pgm_write(out_dir / "images" / name, img)
        label_rows.append(f"{name},{int(labels[i])},{splits[i]}")
        box_rows.extend(f"{name},{b.x0},{b.y0},{b.x1},{b.y1}" for b in boxes)
        if tag:
            tagged.append(name)

    _write_lines(out_dir / "labels.csv", ["filename,label,split"] + label_rows)
    _write_lines(out_dir / "boxes.csv", ["filename,x0,y0,x1,y1"] + box_rows)
    counts = {s: splits.count(s) for s in SPLITS}
    return Manifest(out_dir, n, n_pos, len(box_rows), counts, tagged)


def _write_lines(path: Path, lines: list) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _read_csv(path: Path, header: list) -> list:
    if not path.exists():
        raise DatasetError(f"missing file {path}")
    rows = list(csv.reader(io.StringIO(path.read_text())))
    if not rows or [c.strip() for c in rows[0]] != header:
        raise DatasetError(f"{path}:1: expected header {','.join(header)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        out.append((lineno, [c.strip() for c in row]))
    return out


def load_dataset(data_dir, split: Optional[str] = None) -> list:
    """Load samples of one split (or all when ``split`` is None / "all")."""
    data_dir = Path(data_dir)
    if split not in (None, "all") and split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}; expected one of {', '.join(SPLITS)}")
    label_rows = _read_csv(data_dir / "labels.csv", ["filename", "label", "split"])
    box_rows = _read_csv(data_dir / "boxes.csv", ["filename", "x0", "y0", "x1", "y1"])

    boxes: dict = {}
    box_lines: dict = {}
    for lineno, (name, *coords) in box_rows:
        try:
            box = BBox(*(int(c) for c in coords))
        except ValueError:
            raise DatasetError(f"{data_dir / 'boxes.csv'}:{lineno}: non-integer coordinate") from None
        boxes.setdefault(name, []).append(box)
        box_lines.setdefault(name, []).append(lineno)

    samples = []
    for lineno, (name, label, sp) in label_rows:
        if label not in ("0", "1"):
            raise DatasetError(f"{data_dir / 'labels.csv'}:{lineno}: label must be 0 or 1")
        if sp not in SPLITS:
            raise DatasetError(f"{data_dir / 'labels.csv'}:{lineno}: unknown split {sp!r}")
        if split not in (None, "all") and sp != split:
            continue
        path = data_dir / "images" / name
        if not path.exists():
            raise DatasetError(f"missing image {path}")
        img = pgm_read(path)
        h, w = img.shape
        sample_boxes = boxes.get(name, [])
        for box, bl in zip(sample_boxes, box_lines.get(name, [])):
            if not (0 <= box.x0 <= box.x1 < w and 0 <= box.y0 <= box.y1 < h):
                raise DatasetError(f"{data_dir / 'boxes.csv'}:{bl}: box {tuple(box)} outside {w}x{h} image")
        samples.append(Sample(name, img[None], int(label), list(sample_boxes), sp))
    if split in (None, "all") and samples:
        known = {s.filename for s in samples}
        h, w = samples[0].image.shape[1:]
        for name in boxes:
            if name in known:
                continue
            for box, bl in zip(boxes[name], box_lines[name]):
                if not (0 <= box.x0 <= box.x1 < w and 0 <= box.y0 <= box.y1 < h):
                    raise DatasetError(f"{data_dir / 'boxes.csv'}:{bl}: box {tuple(box)} outside {w}x{h} image")
            raise DatasetError(f"{data_dir / 'boxes.csv'}:{box_lines[name][0]}: unknown image {name}")
    return samples


def load_splits(data_dir) -> dict:
    """All samples grouped by split name."""
    out = {s: [] for s in SPLITS}
    for sample in load_dataset(data_dir):
        out[sample.split].append(sample)
    return out
