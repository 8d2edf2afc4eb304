"""Explanation-quality metrics and box-plot summaries.

Per-sample metrics return ``None`` when the sample has no saliency to
measure (skipped from means rather than counted as zero).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .annotations import BBox
from .errors import InvalidParameterError, InvalidShapeError

DEFAULT_TAU = 0.01


def _check_same(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise InvalidShapeError(f"map {a.shape} vs mask {b.shape}")


def top_saliency_precision(binary, mask) -> Optional[float]:
    """Fraction of binary top-k pixels inside the mask."""
    binary, mask = np.asarray(binary, dtype=np.float64), np.asarray(mask, dtype=np.float64)
    _check_same(binary, mask)
    total = binary.sum()
    if total == 0:
        return None
    return float((binary * mask).sum() / total)


def all_saliency_precision(normalized, mask) -> Optional[float]:
    """Fraction of the continuous normalized saliency mass inside the mask."""
    normalized, mask = np.asarray(normalized, dtype=np.float64), np.asarray(mask, dtype=np.float64)
    _check_same(normalized, mask)
    total = normalized.sum()
    if total == 0:
        return None
    return float((normalized * mask).sum() / total)


def box_covered(binary, box: BBox, tau: float = DEFAULT_TAU) -> bool:
    binary = np.asarray(binary)
    h, w = binary.shape
    if not (0 <= box.x0 <= box.x1 < w and 0 <= box.y0 <= box.y1 < h):
        raise InvalidParameterError(f"grid box {tuple(box)} empty or outside {w}x{h} grid")
    inside = binary[box.y0:box.y1 + 1, box.x0:box.x1 + 1].sum()
    return bool(inside / box.area >= tau)


def annotation_coverage(binary, boxes: Iterable[BBox], tau: float = DEFAULT_TAU) -> tuple:
    """(covered, total) over grid-space boxes; covered iff salient density >= tau."""
    boxes = [BBox(*b) for b in boxes]
    covered = sum(box_covered(binary, b, tau) for b in boxes)
    return covered, len(boxes)


@dataclass
class MetricsRecord:
    accuracy: float
    coverage: Optional[float]
    top_precision: Optional[float]
    all_precision: Optional[float]
    n_samples: int
    n_boxes: int
    n_degenerate: int


@dataclass(frozen=True)
class BoxplotStats:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float


def _quantile_linear(sorted_vals: Sequence[float], q: float) -> float:
    pos = q * (len(sorted_vals) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(sorted_vals) - 1)
    frac = pos - lo
    return float(sorted_vals[lo] + (sorted_vals[hi] - sorted_vals[lo]) * frac)


def boxplot_stats(values: Iterable[float]) -> BoxplotStats:
    """Five-number summary (linear interpolation between closest ranks) plus mean."""
    vals = sorted(float(v) for v in values)
    if not vals:
        raise InvalidParameterError("boxplot_stats needs at least one value")
    return BoxplotStats(
        min=vals[0],
        q1=_quantile_linear(vals, 0.25),
        median=_quantile_linear(vals, 0.5),
        q3=_quantile_linear(vals, 0.75),
        max=vals[-1],
        mean=float(np.mean(vals)),
    )


def mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None
