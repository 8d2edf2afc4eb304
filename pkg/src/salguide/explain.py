"""Grad-CAM heatmaps, min-max normalization and top-k thresholding.

Functions accept a single map (h, w) / activation block (c, h, w) or a
leading batch axis. Batching over samples is exact here because samples do
not interact in the classifier: the gradient of a sum of per-sample scores
with respect to the batch activations is the stack of per-sample gradients.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import InvalidParameterError, InvalidShapeError
from .model import ForwardTrace
from .scores import ScoreKind, score

DEFAULT_K = 50.0


class DisconnectedScoreWarning(UserWarning):
    """The score does not depend on the activations; Grad-CAM weights are zero."""


def gradcam_weights(s: Tensor, A: Tensor, create_graph: bool = False) -> Tensor:
    """Spatial mean of d s / d A per channel: (c,) for (c,h,w), (n,c) for (n,c,h,w)."""
    if A.ndim not in (3, 4):
        raise InvalidShapeError(f"activations must be (c,h,w) or (n,c,h,w), got {A.shape}")
    if not dc.depends_on(s, A):
        warnings.warn("score is disconnected from activations", DisconnectedScoreWarning, stacklevel=2)
        return Tensor(np.zeros(A.shape[:-2]))
    (gA,) = dc.grad(dc.tsum(s), [A], create_graph=create_graph)
    return dc.mean(gA, axis=(-2, -1))


def gradcam_heatmap(weights: Tensor, A: Tensor) -> Tensor:
    """ReLU(sum_c w_c A^c)."""
    weights, A = dc.as_tensor(weights), dc.as_tensor(A)
    if weights.shape != A.shape[:-2] or A.ndim not in (3, 4):
        raise InvalidShapeError(f"weights {weights.shape} do not match activations {A.shape}")
    w = dc.reshape(weights, weights.shape + (1, 1))
    return dc.relu(dc.tsum(w * A, axis=-3))


def normalize_minmax(H, stop_grad: bool = True, constants: Optional[dict] = None):
    """Min-max scale each map to [0, 1].

    By default min and max are treated as constants, so the gradient flows
    through the map values only; ``stop_grad=False`` differentiates through
    the argmin/argmax as well. A constant map becomes all zeros and is
    flagged degenerate. Returns ``(normalized, degenerate)``; ``degenerate``
    is a bool for one map and a bool array for a batch.

    ``constants`` replays a previous call's min/max (keys ``lo``, ``hi``)
    or, when empty, records them; gradient-stopped mode only.
    """
    H = dc.as_tensor(H)
    if H.ndim not in (2, 3) or H.size == 0:
        raise InvalidShapeError(f"expected (h,w) or (n,h,w) map, got {H.shape}")
    if constants is not None and not stop_grad:
        raise InvalidParameterError("recorded constants only apply to the gradient-stopped normalization")
    if constants is not None and "lo" in constants:
        lo, hi = constants["lo"], constants["hi"]
    else:
        lo = H.data.min(axis=(-2, -1), keepdims=True)
        hi = H.data.max(axis=(-2, -1), keepdims=True)
        if constants is not None:
            constants.update(lo=lo, hi=hi)
    degenerate = hi <= lo
    flags = degenerate.reshape(degenerate.shape[:-2])
    flags = bool(flags) if flags.ndim == 0 else flags
    if stop_grad:
        span = np.where(degenerate, 1.0, hi - lo)
        return (H - Tensor(lo)) / Tensor(span), flags
    lo_t = dc.reshape(dc.amin_last2(H), lo.shape)
    hi_t = dc.reshape(dc.amax_last2(H), hi.shape)
    span_t = (hi_t - lo_t) + Tensor(degenerate.astype(np.float64))
    return (H - lo_t) / span_t, flags


def topk_count(n_pixels: int, k: float) -> int:
    """Number of pixels the top-k% rule keeps: ceil(k/100 * N)."""
    return max(1, min(n_pixels, math.ceil(round(k * n_pixels / 100.0, 9))))


def threshold_topk(Hn, k: float = DEFAULT_K, constants: Optional[dict] = None):
    """Keep the top k% of a normalized map.

    The threshold is the m-th largest value, m = ceil(k/100 * N); ties with it
    are kept and exact zeros are never marked salient. Returns
    ``(binary, theta, masked_soft)`` where ``binary`` is a 0/1 float array and
    ``masked_soft`` is the map times the binary mask (mask held constant).
    ``constants`` replays or records (``binary``, ``theta``) like
    :func:`normalize_minmax`.
    """
    if not 0.0 < k <= 100.0:
        raise InvalidParameterError(f"k must be in (0, 100], got {k}")
    Hn = dc.as_tensor(Hn)
    if Hn.ndim not in (2, 3) or Hn.size == 0:
        raise InvalidShapeError(f"expected non-empty (h,w) or (n,h,w) map, got {Hn.shape}")
    if constants is not None and "binary" in constants:
        binary, theta = constants["binary"], constants["theta"]
    else:
        flat = Hn.data.reshape(Hn.shape[:-2] + (-1,))
        m = topk_count(flat.shape[-1], k)
        theta = -np.sort(-flat, axis=-1)[..., m - 1]
        binary = ((Hn.data >= theta[..., None, None]) & (Hn.data > 0)).astype(np.float64)
        if constants is not None:
            constants.update(binary=binary, theta=theta)
    masked_soft = Hn * Tensor(binary)
    return binary, (float(theta) if np.ndim(theta) == 0 else theta), masked_soft


@dataclass
class SaliencyMap:
    raw: Tensor            # (h, w) post-ReLU heatmap
    normalized: Tensor     # (h, w) in [0, 1]
    threshold: float
    binary: np.ndarray     # (h, w) 0/1
    masked_soft: Tensor    # normalized * binary
    degenerate: bool


@dataclass
class SaliencyBatch:
    """Saliency for several samples of one trace, stacked on axis 0."""
    rows: np.ndarray
    raw: Tensor
    normalized: Tensor
    threshold: np.ndarray
    binary: np.ndarray
    masked_soft: Tensor
    degenerate: np.ndarray

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i) -> SaliencyMap:
        return SaliencyMap(self.raw[i], self.normalized[i], float(self.threshold[i]),
                           self.binary[i], self.masked_soft[i], bool(self.degenerate[i]))


def evaluation_kind(kind) -> ScoreKind:
    """Score used to draw saliency; the BCE baseline is explained with z1 - z0."""
    kind = ScoreKind.parse(kind)
    return ScoreKind.LOGIT_ALG if kind is ScoreKind.PURE_BCE else kind


def explain_rows(trace: ForwardTrace, kind, rows: Optional[Sequence[int]] = None,
                 for_training: bool = False, k: float = DEFAULT_K,
                 stop_weights: bool = False, minmax_grad: bool = False,
                 constants: Optional[dict] = None) -> SaliencyBatch:
    """Grad-CAM pipeline for the selected rows of a batch trace.

    With ``for_training`` the Grad-CAM weights stay differentiable (double
    backward) unless ``stop_weights`` is set. ``constants`` records or
    replays the gradient-stopped quantities (min/max, top-k mask), which
    lets a finite-difference check evaluate exactly the surrogate whose
    gradient training uses.
    """
    kind = evaluation_kind(kind)
    n = len(trace)
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.int64)
    A = trace.activations
    s = score(trace.logits[rows], kind)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DisconnectedScoreWarning)
        weights = gradcam_weights(s, A, create_graph=for_training and not stop_weights)
    weights = weights[rows]
    acts = A[rows] if for_training else Tensor(A.data[rows])
    raw = gradcam_heatmap(weights, acts)
    normed, degenerate = normalize_minmax(raw, stop_grad=not minmax_grad, constants=constants)
    binary, theta, soft = threshold_topk(normed, k, constants=constants)
    degenerate = np.asarray(degenerate, dtype=bool).reshape(len(rows))
    return SaliencyBatch(rows, raw, normed, np.asarray(theta).reshape(len(rows)),
                         binary, soft, degenerate)


def explain_sample(trace: ForwardTrace, kind, for_training: bool = False,
                   k: float = DEFAULT_K, stop_weights: bool = False) -> SaliencyMap:
    """Saliency for a single-sample trace."""
    if len(trace) != 1:
        raise InvalidShapeError(f"explain_sample needs a single-sample trace, got {len(trace)}")
    return explain_rows(trace, kind, [0], for_training, k, stop_weights)[0]
