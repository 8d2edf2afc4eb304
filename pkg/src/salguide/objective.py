"""Classification loss, explanation loss and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from .annotations import Mask
from .diffcore import Tensor
from .errors import InvalidParameterError, InvalidShapeError
from .explain import DEFAULT_K, SaliencyBatch, SaliencyMap, explain_rows
from .model import ForwardTrace
from .scores import ScoreKind


def bce_loss(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy with p_hat = softmax(logits)[:, 1], via log-sum-exp."""
    logits = dc.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape != (len(labels), 2):
        raise InvalidShapeError(f"logits {logits.shape} vs {len(labels)} labels")
    if np.any((labels != 0) & (labels != 1)):
        raise InvalidParameterError("labels must be 0 or 1")
    picked = dc.log_softmax(logits)[np.arange(len(labels)), labels]
    return -dc.mean(picked)


def _mask_grid(mask) -> np.ndarray:
    return mask.grid if isinstance(mask, Mask) else np.asarray(mask, dtype=np.float64)


def explanation_loss(sal: SaliencyMap, mask, mode: str = "soft"):
    """1 - (saliency inside mask) / (total saliency) for one map.

    ``soft`` uses the top-k masked normalized values (differentiable);
    ``hard`` uses the binary top-k map. Returns ``(loss, skipped)``; an empty
    saliency gives loss 0 and ``skipped=True``.
    """
    grid = _mask_grid(mask)
    if mode == "soft":
        S = sal.masked_soft
    elif mode == "hard":
        S = Tensor(sal.binary)
    else:
        raise InvalidParameterError(f"mode must be 'soft' or 'hard', got {mode!r}")
    if S.shape != grid.shape:
        raise InvalidShapeError(f"saliency {S.shape} vs mask {grid.shape}")
    total = dc.tsum(S)
    if total.data <= 0:
        return Tensor(0.0), True
    return 1.0 - dc.tsum(S * Tensor(grid)) / total, False


def explanation_losses(sal: SaliencyBatch, grids: np.ndarray, mode: str = "soft"):
    """Batched :func:`explanation_loss`: returns ``(losses (p,), skipped (p,))``.

    Skipped rows carry loss 0 with no gradient.
    """
    if mode not in ("soft", "hard"):
        raise InvalidParameterError(f"mode must be 'soft' or 'hard', got {mode!r}")
    S = sal.masked_soft if mode == "soft" else Tensor(sal.binary)
    grids = np.asarray(grids, dtype=np.float64)
    if S.shape != grids.shape:
        raise InvalidShapeError(f"saliency {S.shape} vs masks {grids.shape}")
    total = dc.tsum(S, axis=(1, 2))
    skipped = total.data <= 0
    keep = Tensor((~skipped).astype(np.float64))
    safe_total = total + Tensor(skipped.astype(np.float64))
    inside = dc.tsum(S * Tensor(grids), axis=(1, 2))
    return (1.0 - inside / safe_total) * keep, skipped


@dataclass
class LossBreakdown:
    bce: Tensor
    exp: Tensor            # unweighted explanation loss
    total: Tensor
    alpha: float
    n_explained: int
    n_skipped_degenerate: int

    @property
    def weighted_exp(self) -> float:
        return self.alpha * float(self.exp.data)


def batch_objective(trace: ForwardTrace, labels, masks: Sequence[Optional[object]], kind,
                    alpha: float, k: float = DEFAULT_K, stop_weights: bool = False,
                    mode: str = "soft", minmax_grad: bool = False,
                    constants: Optional[dict] = None) -> LossBreakdown:
    """bce + alpha * mean explanation loss over positive, annotated samples.

    ``masks[i]`` is a Mask / grid for annotated positives and None otherwise.
    Degenerate saliency maps are left out of the mean and counted.
    """
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha}")
    kind = ScoreKind.parse(kind)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(masks) != len(labels):
        raise InvalidShapeError(f"{len(masks)} masks for {len(labels)} samples")
    bce = bce_loss(trace.logits, labels)
    rows = [i for i, (y, m) in enumerate(zip(labels, masks)) if y == 1 and m is not None]
    exp = Tensor(0.0)
    n_explained = n_skipped = 0
    if kind is not ScoreKind.PURE_BCE and rows:
        sal = explain_rows(trace, kind, rows, for_training=True, k=k,
                           stop_weights=stop_weights, minmax_grad=minmax_grad, constants=constants)
        grids = np.stack([_mask_grid(masks[i]) for i in rows])
        losses, skipped = explanation_losses(sal, grids, mode)
        n_skipped = int(skipped.sum())
        n_explained = len(rows) - n_skipped
        if n_explained:
            exp = dc.tsum(losses) / float(n_explained)
    total = bce + exp * float(alpha)
    return LossBreakdown(bce, exp, total, float(alpha), n_explained, n_skipped)
