"""Adam training loop with explanation supervision, and split evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import diffcore as dc
from .annotations import box_to_grid, rasterize_union
from .diffcore import Tensor
from .errors import InvalidParameterError, ShapeMismatchError, TrainingDivergedError
from .explain import DEFAULT_K, explain_rows
from .metrics import DEFAULT_TAU, MetricsRecord, all_saliency_precision, annotation_coverage, \
    mean_or_none, top_saliency_precision
from .model import ForwardTrace, Model, features, forward, head, save_checkpoint
from .objective import batch_objective
from .scores import ScoreKind

log = logging.getLogger(__name__)

EVAL_CHUNK = 64


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 2e-4
    weight_decay: float = 1e-4
    batch_size: int = 12
    alpha: float = 0.25
    score_kind: ScoreKind = ScoreKind.LOGIT_SQR
    k_percent: float = DEFAULT_K
    seed: int = 0
    stop_weights: bool = False

    def __post_init__(self):
        object.__setattr__(self, "score_kind", ScoreKind.parse(self.score_kind))
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidParameterError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise InvalidParameterError("learning_rate must be > 0 and weight_decay >= 0")
        if self.alpha < 0:
            raise InvalidParameterError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.k_percent <= 100:
            raise InvalidParameterError(f"k_percent must be in (0, 100], got {self.k_percent}")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, object], state: AdamState,
              lr: float, weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update in place, with coupled L2 (g += wd * theta)."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeMismatchError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if weight_decay:
            g = g + weight_decay * p.data
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class EpochRecord:
    epoch: int
    bce: float
    exp_weighted: float
    total: float
    val_accuracy: float


@dataclass
class PreparedSplit:
    """Samples stacked for batching, with masks and grid boxes precomputed."""
    images: np.ndarray      # (n, 1, s, s)
    labels: np.ndarray      # (n,)
    masks: list             # grid (hs, ws) for positives with boxes, else None
    grid_boxes: list        # per sample list of BBox in saliency space
    filenames: list

    def __len__(self):
        return len(self.labels)


def prepare(samples: Sequence, image_size: int, saliency_size: int) -> PreparedSplit:
    if not samples:
        raise InvalidParameterError("empty split")
    images = np.stack([s.image for s in samples]).astype(np.float64)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    masks, grid_boxes = [], []
    for s in samples:
        grid_boxes.append([box_to_grid(b, image_size, saliency_size) for b in s.boxes])
        annotated = s.label == 1 and s.boxes
        masks.append(rasterize_union(s.boxes, image_size, saliency_size).grid if annotated else None)
    return PreparedSplit(images, labels, masks, grid_boxes, [s.filename for s in samples])


@dataclass
class TrainResult:
    model: Model
    history: list
    checkpoint: Optional[Path]


def _rngs(seed: int):
    return np.random.default_rng([seed, 1]), np.random.default_rng([seed, 2])


def _as_prepared(data, model: Model) -> PreparedSplit:
    if isinstance(data, PreparedSplit):
        return data
    return prepare(data, model.config.input_size, model.config.saliency_size)


def train(model: Model, splits: Mapping[str, object], config: TrainConfig,
          checkpoint_path=None, progress=None) -> TrainResult:
    """Train in place on ``splits['train']``, tracking ``splits['val']`` accuracy per epoch.

    Splits may be lists of samples or :class:`PreparedSplit`. ``progress`` is
    called with each :class:`EpochRecord`.
    """
    tr = _as_prepared(splits["train"], model)
    val = _as_prepared(splits["val"], model) if splits.get("val") else None
    shuffle_rng, dropout_rng = _rngs(config.seed)
    state = AdamState()
    params = model.params
    names = list(params)
    wrt = [params[n] for n in names]
    history = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(tr))
        sums = np.zeros(3)
        n_batches = 0
        for bi, start in enumerate(range(0, len(tr), config.batch_size)):
            idx = order[start:start + config.batch_size]
            trace = forward(model, tr.images[idx], training=True, rng=dropout_rng)
            lb = batch_objective(trace, tr.labels[idx], [tr.masks[i] for i in idx],
                                 config.score_kind, config.alpha, config.k_percent,
                                 config.stop_weights)
            total = float(lb.total.data)
            if not math.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {bi} (bce={float(lb.bce.data)}, "
                    f"exp={float(lb.exp.data)})")
            grads = dc.grad(lb.total, wrt)
            adam_step(params, dict(zip(names, grads)), state, config.learning_rate, config.weight_decay)
            sums += (float(lb.bce.data), lb.weighted_exp, total)
            n_batches += 1
        bce, expw, tot = sums / n_batches
        val_acc = accuracy(model, val) if val is not None else float("nan")
        rec = EpochRecord(epoch, bce, expw, tot, val_acc)
        history.append(rec)
        log.info("epoch %d bce=%.4f exp=%.4f total=%.4f val_acc=%.3f", epoch, bce, expw, tot, val_acc)
        if progress is not None:
            progress(rec)
    ckpt = save_checkpoint(model, checkpoint_path) if checkpoint_path is not None else None
    return TrainResult(model, history, ckpt)


def predict_logits(model: Model, images: np.ndarray) -> np.ndarray:
    out = []
    with dc.no_grad():
        for start in range(0, len(images), EVAL_CHUNK):
            out.append(forward(model, images[start:start + EVAL_CHUNK]).logits.data)
    return np.concatenate(out)


def accuracy(model: Model, data) -> float:
    data = _as_prepared(data, model)
    pred = predict_logits(model, data.images).argmax(axis=1)
    return float(np.mean(pred == data.labels))


def eval_trace(model: Model, images: np.ndarray) -> ForwardTrace:
    """Evaluation-mode trace whose activations are a leaf, so Grad-CAM only
    differentiates the classification head."""
    with dc.no_grad():
        acts = features(model, Tensor(images))
    acts = Tensor(acts.data, requires_grad=True)
    return ForwardTrace(head(model, acts), acts)


def evaluate(model: Model, data, kind, k: float = DEFAULT_K, tau: float = DEFAULT_TAU) -> MetricsRecord:
    """Accuracy over all samples plus explanation metrics over annotated positives."""
    data = _as_prepared(data, model)
    kind = ScoreKind.parse(kind)
    correct = 0
    tops, alls = [], []
    covered = n_boxes = n_degenerate = 0
    for start in range(0, len(data), EVAL_CHUNK):
        sl = slice(start, start + EVAL_CHUNK)
        trace = eval_trace(model, data.images[sl])
        labels = data.labels[sl]
        correct += int(np.sum(trace.logits.data.argmax(axis=1) == labels))
        rows = [i for i in range(len(labels)) if data.masks[start + i] is not None]
        if not rows:
            continue
        sal = explain_rows(trace, kind, rows, for_training=False, k=k)
        for j, i in enumerate(rows):
            grid = data.masks[start + i]
            binary = sal.binary[j]
            if binary.sum() == 0:
                n_degenerate += 1
            tops.append(top_saliency_precision(binary, grid))
            alls.append(all_saliency_precision(sal.normalized.data[j], grid))
            c, t = annotation_coverage(binary, data.grid_boxes[start + i], tau)
            covered += c
            n_boxes += t
    return MetricsRecord(
        accuracy=correct / len(data),
        coverage=covered / n_boxes if n_boxes else None,
        top_precision=mean_or_none(tops),
        all_precision=mean_or_none(alls),
        n_samples=len(data),
        n_boxes=n_boxes,
        n_degenerate=n_degenerate,
    )
