"""Explanation-guided training of a small CNN with Grad-CAM supervision."""
from .annotations import BBox, Mask, box_to_grid, rasterize_union
from .diffcore import Tensor, grad, no_grad
from .errors import (ConfigError, ContractError, CorruptCheckpointError, DatasetError,
                     InvalidParameterError, InvalidShapeError, SalguideError, ShapeMismatchError,
                     TrainingDivergedError, UnsupportedFormatError)
from .explain import (SaliencyBatch, SaliencyMap, explain_rows, explain_sample, gradcam_heatmap,
                      gradcam_weights, normalize_minmax, threshold_topk)
from .kernels import BACKEND
from .metrics import (BoxplotStats, MetricsRecord, all_saliency_precision, annotation_coverage,
                      boxplot_stats, top_saliency_precision)
from .model import ForwardTrace, Model, ModelConfig, forward, init_model, load_checkpoint, save_checkpoint
from .objective import LossBreakdown, batch_objective, bce_loss, explanation_loss
from .scores import ScoreKind, score
from .synthdata import Sample, SynthConfig, generate_dataset, load_dataset, load_splits
from .trainer import AdamState, EpochRecord, TrainConfig, adam_step, evaluate, train

__version__ = "0.1.0"
