"""Small convolutional binary classifier that exposes its last conv block.

Architecture: three 3x3 conv + ReLU stages with a 2x2 max-pool after the
first two, then global average pooling and dropout before a 2-way linear
head. The activations of the third stage are the Grad-CAM feature maps.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import CorruptCheckpointError, InvalidParameterError, InvalidShapeError, ShapeMismatchError

MAGIC = b"SALG1"


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    channels: tuple = (8, 16, 16)
    kernel: int = 3
    dropout_p: float = 0.3
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.input_size < 4 or self.input_size % 4:
            raise InvalidParameterError(f"input_size must be a positive multiple of 4, got {self.input_size}")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise InvalidParameterError(f"channels must be three counts >= 1, got {self.channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidParameterError("kernel must be a positive odd integer")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidParameterError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.num_classes != 2:
            raise InvalidParameterError("num_classes is fixed at 2")

    @property
    def saliency_size(self) -> int:
        return self.input_size // 4


@dataclass
class ForwardTrace:
    logits: Tensor        # (n, 2): z0, z1
    activations: Tensor   # (n, c, hs, ws), the tensor fed to global pooling

    @property
    def saliency_dims(self) -> tuple:
        return self.activations.shape[2], self.activations.shape[3]

    def __len__(self):
        return self.logits.shape[0]


@dataclass
class Model:
    config: ModelConfig
    params: dict = field(default_factory=dict)   # name -> Tensor, insertion order is canonical

    def parameters(self) -> list:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def forward(self, batch, training: bool = False, rng: Optional[np.random.Generator] = None) -> ForwardTrace:
        return forward(self, batch, training, rng)


def _param_shapes(config: ModelConfig) -> dict:
    c1, c2, c3 = config.channels
    k = config.kernel
    return {
        "conv1.weight": (c1, 1, k, k), "conv1.bias": (c1,),
        "conv2.weight": (c2, c1, k, k), "conv2.bias": (c2,),
        "conv3.weight": (c3, c2, k, k), "conv3.bias": (c3,),
        "head.weight": (config.num_classes, c3), "head.bias": (config.num_classes,),
    }


def init_model(config: ModelConfig = ModelConfig(), rng: Optional[np.random.Generator] = None) -> Model:
    """Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    if rng is None:
        rng = np.random.default_rng(0)
    params = {}
    for name, shape in _param_shapes(config).items():
        if name.endswith("bias"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return Model(config, params)


def forward(model: Model, batch, training: bool = False, rng: Optional[np.random.Generator] = None) -> ForwardTrace:
    cfg = model.config
    x = dc.as_tensor(batch)
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
        raise InvalidShapeError(f"expected (n, 1, {cfg.input_size}, {cfg.input_size}) batch, got {x.shape}")
    if training and cfg.dropout_p > 0 and rng is None:
        raise InvalidParameterError("training forward with dropout needs an rng")
    acts = features(model, x)
    return ForwardTrace(head(model, acts, training, rng), acts)


def features(model: Model, x: Tensor) -> Tensor:
    """Final conv block activations, shape (n, c3, s/4, s/4)."""
    p = model.params
    pad = model.config.kernel // 2
    # channels-last internally so conv outputs stay contiguous
    h = dc.transpose(dc.as_tensor(x), (0, 2, 3, 1))
    h = dc.relu(dc.conv2d_nhwc(h, p["conv1.weight"], p["conv1.bias"], 1, pad))
    h = dc.maxpool2d_nhwc(h, 2)
    h = dc.relu(dc.conv2d_nhwc(h, p["conv2.weight"], p["conv2.bias"], 1, pad))
    h = dc.maxpool2d_nhwc(h, 2)
    h = dc.relu(dc.conv2d_nhwc(h, p["conv3.weight"], p["conv3.bias"], 1, pad))
    return dc.transpose(h, (0, 3, 1, 2))


def head(model: Model, acts: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Pooling and dropout, then the 2-way linear layer."""
    p = model.params
    pooled = dc.dropout(dc.global_avg_pool(acts), model.config.dropout_p, training, rng)
    return dc.linear(pooled, p["head.weight"], p["head.bias"])


# ---------------------------------------------------------------------------
# checkpoint format
#
#   b"SALG1"
#   u32 config_len, config as UTF-8 JSON (sorted keys)
#   u32 n_params
#   per param: u32 name_len, name, u32 ndim, ndim x u32 dims, prod(dims) x <f8
# all integers little-endian
# ---------------------------------------------------------------------------

def _config_to_json(config: ModelConfig) -> bytes:
    d = asdict(config)
    d["channels"] = list(d["channels"])
    return json.dumps(d, sort_keys=True).encode()


def save_checkpoint(model: Model, path) -> Path:
    path = Path(path)
    cfg = _config_to_json(model.config)
    parts = [MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(model.params))]
    for name, t in model.params.items():
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    path.write_bytes(b"".join(parts))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expect_config: Optional[ModelConfig] = None) -> Model:
    """Read a checkpoint; raise ShapeMismatchError if it disagrees with ``expect_config``."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic, not a SALG1 checkpoint")
    try:
        cfg_dict = json.loads(r.take(r.u32()).decode())
        config = ModelConfig(**cfg_dict)
    except (ValueError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable config ({exc})") from exc
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape))
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        params[name] = Tensor(data, requires_grad=True)
    if r.pos != len(r.buf):
        raise CorruptCheckpointError(f"{path}: trailing bytes after parameters")

    expected = _param_shapes(expect_config or config)
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        raise ShapeMismatchError(f"{path}: parameter shapes {got} do not match config {expected}")
    return Model(config, params)
