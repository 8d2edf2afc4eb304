"""Scalar explanation scores derived from the two class logits."""
from __future__ import annotations

import enum

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ContractError, InvalidShapeError


class ScoreKind(enum.Enum):
    PURE_BCE = "pure_bce"
    LOGIT_ALG = "logit_alg"
    LOGIT_ABS = "logit_abs"
    LOGIT_SQR = "logit_sqr"
    LOGIT_ONLY = "logit_only"
    PROB_ALG = "prob_alg"
    PROB_ABS = "prob_abs"
    PROB_SQR = "prob_sqr"

    @classmethod
    def parse(cls, name) -> "ScoreKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown score kind {name!r}; valid kinds: {valid}") from None

    def __str__(self):
        return self.value


KIND_NAMES = [k.value for k in ScoreKind]


def score(logits: Tensor, kind: ScoreKind) -> Tensor:
    """Per-sample explanation score for (n, 2) logits; returns shape (n,).

    A single (2,) logit pair returns a scalar.
    """
    kind = ScoreKind.parse(kind)
    if kind is ScoreKind.PURE_BCE:
        raise ContractError("pure_bce has no explanation score")
    z = dc.as_tensor(logits)
    single = z.ndim == 1
    if single:
        z = dc.reshape(z, (1, 2))
    if z.ndim != 2 or z.shape[1] != 2:
        raise InvalidShapeError(f"score expects (n, 2) logits, got {logits.shape}")

    if kind is ScoreKind.LOGIT_ONLY:
        s = z[:, 1]
    else:
        if kind in (ScoreKind.PROB_ALG, ScoreKind.PROB_ABS, ScoreKind.PROB_SQR):
            z = dc.softmax2(z)
        d = z[:, 1] - z[:, 0]
        if kind in (ScoreKind.LOGIT_ALG, ScoreKind.PROB_ALG):
            s = d
        elif kind in (ScoreKind.LOGIT_ABS, ScoreKind.PROB_ABS):
            s = dc.tabs(d)
        else:
            s = d * d
    return dc.reshape(s, ()) if single else s
