"""Flatten-and-predict head, training losses and evaluation metrics."""
from __future__ import annotations

import json
import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ConfigError
from .nn import FFN, ParameterStore


class UndefinedMetricError(ValueError):
    pass


class PredictionHead:
    """Row-major flatten of an ``M x d`` token matrix followed by a two-layer FFN to one output."""

    def __init__(self, store: ParameterStore, in_width: int, activation: str = "silu", prefix: str = "head"):
        self.in_width = in_width
        self.ffn = FFN(store, prefix, in_width, math.ceil(in_width / 2), 1, activation)

    def __call__(self, tokens: Tensor) -> Tensor:
        """``tokens`` is ``(B, M, d)`` or already flat ``(B, M*d)``; returns ``(B,)``."""
        b = tokens.shape[0]
        flat = ad.reshape(tokens, (b, -1)) if tokens.ndim != 2 else tokens
        if flat.shape[1] != self.in_width:
            raise ConfigError(f"prediction head expects width {self.in_width}, got {flat.shape[1]}")
        return ad.reshape(self.ffn(flat), (b,))


def loss(pred: Tensor, targets: np.ndarray, task: str) -> Tensor:
    """Batch-mean L1 for regression, batch-mean binary cross-entropy on logits for classification."""
    targets = np.asarray(targets, dtype=np.float64)
    if task == "regression":
        per = ad.absolute(ad.sub(pred, targets))
    elif task == "classification":
        per = ad.bce_with_logits(pred, targets)
    else:
        raise ConfigError(f"unknown task {task!r}")
    return ad.mean(per)


def metric_mae(preds: Sequence[float], targets: Sequence[float]) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    return float(np.mean(np.abs(preds - targets)))


def metric_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly, ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative example")
    if pos.size + neg.size != scores.size:
        raise ValueError("labels must be 0 or 1")
    order = np.sort(neg)
    below = np.searchsorted(order, pos, side="left")
    ties = np.searchsorted(order, pos, side="right") - below
    return float((below.sum() + 0.5 * ties.sum()) / (pos.size * neg.size))


def metric_name(task: str) -> str:
    return "mae" if task == "regression" else "auc"


def compute_metric(task: str, preds, targets) -> float:
    return metric_mae(preds, targets) if task == "regression" else metric_auc(preds, targets)


def better(task: str, a: float, b: float) -> bool:
    """True when metric value ``a`` strictly beats ``b``."""
    return a < b if task == "regression" else a > b


def metric_record(task: str, value: float, split: str, seed: int) -> str:
    return json.dumps({"metric": metric_name(task), "value": value, "split": split, "seed": seed})
