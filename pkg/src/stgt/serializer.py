"""Soft assignment of nodes to an ordered set of learnable basis tokens.

Every node gets a Student-t similarity to each basis token, the row of
scores is normalised with a (optionally noisy) temperature softmax, and each
graph token is the assignment-weighted sum of node features. Token ``j``
always corresponds to basis token ``j``, so the output is an ordered
sequence of fixed length ``M``.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ConfigError
from .graph import GraphBatch
from .nn import ParameterStore


def similarity_scores(h: Tensor, basis: Tensor) -> Tensor:
    """``1 / (1 + ||h_i - b_j||^2)`` for every node ``i`` and basis token ``j``."""
    return ad.reciprocal(ad.add(ad.pairwise_sqdist(h, basis), 1.0))


def gumbel_noise(shape: tuple, seed: int, example_id: int, epoch: int) -> np.ndarray:
    """Standard Gumbel draws from a stream keyed by (seed, example, epoch)."""
    return np.random.default_rng([seed, example_id, epoch]).gumbel(size=shape)


def gumbel_normalize(scores: Tensor, tau: float, noise: np.ndarray | None = None) -> Tensor:
    """Row softmax of ``(scores + noise) / tau``; ``noise=None`` disables the perturbation."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    logits = scores if noise is None else ad.add(scores, noise)
    return ad.softmax_rows(ad.scale(logits, 1.0 / tau))


def aggregate_tokens(assign: Tensor, h: Tensor, node_graph: np.ndarray | None = None,
                     num_graphs: int = 1) -> Tensor:
    """``g_j = sum_i s_ij h_i`` per graph, accumulated in node order.

    Returns ``(num_graphs, M, d)``; nodes are mapped to graphs by ``node_graph``
    (all zeros when omitted).
    """
    n, m = assign.shape
    d = h.shape[1]
    if node_graph is None:
        node_graph = np.zeros(n, dtype=np.int64)
    outer = ad.mul(ad.reshape(assign, (n, m, 1)), ad.reshape(h, (n, 1, d)))
    return ad.scatter_add_rows(outer, node_graph, num_graphs)


def serialize(h: Tensor, basis: Tensor, tau: float, noise_mode: str = "off",
              rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Single-graph serialization: returns the ``M x d`` token matrix and the basis tokens."""
    if noise_mode not in ("gumbel", "off"):
        raise ConfigError(f"unknown noise mode {noise_mode!r}")
    scores = similarity_scores(h, basis)
    noise = None
    if noise_mode == "gumbel":
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.gumbel(size=scores.shape)
    assign = gumbel_normalize(scores, tau, noise)
    tokens = aggregate_tokens(assign, h)
    return ad.reshape(tokens, tokens.shape[1:]), basis


class Serializer:
    def __init__(self, store: ParameterStore, m: int, d: int, tau: float = 0.1, noise: str = "gumbel",
                 seed: int = 0):
        if tau <= 0:
            raise ConfigError(f"serializer.tau must be positive, got {tau}")
        self.basis = store.normal("serializer.basis", (m, d), 1.0 / math.sqrt(d))
        self.m = m
        self.tau = tau
        self.noise = noise
        self.seed = seed
        self.last_assignment: np.ndarray | None = None

    def __call__(self, h: Tensor, batch: GraphBatch, training: bool = False, epoch: int = 0) -> Tensor:
        scores = similarity_scores(h, self.basis)
        noise = None
        if training and self.noise == "gumbel":
            noise = np.concatenate([
                gumbel_noise((int(n), self.m), self.seed, ex, epoch)
                for n, ex in zip(batch.sizes, batch.example_ids)
            ])
        assign = gumbel_normalize(scores, self.tau, noise)
        self.last_assignment = assign.data
        return aggregate_tokens(assign, h, batch.node_graph, batch.num_graphs)
