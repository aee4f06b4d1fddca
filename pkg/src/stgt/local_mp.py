"""Label embedding and local message passing over node and edge features."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph, GraphBatch, LabeledExample, collate
from .nn import FFN, ParameterStore


class VocabularyError(ValueError):
    pass


class EmbeddingTable:
    """One lookup matrix per categorical field; a label tuple embeds to the sum of its rows."""

    def __init__(self, store: ParameterStore, kind: str, vocab: tuple[int, ...], d: int):
        self.kind = kind
        self.vocab = tuple(vocab)
        self.tables = [store.normal(f"embed.{kind}.{f}", (v, d), 1.0) for f, v in enumerate(vocab)]

    def check(self, labels: np.ndarray) -> None:
        if labels.shape[1] != len(self.vocab):
            raise VocabularyError(f"{self.kind} labels have {labels.shape[1]} fields, expected {len(self.vocab)}")
        for f, size in enumerate(self.vocab):
            col = labels[:, f]
            bad = np.flatnonzero((col < 0) | (col >= size))
            if bad.size:
                k = int(bad[0])
                raise VocabularyError(
                    f"{self.kind} {k} field {f}: label {int(col[k])} outside vocabulary of size {size}"
                )

    def __call__(self, labels: np.ndarray) -> Tensor:
        self.check(labels)
        out = ad.gather_rows(self.tables[0], labels[:, 0])
        for f in range(1, len(self.tables)):
            out = ad.add(out, ad.gather_rows(self.tables[f], labels[:, f]))
        return out


class MPLayer:
    """``h_i <- f(eps * h_i + sum_{j in N(i)} phi([h_j, e_ij]))`` and ``e_ij <- phi([h_i, h_j])``.

    ``f``, ``phi`` and ``phi_edge`` are plain attributes so tests can swap in
    closed-form stand-ins.
    """

    def __init__(self, store: ParameterStore, index: int, d: int, activation: str, share_phi: bool):
        prefix = f"mp.{index}"
        self.epsilon = store.zeros(f"{prefix}.epsilon", (1,))
        self.f = FFN(store, f"{prefix}.f", d, 2 * d, d, activation)
        self.phi = FFN(store, f"{prefix}.phi", 2 * d, 2 * d, d, activation)
        self.phi_edge = self.phi if share_phi else FFN(store, f"{prefix}.phi_edge", 2 * d, 2 * d, d, activation)

    def update_nodes(self, h: Tensor, e: Tensor, src: np.ndarray, dst: np.ndarray) -> Tensor:
        n = h.shape[0]
        messages = self.phi(ad.concat([ad.gather_rows(h, dst), e], axis=-1))
        pooled = ad.scatter_add_rows(messages, src, n)
        return self.f(ad.add(ad.mul(self.epsilon, h), pooled))

    def update_edges(self, h: Tensor, src: np.ndarray, dst: np.ndarray) -> Tensor:
        return self.phi_edge(ad.concat([ad.gather_rows(h, src), ad.gather_rows(h, dst)], axis=-1))


class LocalMP:
    def __init__(self, store: ParameterStore, d: int, layers: int, node_vocab, edge_vocab,
                 activation: str = "silu", share_phi: bool = True):
        self.d = d
        self.node_embed = EmbeddingTable(store, "node", node_vocab, d)
        self.edge_embed = EmbeddingTable(store, "edge", edge_vocab, d)
        self.layers = [MPLayer(store, l, d, activation, share_phi) for l in range(layers)]

    def embed(self, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        return self.node_embed(batch.node_labels), self.edge_embed(batch.edge_labels)

    def __call__(self, batch: GraphBatch) -> Tensor:
        h, e = self.embed(batch)
        for k, layer in enumerate(self.layers):
            h = layer.update_nodes(h, e, batch.src, batch.dst)
            # The refresh after the last layer has no consumer.
            if k + 1 < len(self.layers):
                e = layer.update_edges(h, batch.src, batch.dst)
        return h

    def run_graph(self, graph: Graph) -> Tensor:
        return self(collate([LabeledExample(graph, 0.0)]))
