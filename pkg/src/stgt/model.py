"""The full model and its three ablation variants."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .attention import Encoder, inject_positional, sinusoidal_table
from .autodiff import Tensor
from .config import ConfigError, TrainConfig
from .graph import GraphBatch
from .local_mp import LocalMP
from .nn import ParameterStore
from .predictor import PredictionHead
from .serializer import Serializer


class GraphModel:
    """Shared front end: label embedding plus local message passing.

    Subclasses define :meth:`readout`, which turns node features into the
    input of the prediction head.
    """

    variant = ""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.store = ParameterStore(np.random.default_rng(config.seed))
        c = config
        self.local_mp = LocalMP(self.store, c.d, c.mp_layers, c.node_vocab, c.edge_vocab, c.activation, c.share_phi)

    def readout(self, h: Tensor, batch: GraphBatch, training: bool, epoch: int) -> Tensor:
        raise NotImplementedError

    def forward(self, batch: GraphBatch, training: bool = False, epoch: int = 0) -> Tensor:
        """Predictions of shape ``(num_graphs,)``: raw values or logits."""
        h = self.local_mp(batch)
        return self.head(self.readout(h, batch, training, epoch))

    __call__ = forward

    @property
    def head_width(self) -> int:
        return self.head.in_width


class STGT(GraphModel):
    """Message passing, serialization into ``M`` tokens, self-attention, flatten + FFN."""

    variant = "full"

    def __init__(self, config: TrainConfig):
        super().__init__(config)
        c = config
        self.serializer = Serializer(self.store, c.m, c.d, c.tau, c.noise, c.seed)
        self.lam = self.store.add("attn.lambda", np.array([c.lam])) if c.learn_lambda else c.lam
        self.spe = sinusoidal_table(c.m, c.d, c.spe_base)
        self.encoder = Encoder(self.store, c.attn_layers, c.d, c.key_dim, c.heads, c.activation)
        self.head = PredictionHead(self.store, c.m * c.d, c.activation)
        self.last_tokens: np.ndarray | None = None

    def readout(self, h, batch, training, epoch):
        tokens = self.serializer(h, batch, training, epoch)
        self.last_tokens = tokens.data
        g0 = inject_positional(tokens, self.serializer.basis, self.lam, spe=self.spe)
        return self.encoder(g0)


class NoSerialization(GraphModel):
    """One learnable graph token prepended to the node tokens; its final state feeds the head."""

    variant = "no-serialization"

    def __init__(self, config: TrainConfig):
        super().__init__(config)
        c = config
        self.graph_token = self.store.normal("readout.token", (1, c.d), 1.0 / np.sqrt(c.d))
        self.encoder = Encoder(self.store, c.attn_layers, c.d, c.key_dim, c.heads, c.activation)
        self.head = PredictionHead(self.store, c.d, c.activation)

    def readout(self, h, batch, training, epoch):
        b, d = batch.num_graphs, self.config.d
        width = int(batch.sizes.max()) + 1
        # Row layout of `rows`: graph tokens, node features, one zero row used as padding.
        rows = ad.concat([ad.gather_rows(self.graph_token, np.zeros(b, dtype=np.int64)), h, np.zeros((1, d))], axis=0)
        pad = b + batch.num_nodes
        slot = np.full((b, width), pad, dtype=np.int64)
        slot[:, 0] = np.arange(b)
        for g, (start, n) in enumerate(zip(batch.offsets, batch.sizes)):
            slot[g, 1:n + 1] = b + start + np.arange(n)
        tokens = ad.reshape(ad.gather_rows(rows, slot.reshape(-1)), (b, width, d))
        keys = (slot != pad)[:, None, :]
        out = self.encoder(tokens, keys)
        return ad.take(out, (slice(None), 0))


class NoAttention(GraphModel):
    """Serialized tokens are concatenated and fed straight to the head."""

    variant = "no-attention"

    def __init__(self, config: TrainConfig):
        super().__init__(config)
        c = config
        self.serializer = Serializer(self.store, c.m, c.d, c.tau, c.noise, c.seed)
        self.head = PredictionHead(self.store, c.m * c.d, c.activation)

    def readout(self, h, batch, training, epoch):
        return self.serializer(h, batch, training, epoch)


class SumPool(GraphModel):
    """Sum of node features as the graph representation."""

    variant = "sum-pool"

    def __init__(self, config: TrainConfig):
        super().__init__(config)
        self.head = PredictionHead(self.store, config.d, config.activation)

    def readout(self, h, batch, training, epoch):
        return ad.scatter_add_rows(h, batch.node_graph, batch.num_graphs)


MODELS = {cls.variant: cls for cls in (STGT, NoSerialization, NoAttention, SumPool)}


def build_model(config: TrainConfig) -> GraphModel:
    try:
        cls = MODELS[config.variant]
    except KeyError:
        raise ConfigError(f"unknown variant {config.variant!r}; expected one of {sorted(MODELS)}") from None
    return cls(config)
