"""Reference checks: stage gradient checks on a fixed 5-node graph and the desk-scale ablation."""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .graph import DatasetSplit, LabeledExample, collate, generate_synthetic, make_graph
from .gradcheck import finite_difference_check
from .model import build_model
from .predictor import loss

GRADCHECK_TOLERANCE = 1e-4
MODULES = ("mp", "serializer", "attn", "head", "full")


def reference_graph():
    """House graph: a square 0-1-2-3 with roof node 4 on edge 2-3; two edge types."""
    edges = [(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (3, 4)]
    return make_graph([[0], [1], [0], [2], [1]], edges, [[0], [1], [0], [1], [0], [1]])


def reference_config(**changes) -> TrainConfig:
    base = dict(d=4, m=3, mp_layers=2, attn_layers=2, node_vocab=(3,), edge_vocab=(2,), noise="off", seed=7)
    base.update(changes)
    return TrainConfig(**base)


def _probe(shape, rng) -> np.ndarray:
    return rng.normal(size=shape)


def _weighted_sum(t: Tensor, weights: np.ndarray) -> Tensor:
    return ad.sum(ad.mul(t, weights))


def run_gradchecks(module: str = "all", epsilon: float = 1e-5) -> dict[str, float]:
    """Max relative error per stage; ``module='all'`` runs every stage."""
    names = MODULES if module == "all" else (module,)
    rng = np.random.default_rng(2024)
    cfg = reference_config()
    batch = collate([LabeledExample(reference_graph(), 3.0)])
    results = {}
    for name in names:
        model = build_model(cfg)
        params = model.store
        if name == "mp":
            points = [p for k, p in params.items() if k.startswith(("mp.", "embed."))]
            w = _probe((batch.num_nodes, cfg.d), rng)
            fn = lambda _: _weighted_sum(model.local_mp(batch), w)
        elif name == "serializer":
            h = Tensor(_probe((batch.num_nodes, cfg.d), rng))
            points = [h, params["serializer.basis"]]
            w = _probe((1, cfg.m, cfg.d), rng)
            fn = lambda _: _weighted_sum(model.serializer(h, batch), w)
        elif name == "attn":
            g = Tensor(_probe((1, cfg.m, cfg.d), rng))
            points = [g] + [p for k, p in params.items() if k.startswith("attn.")]
            w = _probe((1, cfg.m, cfg.d), rng)
            fn = lambda _: _weighted_sum(model.encoder(g), w)
        elif name == "head":
            g = Tensor(_probe((1, cfg.m, cfg.d), rng))
            points = [g] + [p for k, p in params.items() if k.startswith("head.")]
            fn = lambda _: ad.sum(model.head(g))
        elif name == "full":
            points = list(params.values())
            # Target far from the prediction keeps the L1 loss away from its kink.
            target = model.forward(batch).data + 5.0
            fn = lambda _: loss(model.forward(batch), target, cfg.task)
        else:
            raise ValueError(f"unknown module {name!r}; expected one of {MODULES}")
        results[name] = finite_difference_check(fn, points, epsilon)
    return results


# --- desk-scale ablation ----------------------------------------------------

ABLATION_SIZES = (2000, 250, 250)


def ablation_dataset(seed: int = 12345):
    """Triangle-count graphs with 5-12 nodes and a fixed 2000/250/250 split."""
    n_train, n_valid, n_test = ABLATION_SIZES
    examples = generate_synthetic("triangle-count", n_train + n_valid + n_test, (5, 12), seed)
    split = DatasetSplit(tuple(range(n_train)), tuple(range(n_train, n_train + n_valid)),
                         tuple(range(n_train + n_valid, n_train + n_valid + n_test)))
    return examples, split


def ablation_config(**changes) -> TrainConfig:
    """Shared by every variant; only ``variant`` and ``seed`` change between runs."""
    base = dict(m=4, tau=0.01, noise="off", epochs=40)
    base.update(changes)
    return TrainConfig(**base)


def ablation_verdict(test_mae: dict[str, list[float]]) -> dict:
    """Judge the variant ordering from per-seed test MAE.

    Strict pass: the full model has the lowest mean and sum-pool the highest.
    Otherwise the ordering still passes when, for every variant, the full
    mean exceeds the variant mean by at most their pooled standard deviation
    (sample variances, equal seed counts). Effect sizes are
    ``(variant mean - full mean) / pooled std``, positive when full is better.
    """
    full = np.asarray(test_mae["full"], dtype=float)
    means = {k: float(np.mean(v)) for k, v in test_mae.items()}
    others = [k for k in test_mae if k != "full"]
    effects, within = {}, {}
    for k in others:
        v = np.asarray(test_mae[k], dtype=float)
        pooled = float(np.sqrt((full.var(ddof=1) + v.var(ddof=1)) / 2.0)) if len(v) > 1 else 0.0
        gap = means[k] - means["full"]
        if pooled > 0:
            effects[k] = gap / pooled
        else:
            effects[k] = math.copysign(math.inf, gap) if gap else 0.0
        within[k] = -gap <= pooled
    strict = all(means["full"] < means[k] for k in others) and \
        all(means["sum-pool"] > means[k] for k in test_mae if k != "sum-pool")
    return {
        "means": means,
        "effect_sizes": effects,
        "strict": strict,
        "within_pooled_std": within,
        "passed": strict or all(within.values()),
    }
