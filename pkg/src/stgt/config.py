"""Run configuration and its flat JSON form."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

VARIANTS = ("full", "no-serialization", "no-attention", "sum-pool")
NOISE_MODES = ("gumbel", "off")


class ConfigError(ValueError):
    pass


# flat JSON key -> dataclass attribute
_KEYS = {
    "task": "task",
    "variant": "variant",
    "d": "d",
    "mp_layers": "mp_layers",
    "mp.share_phi": "share_phi",
    "activation": "activation",
    "node_vocab": "node_vocab",
    "edge_vocab": "edge_vocab",
    "serializer.m": "m",
    "serializer.tau": "tau",
    "serializer.noise": "noise",
    "attn.layers": "attn_layers",
    "attn.dk": "dk",
    "attn.heads": "heads",
    "attn.lambda": "lam",
    "attn.learn_lambda": "learn_lambda",
    "attn.spe_base": "spe_base",
    "lr": "lr",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "eval_batch_size": "eval_batch_size",
    "seed": "seed",
}


@dataclass(frozen=True)
class TrainConfig:
    task: str = "regression"
    variant: str = "full"
    d: int = 16
    mp_layers: int = 3
    share_phi: bool = True
    activation: str = "silu"
    node_vocab: tuple[int, ...] = (1,)
    edge_vocab: tuple[int, ...] = (1,)
    m: int = 8
    tau: float = 0.1
    noise: str = "gumbel"
    attn_layers: int = 2
    dk: int | None = None
    heads: int = 1
    lam: float = 0.5
    learn_lambda: bool = False
    spe_base: float = 10000.0
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    eval_batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "node_vocab", tuple(int(v) for v in self.node_vocab))
        object.__setattr__(self, "edge_vocab", tuple(int(v) for v in self.edge_vocab))
        self.validate()

    @property
    def key_dim(self) -> int:
        return self.dk if self.dk is not None else self.d // self.heads

    def validate(self) -> None:
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"task must be regression or classification, got {self.task!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.noise not in NOISE_MODES:
            raise ConfigError(f"serializer.noise must be one of {NOISE_MODES}, got {self.noise!r}")
        for name in ("d", "m", "heads", "epochs", "batch_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("mp_layers", "attn_layers", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.d % 2:
            raise ConfigError("d must be even for sinusoidal positional encodings")
        if self.tau <= 0:
            raise ConfigError("serializer.tau must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("attn.lambda must lie in [0, 1]")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.key_dim < 1 or self.key_dim * self.heads != self.d:
            raise ConfigError("attn.heads * attn.dk must equal d (the residual adds Z to G)")
        if not self.node_vocab or not self.edge_vocab or min(self.node_vocab + self.edge_vocab) < 1:
            raise ConfigError("vocab sizes must be non-empty lists of positive integers")

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_flat(self) -> dict:
        raw = asdict(self)
        out = {}
        for key, attr in _KEYS.items():
            value = raw[attr]
            out[key] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_flat(cls, data: dict) -> "TrainConfig":
        unknown = sorted(set(data) - set(_KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {_KEYS[k]: v for k, v in data.items()}
        types = {f.name: f.type for f in fields(cls)}
        for name, value in kwargs.items():
            if types[name] == "float" and isinstance(value, int) and not isinstance(value, bool):
                kwargs[name] = float(value)
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), sort_keys=True, indent=2) + "\n"

    def digest(self, ignore_seed: bool = False) -> str:
        flat = self.to_flat()
        if ignore_seed:
            flat.pop("seed")
        blob = json.dumps(flat, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path: str | Path) -> TrainConfig:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return TrainConfig.from_flat(data)
