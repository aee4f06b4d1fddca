"""Training loop, checkpoints, evaluation and multi-seed reports."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import predictor
from .autodiff import NumericDomainError, Tape
from .config import TrainConfig
from .graph import DatasetSplit, LabeledExample, collate, write_split_files
from .model import GraphModel, build_model

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "stgt-checkpoint-1"


class TrainingDiverged(RuntimeError):
    pass


class CheckpointMismatch(ValueError):
    pass


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_metric: float
    test_metric: float


@dataclass
class RunRecord:
    seed: int
    metric: str
    config_digest: str
    initial_train_metric: float
    epochs: list[EpochRecord] = field(default_factory=list)
    selected_epoch: int = 0
    final_test_metric: float = math.nan
    final_valid_metric: float = math.nan

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        raw = json.loads(text)
        raw["epochs"] = [EpochRecord(**e) for e in raw["epochs"]]
        return cls(**raw)


def _batches(indices: Sequence[int], size: int):
    for start in range(0, len(indices), size):
        yield indices[start:start + size]


def predict(model: GraphModel, examples: Sequence[LabeledExample], indices: Sequence[int],
            batch_size: int = 256) -> np.ndarray:
    """Deterministic predictions (serializer noise off) in the order of ``indices``."""
    out = []
    for chunk in _batches(list(indices), batch_size):
        batch = collate([examples[i] for i in chunk], chunk)
        out.append(model.forward(batch, training=False).data.copy())
    return np.concatenate(out) if out else np.zeros(0)


def evaluate_model(model: GraphModel, examples: Sequence[LabeledExample], indices: Sequence[int]) -> float:
    if len(indices) == 0:
        raise ValueError("cannot evaluate an empty split")
    preds = predict(model, examples, indices, model.config.eval_batch_size)
    targets = [examples[i].target for i in indices]
    return predictor.compute_metric(model.config.task, preds, targets)


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(model: GraphModel, directory: str | Path, epoch: int) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name, p in model.store.items():
        blob = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "config": model.config.to_flat(),
        "config_digest": model.config.digest(),
        "params": entries,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    (directory / "params.bin").write_bytes(payload)
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def read_checkpoint(directory: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointMismatch(f"{directory}: not an {CHECKPOINT_FORMAT} checkpoint")
    payload = (directory / "params.bin").read_bytes()
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise CheckpointMismatch(f"{directory}: parameter blob does not match its manifest hash")
    values = {}
    for entry in manifest["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        values[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return manifest, values


def load_parameters(model: GraphModel, values: dict[str, np.ndarray]) -> None:
    problems = []
    for name, p in model.store.items():
        if name not in values:
            problems.append(f"{name}: missing from checkpoint (model expects {list(p.shape)})")
        elif values[name].shape != p.shape:
            problems.append(f"{name}: checkpoint {list(values[name].shape)} vs model {list(p.shape)}")
    for name in values:
        if name not in model.store:
            problems.append(f"{name}: not a parameter of this model")
    if problems:
        raise CheckpointMismatch("incompatible checkpoint:\n  " + "\n  ".join(problems))
    for name, p in model.store.items():
        p.data = values[name].copy()


def load_model(directory: str | Path, config: TrainConfig | None = None) -> GraphModel:
    manifest, values = read_checkpoint(directory)
    model = build_model(config if config is not None else TrainConfig.from_flat(manifest["config"]))
    load_parameters(model, values)
    return model


def evaluate(checkpoint: str | Path, examples: Sequence[LabeledExample], indices: Sequence[int],
             split: str = "test", config: TrainConfig | None = None) -> dict:
    """Load a checkpoint and score it on ``indices``; noise is always off here."""
    model = load_model(checkpoint, config)
    value = evaluate_model(model, examples, indices)
    c = model.config
    return {"metric": predictor.metric_name(c.task), "value": value, "split": split, "seed": c.seed}


# --- training ---------------------------------------------------------------

def train(config: TrainConfig, examples: Sequence[LabeledExample], split: DatasetSplit,
          out_dir: str | Path | None = None, model: GraphModel | None = None) -> tuple[RunRecord, GraphModel]:
    """Train with Adam, validate every epoch and keep the best-validation checkpoint.

    When ``out_dir`` is given it receives ``config.json``, the split index files,
    ``log.jsonl`` (one line per epoch), ``run.json`` and ``checkpoint/``.
    Returns the run record and the model restored to the selected epoch.
    """
    for name in ("train", "valid", "test"):
        if not split.indices(name):
            raise ValueError(f"{name} split is empty")
    model = model if model is not None else build_model(config)
    c = config
    task = c.task
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(c.to_json())
        write_split_files(split, out)
        log_fh = open(out / "log.jsonl", "w")
    params = list(model.store.values())
    opt = Adam(params, lr=c.lr)
    record = RunRecord(
        seed=c.seed,
        metric=predictor.metric_name(task),
        config_digest=c.digest(ignore_seed=True),
        initial_train_metric=evaluate_model(model, examples, split.train),
    )
    best = None
    best_state = model.store.snapshot()
    train_idx = np.array(split.train)
    try:
        for epoch in range(1, c.epochs + 1):
            order = train_idx[np.random.default_rng([c.seed, epoch]).permutation(len(train_idx))].tolist()
            total, seen = 0.0, 0
            for b, chunk in enumerate(_batches(order, c.batch_size)):
                batch = collate([examples[i] for i in chunk], chunk)
                model.store.zero_grad()
                try:
                    with Tape() as tape:
                        pred = model.forward(batch, training=True, epoch=epoch)
                        value = predictor.loss(pred, batch.targets, task)
                    tape.backward(value)
                    if any(p.grad is not None and not np.all(np.isfinite(p.grad)) for p in params):
                        raise NumericDomainError("non-finite gradient")
                except NumericDomainError as exc:
                    raise TrainingDiverged(
                        f"epoch {epoch}, batch {b} (examples {chunk[0]}..{chunk[-1]}): {exc}"
                    ) from exc
                opt.step()
                total += value.item() * len(chunk)
                seen += len(chunk)
            valid = evaluate_model(model, examples, split.valid)
            test = evaluate_model(model, examples, split.test)
            rec = EpochRecord(epoch, total / seen, valid, test)
            record.epochs.append(rec)
            if out is not None:
                log_fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
                log_fh.flush()
            log.info("epoch %d loss %.5f valid %.5f test %.5f", epoch, rec.train_loss, valid, test)
            if best is None or predictor.better(task, valid, best):
                best = valid
                best_state = model.store.snapshot()
                record.selected_epoch = epoch
                record.final_valid_metric = valid
                record.final_test_metric = test
                if out is not None:
                    save_checkpoint(model, out / "checkpoint", epoch)
    finally:
        if out is not None:
            log_fh.close()
    for name, p in model.store.items():
        p.data = best_state[name]
    if out is not None:
        if c.epochs == 0:
            save_checkpoint(model, out / "checkpoint", 0)
        (out / "run.json").write_text(json.dumps({"config": c.to_flat(), "record": json.loads(record.to_json())},
                                                 sort_keys=True, indent=2) + "\n")
    return record, model


def select_epoch(epochs: Sequence[EpochRecord], task: str) -> int:
    """Best validation epoch, earliest on ties."""
    best = None
    for rec in epochs:
        if best is None or predictor.better(task, rec.valid_metric, best.valid_metric):
            best = rec
    return 0 if best is None else best.epoch


# --- reports ----------------------------------------------------------------

def load_run(directory: str | Path) -> tuple[TrainConfig, RunRecord]:
    raw = json.loads((Path(directory) / "run.json").read_text())
    return TrainConfig.from_flat(raw["config"]), RunRecord.from_json(json.dumps(raw["record"]))


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    if not values:
        raise ValueError("nothing to aggregate")
    return statistics.fmean(values), statistics.pstdev(values)


def format_mean_std(mean: float, std: float, digits: int) -> str:
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def report(runs: Sequence[tuple[TrainConfig, RunRecord]], digits: int | None = None) -> dict:
    """Mean ± std of the selected-epoch metrics over runs that differ only by seed."""
    if not runs:
        raise ValueError("report needs at least one run")
    digests = {cfg.digest(ignore_seed=True) for cfg, _ in runs}
    if len(digests) != 1:
        raise ValueError("runs were trained with different configurations (beyond the seed)")
    cfg0 = runs[0][0]
    metric = predictor.metric_name(cfg0.task)
    if digits is None:
        digits = 3 if metric == "mae" else 4
    result = {"metric": metric, "variant": cfg0.variant, "seeds": [r.seed for _, r in runs], "n": len(runs)}
    for split, attr in (("valid", "final_valid_metric"), ("test", "final_test_metric")):
        mean, std = aggregate([getattr(r, attr) for _, r in runs])
        result[split] = {"mean": mean, "std": std, "text": format_mean_std(mean, std, digits)}
    return result
