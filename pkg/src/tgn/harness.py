"""Training loop, evaluation, checkpoints and the metrics log."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import read_dataset
from .layers import OptimizerState, adam_step
from .models import Example, ModelConfig, TaskModel, build_model
from .spec import save_spec
from .tensor import NonFiniteError, Tape, backward

log = logging.getLogger(__name__)
if os.environ.get("TGN_LOG"):
    logging.basicConfig(level=os.environ["TGN_LOG"].upper())

CHECKPOINT_VERSION = 1
METRICS_HEADER = ["epoch", "split", "loss", "accuracy", "seconds"]


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig
    train_path: str | None = None
    test_path: str | None = None
    epochs: int = 10
    batch_size: int = 16
    lr: float = 2e-4
    seed: int = 0
    checkpoint_path: str | None = None
    metrics_path: str | None = None
    eval_batch_size: int = 64
    # stop once the test split reaches this accuracy (off by default)
    stop_accuracy: float | None = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        for p in (self.train_path, self.test_path):
            if p is not None and not (Path(p) / "meta.json").is_file():
                raise ConfigError(f"dataset {p} does not exist")
        for p in (self.checkpoint_path, self.metrics_path):
            if p is not None and not Path(p).resolve().parent.is_dir():
                raise ConfigError(f"directory for {p} does not exist")


@dataclass
class MetricsRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    seconds: float

    def cells(self) -> list[str]:
        return [str(self.epoch), self.split, f"{self.loss:.17g}", f"{self.accuracy:.17g}", f"{self.seconds:.3f}"]


@dataclass
class Checkpoint:
    model: TaskModel
    optimizer: OptimizerState
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @property
    def spec_text(self) -> str:
        return save_spec(self.model.spec)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """One .npz holding every array plus a JSON metadata record.

    Written to a temporary name first, so a crash never leaves a torn file.
    """
    arrays = {f"param/{k}": v.data for k, v in ckpt.model.parameters().items()}
    arrays.update({f"adam_m/{k}": v for k, v in ckpt.optimizer.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in ckpt.optimizer.v.items()})
    meta = {
        "format_version": ckpt.version,
        "spec": ckpt.spec_text,
        "model_config": ckpt.model.config.to_dict(),
        "k": getattr(ckpt.model, "k", None),
        "optimizer": {
            "lr": ckpt.optimizer.lr,
            "beta1": ckpt.optimizer.beta1,
            "beta2": ckpt.optimizer.beta2,
            "eps": ckpt.optimizer.eps,
            "step": ckpt.optimizer.step,
        },
        "rng_state": ckpt.rng_state,
        "epoch": ckpt.epoch,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        arrays = {k: z[k] for k in z.files if k != "meta"}
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format {meta.get('format_version')} is not {CHECKPOINT_VERSION}")
    config = ModelConfig.from_dict(meta["model_config"])
    model = build_model(config)
    if save_spec(model.spec) != meta["spec"]:
        raise CheckpointError("checkpoint spec does not match the model it names")
    for name, p in model.parameters().items():
        key = f"param/{name}"
        if key not in arrays or arrays[key].shape != p.shape:
            raise CheckpointError(f"checkpoint lacks parameter {name} with shape {p.shape}")
        p.data = arrays[key].copy()
    opt = OptimizerState(**meta["optimizer"])
    opt.m = {k[len("adam_m/") :]: v for k, v in arrays.items() if k.startswith("adam_m/")}
    opt.v = {k[len("adam_v/") :]: v for k, v in arrays.items() if k.startswith("adam_v/")}
    return Checkpoint(model, opt, meta["epoch"], meta["rng_state"], meta["format_version"])


def encode_dataset(model: TaskModel, instances: Sequence, seed: int) -> list[Example]:
    """Encode instances with a per-instance generator so colour draws are reproducible."""
    return [model.encode(inst, np.random.default_rng([seed, i])) for i, inst in enumerate(instances)]


def evaluate_examples(model: TaskModel, examples: Sequence[Example], batch_size: int = 64) -> tuple[float, float]:
    """(mean loss per decision, accuracy) without touching any parameter."""
    loss_sum = 0.0
    correct = total = 0
    for start in range(0, len(examples), batch_size):
        batch = model.collate(examples[start : start + batch_size])
        loss, c, t = model.loss(batch)
        loss_sum += loss.item() * t
        correct += c
        total += t
    if total == 0:
        raise TrainingError("evaluation set has no decisions")
    return loss_sum / total, correct / total


def _append_row(path, row: MetricsRow) -> None:
    new = not Path(path).exists() or Path(path).stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRICS_HEADER)
        w.writerow(row.cells())
        fh.flush()
        os.fsync(fh.fileno())


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise ValueError(f"bad metrics header {header}")
        return [MetricsRow(int(r[0]), r[1], float(r[2]), float(r[3]), float(r[4])) for r in reader if r]


def train(
    config: TrainConfig,
    train_set: Sequence | None = None,
    test_set: Sequence | None = None,
) -> tuple[Checkpoint, list[MetricsRow]]:
    """Fixed-epoch Adam training with one metrics row per split per epoch.

    Instances come from ``config.train_path``/``test_path`` unless passed in
    directly. Train rows are measured after the epoch's updates with the
    same code path as :func:`evaluate`.
    """
    config.validate()
    if train_set is None:
        if config.train_path is None:
            raise ConfigError("no training data")
        task, train_set = read_dataset(config.train_path)
        if task != config.model.task:
            raise ConfigError(f"dataset task {task!r} does not match model task {config.model.task!r}")
    if test_set is None and config.test_path is not None:
        task, test_set = read_dataset(config.test_path)
        if task != config.model.task:
            raise ConfigError(f"dataset task {task!r} does not match model task {config.model.task!r}")

    model = build_model(config.model)
    params = model.parameters()
    opt = OptimizerState(lr=config.lr)
    rng = np.random.default_rng(config.seed)
    train_ex = encode_dataset(model, train_set, config.model.seed)
    splits = [("train", train_ex)]
    if test_set:
        splits.append(("test", encode_dataset(model, test_set, config.model.seed + 1)))
    if config.metrics_path:
        Path(config.metrics_path).write_text("")

    rows: list[MetricsRow] = []
    ckpt = Checkpoint(model, opt, 0, rng.bit_generator.state)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(train_ex))
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            batch = model.collate([train_ex[i] for i in order[lo : lo + config.batch_size]])
            try:
                with Tape() as tape:
                    loss, _, _ = model.loss(batch)
            except NonFiniteError as e:
                raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from None
            grads = backward(tape, loss, wrt=params.values())
            adam_step(opt, params, {k: grads[p.id] for k, p in params.items()})
        train_seconds = time.perf_counter() - start
        for split, examples in splits:
            loss_val, acc = evaluate_examples(model, examples, config.eval_batch_size)
            if not np.isfinite(loss_val):
                raise TrainingError(f"epoch {epoch}: non-finite {split} loss")
            row = MetricsRow(epoch, split, loss_val, acc, train_seconds if split == "train" else time.perf_counter() - start)
            rows.append(row)
            log.info("epoch %d %s loss %.4f acc %.3f", epoch, split, loss_val, acc)
            if config.metrics_path:
                _append_row(config.metrics_path, row)
        ckpt = Checkpoint(model, opt, epoch, rng.bit_generator.state)
        if config.checkpoint_path:
            save_checkpoint(ckpt, config.checkpoint_path)
        if config.stop_accuracy is not None and test_set and rows[-1].accuracy >= config.stop_accuracy:
            break
    return ckpt, rows


def evaluate(ckpt: Checkpoint | str | os.PathLike, dataset, split: str = "eval", seed: int | None = None) -> MetricsRow:
    """Score a checkpoint on a dataset path or instance list.

    ``seed`` controls per-instance encoding draws (colour embeddings); it
    defaults to the one training used for the training split.
    """
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    model = ckpt.model
    if isinstance(dataset, (str, os.PathLike)):
        task, instances = read_dataset(dataset)
        if task != model.task:
            raise ConfigError(f"dataset task {task!r} does not match checkpoint task {model.task!r}")
    else:
        instances = dataset
    start = time.perf_counter()
    examples = encode_dataset(model, instances, model.config.seed if seed is None else seed)
    loss_val, acc = evaluate_examples(model, examples)
    return MetricsRow(ckpt.epoch, split, loss_val, acc, time.perf_counter() - start)
