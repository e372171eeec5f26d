"""Mini-batch training loop with Adam or SGD-momentum."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .data import DatasetIndex, batches, epoch_order
from .errors import ArgumentError, DivergedError, NumericError
from .graph import ModelGraph, backward, forward

log = logging.getLogger(__name__)


@dataclass
class ArrayDataset:
    """In-memory images (n, H, W, C) with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ArgumentError("images and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return ArrayDataset(self.images[idx], self.labels[idx], self.class_names)


def dataset_size(ds):
    return len(ds)


def class_names_of(ds, num_classes):
    names = getattr(ds, "class_names", None)
    return list(names) if names else [str(i) for i in range(num_classes)]


def iter_batches(ds, batch_size, seed=0, epoch=0, shuffle=True):
    """Yield ``(images, labels)`` batches from a DatasetIndex or ArrayDataset."""
    if isinstance(ds, DatasetIndex):
        yield from batches(ds, batch_size, seed, epoch, shuffle=shuffle)
        return
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
    order = epoch_order(len(ds), seed, epoch) if shuffle else np.arange(len(ds))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield ds.images[idx], ds.labels[idx]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.2
    dropout_rate: float = 0.2

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ArgumentError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError("epochs and batch_size must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ArgumentError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ArgumentError("momentum must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ArgumentError("adam betas must lie in [0, 1) and eps must be positive")
        if not 0 < self.val_fraction < 1:
            raise ArgumentError("val_fraction must lie in (0, 1)")
        if not 0 <= self.dropout_rate < 1:
            raise ArgumentError("dropout_rate must lie in [0, 1)")


class SGDMomentum:
    def __init__(self, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, model: ModelGraph, grads):
        for node_id, arrays in model.param_items():
            for i, (p, g) in enumerate(zip(arrays, grads[node_id])):
                v = self.velocity.get((node_id, i))
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[(node_id, i)] = v
                p -= self.lr * v


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, model: ModelGraph, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for node_id, arrays in model.param_items():
            for i, (p, g) in enumerate(zip(arrays, grads[node_id])):
                key = (node_id, i)
                m = self.m.setdefault(key, np.zeros_like(p))
                v = self.v.setdefault(key, np.zeros_like(p))
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGDMomentum(cfg.learning_rate, cfg.momentum)
    return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    seconds: float


class History(list):
    """One :class:`EpochRecord` per completed epoch."""

    def to_jsonl(self):
        return "".join(json.dumps(asdict(r)) + "\n" for r in self)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(EpochRecord(**json.loads(line)) for line in fh if line.strip())


def train_step(model, optimizer, images, labels, rng):
    """One forward/backward/update on a batch; returns per-sample losses and predictions."""
    probs, cache = forward(model, images, training=True, rng=rng)
    losses, grad = ops.cross_entropy_loss(probs, labels)
    grads = backward(model, cache, grad / len(labels))
    for node_id, _ in model.param_items():
        if not all(np.isfinite(g).all() for g in grads[node_id]):
            raise NumericError(f"non-finite gradient at node {node_id!r}", node=node_id)
    optimizer.step(model, grads)
    return losses, np.argmax(probs, axis=-1)


def accuracy(model, ds, batch_size):
    correct = 0
    for images, labels in iter_batches(ds, batch_size, shuffle=False):
        probs, _ = forward(model, images)
        correct += int((np.argmax(probs, axis=-1) == labels).sum())
    return correct / len(ds)


def train(model: ModelGraph, train_set, val_set, cfg: TrainConfig, callback=None) -> History:
    """Train ``model`` in place and return its per-epoch history.

    ``callback(record)`` runs after every epoch; returning True ends training
    after that epoch. Identical model, data and config give identical results.
    """
    if len(train_set) == 0:
        raise ArgumentError("training set is empty")
    if cfg.batch_size > len(train_set):
        raise ArgumentError(f"batch_size {cfg.batch_size} exceeds training set size {len(train_set)}")
    if isinstance(train_set, DatasetIndex) and isinstance(val_set, DatasetIndex):
        if {p for p, _ in train_set.entries} & {p for p, _ in val_set.entries}:
            raise ArgumentError("training and validation sets overlap")
    for node in model.nodes:
        if node.kind == "dropout":
            node.rate = cfg.dropout_rate
    model.dropout_rate = cfg.dropout_rate

    optimizer = make_optimizer(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    history = History()
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        loss_sum, correct, seen = 0.0, 0, 0
        for b, (images, labels) in enumerate(iter_batches(train_set, cfg.batch_size, cfg.seed, epoch)):
            try:
                losses, predicted = train_step(model, optimizer, images, labels, rng)
            except NumericError as exc:
                raise DivergedError(f"epoch {epoch} batch {b}: {exc}", epoch, b) from exc
            if not np.isfinite(losses).all():
                raise DivergedError(f"non-finite loss at epoch {epoch} batch {b}", epoch, b)
            loss_sum += float(losses.sum())
            correct += int((predicted == labels).sum())
            seen += len(labels)
        val_acc = accuracy(model, val_set, cfg.batch_size) if val_set is not None and len(val_set) else float("nan")
        record = EpochRecord(epoch, loss_sum / seen, correct / seen, val_acc,
                             time.perf_counter() - start)
        history.append(record)
        log.info("epoch %d loss %.4f train_acc %.3f val_acc %.3f (%.1fs)", epoch, record.train_loss,
                 record.train_acc, record.val_acc, record.seconds)
        if callback is not None and callback(record):
            break
    return history
