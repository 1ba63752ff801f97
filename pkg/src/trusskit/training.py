"""Training loop for the graph surrogate: batching, MSE descent, transfer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .datasets import Dataset
from .gsm import GsmNetwork, TargetScaler
from .model import GraphSample


class TrainingError(Exception):
    """Training aborted (non-finite loss or invalid configuration)."""


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay non-negative")


@dataclass
class LossHistory:
    """Per-epoch training and validation MSE, in scaled target units."""

    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)


class GraphBatch:
    """Disjoint union of graph samples: one big graph with offset edge indices."""

    def __init__(self, samples: list[GraphSample]):
        if not samples:
            raise ValueError("empty batch")
        offsets = np.cumsum([0] + [s.node_count for s in samples])
        self.features = np.concatenate([s.node_features for s in samples], axis=0)
        self.targets = np.concatenate([s.targets for s in samples], axis=0)
        edges = np.concatenate(
            [s.edges + off for s, off in zip(samples, offsets[:-1])], axis=0
        )
        self.graph = ad.GraphIndex(edges, int(offsets[-1]))
        self.offsets = offsets

    @property
    def node_count(self) -> int:
        return self.features.shape[0]


def _samples_of(data) -> list[GraphSample]:
    return list(data.samples) if isinstance(data, Dataset) else list(data)


def evaluate_scaled_mse(net: GsmNetwork, data) -> float:
    """Eval-mode MSE over all nodes and components, in scaled target units."""
    samples = _samples_of(data)
    if not samples:
        raise ValueError("nothing to evaluate")
    batch = GraphBatch(samples)
    out = net.forward(batch.features, batch.graph, training=False)
    diff = out.values - net.scaler.transform(batch.targets)
    return float(np.mean(diff * diff))


def predict_many(net: GsmNetwork, data) -> list[np.ndarray]:
    """Eval-mode predictions (physical units) for every sample, batched."""
    samples = _samples_of(data)
    if not samples:
        return []
    batch = GraphBatch(samples)
    out = net.forward(batch.features, batch.graph, training=False)
    values = net.scaler.inverse(out.values)
    return [values[lo:hi] for lo, hi in zip(batch.offsets[:-1], batch.offsets[1:])]


def train(net: GsmNetwork, train_set, val_set, config: TrainConfig) -> LossHistory:
    """Train ``net`` in place for a fixed number of epochs; returns loss history.

    The target scaler is (re)fit on the training targets only. Each epoch
    shuffles the samples with the seeded generator, batches graphs by
    disjoint union up to ``batch_size`` graphs, and applies one ADAM step per
    batch. There is no early stopping: the final-epoch model is the result,
    and the validation loss is recorded for reporting only.
    """
    train_samples = _samples_of(train_set)
    val_samples = _samples_of(val_set)
    if not train_samples or not val_samples:
        raise TrainingError("training and validation sets must be non-empty")
    net.scaler = TargetScaler.fit(np.concatenate([s.targets for s in train_samples], axis=0))
    net.train_seed = config.seed
    rng = np.random.default_rng(config.seed)
    optimizer = ad.Adam(
        net.parameters(),
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    history = LossHistory()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_samples))
        sse = 0.0
        count = 0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            batch = GraphBatch([train_samples[i] for i in chunk])
            try:
                out = net.forward(batch.features, batch.graph, training=True)
                loss = ad.mse_loss(out, net.scaler.transform(batch.targets))
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            except ad.NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}: {exc}"
                ) from exc
            size = batch.node_count * 2
            sse += float(loss.values[0, 0]) * size
            count += size
        history.train.append(sse / count)
        history.val.append(evaluate_scaled_mse(net, val_samples))
    return history


def transfer(net: GsmNetwork, target_train, target_val, config: TrainConfig) -> LossHistory:
    """Re-train all parameters of a previously trained network on target data.

    Refits the target scaler, then continues training with fresh optimizer
    state for ``config.epochs`` epochs. With ``epochs=0`` only the scaler is
    refit and the parameters are untouched.
    """
    if config.epochs == 0:
        samples = _samples_of(target_train)
        if not samples:
            raise TrainingError("target training set must be non-empty")
        net.scaler = TargetScaler.fit(np.concatenate([s.targets for s in samples], axis=0))
        net.train_seed = config.seed
        return LossHistory()
    return train(net, target_train, target_val, config)
