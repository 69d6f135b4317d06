"""Mini-batch semi-supervised training with patience-based early stopping.

Each batch extracts the depth-hop neighborhood of its seed nodes (optionally
with per-hop neighbor sampling), runs the kernel forward, applies the weighted
cross entropy plus L2, and takes one Adam step per weight matrix. Validation
loss drives a patience scheduler that halves the learning rate and the
patience window together, and stops after two consecutive exhaustions.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError, TrainingError
from .graph import Graph, khop_subgraph, sample_neighbors
from .kernels import KernelSpec, ModelWeights, backward, predict
from .metrics import Task, binarize_predictions, micro_f1, wce_weights, weighted_cross_entropy
from .numerics import AdamState, adam_step


@dataclass
class TrainConfig:
    batch_size: int = 128
    hidden_dim: int = 16
    learning_rate: float = 1e-2
    l2_weight: float = 0.0
    dropout_rate: float = 0.0
    max_epochs: int = 2000
    use_wce: bool = True
    rng_seed: int = 0
    patience: int = 30
    min_epochs: int = 50

    def __post_init__(self):
        if self.batch_size < 1 or self.hidden_dim < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, hidden_dim and max_epochs must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.learning_rate < 0 or self.l2_weight < 0:
            raise ConfigError("learning_rate and l2_weight must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SplitSpec:
    """Disjoint node sets: labeled training, validation, shared test, unlabeled."""

    train_nodes: np.ndarray
    val_nodes: np.ndarray
    test_nodes: np.ndarray
    unlabeled_nodes: np.ndarray

    def __post_init__(self):
        parts = [self.train_nodes, self.val_nodes, self.test_nodes, self.unlabeled_nodes]
        total = sum(p.size for p in parts)
        if np.unique(np.concatenate(parts)).size != total:
            raise ConfigError("split sets must be disjoint")


def make_splits(n: int, rng_seed: int, num_folds: int = 5) -> list[SplitSpec]:
    """One shared 20% test set; per fold, 10% labeled nodes of which 20% validate.

    Everything else is unlabeled. Identical seeds give identical splits.
    """
    if n < 10:
        raise ConfigError(f"need n >= 10 for non-empty splits, got {n}")
    rng = np.random.default_rng(rng_seed)
    test = np.sort(rng.choice(n, size=n // 5, replace=False))
    pool = np.setdiff1d(np.arange(n), test)
    folds = []
    labeled_size = n // 10
    if labeled_size < 1 or labeled_size > pool.size:
        raise ConfigError(f"cannot draw {labeled_size} labeled nodes from {pool.size}")
    for _ in range(num_folds):
        labeled = rng.choice(pool, size=labeled_size, replace=False)
        val_size = labeled_size // 5
        val = np.sort(labeled[:val_size])
        train = np.sort(labeled[val_size:])
        unlabeled = np.setdiff1d(pool, labeled)
        folds.append(SplitSpec(train_nodes=train, val_nodes=val,
                               test_nodes=test.copy(), unlabeled_nodes=unlabeled))
    return folds


@dataclass
class EarlyStopState:
    """Patience scheduler: halve lr and patience on exhaustion, stop after two in a row."""

    patience_budget: int
    lr_current: float
    best_val_loss: float = np.inf
    patience_remaining: int = field(default=0)
    consecutive_exhaustions: int = 0
    stopped: bool = False

    def __post_init__(self):
        if self.patience_remaining == 0:
            self.patience_remaining = self.patience_budget

    def observe(self, val_loss: float) -> str:
        """Feed one validation loss; returns improved | waiting | annealed | stop."""
        if val_loss < self.best_val_loss:
            self.best_val_loss = val_loss
            self.patience_remaining = self.patience_budget
            self.consecutive_exhaustions = 0
            self.stopped = False
            return "improved"
        self.patience_remaining -= 1
        if self.patience_remaining > 0:
            return "waiting"
        self.consecutive_exhaustions += 1
        if self.consecutive_exhaustions >= 2:
            self.stopped = True
            return "stop"
        self.lr_current /= 2.0
        self.patience_budget = max(1, self.patience_budget // 2)
        self.patience_remaining = self.patience_budget
        return "annealed"


def _class_weights(y: np.ndarray, train_nodes: np.ndarray, task: Task, use_wce: bool) -> np.ndarray:
    num_labels = y.shape[1]
    if not use_wce:
        return np.ones(num_labels)
    counts = y[train_nodes].sum(axis=0)
    return wce_weights(counts)


class _SubgraphPipeline:
    """Per-batch subgraph extraction, optionally prefetched on worker threads.

    Results are tagged by batch index and consumed in order, so the training
    loop is deterministic regardless of worker count.
    """

    def __init__(self, graph: Graph, depth: int, sample_caps, sample_seed: int, workers: int = 0):
        self.graph = graph
        self.depth = depth
        self.caps = list(sample_caps) if sample_caps else None
        self.sample_seed = sample_seed
        self.workers = workers

    def _extract(self, batch_idx: int, nodes: np.ndarray):
        if self.caps is not None:
            return sample_neighbors(self.graph, self.caps, nodes, self.depth,
                                    rng_seed=self.sample_seed + batch_idx)
        return khop_subgraph(self.graph, nodes, self.depth)

    def run(self, batches: list[np.ndarray]):
        if self.workers <= 0 or len(batches) <= 1:
            for i, b in enumerate(batches):
                yield i, b, self._extract(i, b)
            return
        out: queue.Queue = queue.Queue(maxsize=2 * self.workers)
        work = queue.Queue()
        for i, b in enumerate(batches):
            work.put((i, b))

        def worker():
            while True:
                try:
                    i, b = work.get_nowait()
                except queue.Empty:
                    return
                out.put((i, b, self._extract(i, b)))

        threads = [threading.Thread(target=worker, daemon=True) for _ in range(self.workers)]
        for t in threads:
            t.start()
        pending: dict[int, tuple] = {}
        for want in range(len(batches)):
            while want not in pending:
                i, b, sub = out.get()
                pending[i] = (b, sub)
            b, sub = pending.pop(want)
            yield want, b, sub
        for t in threads:
            t.join()


def _batches(nodes: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(nodes)
    return [perm[i : i + batch_size] for i in range(0, perm.size, batch_size)]


def _forward_nodes(spec, weights, graph, x, nodes, task, yhat, batch_size=1024):
    """Deterministic inference for an arbitrary node set, in fixed-order chunks."""
    preds = np.empty((nodes.size, weights.wl.shape[1]))
    for i in range(0, nodes.size, batch_size):
        chunk = nodes[i : i + batch_size]
        sub = khop_subgraph(graph, chunk, spec.depth)
        yh = yhat[sub.global_ids] if spec.uses_labels else None
        yt, _ = predict(spec, weights, sub, x[sub.global_ids], yh, task=task)
        preds[i : i + chunk.size] = yt
    return preds


def train(spec: KernelSpec, graph: Graph, x: np.ndarray, y: np.ndarray,
          split: SplitSpec, config: TrainConfig, task: Task,
          yhat: np.ndarray | None = None, sample_caps=None,
          init_weights: ModelWeights | None = None, workers: int = 0):
    """Train one kernel on the split's labeled nodes; returns best weights and history.

    ``yhat`` is the frozen label-estimate channel for kernels that consume
    labels; it is read, never written, and receives no gradient. Early
    stopping follows validation loss and is suppressed before ``min_epochs``.
    """
    if split.train_nodes.size == 0:
        raise ConfigError("training split is empty")
    if spec.uses_labels and yhat is None:
        yhat = np.zeros((graph.n, y.shape[1]))
    omega = _class_weights(y, split.train_nodes, task, config.use_wce)
    weights = init_weights if init_weights is not None else ModelWeights.init(
        spec, x.shape[1], y.shape[1], config.rng_seed)
    adam = {name: AdamState.for_param(p, lr=config.learning_rate) for name, p in weights.params()}

    early = EarlyStopState(patience_budget=config.patience, lr_current=config.learning_rate)
    has_val = split.val_nodes.size > 0
    best_weights = weights.copy()
    best_epoch = 0
    history = []

    for epoch in range(1, config.max_epochs + 1):
        epoch_rng = np.random.default_rng(np.random.SeedSequence((config.rng_seed, epoch)))
        batches = _batches(split.train_nodes, config.batch_size, epoch_rng)
        pipeline = _SubgraphPipeline(graph, spec.depth, sample_caps,
                                     sample_seed=config.rng_seed * 100003 + epoch, workers=workers)
        epoch_loss = 0.0
        for bidx, batch, sub in pipeline.run(batches):
            drop_rng = np.random.default_rng(np.random.SeedSequence((config.rng_seed, epoch, bidx)))
            yh = yhat[sub.global_ids] if spec.uses_labels else None
            yt, cache = predict(spec, weights, sub, x[sub.global_ids], yh, task=task,
                                dropout_rate=config.dropout_rate, rng=drop_rng)
            loss, dloss = weighted_cross_entropy(yt, y[batch], omega, task)
            if config.l2_weight > 0:
                loss += 0.5 * config.l2_weight * weights.l2_norm_sq()
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss}", epoch=epoch, batch=bidx)
            grads = backward(spec, weights, cache, dloss)
            gdict = dict(grads.params())
            for name, p in weights.params():
                g = gdict[name]
                if config.l2_weight > 0:
                    g = g + config.l2_weight * p
                adam[name].lr = early.lr_current
                adam_step(p, g, adam[name])
            epoch_loss += loss * batch.size
        epoch_loss /= split.train_nodes.size

        val_loss = np.nan
        if has_val:
            val_pred = _forward_nodes(spec, weights, graph, x, split.val_nodes, task, yhat)
            val_loss, _ = weighted_cross_entropy(val_pred, y[split.val_nodes], omega, task)
            if not np.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss {val_loss}", epoch=epoch)
            outcome = early.observe(val_loss)
            if outcome == "improved":
                best_weights = weights.copy()
                best_epoch = epoch
        history.append({"epoch": epoch, "train_loss": epoch_loss,
                        "val_loss": float(val_loss), "lr": early.lr_current})
        if has_val and early.stopped and epoch >= config.min_epochs:
            break

    if not has_val or best_epoch == 0:
        best_weights = weights
    return best_weights, history


def evaluate(spec: KernelSpec, weights: ModelWeights, graph: Graph, x: np.ndarray,
             y: np.ndarray, node_set: np.ndarray, task: Task,
             yhat: np.ndarray | None = None, class_weights=None) -> dict:
    """Deterministic inference plus micro-F1 and loss on ``node_set``."""
    node_set = np.asarray(node_set)
    if node_set.size == 0:
        raise ArgumentError("node_set must be non-empty")
    if spec.uses_labels and yhat is None:
        yhat = np.zeros((graph.n, y.shape[1]))
    preds = _forward_nodes(spec, weights, graph, x, node_set, task, yhat)
    omega = np.ones(y.shape[1]) if class_weights is None else np.asarray(class_weights)
    loss, _ = weighted_cross_entropy(preds, y[node_set], omega, task)
    f1 = micro_f1(binarize_predictions(preds, task), y[node_set])
    return {"micro_f1": f1, "loss": loss, "predictions": preds}
