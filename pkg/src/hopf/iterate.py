"""Iterative learning and inference: interleave a C-hop kernel with label feedback.

Each round trains the kernel on the labeled nodes using the previous round's
label estimates as a frozen input channel, re-infers the unlabeled nodes in
mini-batches, restores ground truth on the labeled rows, and folds the fresh
predictions into the running estimate by temporal averaging. Gradients never
cross rounds: the label channel is data, not a differentiable input. After T
rounds a C-layer kernel has drawn on information from up to T*C hops while the
trainable parameter count stays that of a single C-layer kernel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigError
from .graph import Graph, khop_subgraph
from .kernels import KernelSpec, ModelWeights, predict
from .metrics import Task, binarize_predictions, micro_f1
from .training import SplitSpec, TrainConfig, train

_ITER_SEED_STRIDE = 1000003  # round t trains with seed rng_seed + stride*(t-1)


@dataclass
class HopfConfig:
    """Outer-loop shape: C differentiable hops per round, T rounds, reach K = T*C.

    ``shifted_averaging`` swaps the fresh-prediction weight (T - t)/T for
    (T - t + 1)/T, which keeps a nonzero share for the final round's inference
    instead of discarding it.
    """

    C: int = 2
    T: int = 1
    warm_start: bool = True
    theta_mode: str = "labels"
    shifted_averaging: bool = False

    def __post_init__(self):
        if self.C < 1 or self.T < 1:
            raise ConfigError(f"need C >= 1 and T >= 1, got C={self.C}, T={self.T}")
        if self.theta_mode != "labels":
            raise ConfigError(f"only the label summary channel is supported, got {self.theta_mode!r}")

    @property
    def reach(self) -> int:
        return self.C * self.T


@dataclass
class PredictionState:
    """Label matrices mutated across rounds: running estimate, fresh inference, S mask."""

    yhat: np.ndarray
    ytilde: np.ndarray
    labeled_mask: np.ndarray

    @classmethod
    def zeros(cls, n: int, num_labels: int, labeled_nodes: np.ndarray) -> "PredictionState":
        mask = np.zeros(n, dtype=bool)
        mask[labeled_nodes] = True
        return cls(yhat=np.zeros((n, num_labels)), ytilde=np.zeros((n, num_labels)),
                   labeled_mask=mask)

    def restore_labeled(self, y: np.ndarray) -> None:
        self.yhat[self.labeled_mask] = y[self.labeled_mask]


def temporal_average(ytilde_u: np.ndarray, yhat_u_old: np.ndarray, t: int, T: int,
                     shifted: bool = False) -> np.ndarray:
    """Blend fresh predictions into the running estimate for round t of T.

    The default weighting is (T - t)/T on the fresh matrix and t/T on the old
    one, exactly as the update rule is written; ``shifted`` uses (T - t + 1)/T
    so the last round's inference is not dropped.
    """
    if not 1 <= t <= T:
        raise ArgumentError(f"round index must satisfy 1 <= t <= T, got t={t}, T={T}")
    ytilde_u = np.asarray(ytilde_u, dtype=np.float64)
    yhat_u_old = np.asarray(yhat_u_old, dtype=np.float64)
    if ytilde_u.shape != yhat_u_old.shape:
        raise ArgumentError(f"shape mismatch: {ytilde_u.shape} vs {yhat_u_old.shape}")
    fresh = (T - t + 1) / T if shifted else (T - t) / T
    return fresh * ytilde_u + (1.0 - fresh) * yhat_u_old


def warm_start_transfer(weights_prev: ModelWeights) -> ModelWeights:
    """Deep-copied weights to seed the next round; optimizer state never carries over."""
    return weights_prev.copy()


@dataclass
class HopfResult:
    yhat: np.ndarray
    ytilde: np.ndarray
    trajectory: list
    weights: ModelWeights
    histories: list = field(default_factory=list)
    weights_history: list | None = None


def _infer(spec, weights, graph, x, yhat_frozen, nodes, task, batch_size):
    """Mini-batched inference against frozen weights and a frozen label snapshot."""
    out = np.empty((nodes.size, weights.wl.shape[1]))
    for i in range(0, nodes.size, batch_size):
        chunk = nodes[i : i + batch_size]
        sub = khop_subgraph(graph, chunk, spec.depth)
        yh = yhat_frozen[sub.global_ids] if spec.uses_labels else None
        yt, _ = predict(spec, weights, sub, x[sub.global_ids], yh, task=task)
        out[i : i + chunk.size] = yt
    return out


def run_hopf(spec: KernelSpec, graph: Graph, x: np.ndarray, y: np.ndarray,
             split: SplitSpec, train_config: TrainConfig, hopf_config: HopfConfig,
             task: Task, out_dir=None, sample_caps=None, workers: int = 0,
             keep_weights_history: bool = False) -> HopfResult:
    """Run T rounds of train / infer / restore / average; returns final estimates.

    The label estimate starts at zero everywhere (round one sees an all-zero
    channel, even on labeled rows). The per-round trajectory reports test
    micro-F1 of the fresh inference. Artifacts per round land in ``out_dir``:
    a binary weights snapshot plus CSV dumps of both label matrices.
    """
    if spec.depth != hopf_config.C:
        raise ConfigError(f"spec depth {spec.depth} != configured C {hopf_config.C}")
    if hopf_config.T > 1 and not spec.uses_labels:
        raise ConfigError(f"{spec.name} has no label channel; multiple rounds need one "
                          f"(use one of: ss_ica, i_nip_mean)")
    n, num_labels = y.shape
    state = PredictionState.zeros(n, num_labels, split.train_nodes)
    u_nodes = np.setdiff1d(np.arange(n), split.train_nodes)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "metrics.csv").unlink(missing_ok=True)

    weights = None
    result = HopfResult(yhat=state.yhat, ytilde=state.ytilde, trajectory=[], weights=None,
                        weights_history=[] if keep_weights_history else None)
    for t in range(1, hopf_config.T + 1):
        cfg_t = replace(train_config, rng_seed=train_config.rng_seed + _ITER_SEED_STRIDE * (t - 1))
        init = warm_start_transfer(weights) if (hopf_config.warm_start and weights is not None) else None
        yhat_frozen = state.yhat.copy()
        weights, history = train(spec, graph, x, y, split, cfg_t, task,
                                 yhat=yhat_frozen, sample_caps=sample_caps,
                                 init_weights=init, workers=workers)
        result.histories.append(history)
        if result.weights_history is not None:
            result.weights_history.append(weights.copy())

        state.ytilde[u_nodes] = _infer(spec, weights, graph, x, yhat_frozen, u_nodes,
                                       task, train_config.batch_size)
        state.restore_labeled(y)
        state.yhat[u_nodes] = temporal_average(state.ytilde[u_nodes], state.yhat[u_nodes],
                                               t, hopf_config.T,
                                               shifted=hopf_config.shifted_averaging)

        test_f1 = micro_f1(binarize_predictions(state.ytilde[split.test_nodes], task),
                           y[split.test_nodes])
        result.trajectory.append({"iteration": t, "micro_f1": test_f1})

        if out_path is not None:
            weights.save(out_path / f"weights_t{t}.bin")
            _dump_labels(out_path / f"yhat_t{t}.csv", state.yhat)
            _dump_labels(out_path / f"ytilde_t{t}.csv", state.ytilde)
            _append_metrics_row(out_path / "metrics.csv", t, test_f1)

    result.weights = weights
    return result


def _dump_labels(path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"label_{j}" for j in range(matrix.shape[1])])
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def _append_metrics_row(path: Path, iteration: int, test_f1: float) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["iteration", "test_micro_f1"])
        writer.writerow([iteration, repr(float(test_f1))])
