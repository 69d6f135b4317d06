"""Wall-clock scaling benchmark: full-kernel depth vs iterative label feedback.

Timed work for one cell is everything a training epoch does: subgraph
extraction (optionally prefetched on threads), forward pass, loss, backward
pass and the Adam updates. A fully differentiable kernel reaches K hops with
depth K in a single epoch; an iterative variant with C differentiable hops
reaches the same K by running K/C single-epoch rounds, so its cost grows
linearly in K while the full kernel's neighborhood sizes blow up with depth.

Cells whose projected activation/gradient footprint exceeds the configured
memory budget are reported as ``infeasible`` instead of crashing.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass

import numpy as np

from .data import DatasetBundle
from .errors import ConfigError
from .kernels import layer_plan, make_kernel, ModelWeights, backward, predict
from .metrics import weighted_cross_entropy
from .numerics import AdamState, adam_step
from .training import SplitSpec, TrainConfig, _batches, _SubgraphPipeline


class BudgetExceeded(Exception):
    """Projected working set is over the memory budget; the cell is infeasible."""


@dataclass
class BenchCell:
    variant: str
    hops: int
    mean_seconds: float | None
    status: str  # ok | infeasible | n/a


def parse_variant(token: str) -> tuple[str, int]:
    """Map a CLI variant token to (kernel name, differentiable hops per round).

    ``nip_mean`` runs the full kernel (C grows with K); ``i_nip_mean_cN``
    keeps C = N and iterates.
    """
    if token == "nip_mean":
        return "nip_mean", 0
    m = re.fullmatch(r"i_nip_mean_c(\d+)", token)
    if m:
        return "i_nip_mean", int(m.group(1))
    raise ConfigError(f"unknown benchmark variant {token!r}; "
                      "use nip_mean or i_nip_mean_c<N>")


def estimate_batch_bytes(spec, num_features: int, num_labels: int,
                         sub_nodes: int, sub_nnz: int) -> int:
    """Rough float64 footprint of one batch: activations, gradients, adjacency.

    Counts the x/pre buffers and their gradients for every layer plus three
    sparse copies (forward, transpose, workspace). Weight matrices and Adam
    moments are excluded; they do not grow with the subgraph.
    """
    plan = layer_plan(spec, num_features, num_labels)
    width_sum = num_features + num_labels + sum(plan.h_widths)
    dense = 8 * sub_nodes * width_sum * 4
    sparse = 8 * sub_nnz * 3
    return dense + sparse


def time_epoch(spec, graph, x, y, train_nodes, config: TrainConfig, task,
               yhat, budget_bytes: int | None, workers: int, epoch_seed: int) -> float:
    """One mini-batch epoch, timed end to end; raises BudgetExceeded when over budget."""
    weights = ModelWeights.init(spec, x.shape[1], y.shape[1], config.rng_seed)
    adam = {name: AdamState.for_param(p, lr=config.learning_rate) for name, p in weights.params()}
    omega = np.ones(y.shape[1])
    rng = np.random.default_rng(epoch_seed)
    batches = _batches(train_nodes, config.batch_size, rng)
    pipeline = _SubgraphPipeline(graph, spec.depth, None, sample_seed=epoch_seed, workers=workers)
    start = time.perf_counter()
    try:
        for _, batch, sub in pipeline.run(batches):
            if budget_bytes is not None:
                need = estimate_batch_bytes(spec, x.shape[1], y.shape[1], sub.n, sub.indices.size)
                if need > budget_bytes:
                    raise BudgetExceeded(f"batch needs ~{need/2**30:.2f} GiB")
            yh = yhat[sub.global_ids] if spec.uses_labels else None
            yt, cache = predict(spec, weights, sub, x[sub.global_ids], yh, task=task)
            _, dloss = weighted_cross_entropy(yt, y[batch], omega, task)
            grads = backward(spec, weights, cache, dloss)
            gdict = dict(grads.params())
            for name, p in weights.params():
                adam_step(p, gdict[name], adam[name])
    except MemoryError as exc:  # pragma: no cover - depends on host memory
        raise BudgetExceeded(str(exc)) from exc
    return time.perf_counter() - start


def run_scaling(bundle: DatasetBundle, split: SplitSpec, variants, hops_list,
                repeats: int, config: TrainConfig, budget_bytes: int | None = None,
                workers: int = 0) -> list[BenchCell]:
    """Mean epoch-equivalent seconds per (variant, total hops K) cell."""
    cells = []
    x = bundle.x
    y = bundle.y
    yhat_zero = np.zeros_like(y, dtype=np.float64)
    for token in variants:
        name, c_fixed = parse_variant(token)
        for k in hops_list:
            if c_fixed and k % c_fixed != 0:
                cells.append(BenchCell(token, k, None, "n/a"))
                continue
            depth = k if not c_fixed else c_fixed
            rounds = 1 if not c_fixed else k // c_fixed
            spec = make_kernel(name, depth=depth, hidden_dim=config.hidden_dim)
            try:
                times = []
                for rep in range(repeats + 1):  # first lap warms caches, not counted
                    total = 0.0
                    for t in range(rounds):
                        total += time_epoch(spec, bundle.graph, x, y, split.train_nodes,
                                            config, bundle.task, yhat_zero, budget_bytes,
                                            workers, epoch_seed=config.rng_seed + 7919 * (rep * rounds + t))
                    if rep > 0:
                        times.append(total)
                cells.append(BenchCell(token, k, float(np.mean(times)), "ok"))
            except BudgetExceeded:
                cells.append(BenchCell(token, k, None, "infeasible"))
    return cells
