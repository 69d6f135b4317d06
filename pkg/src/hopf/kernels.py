"""The generic propagation kernel, its named instantiations, and exact gradients.

Every model here is one parameterization of the same per-layer update

    h_k = sigma( alpha * Phi_k @ W_k_phi  +  beta * F(A) @ Psi_k @ W_k_psi )

where Phi_k is the node path (the layer-0 embedding h_0 or the previous
layer), Psi_k the neighbor path (previous layer, a label channel, or both
concatenated), and F(A) one of the :class:`~hopf.graph.NormScheme` weightings
or an element-wise maxpool. The node and neighbor terms combine by summation
or by width-doubling concatenation. The label channel is a non-differentiable
input: the backward pass never produces a gradient for it.

The backward pass is hand-derived reverse mode over this composition and is
checked against a central finite-difference oracle in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ArgumentError, ConfigError, ShapeError, StateError
from .graph import Graph, NormScheme, Subgraph, normalize_adjacency
from .metrics import Task
from .numerics import dropout_mask, glorot_init, relu, sigmoid, softmax_rows, spmm


class Phi(Enum):
    H0 = "h0"
    H_PREV = "h_prev"
    NONE = "none"


class Psi(Enum):
    H_PREV = "h_prev"
    LABELS = "labels"
    H_PREV_CONCAT_LABELS = "h_prev_concat_labels"
    NONE = "none"


class AlphaMode(Enum):
    ONE = "one"
    INV_DEG_SELF = "inv_deg_self"  # per-node 1/(deg+1)
    ZERO = "zero"


class BetaMode(Enum):
    ONE = "one"
    ZERO = "zero"


class Combine(Enum):
    SUM = "sum"
    CONCAT = "concat"


@dataclass(frozen=True)
class KernelSpec:
    """One row of the instantiation table, plus depth/width configuration."""

    name: str
    phi: Phi
    psi: Psi
    norm: NormScheme | None
    alpha: AlphaMode
    beta: BetaMode
    tie_weights: bool
    combine: Combine = Combine.SUM
    skip_connections: bool = False
    depth: int = 2
    hidden_dim: int = 16
    iterative: bool = False
    differentiable: bool = True
    hidden_activation: str = "relu"

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.skip_connections and self.combine is not Combine.SUM:
            raise ConfigError("skip connections require summation combine")
        if self.combine is Combine.CONCAT and (self.phi is Phi.NONE or self.psi is Psi.NONE):
            raise ConfigError("concat combine needs both a node and a neighbor path")
        if self.phi is Phi.NONE and self.psi is Psi.NONE:
            raise ConfigError("kernel must keep at least one of the node/neighbor paths")

    @property
    def uses_labels(self) -> bool:
        return self.psi in (Psi.LABELS, Psi.H_PREV_CONCAT_LABELS)

    @property
    def has_node_path(self) -> bool:
        return self.phi is not Phi.NONE and self.alpha is not AlphaMode.ZERO

    @property
    def has_neighbor_path(self) -> bool:
        return self.psi is not Psi.NONE and self.beta is not BetaMode.ZERO


# Canonical registry. Field order mirrors the instantiation table:
# (phi, norm, psi, alpha, beta, tie_weights), then artifact-level settings.
REGISTRY: dict[str, dict] = {
    "bl_node": dict(phi=Phi.H0, norm=None, psi=Psi.NONE,
                    alpha=AlphaMode.ONE, beta=BetaMode.ZERO, tie_weights=False),
    "bl_neigh": dict(phi=Phi.NONE, norm=NormScheme.MEAN, psi=Psi.H_PREV,
                     alpha=AlphaMode.ZERO, beta=BetaMode.ONE, tie_weights=False),
    "ss_ica": dict(phi=Phi.H0, norm=NormScheme.MEAN, psi=Psi.LABELS,
                   alpha=AlphaMode.ONE, beta=BetaMode.ONE, tie_weights=False,
                   iterative=True),
    "wl": dict(phi=Phi.H_PREV, norm=NormScheme.COUNT, psi=Psi.H_PREV,
               alpha=AlphaMode.ONE, beta=BetaMode.ONE, tie_weights=False,
               differentiable=False),
    "gcn": dict(phi=Phi.H_PREV, norm=NormScheme.SYM_SELF, psi=Psi.H_PREV,
                alpha=AlphaMode.INV_DEG_SELF, beta=BetaMode.ONE, tie_weights=True),
    "gcn_s": dict(phi=Phi.H_PREV, norm=NormScheme.SYM_SELF, psi=Psi.H_PREV,
                  alpha=AlphaMode.INV_DEG_SELF, beta=BetaMode.ONE, tie_weights=True,
                  skip_connections=True),
    "gcn_mean": dict(phi=Phi.H_PREV, norm=NormScheme.MEAN, psi=Psi.H_PREV,
                     alpha=AlphaMode.ONE, beta=BetaMode.ONE, tie_weights=True),
    "gs_mean": dict(phi=Phi.H_PREV, norm=NormScheme.MEAN, psi=Psi.H_PREV,
                    alpha=AlphaMode.ONE, beta=BetaMode.ONE, tie_weights=False,
                    combine=Combine.CONCAT),
    "gs_max": dict(phi=Phi.H_PREV, norm=NormScheme.MAXPOOL, psi=Psi.H_PREV,
                   alpha=AlphaMode.ONE, beta=BetaMode.ONE, tie_weights=False,
                   combine=Combine.CONCAT),
    "nip_mean": dict(phi=Phi.H0, norm=NormScheme.MEAN, psi=Psi.H_PREV,
                     alpha=AlphaMode.ONE, beta=BetaMode.ONE, tie_weights=False),
    "i_nip_mean": dict(phi=Phi.H0, norm=NormScheme.MEAN, psi=Psi.H_PREV_CONCAT_LABELS,
                       alpha=AlphaMode.ONE, beta=BetaMode.ONE, tie_weights=False,
                       iterative=True),
}

TRAINABLE_MODELS = tuple(n for n, row in REGISTRY.items() if row.get("differentiable", True))
ITERATIVE_MODELS = tuple(n for n, row in REGISTRY.items() if row.get("iterative"))


def make_kernel(name: str, depth: int = 2, hidden_dim: int = 16) -> KernelSpec:
    """Construct a registry kernel by canonical name.

    ss_ica always runs with a single aggregation layer; the requested depth is
    ignored for it.
    """
    if name not in REGISTRY:
        raise ConfigError(f"unknown model {name!r}; known: {', '.join(REGISTRY)}")
    row = REGISTRY[name]
    if name == "ss_ica":
        depth = 1
    return KernelSpec(name=name, depth=depth, hidden_dim=hidden_dim, **row)


@dataclass(frozen=True)
class LayerPlan:
    """Resolved widths: hidden outputs h_0..h_C and each weight matrix's fan-in."""

    h_widths: tuple[int, ...]
    phi_in: tuple[int, ...]
    psi_in: tuple[int, ...]
    num_labels: int

    @property
    def output_in(self) -> int:
        return self.h_widths[-1]


def layer_plan(spec: KernelSpec, num_features: int, num_labels: int) -> LayerPlan:
    """Width bookkeeping for a spec; concat layers double the running width."""
    d = spec.hidden_dim
    widths = [d]
    phi_in, psi_in = [], []
    for _ in range(1, spec.depth + 1):
        prev = widths[-1]
        pw = 0
        if spec.has_node_path:
            pw = d if spec.phi is Phi.H0 else prev
        sw = 0
        if spec.has_neighbor_path:
            if spec.psi is Psi.H_PREV:
                sw = prev
            elif spec.psi is Psi.LABELS:
                sw = num_labels
            else:
                sw = prev + num_labels
        if spec.tie_weights and pw and sw and pw != sw:
            raise ConfigError(f"{spec.name}: tied weights need equal fan-in ({pw} vs {sw})")
        phi_in.append(pw)
        psi_in.append(sw)
        out = 2 * d if spec.combine is Combine.CONCAT else d
        if spec.skip_connections and out != prev:
            raise ConfigError(f"{spec.name}: skip connection needs matching widths")
        widths.append(out)
    return LayerPlan(tuple(widths), tuple(phi_in), tuple(psi_in), num_labels)


@dataclass
class ModelWeights:
    """All learnable matrices of one kernel: input, per-layer phi/psi, output.

    When the spec ties weights, ``wphi[k]`` and ``wpsi[k]`` are the same array
    object; they count once for initialization, optimization and saving.
    """

    w0: np.ndarray
    wphi: list
    wpsi: list
    wl: np.ndarray

    @classmethod
    def init(cls, spec: KernelSpec, num_features: int, num_labels: int, rng_seed: int) -> "ModelWeights":
        if not spec.differentiable:
            raise ConfigError(f"{spec.name} has no learnable weights")
        plan = layer_plan(spec, num_features, num_labels)
        seeds = np.random.SeedSequence(rng_seed).spawn(2 * spec.depth + 2)
        gens = iter(np.random.default_rng(s) for s in seeds)
        d = spec.hidden_dim
        w0 = glorot_init(num_features, d, next(gens))
        wphi, wpsi = [], []
        for k in range(spec.depth):
            wp = glorot_init(plan.phi_in[k], d, next(gens)) if plan.phi_in[k] else None
            if spec.tie_weights and wp is not None:
                ws = wp
                next(gens)  # keep the seed schedule independent of tying
            else:
                ws = glorot_init(plan.psi_in[k], d, next(gens)) if plan.psi_in[k] else None
            wphi.append(wp)
            wpsi.append(ws)
        wl = glorot_init(plan.output_in, num_labels, next(gens))
        return cls(w0=w0, wphi=wphi, wpsi=wpsi, wl=wl)

    def params(self):
        """Unique (name, array) pairs; tied layers appear once."""
        out = [("w0", self.w0)]
        for k, (wp, ws) in enumerate(zip(self.wphi, self.wpsi), start=1):
            if wp is not None and ws is wp:
                out.append((f"w{k}", wp))
                continue
            if wp is not None:
                out.append((f"w{k}_phi", wp))
            if ws is not None:
                out.append((f"w{k}_psi", ws))
        out.append(("wl", self.wl))
        return out

    def copy(self) -> "ModelWeights":
        wphi, wpsi = [], []
        for wp, ws in zip(self.wphi, self.wpsi):
            cp = None if wp is None else wp.copy()
            cs = cp if ws is wp else (None if ws is None else ws.copy())
            wphi.append(cp)
            wpsi.append(cs)
        return ModelWeights(self.w0.copy(), wphi, wpsi, self.wl.copy())

    def zeros_like(self) -> "ModelWeights":
        z = self.copy()
        for _, arr in z.params():
            arr[:] = 0.0
        return z

    def l2_norm_sq(self) -> float:
        return float(sum(np.sum(a * a) for _, a in self.params()))

    # Binary snapshot: magic, entry count, then per entry a name plus its
    # shape, followed by all matrices as row-major float64 in declared order.
    _MAGIC = b"HOPFW001"

    def save(self, path) -> None:
        entries = self.params()
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<I", len(entries)))
            for name, arr in entries:
                raw = name.encode()
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            for _, arr in entries:
                fh.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())

    @staticmethod
    def load_arrays(path) -> dict[str, np.ndarray]:
        with open(path, "rb") as fh:
            if fh.read(8) != ModelWeights._MAGIC:
                raise ArgumentError(f"{path}: not a weights snapshot")
            (count,) = struct.unpack("<I", fh.read(4))
            shapes = []
            for _ in range(count):
                (nlen,) = struct.unpack("<H", fh.read(2))
                name = fh.read(nlen).decode()
                rows, cols = struct.unpack("<II", fh.read(8))
                shapes.append((name, rows, cols))
            out = {}
            for name, rows, cols in shapes:
                buf = fh.read(rows * cols * 8)
                out[name] = np.frombuffer(buf, dtype=np.float64).reshape(rows, cols).copy()
        return out

    @classmethod
    def load(cls, path, spec: KernelSpec) -> "ModelWeights":
        arrs = cls.load_arrays(path)
        wphi, wpsi = [], []
        for k in range(1, spec.depth + 1):
            if f"w{k}" in arrs:
                wphi.append(arrs[f"w{k}"])
                wpsi.append(arrs[f"w{k}"])
            else:
                wphi.append(arrs.get(f"w{k}_phi"))
                wpsi.append(arrs.get(f"w{k}_psi"))
        return cls(w0=arrs["w0"], wphi=wphi, wpsi=wpsi, wl=arrs["wl"])


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one forward evaluation."""

    spec: KernelSpec
    weights: ModelWeights
    sub: Subgraph
    task: Task
    features: np.ndarray
    yhat: np.ndarray | None
    x: list = field(default_factory=list)        # dropped activations x_0..x_C
    pre: list = field(default_factory=list)      # pre-activations, same indexing
    masks: list = field(default_factory=list)    # dropout masks or None
    phi_inputs: list = field(default_factory=list)
    psi_inputs: list = field(default_factory=list)
    norm: object = None
    alpha_vec: np.ndarray | None = None
    maxpool_argmax: list = field(default_factory=list)
    logits: np.ndarray | None = None
    ytilde: np.ndarray | None = None


def maxpool_aggregate(sub: Subgraph, neighbor_features: np.ndarray) -> np.ndarray:
    """Element-wise max over each node's neighbors; isolated rows are zero."""
    out, _ = _maxpool_with_argmax(sub, np.asarray(neighbor_features, dtype=np.float64))
    return out


def _maxpool_with_argmax(sub: Subgraph, feats: np.ndarray):
    n, w = sub.n, feats.shape[1]
    out = np.zeros((n, w), dtype=np.float64)
    arg = np.full((n, w), -1, dtype=np.int64)
    for v in range(n):
        nb = sub.neighbors(v)
        if nb.size == 0:
            continue
        rows = feats[nb]
        top = rows.argmax(axis=0)
        out[v] = rows[top, np.arange(w)]
        arg[v] = nb[top]
    return out, arg


def _output_activation(logits: np.ndarray, task: Task) -> np.ndarray:
    if task == Task.MULTI_LABEL:
        return sigmoid(logits)
    return softmax_rows(logits)


def predict(spec: KernelSpec, weights: ModelWeights, sub: Subgraph,
            features: np.ndarray, yhat: np.ndarray | None = None,
            task: Task = Task.MULTI_CLASS, dropout_rate: float = 0.0,
            rng: np.random.Generator | None = None):
    """Forward pass over a subgraph; returns seed-row predictions and the cache.

    ``features`` and ``yhat`` are the X / label-estimate rows for
    ``sub.global_ids`` in local order. Output rows cover only the seed prefix.
    """
    if not spec.differentiable:
        raise ConfigError(f"{spec.name} is analysis-only and cannot produce predictions")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != sub.n:
        raise ShapeError(f"features must be ({sub.n}, f), got {features.shape}")
    if features.shape[1] != weights.w0.shape[0]:
        raise ShapeError(f"feature width {features.shape[1]} vs w0 fan-in {weights.w0.shape[0]}")
    num_labels = weights.wl.shape[1]
    if spec.uses_labels:
        if yhat is None:
            raise ConfigError(f"{spec.name} needs a label channel; pass a zero matrix for round one")
        yhat = np.asarray(yhat, dtype=np.float64)
        if yhat.shape[0] != sub.n:
            raise ShapeError(f"label channel must be ({sub.n}, l), got {yhat.shape}")
        if yhat.shape[1] != num_labels:
            raise ConfigError(f"label channel width {yhat.shape[1]} != model label count {num_labels}")
    if dropout_rate > 0.0 and rng is None:
        raise ConfigError("dropout needs an explicit rng for reproducibility")

    plan = layer_plan(spec, features.shape[1], num_labels)
    cache = ForwardCache(spec=spec, weights=weights, sub=sub, task=task,
                         features=features, yhat=yhat if spec.uses_labels else None)

    norm = None
    if spec.has_neighbor_path and spec.norm is not NormScheme.MAXPOOL:
        norm = normalize_adjacency(sub, spec.norm)
    cache.norm = norm
    if spec.alpha is AlphaMode.INV_DEG_SELF:
        cache.alpha_vec = 1.0 / (sub.degree.astype(np.float64) + 1.0)

    def drop(h):
        if dropout_rate > 0.0:
            mask = dropout_mask(rng, h.shape, dropout_rate)
        else:
            mask = None
        cache.masks.append(mask)
        return h if mask is None else h * mask

    pre0 = features @ weights.w0
    cache.pre.append(pre0)
    cache.x.append(drop(relu(pre0)))

    for k in range(spec.depth):
        prev = cache.x[-1]
        node = None
        phi_in = None
        if spec.has_node_path:
            phi_in = cache.x[0] if spec.phi is Phi.H0 else prev
            node = phi_in @ weights.wphi[k]
            if cache.alpha_vec is not None:
                node = cache.alpha_vec[:, None] * node
        neigh = None
        psi_in = None
        argmax = None
        if spec.has_neighbor_path:
            if spec.psi is Psi.H_PREV:
                psi_in = prev
            elif spec.psi is Psi.LABELS:
                psi_in = yhat
            else:
                psi_in = np.hstack([prev, yhat])
            lin = psi_in @ weights.wpsi[k]
            if spec.norm is NormScheme.MAXPOOL:
                neigh, argmax = _maxpool_with_argmax(sub, lin)
            else:
                neigh = spmm(norm, lin)
        cache.phi_inputs.append(phi_in)
        cache.psi_inputs.append(psi_in)
        cache.maxpool_argmax.append(argmax)

        if spec.combine is Combine.CONCAT:
            pre = np.hstack([node, neigh])
        elif node is None:
            pre = neigh
        elif neigh is None:
            pre = node
        else:
            pre = node + neigh
        cache.pre.append(pre)
        h = relu(pre)
        if spec.skip_connections:
            h = h + prev
        cache.x.append(drop(h))

    seeds = sub.num_seeds
    if cache.x[-1].shape[1] != plan.output_in:
        raise ShapeError("layer plan mismatch in forward pass")
    logits = cache.x[-1][:seeds] @ weights.wl
    cache.logits = logits
    cache.ytilde = _output_activation(logits, task)
    return cache.ytilde, cache


def _doutput(cache: ForwardCache, dloss_dy: np.ndarray) -> np.ndarray:
    """Gradient through the output nonlinearity, back to logits."""
    yt = cache.ytilde
    if cache.task == Task.MULTI_LABEL:
        return dloss_dy * yt * (1.0 - yt)
    inner = (dloss_dy * yt).sum(axis=1, keepdims=True)
    return yt * (dloss_dy - inner)


def backward(spec: KernelSpec, weights: ModelWeights, cache: ForwardCache,
             dloss_dy: np.ndarray) -> ModelWeights:
    """Exact gradients for every weight matrix of ``spec``.

    Tied layers accumulate both path contributions into the shared array. The
    label channel is treated as data: no gradient is ever produced for it.
    """
    if cache.spec is not spec or cache.weights is not weights:
        raise StateError("cache does not belong to this spec/weights pair")
    dloss_dy = np.asarray(dloss_dy, dtype=np.float64)
    if dloss_dy.shape != cache.ytilde.shape:
        raise ShapeError(f"dloss shape {dloss_dy.shape} vs predictions {cache.ytilde.shape}")

    grads = weights.zeros_like()
    seeds = cache.sub.num_seeds
    dlogits = _doutput(cache, dloss_dy)
    grads.wl += cache.x[-1][:seeds].T @ dlogits

    dx = [np.zeros_like(x) for x in cache.x]
    dx[-1][:seeds] = dlogits @ weights.wl.T

    for k in range(spec.depth - 1, -1, -1):
        layer = k + 1  # index into cache.x / cache.pre
        dh = dx[layer]
        if cache.masks[layer] is not None:
            dh = dh * cache.masks[layer]
        if spec.skip_connections:
            dx[layer - 1] += dh
        dpre = dh * (cache.pre[layer] > 0)

        d = spec.hidden_dim
        if spec.combine is Combine.CONCAT:
            dnode, dneigh = dpre[:, :d], dpre[:, d:]
        else:
            dnode = dpre if spec.has_node_path else None
            dneigh = dpre if spec.has_neighbor_path else None

        if dnode is not None:
            if cache.alpha_vec is not None:
                dnode = cache.alpha_vec[:, None] * dnode
            grads.wphi[k] += cache.phi_inputs[k].T @ dnode
            dphi = dnode @ weights.wphi[k].T
            if spec.phi is Phi.H0:
                dx[0] += dphi
            else:
                dx[layer - 1] += dphi

        if dneigh is not None:
            if spec.norm is NormScheme.MAXPOOL:
                dlin = np.zeros((cache.sub.n, weights.wpsi[k].shape[1]))
                arg = cache.maxpool_argmax[k]
                valid = arg >= 0
                rows, cols = np.nonzero(valid)
                np.add.at(dlin, (arg[rows, cols], cols), dneigh[rows, cols])
            else:
                dlin = spmm(cache.norm.T.tocsr(), dneigh)
            grads.wpsi[k] += cache.psi_inputs[k].T @ dlin
            dpsi = dlin @ weights.wpsi[k].T
            if spec.psi is Psi.H_PREV:
                dx[layer - 1] += dpsi
            elif spec.psi is Psi.H_PREV_CONCAT_LABELS:
                prev_width = cache.x[layer - 1].shape[1]
                dx[layer - 1] += dpsi[:, :prev_width]
            # Psi.LABELS: gradient stops at the label channel.

    dh0 = dx[0]
    if cache.masks[0] is not None:
        dh0 = dh0 * cache.masks[0]
    dpre0 = dh0 * (cache.pre[0] > 0)
    grads.w0 += cache.features.T @ dpre0
    return grads


def nim_relative_importance(alpha: float, beta: float, k: int, skip: bool = False) -> float:
    """Relative weight of a node's own layer-0 information after k propagation steps.

    Without skip connections this is alpha^k / (alpha + beta)^k; the identity
    skip shifts both terms by one, (alpha + 1)^k / (alpha + beta + 1)^k, which
    decays strictly slower for positive alpha and beta.
    """
    if alpha < 0 or beta < 0:
        raise ArgumentError("alpha and beta must be non-negative")
    if alpha == 0 and beta == 0:
        raise ArgumentError("alpha and beta cannot both be zero")
    if k < 0:
        raise ArgumentError(f"k must be >= 0, got {k}")
    if skip:
        return float(((alpha + 1.0) / (alpha + beta + 1.0)) ** k)
    return float((alpha / (alpha + beta)) ** k)


def nim_decay_table(alpha: float, beta: float, max_k: int, skip: bool = False):
    """Tabulated self-information decay: header plus one row per k in 0..max_k."""
    header = ["k", "importance"] + (["importance_skip"] if skip else [])
    rows = []
    for k in range(max_k + 1):
        row = [k, repr(nim_relative_importance(alpha, beta, k))]
        if skip:
            row.append(repr(nim_relative_importance(alpha, beta, k, skip=True)))
        rows.append(row)
    return header, rows


def linear_unroll_coefficient(graph: Graph, alpha: float, beta: float,
                              norm: NormScheme, k: int) -> np.ndarray:
    """Dense (alpha*I + beta*F(A))^k for small graphs; entry (i, i) is node i's
    accumulated self-coefficient under the linearized update."""
    if graph.n > 200:
        raise ArgumentError("analysis utility; use graphs with n <= 200")
    if k < 0:
        raise ArgumentError(f"k must be >= 0, got {k}")
    f = normalize_adjacency(graph, norm).toarray()
    m = alpha * np.eye(graph.n) + beta * f
    return np.linalg.matrix_power(m, k)
