"""Graph construction over skeleton joints and object centers, and the
graph encoder-decoder motion stream."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import SkeletonDef
from .tensor import Tensor


@dataclass(frozen=True)
class Graph:
    adjacency: np.ndarray   # [V, V] in {0, 1}, symmetric
    normalized: np.ndarray  # D^{-1/2} (A + I) D^{-1/2}

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class GcnStreamConfig:
    channels: tuple[int, ...] = (32, 32)  # per encoder stage; also sets stage count
    temporal_kernel: int = 3
    out_channels: int = 32
    skip_connections: bool = True

    def __post_init__(self):
        if len(self.channels) < 1:
            raise ValueError("need at least one encoder stage")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal kernel must be odd, got {self.temporal_kernel}")

    @property
    def stages(self) -> int:
        return len(self.channels)


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    a_hat = a + np.eye(a.shape[0])
    d = a_hat.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]


def build_graph(skel: SkeletonDef, max_objects: int) -> Graph:
    """Skeleton edges as given; every object node connects to every hand
    joint. Self-loops enter only through normalization."""
    v = skel.joint_count + max_objects
    a = np.zeros((v, v))
    for i, j in skel.edges:
        a[i, j] = a[j, i] = 1.0
    for o in range(max_objects):
        node = skel.joint_count + o
        for h in skel.hand_joint_indices:
            a[node, h] = a[h, node] = 1.0
    return Graph(adjacency=a, normalized=normalize_adjacency(a))


def spatial_graph_conv(x: Tensor, g: Graph, weights: Tensor, mask: Tensor) -> Tensor:
    """Per-frame propagation Y = (normalized * mask) X W with a learnable
    edge-importance mask (initialized to all-ones)."""
    return T.graph_conv(x, g.normalized, mask, weights)


def _conv_time_nodes(x: Tensor, kernel: Tensor, stride: int, padding: str) -> Tensor:
    """Shared-weight temporal conv applied independently per node; x is
    [T, V, C]."""
    v = x.shape[1]
    cols = [T.conv_time(T.select(x, i, axis=1), kernel, stride=stride, padding=padding)
            for i in range(v)]
    return T.stack(cols, axis=1)


class GcnStream:
    """Graph encoder-decoder: each encoder stage halves the time axis, each
    decoder stage doubles it back, with optional additive skips; node-mean
    pooling then a final affine yields [T, out_channels]."""

    def __init__(self, in_channels: int, node_count: int, cfg: GcnStreamConfig,
                 rng: np.random.Generator, prefix: str = "gcn"):
        self.cfg = cfg
        self.in_channels = in_channels
        self.params: dict[str, Tensor] = {}
        widths = [in_channels, *cfg.channels]
        kt = cfg.temporal_kernel

        def param(name, shape, scale):
            t = Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)
            self.params[f"{prefix}.{name}"] = t
            return t

        self.enc = []
        for s in range(cfg.stages):
            self.enc.append({
                "w": param(f"enc{s}.w", (widths[s], widths[s + 1]), np.sqrt(2.0 / widths[s])),
                "mask": self._ones_param(rng, f"{prefix}.enc{s}.mask", node_count),
                "b": param(f"enc{s}.b", (widths[s + 1],), 0.0),
                "k": param(f"enc{s}.k", (kt, widths[s + 1], widths[s + 1]),
                           np.sqrt(2.0 / (kt * widths[s + 1]))),
            })
        self.dec = []
        for s in range(cfg.stages - 1, -1, -1):
            self.dec.append({
                "w": param(f"dec{s}.w", (widths[s + 1], widths[s]), np.sqrt(2.0 / widths[s + 1])),
                "mask": self._ones_param(rng, f"{prefix}.dec{s}.mask", node_count),
                "b": param(f"dec{s}.b", (widths[s],), 0.0),
            })
        self.proj = param("proj.w", (in_channels, cfg.out_channels),
                          np.sqrt(1.0 / in_channels))
        self.proj_b = param("proj.b", (cfg.out_channels,), 0.0)

    def _ones_param(self, rng, name, v):
        t = Tensor(np.ones((v, v)), requires_grad=True)
        self.params[name] = t
        return t

    def forward(self, x: Tensor, g: Graph, pool_nodes: bool = True) -> Tensor:
        t_in = x.shape[0]
        if t_in % (1 << self.cfg.stages) != 0:
            raise ValueError(
                f"sequence length {t_in} not divisible by 2^{self.cfg.stages}")
        skips = []
        h = x
        for stage in self.enc:
            skips.append(h)
            h = T.relu(spatial_graph_conv(h, g, stage["w"], stage["mask"]) + stage["b"])
            h = _conv_time_nodes(h, stage["k"], stride=2, padding="zero")
        for i, stage in enumerate(self.dec):
            skip = skips[len(skips) - 1 - i]
            h = T.interpolate_time(h, h.shape[0] * 2)
            h = T.relu(spatial_graph_conv(h, g, stage["w"], stage["mask"]) + stage["b"])
            if self.cfg.skip_connections:
                h = h + skip
        if not pool_nodes:
            return h
        pooled = T.mean(h, axis=1)  # [T, C_e]
        return T.matmul(pooled, self.proj) + self.proj_b
