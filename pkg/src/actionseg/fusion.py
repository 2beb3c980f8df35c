"""Temporal feature refinement: merge sparse visual features with pooled
encoded motion, refine through bottlenecks, and upsample back to motion
time scale via temporal pyramid pooling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class VisualFeatures:
    feats: np.ndarray  # [T_v, C_i]
    source: str = "precomputed"  # stub_encoder | precomputed

    def __post_init__(self):
        self.feats = np.asarray(self.feats, dtype=np.float64)
        if self.feats.ndim != 2 or self.feats.shape[0] < 1:
            raise ValueError(f"visual features must be [T_v, C_i] with T_v >= 1, got {self.feats.shape}")


@dataclass(frozen=True)
class RefinementConfig:
    bottleneck_count: int = 3
    pyramid_bins: tuple[int, int, int, int] = (1, 2, 4, 8)
    fused_channels: int = 32

    def __post_init__(self):
        if len(self.pyramid_bins) != 4:
            raise ValueError(f"exactly 4 pyramid blocks required, got {len(self.pyramid_bins)}")
        if self.fused_channels % 2 != 0:
            raise ValueError(f"fused channel width must be even, got {self.fused_channels}")
        if self.bottleneck_count < 0:
            raise ValueError("bottleneck_count must be nonnegative")


def load_visual_features(path: str | Path, t_v: int, c_i: int) -> VisualFeatures:
    """Read a flat little-endian float64 file, row-major [T_v, C_i]."""
    raw = np.fromfile(Path(path), dtype="<f8")
    if raw.size != t_v * c_i:
        raise ValueError(f"visual feature file {path}: {raw.size} values, expected {t_v * c_i}")
    return VisualFeatures(raw.reshape(t_v, c_i), source="precomputed")


class StubVisualEncoder:
    """Small stand-in for a video backbone: two spatial convolutions and a
    global spatial mean per frame. No temporal mixing and no temporal
    stride, so frames are encoded independently."""

    def __init__(self, out_channels: int, rng: np.random.Generator,
                 hidden: int = 8, kernel: int = 3, prefix: str = "stubvis"):
        self.out_channels = out_channels
        self.params: dict[str, Tensor] = {}
        self.k1 = Tensor(rng.normal(scale=np.sqrt(2.0 / (kernel * kernel * 3)),
                                    size=(kernel, kernel, 3, hidden)), requires_grad=True)
        self.k2 = Tensor(rng.normal(scale=np.sqrt(2.0 / (kernel * kernel * hidden)),
                                    size=(kernel, kernel, hidden, out_channels)), requires_grad=True)
        self.params[f"{prefix}.k1"] = self.k1
        self.params[f"{prefix}.k2"] = self.k2

    def forward(self, frames: Tensor) -> Tensor:
        """frames: [T_v, H, W, 3] -> [T_v, out_channels]."""
        if len(frames.shape) != 4 or frames.shape[0] < 1:
            raise ValueError(f"frames must be [T_v, H, W, 3], got {frames.shape}")
        rows = []
        for t in range(frames.shape[0]):
            h = T.relu(T.conv2d(T.select(frames, t, axis=0), self.k1))
            h = T.relu(T.conv2d(h, self.k2))
            rows.append(T.mean(T.mean(h, axis=0), axis=0))  # [C]
        return T.stack(rows, axis=0)

    def encode(self, frames: np.ndarray) -> VisualFeatures:
        return VisualFeatures(self.forward(Tensor(frames)).data, source="stub_encoder")


def pool_motion_to_visual(encoded: Tensor, t_v: int) -> Tensor:
    """[T_m, V, C] -> [T_v, C]: mean over nodes, then average pooling of the
    time axis into t_v bins."""
    t_m = encoded.shape[0]
    if t_m % t_v != 0:
        raise ValueError(f"motion length {t_m} not divisible by visual length {t_v}")
    return T.avg_pool_time(T.mean(encoded, axis=1), t_v)


class BottleneckStack:
    """`count` residual blocks, each compressing channels to half width and
    restoring them."""

    def __init__(self, channels: int, count: int, rng: np.random.Generator,
                 prefix: str = "bottleneck"):
        if channels % 2 != 0:
            raise ValueError(f"bottleneck channel width must be even, got {channels}")
        self.blocks = []
        self.params: dict[str, Tensor] = {}
        half = channels // 2
        for i in range(count):
            blk = {
                "w1": Tensor(rng.normal(scale=np.sqrt(2.0 / channels), size=(channels, half)),
                             requires_grad=True),
                "b1": Tensor(np.zeros(half), requires_grad=True),
                "w2": Tensor(rng.normal(scale=np.sqrt(2.0 / half), size=(half, channels)),
                             requires_grad=True),
                "b2": Tensor(np.zeros(channels), requires_grad=True),
            }
            for k, t in blk.items():
                self.params[f"{prefix}.{i}.{k}"] = t
            self.blocks.append(blk)

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            h = T.relu(T.matmul(x, blk["w1"]) + blk["b1"])
            x = x + (T.matmul(h, blk["w2"]) + blk["b2"])
        return x


def temporal_pyramid_pool(x: Tensor, t_out: int, bins: tuple[int, int, int, int]) -> Tensor:
    """Four parallel pool-then-upsample branches averaged together, plus the
    interpolated original features as a residual. Bin counts larger than
    the input length are clamped to it."""
    t_in = x.shape[0]
    if t_out < t_in:
        raise ValueError(f"t_out={t_out} must be >= input length {t_in}")
    branches = []
    for b in bins:
        b = min(b, t_in)
        if b < 1:
            raise ValueError(f"invalid pyramid bin count {b}")
        branches.append(T.interpolate_time(T.avg_pool_time(x, b), t_out))
    total = branches[0]
    for br in branches[1:]:
        total = total + br
    return T.scale(total, 0.25) + T.interpolate_time(x, t_out)


class RefinementStream:
    """concat(pooled motion, visual) -> affine to fused width -> bottleneck
    stack -> temporal pyramid pool up to motion length."""

    def __init__(self, motion_channels: int, visual_channels: int, cfg: RefinementConfig,
                 rng: np.random.Generator, prefix: str = "refine"):
        self.cfg = cfg
        c_in = motion_channels + visual_channels
        self.w_in = Tensor(rng.normal(scale=np.sqrt(1.0 / c_in),
                                      size=(c_in, cfg.fused_channels)), requires_grad=True)
        self.b_in = Tensor(np.zeros(cfg.fused_channels), requires_grad=True)
        self.bottlenecks = BottleneckStack(cfg.fused_channels, cfg.bottleneck_count, rng,
                                           prefix=f"{prefix}.bottleneck")
        self.params: dict[str, Tensor] = {
            f"{prefix}.w_in": self.w_in,
            f"{prefix}.b_in": self.b_in,
            **self.bottlenecks.params,
        }

    def forward(self, encoded_motion: Tensor, vis: Tensor) -> Tensor:
        """encoded_motion: [T_m, V, C_e]; vis: [T_v, C_i] -> [T_m, C_f]."""
        t_m = encoded_motion.shape[0]
        t_v = vis.shape[0]
        pooled = pool_motion_to_visual(encoded_motion, t_v)
        h = T.concatenate([pooled, vis], axis=1)
        h = T.matmul(h, self.w_in) + self.b_in
        h = self.bottlenecks.forward(h)
        return temporal_pyramid_pool(h, t_m, self.cfg.pyramid_bins)
