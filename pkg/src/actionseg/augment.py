"""SmoothLabelMix: temporal label smoothing plus Beta-weighted intra-batch
mixing of motion, visual features, and labels."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class SmoothingConfig:
    kind: str = "gaussian"  # original | linear | gaussian
    window: int = 7         # linear filter width, odd
    sigma: float = 2.0      # gaussian std in frames
    radius: int = 5         # gaussian truncation radius

    def __post_init__(self):
        if self.kind not in ("original", "linear", "gaussian"):
            raise ValueError(f"unknown smoothing kind {self.kind!r}")
        if self.kind == "linear" and (self.window < 1 or self.window % 2 == 0):
            raise ValueError(f"linear window must be odd and positive, got {self.window}")
        if self.kind == "gaussian":
            if self.sigma <= 0:
                raise ValueError(f"sigma must be positive, got {self.sigma}")
            if self.radius < 1:
                raise ValueError(f"radius must be positive, got {self.radius}")

    def kernel(self) -> np.ndarray | None:
        """Normalized smoothing kernel, or None for kind=original."""
        if self.kind == "original":
            return None
        if self.kind == "linear":
            return np.full(self.window, 1.0 / self.window)
        offs = np.arange(-self.radius, self.radius + 1)
        k = np.exp(-0.5 * (offs / self.sigma) ** 2)
        return k / k.sum()


@dataclass(frozen=True)
class MixConfig:
    beta_alpha: float = 0.2  # both shape parameters of the symmetric Beta
    enabled: bool = True

    def __post_init__(self):
        if self.beta_alpha <= 0:
            raise ValueError(f"beta_alpha must be positive, got {self.beta_alpha}")


@dataclass
class BatchItem:
    """One training example: dense motion, validity, sparse visual, labels."""
    motion: np.ndarray    # [T, V, 3]
    valid: np.ndarray     # [T, V] bool
    visual: np.ndarray    # [T_v, C_i]
    labels: np.ndarray    # [T, K] simplex rows


def smooth_labels(labels: np.ndarray, cfg: SmoothingConfig) -> np.ndarray:
    """Per-class 1D convolution along time with replicate padding."""
    labels = np.asarray(labels, dtype=np.float64)
    kernel = cfg.kernel()
    if kernel is None:
        return labels.copy()
    r = len(kernel) // 2
    padded = np.pad(labels, ((r, r), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=0)
    return np.einsum("tkw,w->tk", win, kernel)


def sample_mix_weight(rng: np.random.Generator, cfg: MixConfig) -> float:
    return float(rng.beta(cfg.beta_alpha, cfg.beta_alpha))


def mix_pair(x1: np.ndarray, y1: np.ndarray, x2: np.ndarray, y2: np.ndarray,
             w: float) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of an input pair and its label pair."""
    if x1.shape != x2.shape or y1.shape != y2.shape:
        raise ValueError(
            f"mix_pair shape mismatch: {x1.shape} vs {x2.shape}, {y1.shape} vs {y2.shape}")
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"mix weight must be in [0, 1], got {w}")
    return w * x1 + (1.0 - w) * x2, w * y1 + (1.0 - w) * y2


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def apply_smoothlabelmix(batch: list[BatchItem], smoothing: SmoothingConfig,
                         mixing: MixConfig, rng: np.random.Generator) -> list[BatchItem]:
    """Smooth every label sequence, then mix each element with a distinct
    partner (fixed-point-free pairing), one Beta weight per element. Motion,
    visual features, and labels of a pair share the same weight. Cells where
    either source node is invalid stay masked and zeroed."""
    if mixing.enabled and len(batch) < 2:
        raise ValueError("mixing requires a batch of at least 2 sequences")

    smoothed = [replace(item, labels=smooth_labels(item.labels, smoothing)) for item in batch]
    if not mixing.enabled:
        return smoothed

    partners = _derangement(len(batch), rng)
    out = []
    for i, item in enumerate(smoothed):
        other = smoothed[partners[i]]
        w = sample_mix_weight(rng, mixing)
        motion, labels = mix_pair(item.motion, item.labels, other.motion, other.labels, w)
        visual = w * item.visual + (1.0 - w) * other.visual
        valid = item.valid & other.valid
        motion = np.where(valid[..., None], motion, 0.0)
        out.append(BatchItem(motion=motion, valid=valid, visual=visual, labels=labels))
    return out
