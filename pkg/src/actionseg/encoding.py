"""Sinusoidal joint encoder: 3D coordinates to a continuous sin-cos space.

Each coordinate c maps to sin(beta*c / alpha**(k/d)) and the matching
cosine for k = 0..d-1, so frequencies decrease geometrically in k. A joint
embedding is the block concat [sin(X)|sin(Y)|sin(Z)|cos(X)|cos(Y)|cos(Z)].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SinusoidalParams:
    alpha: float = 10000.0
    beta: float = 100.0
    dims_per_coord: int = 8

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.dims_per_coord < 1:
            raise ValueError(f"dims_per_coord must be >= 1, got {self.dims_per_coord}")

    @property
    def frequencies(self) -> np.ndarray:
        d = self.dims_per_coord
        return self.beta / self.alpha ** (np.arange(d) / d)

    @property
    def embedding_width(self) -> int:
        return 6 * self.dims_per_coord


def encode_coordinate(c: float, params: SinusoidalParams) -> tuple[np.ndarray, np.ndarray]:
    """Return (sin_vec, cos_vec), each of length dims_per_coord."""
    if not np.isfinite(c):
        raise ValueError(f"coordinate must be finite, got {c}")
    phase = params.frequencies * c
    return np.sin(phase), np.cos(phase)


def encode_joint(p: tuple[float, float, float], params: SinusoidalParams) -> np.ndarray:
    """Embed one 3D point as [sin(X)|sin(Y)|sin(Z)|cos(X)|cos(Y)|cos(Z)]."""
    sins, coss = [], []
    for c in p:
        s, c_ = encode_coordinate(float(c), params)
        sins.append(s)
        coss.append(c_)
    return np.concatenate(sins + coss)


def encode_sequence(positions: np.ndarray, valid: np.ndarray, params: SinusoidalParams) -> np.ndarray:
    """Encode a [T, V, 3] position array into [T, V, 6*d].

    Invalid (masked) nodes get an all-zero row, cos block included, so a
    missing joint is distinguishable from a genuine origin point.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[-1] != 3:
        raise ValueError(f"positions must be [T, V, 3], got {positions.shape}")
    if positions.shape[0] == 0:
        raise ValueError("empty sequence")
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions contain non-finite values")

    phase = positions[..., None] * params.frequencies  # [T, V, 3, d]
    t, v = positions.shape[:2]
    sin_block = np.sin(phase).reshape(t, v, -1)
    cos_block = np.cos(phase).reshape(t, v, -1)
    emb = np.concatenate([sin_block, cos_block], axis=-1)
    emb[~np.asarray(valid, dtype=bool)] = 0.0
    return emb
