"""Synthetic motion/visual dataset: generation, on-disk format, and
per-frame node-dropout noise injection.

Directory layout: `meta.json` plus, per sequence i, `motion_<i>.f64`
([T_m, V, 3] float64 LE row-major), `valid_<i>.bits` (row-major bitset,
byte padded), `visual_<i>.f64` ([T_v, C_i] float64 LE), and
`labels_<i>.csv` with a `frame,class_id` header.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SkeletonDef:
    joint_count: int
    edges: tuple[tuple[int, int], ...]
    hand_joint_indices: tuple[int, ...]

    def __post_init__(self):
        for a, b in self.edges:
            if not (0 <= a < self.joint_count and 0 <= b < self.joint_count):
                raise ValueError(f"edge ({a},{b}) references invalid joint (count={self.joint_count})")
        for h in self.hand_joint_indices:
            if not 0 <= h < self.joint_count:
                raise ValueError(f"hand index {h} out of range (count={self.joint_count})")


# 10-joint stick figure: spine chain + two 2-link arms ending in hands.
DEFAULT_SKELETON = SkeletonDef(
    joint_count=10,
    edges=((0, 1), (1, 2), (2, 3), (1, 4), (4, 5), (5, 6), (1, 7), (7, 8), (8, 9)),
    hand_joint_indices=(6, 9),
)


@dataclass(frozen=True)
class DatasetMeta:
    num_sequences: int
    t_motion: int
    t_visual: int
    num_joints: int
    num_objects: int
    num_classes: int
    class_names: tuple[str, ...]
    visual_width: int
    skeleton: SkeletonDef

    def __post_init__(self):
        if self.t_motion % self.t_visual != 0:
            raise ValueError(
                f"t_motion={self.t_motion} not divisible by t_visual={self.t_visual}")
        if len(self.class_names) != self.num_classes:
            raise ValueError("class_names length must equal num_classes")

    @property
    def num_nodes(self) -> int:
        return self.num_joints + self.num_objects


@dataclass
class MotionSequence:
    positions: np.ndarray  # [T, V, 3]
    valid: np.ndarray      # [T, V] bool

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.positions.shape[:2] != self.valid.shape:
            raise ValueError(
                f"positions {self.positions.shape} inconsistent with valid {self.valid.shape}")


@dataclass
class Dataset:
    meta: DatasetMeta
    motions: list[MotionSequence]
    visuals: list[np.ndarray]   # each [T_v, C_i]
    labels: list[np.ndarray]    # each [T_m] int ids


@dataclass(frozen=True)
class NoiseConfig:
    node_drop_rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.node_drop_rate <= 1.0:
            raise ValueError(f"node_drop_rate must be in [0, 1], got {self.node_drop_rate}")


@dataclass(frozen=True)
class GeneratorConfig:
    num_sequences: int = 64
    t_motion: int = 120
    t_visual: int = 4
    num_objects: int = 2
    num_classes: int = 5
    visual_width: int = 16
    min_segment_frames: int = 24
    transition_frames: int = 8
    visual_noise: float = 0.1
    skeleton: SkeletonDef = DEFAULT_SKELETON

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.min_segment_frames < self.transition_frames:
            raise ValueError("min segment length must cover the transition length")


def _class_pose(cls: int, joint_count: int, num_objects: int, t: np.ndarray) -> np.ndarray:
    """Parametric per-node trajectories for one action class at times `t`
    (frames): sinusoids with class-distinct frequency/phase per joint, and
    objects orbiting near the hands with a class-specific radius."""
    v = joint_count + num_objects
    pos = np.zeros((t.size, v, 3))
    # whole-body stance offset per class (e.g. working at different spots)
    stance = 0.35 * np.array([np.cos(2 * np.pi * cls / 7.0),
                              np.sin(2 * np.pi * cls / 7.0),
                              np.cos(4 * np.pi * cls / 7.0)])
    for j in range(v):
        # class- and node-specific frequency/phase; amplitudes in ~meters
        freq = 0.02 + 0.013 * ((cls * 7 + j * 3) % 11)
        phase = 2.0 * np.pi * ((cls * 5 + j * 2) % 13) / 13.0
        # distinct static pose per class so frames are individually separable
        base = np.array([
            0.1 * j + 0.3 * ((cls * 3 + j) % 5) / 5.0,
            0.05 * j + 0.3 * ((cls * 2 + j) % 7) / 7.0,
            0.5 + 0.02 * j + 0.3 * ((cls * 5 + j) % 3) / 3.0,
        ])
        amp = 0.15 + 0.04 * ((cls + j) % 4)
        pos[:, j, 0] = stance[0] + base[0] + amp * np.sin(2 * np.pi * freq * t + phase)
        pos[:, j, 1] = stance[1] + base[1] + amp * np.cos(2 * np.pi * freq * t + 0.5 * phase)
        pos[:, j, 2] = stance[2] + base[2] + 0.5 * amp * np.sin(2 * np.pi * 0.5 * freq * t + phase)
    # object-proximity pattern: objects track a hand with class-specific offset
    for o in range(num_objects):
        hand = joint_count - 1 - 3 * (o % 2)
        radius = 0.05 + 0.03 * ((cls + o) % 3)
        pos[:, joint_count + o, :] = pos[:, hand, :] + radius * np.array([1.0, -1.0, 0.5])
    return pos


def generate_synthetic(cfg: GeneratorConfig, seed: int) -> Dataset:
    """Deterministic synthetic dataset: random walks over action classes
    with linearly interpolated transitions, labels split at the transition
    midpoint, and per-class visual prototype vectors plus seeded noise."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    meta = DatasetMeta(
        num_sequences=cfg.num_sequences,
        t_motion=cfg.t_motion,
        t_visual=cfg.t_visual,
        num_joints=cfg.skeleton.joint_count,
        num_objects=cfg.num_objects,
        num_classes=cfg.num_classes,
        class_names=tuple(f"action_{i}" for i in range(cfg.num_classes)),
        visual_width=cfg.visual_width,
        skeleton=cfg.skeleton,
    )
    prototypes = rng.normal(size=(cfg.num_classes, cfg.visual_width))

    motions, visuals, labels = [], [], []
    for _ in range(cfg.num_sequences):
        # random walk over classes with per-segment lengths >= minimum
        segs: list[tuple[int, int]] = []  # (class, length)
        total = 0
        cls = int(rng.integers(cfg.num_classes))
        while total < cfg.t_motion:
            length = int(rng.integers(cfg.min_segment_frames, 2 * cfg.min_segment_frames + 1))
            length = min(length, cfg.t_motion - total)
            if cfg.t_motion - (total + length) in range(1, cfg.min_segment_frames):
                length = cfg.t_motion - total  # avoid a short trailing segment
            segs.append((cls, length))
            total += length
            nxt = int(rng.integers(cfg.num_classes - 1))
            cls = nxt if nxt < cls else nxt + 1  # uniform over other classes

        t_axis = np.arange(cfg.t_motion, dtype=np.float64)
        pos = np.zeros((cfg.t_motion, meta.num_nodes, 3))
        ids = np.zeros(cfg.t_motion, dtype=np.int64)
        start = 0
        for si, (c, length) in enumerate(segs):
            end = start + length
            pos[start:end] = _class_pose(c, cfg.skeleton.joint_count, cfg.num_objects,
                                         t_axis[start:end])
            ids[start:end] = c
            start = end
        # linear cross-fade over G frames centered at each boundary
        g = cfg.transition_frames
        boundary = 0
        for si in range(len(segs) - 1):
            boundary += segs[si][1]
            lo, hi = boundary - g // 2, boundary + (g + 1) // 2
            lo, hi = max(lo, 0), min(hi, cfg.t_motion)
            prev_pose = _class_pose(segs[si][0], cfg.skeleton.joint_count,
                                    cfg.num_objects, t_axis[lo:hi])
            next_pose = _class_pose(segs[si + 1][0], cfg.skeleton.joint_count,
                                    cfg.num_objects, t_axis[lo:hi])
            wts = np.linspace(0.0, 1.0, hi - lo)[:, None, None]
            pos[lo:hi] = (1.0 - wts) * prev_pose + wts * next_pose
            # labels take the nearer action: boundary already at span midpoint

        ratio = cfg.t_motion // cfg.t_visual
        centers = np.arange(cfg.t_visual) * ratio + ratio // 2
        vis = prototypes[ids[centers]] + cfg.visual_noise * rng.normal(
            size=(cfg.t_visual, cfg.visual_width))

        motions.append(MotionSequence(pos, np.ones((cfg.t_motion, meta.num_nodes), dtype=bool)))
        visuals.append(vis)
        labels.append(ids)
    return Dataset(meta=meta, motions=motions, visuals=visuals, labels=labels)


def inject_node_dropout(m: MotionSequence, cfg: NoiseConfig) -> MotionSequence:
    """Independently per (frame, node), drop with probability
    `node_drop_rate`: zero the position and clear the valid flag."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    drop = rng.random(m.valid.shape) < cfg.node_drop_rate
    valid = m.valid & ~drop
    positions = np.where(valid[..., None], m.positions, 0.0)
    return MotionSequence(positions, valid)


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------

def _meta_to_dict(meta: DatasetMeta) -> dict:
    d = asdict(meta)
    d["skeleton"]["edges"] = [list(e) for e in meta.skeleton.edges]
    d["skeleton"]["hand_joint_indices"] = list(meta.skeleton.hand_joint_indices)
    d["class_names"] = list(meta.class_names)
    return d


def _meta_from_dict(d: dict) -> DatasetMeta:
    sk = d["skeleton"]
    skeleton = SkeletonDef(
        joint_count=sk["joint_count"],
        edges=tuple(tuple(e) for e in sk["edges"]),
        hand_joint_indices=tuple(sk["hand_joint_indices"]),
    )
    return DatasetMeta(
        num_sequences=d["num_sequences"],
        t_motion=d["t_motion"],
        t_visual=d["t_visual"],
        num_joints=d["num_joints"],
        num_objects=d["num_objects"],
        num_classes=d["num_classes"],
        class_names=tuple(d["class_names"]),
        visual_width=d["visual_width"],
        skeleton=skeleton,
    )


def save_dataset(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "meta.json").write_text(json.dumps(_meta_to_dict(ds.meta), indent=2))
    for i, (m, vis, ids) in enumerate(zip(ds.motions, ds.visuals, ds.labels)):
        m.positions.astype("<f8").tofile(path / f"motion_{i}.f64")
        np.packbits(m.valid.reshape(m.valid.shape[0], -1), axis=1).tofile(
            path / f"valid_{i}.bits")
        np.asarray(vis, dtype="<f8").tofile(path / f"visual_{i}.f64")
        with open(path / f"labels_{i}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "class_id"])
            writer.writerows(enumerate(int(c) for c in ids))


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    meta_file = path / "meta.json"
    if not meta_file.exists():
        raise FileNotFoundError(f"missing meta file: {meta_file}")
    meta = _meta_from_dict(json.loads(meta_file.read_text()))
    t, v, tv, ci = meta.t_motion, meta.num_nodes, meta.t_visual, meta.visual_width
    row_bytes = (v + 7) // 8

    motions, visuals, labels = [], [], []
    for i in range(meta.num_sequences):
        mfile = path / f"motion_{i}.f64"
        raw = np.fromfile(mfile, dtype="<f8")
        if raw.size != t * v * 3:
            raise ValueError(f"shape mismatch in {mfile}: {raw.size} values, expected {t * v * 3}")
        pos = raw.reshape(t, v, 3)

        bfile = path / f"valid_{i}.bits"
        bits = np.fromfile(bfile, dtype=np.uint8)
        if bits.size != t * row_bytes:
            raise ValueError(f"shape mismatch in {bfile}: {bits.size} bytes, expected {t * row_bytes}")
        valid = np.unpackbits(bits.reshape(t, row_bytes), axis=1)[:, :v].astype(bool)

        vfile = path / f"visual_{i}.f64"
        vraw = np.fromfile(vfile, dtype="<f8")
        if vraw.size != tv * ci:
            raise ValueError(f"shape mismatch in {vfile}: {vraw.size} values, expected {tv * ci}")

        lfile = path / f"labels_{i}.csv"
        with open(lfile, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["frame", "class_id"]:
                raise ValueError(f"corrupt header in {lfile}: {header}")
            ids = np.array([int(row[1]) for row in reader], dtype=np.int64)
        if ids.size != t:
            raise ValueError(f"shape mismatch in {lfile}: {ids.size} rows, expected {t}")

        motions.append(MotionSequence(pos, valid))
        visuals.append(vraw.reshape(tv, ci))
        labels.append(ids)
    return Dataset(meta=meta, motions=motions, visuals=visuals, labels=labels)


def one_hot(ids: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(ids), num_classes))
    out[np.arange(len(ids)), ids] = 1.0
    return out
