"""Full multi-modal segmentation model: stream assembly per fusion
strategy, the convolutional classifier head, SGD training with
SmoothLabelMix, argmax decoding, a multiply-accumulate cost model, and
weight file IO."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import BatchItem, MixConfig, SmoothingConfig, apply_smoothlabelmix
from .data import Dataset, MotionSequence, one_hot
from .encoding import SinusoidalParams, encode_sequence
from .fusion import RefinementConfig, RefinementStream, VisualFeatures
from .graph import GcnStream, GcnStreamConfig, Graph, build_graph
from .tensor import Tensor

FUSION_STRATEGIES = ("early", "mid", "late", "mid_late")


class NumericalError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class ModelConfig:
    encoding: SinusoidalParams = SinusoidalParams()
    gcn: GcnStreamConfig = GcnStreamConfig()
    refinement: RefinementConfig = RefinementConfig()
    fusion_strategy: str = "mid"
    num_classes: int = 5
    classifier_kernel: int = 3

    def __post_init__(self):
        if self.fusion_strategy not in FUSION_STRATEGIES:
            raise ValueError(f"unknown fusion strategy {self.fusion_strategy!r}")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        main_width = self.gcn.out_channels
        if self.fusion_strategy in ("mid", "mid_late"):
            main_width += self.refinement.fused_channels
        if main_width % 2 != 0 or self.refinement.fused_channels % 2 != 0:
            raise ValueError("classifier input widths must be even")

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    milestones: tuple[int, ...] = (30, 45)
    decay_factor: float = 0.1
    batch_size: int = 32
    epochs: int = 60
    smoothing: SmoothingConfig = SmoothingConfig()
    mixing: MixConfig = MixConfig()
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ValueError("milestones must be strictly increasing")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used during 1-based `epoch`: after completing
        milestone m the rate is lr0 * factor^(#milestones <= m)."""
        return self.learning_rate * self.decay_factor ** sum(
            1 for m in self.milestones if m < epoch)


class Classifier:
    """Two cascaded temporal convolutions: kernel 3 (C -> C/2, replicate
    padding), relu, kernel 1 (C/2 -> K)."""

    def __init__(self, channels: int, num_classes: int, kernel: int,
                 rng: np.random.Generator, prefix: str = "clf"):
        if channels % 2 != 0:
            raise ValueError(f"classifier input width must be even, got {channels}")
        half = channels // 2
        self.kernel = kernel
        self.k1 = Tensor(rng.normal(scale=np.sqrt(2.0 / (kernel * channels)),
                                    size=(kernel, channels, half)), requires_grad=True)
        self.b1 = Tensor(np.zeros(half), requires_grad=True)
        self.k2 = Tensor(rng.normal(scale=np.sqrt(1.0 / half),
                                    size=(1, half, num_classes)), requires_grad=True)
        self.b2 = Tensor(np.zeros(num_classes), requires_grad=True)
        self.params = {f"{prefix}.k1": self.k1, f"{prefix}.b1": self.b1,
                       f"{prefix}.k2": self.k2, f"{prefix}.b2": self.b2}

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(T.conv_time(x, self.k1, padding="replicate") + self.b1)
        return T.conv_time(h, self.k2, padding="none") + self.b2


class MMGCNModel:
    """Graph stream over encoded motion plus a refinement stream over
    pooled motion and visual features, combined per fusion strategy."""

    def __init__(self, cfg: ModelConfig, node_count: int, visual_width: int, seed: int = 0):
        self.cfg = cfg
        self.node_count = node_count
        self.visual_width = visual_width
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA5)))
        c_e = cfg.encoding.embedding_width
        self.params: dict[str, Tensor] = {}

        gcn_in = c_e + visual_width if cfg.fusion_strategy == "early" else c_e
        self.gcn = GcnStream(gcn_in, node_count, cfg.gcn, rng, prefix="gcn")
        self.params.update(self.gcn.params)

        self.refine: RefinementStream | None = None
        self.clf_refine: Classifier | None = None
        if cfg.fusion_strategy != "early":
            self.refine = RefinementStream(c_e, visual_width, cfg.refinement, rng,
                                           prefix="refine")
            self.params.update(self.refine.params)

        main_width = cfg.gcn.out_channels
        if cfg.fusion_strategy in ("mid", "mid_late"):
            main_width += cfg.refinement.fused_channels
        self.clf_main = Classifier(main_width, cfg.num_classes, cfg.classifier_kernel,
                                   rng, prefix="clf_main")
        self.params.update(self.clf_main.params)
        if cfg.fusion_strategy in ("late", "mid_late"):
            self.clf_refine = Classifier(cfg.refinement.fused_channels, cfg.num_classes,
                                         cfg.classifier_kernel, rng, prefix="clf_refine")
            self.params.update(self.clf_refine.params)

    def graph_for(self, dataset_meta) -> Graph:
        return build_graph(dataset_meta.skeleton, dataset_meta.num_objects)

    def forward(self, motion: MotionSequence, vis: VisualFeatures, g: Graph) -> Tensor:
        """-> logits [T_m, num_classes]."""
        t_m = motion.positions.shape[0]
        encoded_np = encode_sequence(motion.positions, motion.valid, self.cfg.encoding)
        strategy = self.cfg.fusion_strategy

        if strategy == "early":
            # upsample visual features to motion rate, tile over nodes,
            # concatenate into the graph-stream input channels
            up = np.tensordot(_interp_weights(vis.feats.shape[0], t_m), vis.feats, axes=(1, 0))
            tiled = np.repeat(up[:, None, :], self.node_count, axis=1)
            gcn_in = Tensor(np.concatenate([encoded_np, tiled], axis=-1))
            return self.clf_main.forward(self.gcn.forward(gcn_in, g))

        gcn_out = self.gcn.forward(Tensor(encoded_np), g)
        refine_out = self.refine.forward(Tensor(encoded_np), Tensor(vis.feats))

        if strategy == "mid":
            return self.clf_main.forward(T.concatenate([gcn_out, refine_out], axis=1))
        if strategy == "late":
            main = self.clf_main.forward(gcn_out)
            side = self.clf_refine.forward(refine_out)
            return T.scale(main + side, 0.5)
        # mid_late: mid-stage concat classifier averaged with a refine-only head
        main = self.clf_main.forward(T.concatenate([gcn_out, refine_out], axis=1))
        side = self.clf_refine.forward(refine_out)
        return T.scale(main + side, 0.5)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _interp_weights(t_in: int, t_out: int) -> np.ndarray:
    from .tensor import _interp_matrix
    return _interp_matrix(t_in, t_out)


def predict_segments(logits: np.ndarray | Tensor) -> np.ndarray:
    """Per-frame argmax; ties go to the lowest class index."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits contain non-finite values")
    return np.argmax(arr, axis=-1).astype(np.int64)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _dataset_batch_items(ds: Dataset, indices) -> list[BatchItem]:
    return [BatchItem(motion=ds.motions[i].positions.copy(),
                      valid=ds.motions[i].valid.copy(),
                      visual=ds.visuals[i].copy(),
                      labels=one_hot(ds.labels[i], ds.meta.num_classes))
            for i in indices]


def train(dataset: Dataset, mcfg: ModelConfig, tcfg: TrainConfig,
          stop_at_accuracy: float | None = None,
          progress=None) -> tuple[MMGCNModel, list[dict]]:
    """SGD over mean per-frame cross-entropy with SmoothLabelMix applied per
    batch. Returns the trained model and a per-epoch history of loss and
    clean-training framewise accuracy. Deterministic per seed."""
    if not dataset.motions:
        raise ValueError("empty dataset")
    model = MMGCNModel(mcfg, dataset.meta.num_nodes, dataset.meta.visual_width,
                       seed=tcfg.seed)
    g = model.graph_for(dataset.meta)
    rng = np.random.default_rng(np.random.SeedSequence((tcfg.seed, 0x5E)))
    n = len(dataset.motions)
    history: list[dict] = []

    for epoch in range(1, tcfg.epochs + 1):
        lr = tcfg.lr_at(epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        num_batches = 0
        for start in range(0, n, tcfg.batch_size):
            idx = order[start:start + tcfg.batch_size]
            items = _dataset_batch_items(dataset, idx)
            if tcfg.mixing.enabled and len(items) < 2:
                # trailing singleton batch: smoothing only
                items = apply_smoothlabelmix(items, tcfg.smoothing,
                                             MixConfig(tcfg.mixing.beta_alpha, False), rng)
            else:
                items = apply_smoothlabelmix(items, tcfg.smoothing, tcfg.mixing, rng)

            model.zero_grad()
            batch_loss = 0.0
            for item in items:
                motion = MotionSequence(item.motion, item.valid)
                logits = model.forward(motion, VisualFeatures(item.visual), g)
                loss = T.cross_entropy(logits, item.labels)
                if not np.isfinite(loss.data):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch} (lr={lr})")
                T.backward(T.scale(loss, 1.0 / len(items)))
                batch_loss += loss.item() / len(items)
            for p in model.params.values():
                if p.grad is not None:
                    p.data -= lr * p.grad
            epoch_loss += batch_loss
            num_batches += 1

        try:
            acc = training_accuracy(model, dataset, g)
        except ValueError as exc:  # non-finite logits after the update step
            raise NumericalError(
                f"non-finite logits at epoch {epoch} (lr={lr})") from exc
        record = {"epoch": epoch, "loss": epoch_loss / num_batches,
                  "accuracy": acc, "lr": lr}
        history.append(record)
        if progress is not None:
            progress(record)
        if stop_at_accuracy is not None and acc >= stop_at_accuracy:
            break
    return model, history


def training_accuracy(model: MMGCNModel, dataset: Dataset, g: Graph) -> float:
    correct = total = 0
    for motion, vis, ids in zip(dataset.motions, dataset.visuals, dataset.labels):
        pred = predict_segments(model.forward(motion, VisualFeatures(vis), g))
        correct += int(np.sum(pred == ids))
        total += len(ids)
    return correct / total


def predict_dataset(model: MMGCNModel, dataset: Dataset) -> list[np.ndarray]:
    g = model.graph_for(dataset.meta)
    return [predict_segments(model.forward(m, VisualFeatures(v), g))
            for m, v in zip(dataset.motions, dataset.visuals)]


# ---------------------------------------------------------------------------
# cost model (multiply-accumulate counts)
# ---------------------------------------------------------------------------

def estimate_flops(mcfg: ModelConfig, t_m: int, t_v: int, node_count: int = 12,
                   visual_width: int = 16, frame_hw: tuple[int, int] = (480, 640),
                   stub_hidden: int = 8, stub_kernel: int = 3) -> dict[str, float]:
    """Analytic MAC counts per component for the configured shapes. The
    visual-encoder branch is linear in t_v."""
    c_e = mcfg.encoding.embedding_width
    v = node_count
    k = mcfg.gcn.temporal_kernel

    h, w = frame_hw
    h1, w1 = h - stub_kernel + 1, w - stub_kernel + 1
    h2, w2 = h1 - stub_kernel + 1, w1 - stub_kernel + 1
    per_frame = (h1 * w1 * stub_kernel * stub_kernel * 3 * stub_hidden
                 + h2 * w2 * stub_kernel * stub_kernel * stub_hidden * visual_width)
    visual_encoder = float(t_v * per_frame)

    encoding_cost = float(t_m * v * 6 * mcfg.encoding.dims_per_coord)

    gcn_in = c_e + visual_width if mcfg.fusion_strategy == "early" else c_e
    widths = [gcn_in, *mcfg.gcn.channels]
    gcn = 0.0
    t = t_m
    for s in range(mcfg.gcn.stages):
        gcn += t * (v * v * widths[s] + v * widths[s] * widths[s + 1])  # graph conv
        t //= 2
        gcn += t * v * k * widths[s + 1] * widths[s + 1]                # temporal conv
    for s in range(mcfg.gcn.stages - 1, -1, -1):
        t *= 2
        gcn += t * (v * v * widths[s + 1] + v * widths[s + 1] * widths[s])
    gcn += t_m * gcn_in * mcfg.gcn.out_channels

    refinement = 0.0
    if mcfg.fusion_strategy != "early":
        c_f = mcfg.refinement.fused_channels
        refinement += t_m * v * c_e                                # node/time pooling
        refinement += t_v * (c_e + visual_width) * c_f             # input affine
        refinement += mcfg.refinement.bottleneck_count * 2 * t_v * c_f * (c_f // 2)
        refinement += (len(mcfg.refinement.pyramid_bins) + 1) * 2 * t_m * c_f  # pool+interp

    main_width = mcfg.gcn.out_channels
    if mcfg.fusion_strategy in ("mid", "mid_late"):
        main_width += mcfg.refinement.fused_channels
    clf = t_m * (mcfg.classifier_kernel * main_width * (main_width // 2)
                 + (main_width // 2) * mcfg.num_classes)
    if mcfg.fusion_strategy in ("late", "mid_late"):
        c_f = mcfg.refinement.fused_channels
        clf += t_m * (mcfg.classifier_kernel * c_f * (c_f // 2)
                      + (c_f // 2) * mcfg.num_classes)

    out = {"visual_encoder": visual_encoder, "encoding": encoding_cost,
           "gcn_stream": float(gcn), "refinement": float(refinement),
           "classifier": float(clf)}
    out["total"] = sum(out.values())
    return out


# ---------------------------------------------------------------------------
# weight file IO: one JSON header line, then the named arrays concatenated
# as little-endian float64 in header order
# ---------------------------------------------------------------------------

def save_weights(path: str | Path, model: MMGCNModel) -> None:
    header = {
        "config_digest": model.cfg.digest(),
        "node_count": model.node_count,
        "visual_width": model.visual_width,
        "config": asdict(model.cfg),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for t in model.params.values():
            fh.write(t.data.astype("<f8").tobytes())


def load_weights(path: str | Path) -> MMGCNModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        cfg = model_config_from_dict(header["config"])
        model = MMGCNModel(cfg, header["node_count"], header["visual_width"])
        for spec_ in header["arrays"]:
            name, shape = spec_["name"], tuple(spec_["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = np.frombuffer(fh.read(count * 8), dtype="<f8")
            if raw.size != count:
                raise ValueError(f"weight file truncated at array {name!r}")
            if name not in model.params or model.params[name].shape != shape:
                raise ValueError(f"unexpected array {name!r} with shape {shape}")
            model.params[name].data = raw.reshape(shape).astype(np.float64)
    if header["config_digest"] != cfg.digest():
        raise ValueError("config digest mismatch in weight file")
    return model


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        encoding=SinusoidalParams(**d["encoding"]),
        gcn=GcnStreamConfig(**{**d["gcn"], "channels": tuple(d["gcn"]["channels"])}),
        refinement=RefinementConfig(**{**d["refinement"],
                                       "pyramid_bins": tuple(d["refinement"]["pyramid_bins"])}),
        fusion_strategy=d["fusion_strategy"],
        num_classes=d["num_classes"],
        classifier_kernel=d["classifier_kernel"],
    )


def train_config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=d.get("learning_rate", 1e-4),
        milestones=tuple(d.get("milestones", (30, 45))),
        decay_factor=d.get("decay_factor", 0.1),
        batch_size=d.get("batch_size", 32),
        epochs=d.get("epochs", 60),
        smoothing=SmoothingConfig(**d.get("smoothing", {})),
        mixing=MixConfig(**d.get("mixing", {})),
        seed=d.get("seed", 0),
    )
