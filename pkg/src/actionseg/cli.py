"""Command-line entry point: dataset generation, training, evaluation,
augmentation dumps, noise perturbation, robustness sweeps, ablation grids,
and the FLOP cost table.

Exit codes: 0 success, 2 argument/schema error, 3 IO error, 4 data
validation error, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .augment import BatchItem, MixConfig, SmoothingConfig, apply_smoothlabelmix, smooth_labels
from .data import (Dataset, GeneratorConfig, NoiseConfig, generate_synthetic,
                   inject_node_dropout, load_dataset, one_hot, save_dataset)
from .fusion import VisualFeatures
from .metrics import F1K_THRESHOLDS, evaluate, timeline_svg
from .model import (MMGCNModel, ModelConfig, NumericalError, TrainConfig, estimate_flops,
                    load_weights, model_config_from_dict, predict_dataset, predict_segments,
                    save_weights, train, train_config_from_dict)

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run configuration (single JSON document, unknown keys rejected)
# ---------------------------------------------------------------------------

_SCHEMA = {
    "model": {
        "encoding": {"alpha", "beta", "dims_per_coord"},
        "gcn": {"channels", "temporal_kernel", "out_channels", "skip_connections"},
        "refinement": {"bottleneck_count", "pyramid_bins", "fused_channels"},
        "fusion_strategy": None, "num_classes": None, "classifier_kernel": None,
    },
    "train": {
        "learning_rate": None, "milestones": None, "decay_factor": None,
        "batch_size": None, "epochs": None, "seed": None,
        "smoothing": {"kind", "window", "sigma", "radius"},
        "mixing": {"beta_alpha", "enabled"},
    },
    "generator": {"num_sequences", "t_motion", "t_visual", "num_objects", "num_classes",
                  "visual_width", "min_segment_frames", "transition_frames", "visual_noise"},
    "seed": None, "data_dir": None, "out_dir": None,
}


def _check_keys(doc, schema, path=""):
    if not isinstance(doc, dict):
        raise ConfigError(f"expected object at {path or 'top level'}")
    for key, val in doc.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            _check_keys(val, sub, path + key + ".")
        elif isinstance(sub, set):
            if not isinstance(val, dict):
                raise ConfigError(f"expected object at {path + key!r}")
            for k2 in val:
                if k2 not in sub:
                    raise ConfigError(f"unknown config key {path + key + '.' + k2!r}")


class RunConfig:
    def __init__(self, doc: dict):
        _check_keys(doc, _SCHEMA)
        try:
            self.model = model_config_from_dict(_full_model_dict(doc.get("model", {})))
            self.train = train_config_from_dict(doc.get("train", {}))
            self.generator = GeneratorConfig(**doc.get("generator", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        self.seed = int(doc.get("seed", 0))
        self.data_dir = doc.get("data_dir")
        self.out_dir = doc.get("out_dir")
        self.doc = doc

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True).encode()).hexdigest()

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        if path == "default":
            return cls({})
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls(doc)


def _full_model_dict(partial: dict) -> dict:
    base = asdict(ModelConfig())
    for key, val in partial.items():
        if isinstance(val, dict):
            base[key] = {**base[key], **val}
        else:
            base[key] = val
    return base


# ---------------------------------------------------------------------------
# output helpers (atomic writes, manifest)
# ---------------------------------------------------------------------------

def atomic_write(path: Path, data: str | bytes) -> None:
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(out_dir: Path, config_digest: str, seed: int) -> None:
    hashes = {}
    for f in sorted(out_dir.iterdir()):
        if f.name == "manifest.json" or not f.is_file():
            continue
        hashes[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    atomic_write(out_dir / "manifest.json", json.dumps(
        {"config_digest": config_digest, "seed": seed, "artifacts": hashes}, indent=2))


def _load_dataset(path: str) -> Dataset:
    try:
        return load_dataset(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MMGCN_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = RunConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(cfg.generator, cfg.seed)
    save_dataset(ds, out)
    write_manifest(out, cfg.digest(), cfg.seed)
    print(f"generated {cfg.generator.num_sequences} sequences into {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    ds = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mcfg = cfg.model
    if mcfg.num_classes != ds.meta.num_classes:
        raise DataError(f"config num_classes={mcfg.num_classes} but dataset has "
                        f"{ds.meta.num_classes}")
    model, history = train(
        ds, mcfg, cfg.train,
        stop_at_accuracy=args.stop_at_accuracy,
        progress=(lambda r: print(f"epoch {r['epoch']}: loss={r['loss']:.4f} "
                                  f"acc={r['accuracy']:.4f}")) if args.verbose else None)
    save_weights(out / "weights.bin", model)
    rows = ["epoch,loss,accuracy,lr"] + [
        f"{r['epoch']},{r['loss']!r},{r['accuracy']!r},{r['lr']!r}" for r in history]
    atomic_write(out / "history.csv", "\n".join(rows) + "\n")
    write_manifest(out, cfg.digest(), cfg.train.seed)
    print(f"trained {len(history)} epochs, final accuracy {history[-1]['accuracy']:.4f}")
    return EXIT_OK


def _evaluate_dataset(ds: Dataset, preds: list[np.ndarray], out: Path) -> dict:
    reports = [evaluate(gt, p, ds.meta.num_classes) for gt, p in zip(ds.labels, preds)]
    agg = {
        "accuracy": float(np.mean([r.accuracy for r in reports])),
        "f1_macro": float(np.mean([r.f1_macro for r in reports])),
        "f1_micro": float(np.mean([r.f1_micro for r in reports])),
        **{f"f1@{k}": float(np.mean([r.f1_at_k[k] for r in reports]))
           for k in F1K_THRESHOLDS},
    }
    atomic_write(out / "report.json", json.dumps(
        {"aggregate": agg, "per_sequence": [r.to_dict() for r in reports]}, indent=2))
    header = "sequence,accuracy,f1_macro,f1_micro," + ",".join(
        f"f1@{k}" for k in F1K_THRESHOLDS)
    rows = [header] + [
        f"{i},{r.accuracy!r},{r.f1_macro!r},{r.f1_micro!r},"
        + ",".join(repr(r.f1_at_k[k]) for k in F1K_THRESHOLDS)
        for i, r in enumerate(reports)]
    atomic_write(out / "report.csv", "\n".join(rows) + "\n")
    for i, (gt, p) in enumerate(zip(ds.labels, preds)):
        atomic_write(out / f"timeline_{i}.svg", timeline_svg(gt, p))
    return agg


def cmd_eval(args) -> int:
    ds = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.identity_predictor:
        preds = [ids.copy() for ids in ds.labels]
        digest = "identity"
    elif args.weights is None:
        raise ConfigError("either --weights or --identity-predictor is required")
    else:
        model = load_weights(args.weights)
        preds = predict_dataset(model, ds)
        digest = model.cfg.digest()
    agg = _evaluate_dataset(ds, preds, out)
    write_manifest(out, digest, 0)
    print(json.dumps(agg, indent=2))
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = RunConfig.load(args.config)
    ds = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.train.seed, 0xA6)))
    items = [BatchItem(m.positions.copy(), m.valid.copy(), v.copy(),
                       one_hot(ids, ds.meta.num_classes))
             for m, v, ids in zip(ds.motions, ds.visuals, ds.labels)]
    mixing = cfg.train.mixing if len(items) >= 2 else MixConfig(enabled=False)
    augmented = apply_smoothlabelmix(items, cfg.train.smoothing, mixing, rng)
    k = ds.meta.num_classes
    for i, (before, after) in enumerate(zip(items, augmented)):
        smoothed = smooth_labels(before.labels, cfg.train.smoothing)
        header = ("frame,"
                  + ",".join(f"before_c{c}" for c in range(k)) + ","
                  + ",".join(f"smoothed_c{c}" for c in range(k)) + ","
                  + ",".join(f"after_c{c}" for c in range(k)))
        rows = [header]
        for t in range(before.labels.shape[0]):
            rows.append(",".join([str(t)]
                                 + [repr(x) for x in before.labels[t]]
                                 + [repr(x) for x in smoothed[t]]
                                 + [repr(x) for x in after.labels[t]]))
        atomic_write(out / f"labels_{i}.csv", "\n".join(rows) + "\n")
    write_manifest(out, cfg.digest(), cfg.train.seed)
    print(f"wrote before/after label curves for {len(items)} sequences to {out}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    ds = _load_dataset(args.data)
    out = Path(args.out)
    noise = NoiseConfig(node_drop_rate=args.rate, seed=args.seed)
    perturbed = Dataset(
        meta=ds.meta,
        motions=[inject_node_dropout(m, NoiseConfig(args.rate, seed=args.seed + i))
                 for i, m in enumerate(ds.motions)],
        visuals=ds.visuals, labels=ds.labels)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(perturbed, out)
    write_manifest(out, hashlib.sha256(repr(noise).encode()).hexdigest(), args.seed)
    print(f"perturbed dataset written to {out} (rate={args.rate})")
    return EXIT_OK


def cmd_robustness(args) -> int:
    ds = _load_dataset(args.data)
    model = load_weights(args.weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rates = [float(r) for r in args.rates.split(",")]

    def eval_rate(rate: float) -> dict:
        noisy = Dataset(
            meta=ds.meta,
            motions=[inject_node_dropout(m, NoiseConfig(rate, seed=args.seed + i))
                     for i, m in enumerate(ds.motions)],
            visuals=ds.visuals, labels=ds.labels)
        preds = predict_dataset(model, noisy)
        reports = [evaluate(gt, p, ds.meta.num_classes)
                   for gt, p in zip(ds.labels, preds)]
        return {"rate": rate,
                "accuracy": float(np.mean([r.accuracy for r in reports])),
                "f1@50": float(np.mean([r.f1_at_k[50] for r in reports]))}

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(eval_rate, rates))
    rows = ["rate,accuracy,f1@50"] + [
        f"{r['rate']!r},{r['accuracy']!r},{r['f1@50']!r}" for r in results]
    atomic_write(out / "robustness.csv", "\n".join(rows) + "\n")
    write_manifest(out, model.cfg.digest(), args.seed)
    for r in results:
        print(f"rate={r['rate']:.2f} accuracy={r['accuracy']:.4f} f1@50={r['f1@50']:.4f}")
    return EXIT_OK


_SMOOTHING_GRID = {"O": "original", "L": "linear", "G": "gaussian"}


def cmd_ablate(args) -> int:
    grid_doc = json.loads(Path(args.grid).read_text())
    allowed = {"base_config", "smoothing", "mixing", "refinement", "fusion"}
    for key in grid_doc:
        if key not in allowed:
            raise ConfigError(f"unknown grid key {key!r}")
    base = RunConfig(grid_doc.get("base_config", {}))
    smoothing_axis = grid_doc.get("smoothing", ["O", "L", "G"])
    mixing_axis = grid_doc.get("mixing", [True, False])
    refinement_axis = grid_doc.get("refinement", [True, False])
    fusion_axis = grid_doc.get("fusion", ["early", "mid", "late", "mid_late"])
    ds = _load_dataset(args.data)
    eval_ds = _load_dataset(args.eval_data) if args.eval_data else ds
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cells = list(itertools.product(smoothing_axis, mixing_axis, refinement_axis, fusion_axis))

    def run_cell(cell):
        smoothing, mixing, refinement, fusion = cell
        kind = _SMOOTHING_GRID.get(smoothing, smoothing)
        mcfg_d = asdict(base.model)
        mcfg_d["fusion_strategy"] = fusion
        # refinement "off" degenerates the refine path to its linear skeleton
        mcfg_d["refinement"]["bottleneck_count"] = (
            base.model.refinement.bottleneck_count if refinement else 0)
        mcfg = model_config_from_dict(mcfg_d)
        tcfg_d = asdict(base.train)
        tcfg_d["smoothing"] = {**tcfg_d["smoothing"], "kind": kind}
        tcfg_d["mixing"] = {**tcfg_d["mixing"], "enabled": bool(mixing)}
        tcfg = train_config_from_dict(tcfg_d)
        model, history = train(ds, mcfg, tcfg)
        preds = predict_dataset(model, eval_ds)
        reports = [evaluate(gt, p, eval_ds.meta.num_classes)
                   for gt, p in zip(eval_ds.labels, preds)]
        return {
            "smoothing": kind, "mixing": bool(mixing), "refinement": bool(refinement),
            "fusion": fusion,
            "accuracy": float(np.mean([r.accuracy for r in reports])),
            "f1_macro": float(np.mean([r.f1_macro for r in reports])),
            **{f"f1@{k}": float(np.mean([r.f1_at_k[k] for r in reports]))
               for k in F1K_THRESHOLDS},
        }

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run_cell, cells))
    header = "smoothing,mixing,refinement,fusion,accuracy,f1_macro," + ",".join(
        f"f1@{k}" for k in F1K_THRESHOLDS)
    rows = [header]
    for r in results:
        rows.append(",".join([r["smoothing"], str(r["mixing"]), str(r["refinement"]),
                              r["fusion"], repr(r["accuracy"]), repr(r["f1_macro"])]
                             + [repr(r[f"f1@{k}"]) for k in F1K_THRESHOLDS]))
    atomic_write(out / "ablation.csv", "\n".join(rows) + "\n")
    write_manifest(out, base.digest(), base.train.seed)
    print("\n".join(rows))
    return EXIT_OK


def cmd_flops(args) -> int:
    cfg = RunConfig.load(args.config)
    t_m = cfg.generator.t_motion
    print(f"{'ratio':>8} {'t_v':>5} {'total_MACs':>15} {'visual_MACs':>15}")
    for ratio_den in (1, 2, 30):
        t_v = t_m * ratio_den // 30
        counts = estimate_flops(cfg.model, t_m, t_v,
                                node_count=cfg.generator.skeleton.joint_count
                                + cfg.generator.num_objects,
                                visual_width=cfg.generator.visual_width)
        print(f"{'30:' + str(ratio_den):>8} {t_v:>5} {counts['total']:>15.3e} "
              f"{counts['visual_encoder']:>15.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="actionseg",
                                description="multi-modal action segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--stop-at-accuracy", type=float, default=None)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model")
    e.add_argument("--weights")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--identity-predictor", action="store_true",
                   help="test hook: score ground truth against itself")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("augment", help="dump before/after label curves")
    a.add_argument("--data", required=True)
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_augment)

    pe = sub.add_parser("perturb", help="apply node-dropout noise to a dataset")
    pe.add_argument("--data", required=True)
    pe.add_argument("--rate", type=float, required=True)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--out", required=True)
    pe.set_defaults(fn=cmd_perturb)

    r = sub.add_parser("robustness", help="accuracy/F1@50 vs dropout rate sweep")
    r.add_argument("--weights", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--rates", default="0,0.05,0.1,0.15,0.2,0.25")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_robustness)

    ab = sub.add_parser("ablate", help="train/evaluate a configuration grid")
    ab.add_argument("--grid", required=True)
    ab.add_argument("--data", required=True)
    ab.add_argument("--eval-data", default=None)
    ab.add_argument("--out", required=True)
    ab.set_defaults(fn=cmd_ablate)

    f = sub.add_parser("flops", help="cost-model table for 30:1 / 30:2 / 30:30")
    f.add_argument("--config", required=True)
    f.set_defaults(fn=cmd_flops)
    return p


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ARGS if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
