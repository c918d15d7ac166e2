"""Command line driver: ``python -m weakenlab <command> ...``.

Commands: ``train``, ``sweep``, ``attack``, ``eval``, ``weaken-preview``.
Every command writes a ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .adversarial import evaluate_blackbox, evaluate_whitebox, write_report
from .augment import AugmentSpec, Transform
from .config import ConfigError, ExperimentConfig, load_config, load_datasets, resolve_path
from .data import Dataset, load_idx, normalize, stratified_split, valid_range
from .models import Model, build, load_checkpoint, save_checkpoint, spec_from_state
from .train import best_top1, evaluate, metrics_csv, metrics_json, train

log = logging.getLogger("weakenlab")

LEVEL_TRANSFORM = {"embedding": "feature_weaken_input", "hidden": "feature_weaken_hidden"}


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def run_one(cfg: ExperimentConfig, augment: AugmentSpec, seed: int, train_data: Dataset,
            val_data: Dataset, out_dir: Path | None = None) -> tuple[Model, list]:
    """Train one (method, seed) run; optionally write metrics and checkpoint to ``out_dir``."""
    model = build(replace(cfg.model, init_seed=seed))
    run_cfg = replace(cfg.train, seed=seed, augment=augment)
    history = train(model, train_data, val_data, run_cfg)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text(metrics_csv(history, run_cfg.record_wall_time))
        (out_dir / "metrics.json").write_text(metrics_json(history, run_cfg.record_wall_time) + "\n")
        save_checkpoint(model, out_dir / "model.wklb")
    return model, history


def _map_runs(fn, jobs, threads: int):
    if threads <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def cmd_train(config_path, out: Path, seed: int | None = None, threads: int = 1) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seeds=(seed,))
    train_data, val_data = load_datasets(cfg.data, cfg.base_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", cfg.to_manifest())

    jobs = [(name, s) for name in cfg.methods for s in cfg.seeds]

    def job(name, s):
        log.info("training %s seed=%d", name, s)
        _, history = run_one(cfg, cfg.methods[name], s, train_data, val_data, out / name / f"seed_{s}")
        return name, s, best_top1(history), max(r.val_top5 for r in history)

    results = _map_runs(job, jobs, threads)
    rows = []
    for name in cfg.methods:
        per_seed = [(s, b1, b5) for n, s, b1, b5 in results if n == name]
        best = [b1 for _, b1, _ in per_seed]
        rows.append({"method": name, "runs": len(best), "mean_best_top1": float(np.mean(best)),
                     "std_best_top1": float(np.std(best)),
                     "per_seed": {str(s): b1 for s, b1, _ in per_seed}})
    with open(out / "summary.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["method", "runs", "mean_best_top1", "std_best_top1"])
        for r in rows:
            writer.writerow([r["method"], r["runs"], repr(r["mean_best_top1"]), repr(r["std_best_top1"])])
    _write_json(out / "summary.json", rows)
    for r in rows:
        print(f"{r['method']:>24s}  mean best top1 = {r['mean_best_top1']:.2f}  ({r['runs']} runs)")
    return 0


def with_weaken(base: AugmentSpec, level: str, ws: float) -> AugmentSpec:
    """Append Feature Weaken at ``level`` to ``base``: inputs after mixing, hidden before dropout."""
    t = Transform(LEVEL_TRANSFORM[level], ws=ws)
    if level == "embedding":
        return replace(base, input_transforms=base.input_transforms + (t,))
    return replace(base, hidden_transforms=(t,) + base.hidden_transforms)


def cmd_sweep(config_path, levels, ws_list, out: Path, seed: int | None = None, threads: int = 1,
              base_method: str | None = None) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seeds=(seed,))
    for level in levels:
        if level not in LEVEL_TRANSFORM:
            raise ConfigError(f"--level: expected embedding or hidden, got {level!r}")
    for ws in ws_list:
        if not 0.0 < ws < 1.0:
            raise ConfigError(f"--ws: weaken strength must lie in (0, 1), got {ws}")
    base_name = base_method or ("baseline" if "baseline" in cfg.methods else next(iter(cfg.methods)))
    if base_name not in cfg.methods:
        raise ConfigError(f"--base-method: no method named {base_name!r} in config")
    base = cfg.methods[base_name]
    train_data, val_data = load_datasets(cfg.data, cfg.base_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = cfg.to_manifest()
    manifest["sweep"] = {"levels": list(levels), "ws": list(ws_list), "base_method": base_name}
    _write_json(out / "manifest.json", manifest)

    jobs = [(level, ws, s) for level in levels for ws in ws_list for s in cfg.seeds]

    def job(level, ws, s):
        log.info("sweep %s ws=%g seed=%d", level, ws, s)
        run_dir = out / level / f"ws_{ws:g}" / f"seed_{s}"
        _, history = run_one(cfg, with_weaken(base, level, ws), s, train_data, val_data, run_dir)
        return level, ws, s, best_top1(history)

    results = _map_runs(job, jobs, threads)
    with open(out / "curve.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["level", "ws", "seed", "best_top1"])
        for level, ws, s, b in results:
            writer.writerow([level, repr(float(ws)), s, repr(b)])
    return 0


def _model_from_checkpoint(path: Path, input_shape) -> Model:
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    state = load_checkpoint(path)
    model = build(spec_from_state(state, input_shape))
    model.load_state(state)
    return model


def cmd_attack(config_path, out: Path, train_dir: Path | None = None) -> int:
    cfg = load_config(config_path)
    acfg = cfg.attack
    if acfg is None:
        raise ConfigError("attack: section missing from config")
    _, val_data = load_datasets(cfg.data, cfg.base_dir)
    if acfg.max_samples is not None and acfg.max_samples < len(val_data):
        val_data = stratified_split(val_data, acfg.max_samples, acfg.seed)[0]
    checkpoints = {m: resolve_path(p, cfg.base_dir) for m, p in acfg.checkpoints.items()}
    if train_dir is not None:
        for name in cfg.methods:
            checkpoints.setdefault(name, train_dir / name / f"seed_{cfg.seeds[0]}" / "model.wklb")
    if acfg.source not in checkpoints:
        raise ConfigError(f"attack.source: no checkpoint for method {acfg.source!r}")
    models = {m: _model_from_checkpoint(p, val_data.sample_shape) for m, p in checkpoints.items()}
    specs = acfg.attack_specs(valid_range(val_data))

    out.mkdir(parents=True, exist_ok=True)
    manifest = cfg.to_manifest()
    manifest["attack"]["checkpoints"] = {m: str(p.resolve()) for m, p in checkpoints.items()}
    _write_json(out / "manifest.json", manifest)

    rows = []
    source = models[acfg.source]
    for spec in specs:
        for name, model in models.items():
            rows.append((name, spec.name, "white", spec.epsilon, evaluate_whitebox(model, val_data, spec)))
        for name, model in models.items():
            rows.append((name, spec.name, "black", spec.epsilon,
                         evaluate_blackbox(source, model, val_data, spec)))
    write_report(rows, out / "robustness.csv")
    for row in rows:
        print("{:>24s} {:>8s} {:>5s} eps={:<6g} acc={:.2f}".format(*row))
    return 0


def _load_eval_data(images, labels, mean, std, num_classes=10) -> Dataset:
    ds = load_idx(resolve_path(images, None), resolve_path(labels, None), num_classes)
    return normalize(ds, mean, std) if mean is not None else ds


def cmd_eval(checkpoint: Path, images, labels, mean=None, std=None, out: Path | None = None) -> int:
    data = _load_eval_data(images, labels, mean, std)
    model = _model_from_checkpoint(Path(checkpoint), data.sample_shape)
    top1, top5 = evaluate(model, data)
    result = {"checkpoint": str(Path(checkpoint).resolve()), "samples": len(data), "top1": top1, "top5": top5}
    print(json.dumps(result))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "eval.json", result)
        _write_json(out / "manifest.json", {"tool_version": __version__, "command": "eval",
                                            "checkpoint": result["checkpoint"],
                                            "images": str(resolve_path(images, None).resolve()),
                                            "labels": str(resolve_path(labels, None).resolve()),
                                            "mean": mean, "std": std})
    return 0


def write_pgm(path: Path, image: np.ndarray):
    """Binary graymap (P5, maxval 255) of a ``[H, W]`` array in [0, 1]; values are floored."""
    h, w = image.shape
    pixels = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 1e-9).astype(np.uint8)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a P5 graymap")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w).astype(np.float64) / maxval


def cmd_weaken_preview(images, labels, ws_list, out: Path, count: int = 8, dims=None, seed: int = 0) -> int:
    from .augment import feature_weaken_input
    from .data import batches, export_scatter

    ds = load_idx(resolve_path(images, None), resolve_path(labels, None))
    sample = stratified_split(ds, min(count, len(ds)), seed)[0]
    flat = sample.inputs.reshape(len(sample), -1)
    if dims is None:
        # Highest-variance pixels; fixed-index pixels are blank borders on MNIST.
        dims = sorted(np.argsort(-flat.var(axis=0), kind="stable")[:3].tolist())
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", {"tool_version": __version__, "command": "weaken-preview",
                                        "images": str(resolve_path(images, None).resolve()),
                                        "labels": str(resolve_path(labels, None).resolve()),
                                        "ws": list(ws_list), "count": count, "dims": list(dims), "seed": seed})
    for i, (img, label) in enumerate(zip(sample.inputs, sample.labels)):
        write_pgm(out / f"original_{i}_label{label}.pgm", img[0])
    batch = next(batches(sample, len(sample)))
    for ws in ws_list:
        weak = feature_weaken_input(batch, ws).inputs
        ws_dir = out / f"ws_{ws:g}"
        ws_dir.mkdir(exist_ok=True)
        for i, (img, label) in enumerate(zip(weak, sample.labels)):
            write_pgm(ws_dir / f"sample_{i}_label{label}.pgm", img[0])
        export_scatter(sample, replace(sample, inputs=weak), dims, out / f"scatter_ws_{ws:g}.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakenlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every method for every seed")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("sweep", help="weaken-strength ablation")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--level", nargs="+", default=["embedding", "hidden"], choices=sorted(LEVEL_TRANSFORM))
    p.add_argument("--ws", nargs="+", type=float, default=[0.1, 0.2, 0.5, 0.8, 0.9])
    p.add_argument("--base-method")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("attack", help="white-box and black-box FGSM / I-FGSM robustness")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--train-dir", type=Path, help="output of `train`; fills in missing checkpoints")

    p = sub.add_parser("eval", help="clean top-1 / top-5 of a checkpoint")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mean", type=float, nargs="+")
    p.add_argument("--std", type=float, nargs="+")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("weaken-preview", help="write weakened sample images as P5 graymaps")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--ws", nargs="+", type=float, default=[0.2, 0.5, 0.8, 0.9, 0.99])
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--dims", type=int, nargs=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "train":
            return cmd_train(args.config, args.out, args.seed, args.threads)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.level, args.ws, args.out, args.seed, args.threads,
                             args.base_method)
        if args.command == "attack":
            return cmd_attack(args.config, args.out, args.train_dir)
        if args.command == "eval":
            mean = args.mean if args.mean is None or len(args.mean) > 1 else args.mean[0]
            std = args.std if args.std is None or len(args.std) > 1 else args.std[0]
            return cmd_eval(args.checkpoint, args.images, args.labels, mean, std, args.out)
        if args.command == "weaken-preview":
            return cmd_weaken_preview(args.images, args.labels, args.ws, args.out, args.count,
                                      args.dims, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1
