"""Batch command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
All randomness flows from the single --seed option; --data-dir falls back
to the DERM_DATA_DIR environment variable.  Every subcommand writes a
provenance record (config echo plus format versions) next to its outputs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, augment, dataset, evaluation, explain, preprocess, train
from .errors import DataError, DermError, NumericError
from .image import load_image, save_image
from .serialize import FORMAT_VERSION, write_tensor_file


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _write_provenance(directory: str, subcommand: str, args: argparse.Namespace) -> None:
    os.makedirs(directory, exist_ok=True)
    record = {
        "subcommand": subcommand,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "func" and not k.startswith("_")},
        "format_versions": {"tensor": FORMAT_VERSION, "manifest": 1},
        "package_version": __version__,
    }
    with open(os.path.join(directory, f"run_{subcommand}.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _data_dir(args) -> str:
    if args.data_dir:
        return args.data_dir
    env = os.environ.get("DERM_DATA_DIR", "")
    if not env:
        raise DataError("no data directory: pass --data-dir or set DERM_DATA_DIR")
    return env


def _seed(args) -> int:
    return args.seed if args.seed is not None else 0


def _cmd_ingest(args) -> int:
    with open(args.metadata, "r", encoding="utf-8") as fh:
        records = dataset.parse_metadata(fh.read(), _data_dir(args))
    manifest = dataset.DatasetManifest(records=records)
    if args.exclude:
        manifest = dataset.apply_exclusions(manifest, dataset.read_exclusion_list(args.exclude))
    if args.quality_filter:
        thresholds = dataset.QualityThresholds(
            min_sharpness=args.min_sharpness,
            min_contrast=args.min_contrast,
            max_artifact_fraction=args.max_artifact_fraction,
        )
        reports = []
        for record in manifest.records:
            img = load_image(record.image_path)
            reports.append(dataset.quality_filter(img, thresholds, image_id=record.image_id))
        kept = {r.image_id for r in reports if r.kept}
        with open(args.out + ".quality.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("image_id,kept,reject_reason,sharpness_score,contrast_score\n")
            for r in reports:
                fh.write(f"{r.image_id},{int(r.kept)},{r.reject_reason},{r.sharpness_score},{r.contrast_score}\n")
        manifest = dataset.DatasetManifest(records=[r for r in manifest.records if r.image_id in kept])
    dataset.write_manifest(manifest, args.out)
    _write_provenance(os.path.dirname(os.path.abspath(args.out)), "ingest", args)
    n = len(manifest.records)
    by_label = {label: sum(1 for r in manifest.records if r.label == label) for label in dataset.Label}
    print(f"wrote {args.out}: {n} records "
          f"({by_label[dataset.Label.BENIGN]} benign, {by_label[dataset.Label.MALIGNANT]} malignant, "
          f"{by_label[dataset.Label.UNDETERMINED]} undetermined)")
    return 0


def _cmd_split(args) -> int:
    manifest = dataset.read_manifest(args.manifest)
    cfg = dataset.SplitConfig(args.train_frac, args.val_frac, args.test_frac, _seed(args))
    manifest = dataset.split(manifest, cfg)
    dataset.write_manifest(manifest, args.out)
    _write_provenance(os.path.dirname(os.path.abspath(args.out)), "split", args)
    counts = {name: len(manifest.ids_in_split(name)) for name in dataset.SPLIT_NAMES}
    print(f"wrote {args.out}: train={counts['train']} val={counts['val']} test={counts['test']}")
    return 0


def _cmd_preprocess(args) -> int:
    data_dir = _data_dir(args)
    manifest = dataset.read_manifest(args.manifest, data_dir)
    if args.denoise == "median":
        method = preprocess.Median(args.kernel)
    elif args.denoise == "gaussian":
        method = preprocess.Gaussian(args.kernel, args.sigma)
    else:
        method = None
    cfg = preprocess.PreprocessConfig(
        t_r1=args.t_r1, t_r2=args.t_r2, mean_window=args.mean_window,
        denoise=method, normalize=args.normalize, target_size=(args.height, args.width),
    )
    os.makedirs(args.out, exist_ok=True)

    def process(record):
        img = load_image(record.image_path)
        processed, n_flagged = preprocess.run_pipeline(img, cfg)
        out_path = os.path.join(args.out, record.image_id + ".dct")
        write_tensor_file(out_path, {"kind": "image", "image_id": record.image_id},
                          {"image": processed.astype(np.float32)})
        return record.image_id, n_flagged, 1

    # per-image work is pure; results are keyed by manifest order
    if args.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(process, manifest.records))
    else:
        rows = [process(record) for record in manifest.records]
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("image_id,n_flagged_pixels,kept\n")
        for image_id, n_flagged, kept in rows:
            fh.write(f"{image_id},{n_flagged},{kept}\n")
    dataset.write_manifest(manifest, os.path.join(args.out, "manifest.csv"))
    _write_provenance(args.out, "preprocess", args)
    print(f"preprocessed {len(rows)} images into {args.out}")
    return 0


def _cmd_augment_preview(args) -> int:
    data_dir = _data_dir(args)
    manifest = dataset.read_manifest(args.manifest, data_dir)
    record = manifest.by_id(args.image)
    img = load_image(record.image_path)
    os.makedirs(args.out, exist_ok=True)
    cfg = augment.AugmentConfig()
    for i in range(args.n):
        variant = augment.render_entry(img, cfg, _seed(args), i)
        save_image(variant, os.path.join(args.out, f"{args.image}_aug_{i:03d}.png"))
    _write_provenance(args.out, "augment-preview", args)
    print(f"wrote {args.n} augmented variants of {args.image} to {args.out}")
    return 0


def _cmd_train(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = train.parse_train_config(fh.read(), base_dir=os.path.dirname(os.path.abspath(args.config)))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.output_dir:
        cfg = replace(cfg, output_dir=args.output_dir)
    if args.data_dir:
        cfg = replace(cfg, data_dir=args.data_dir)
    cfg = replace(cfg, threads=args.threads)
    if cfg.manifest_path and not os.path.exists(cfg.manifest_path):
        raise DataError(f"manifest not found: {cfg.manifest_path}")
    result = train.run_training(cfg, resume_from=args.resume)
    if cfg.output_dir:
        _write_provenance(cfg.output_dir, "train", args)
    final = result.log.epochs[-1] if result.log.epochs else None
    if final:
        print(f"trained {cfg.epochs} epochs; final train loss {final.loss:.4f} acc {final.accuracy:.4f}; "
              f"best val loss {result.best_val_loss}")
    else:
        print("no epochs run")
    return 0


def _cmd_evaluate(args) -> int:
    cm, report, roc, scores, labels, ids = evaluation.evaluate(
        args.ckpt, args.manifest, _data_dir(args), split=args.split, batch_size=args.batch_size)
    text = evaluation.format_report(os.path.basename(args.ckpt), cm, report, roc)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, f"report_{args.split}.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    if roc is not None:
        evaluation.write_roc_csv(roc, os.path.join(args.out, f"roc_{args.split}.csv"))
    with open(os.path.join(args.out, f"scores_{args.split}.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("image_id,score,label\n")
        for image_id, score, label in zip(ids, scores, labels):
            fh.write(f"{image_id},{score},{label}\n")
    _write_provenance(args.out, "evaluate", args)
    print(text, end="")
    return 0


def _cmd_predict(args) -> int:
    from .nn.checkpoint import load_checkpoint
    from .train import ImageLoader

    spec, params, _, _, _ = load_checkpoint(args.ckpt)
    data_dir = _data_dir(args)
    manifest = dataset.read_manifest(args.manifest, data_dir)
    if args.image:
        ids = [args.image]
    elif args.split:
        ids = manifest.ids_in_split(args.split)
    else:
        ids = [r.image_id for r in manifest.records]
    if not ids:
        raise DataError("nothing to predict")
    loader = ImageLoader(manifest, spec.input_hw, spec.in_channels)
    x = np.stack([loader.load_chw(i) for i in ids])
    from .nn import forward

    scores = np.empty(len(ids), dtype=np.float64)
    for lo in range(0, len(ids), args.batch_size):
        probs, _ = forward(spec, params, x[lo:lo + args.batch_size], mode="infer")
        scores[lo:lo + len(probs)] = probs
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("image_id,score,predicted_label\n")
        for image_id, score in zip(ids, scores):
            fh.write(f"{image_id},{score},{int(score >= 0.5)}\n")
    _write_provenance(os.path.dirname(os.path.abspath(args.out)), "predict", args)
    print(f"wrote {len(ids)} predictions to {args.out}")
    return 0


def _cmd_saliency(args) -> int:
    from .nn.checkpoint import load_checkpoint
    from .train import ImageLoader

    spec, params, _, _, _ = load_checkpoint(args.ckpt)
    data_dir = _data_dir(args)
    manifest = dataset.read_manifest(args.manifest, data_dir)
    loader = ImageLoader(manifest, spec.input_hw, spec.in_channels)
    img = loader.load_hwc(args.image)
    saliency = explain.occlusion_saliency((spec, params), img, patch=args.patch, stride=args.stride)
    os.makedirs(args.out, exist_ok=True)
    explain.write_saliency_csv(saliency, os.path.join(args.out, f"{args.image}_saliency.csv"))
    save_image(explain.saliency_to_image(saliency), os.path.join(args.out, f"{args.image}_saliency.png"))
    _write_provenance(args.out, "saliency", args)
    print(f"wrote saliency map ({saliency.height}x{saliency.width}) for {args.image} to {args.out}")
    return 0


def _cmd_benchmark(args) -> int:
    from .nn import default_spec, parse_spec

    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = parse_spec(fh.read())
    else:
        spec = default_spec(input_hw=(args.height, args.width))
    cfg = train.TrainConfig(
        batch_size=args.batch_size, epochs=args.epochs, seed=_seed(args),
        manifest_path=args.manifest, data_dir=_data_dir(args), balance=False,
        val_every_iters=10**9, threads=args.threads,
    )
    report = evaluation.benchmark_epoch(spec, cfg, args.epochs, hardware_note=args.hardware)
    payload = {
        "seconds_per_epoch": report.seconds_per_epoch,
        "total_minutes": report.total_minutes,
        "hardware_note": report.hardware_note,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    per_epoch = ", ".join(f"{s:.2f}s" for s in report.seconds_per_epoch)
    print(f"epochs: {per_epoch}; total {report.total_minutes:.2f} min")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="dermcnn", description="Dermoscopy lesion classification pipeline")
    parser.add_argument("--seed", type=int, default=None, help="global random seed")
    parser.add_argument("--threads", type=int, default=max(1, os.cpu_count() or 1),
                        help="worker-parallelism cap for per-image stages")
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("ingest", help="parse metadata CSV into a manifest")
    p.add_argument("--metadata", required=True)
    p.add_argument("--data-dir", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--exclude", default=None, help="file with image_ids to drop")
    p.add_argument("--quality-filter", action="store_true")
    p.add_argument("--min-sharpness", type=float, default=1e-4)
    p.add_argument("--min-contrast", type=float, default=0.05)
    p.add_argument("--max-artifact-fraction", type=float, default=None)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="assign stratified train/val/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--test-frac", type=float, default=0.1)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("preprocess", help="run the image pipeline, write tensors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--t-r1", type=float, default=0.87)
    p.add_argument("--t-r2", type=float, default=0.096)
    p.add_argument("--mean-window", type=int, default=12)
    p.add_argument("--denoise", choices=["median", "gaussian", "none"], default="median")
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--normalize", choices=["minmax", "zscore", "decimal"], default="minmax")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("augment-preview", help="write augmented variants of one image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", default="")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.set_defaults(func=_cmd_augment_preview)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--data-dir", default="")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a split and write metric reports")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", default="")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("predict", help="write per-image probabilities")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", default="")
    p.add_argument("--image", default=None)
    p.add_argument("--split", choices=["train", "val", "test"], default=None)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("saliency", help="occlusion saliency map for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", default="")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_saliency)

    p = sub.add_parser("benchmark", help="time training epochs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-dir", default="")
    p.add_argument("--spec", default=None)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--hardware", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_benchmark)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse exits for --help
            return int(exc.code or 0)
        if not getattr(args, "subcommand", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except _UsageError as exc:
        print(f"dermcnn: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"dermcnn: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"dermcnn: {exc}", file=sys.stderr)
        return 2
    except DermError as exc:
        print(f"dermcnn: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
