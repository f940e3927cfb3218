"""Training orchestration: epochs, batching, validation scheduling,
checkpointing, and overfitting reporting.

Everything stochastic is keyed by (config seed, epoch or iteration), so a
run is fully determined by its TrainConfig, and a resumed run is bit-equal
to an uninterrupted one.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .augment import AugmentConfig, balance, render_plan, write_plan
from .dataset import DatasetManifest, read_manifest
from .errors import DataError, EmptySplit, InsufficientLog, NonFiniteLoss, NonFiniteValue, ShapeMismatch
from .image import load_image
from .nn import AdamState, adam_step, backward, default_spec, forward, init_adam, init_params, parse_spec
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import Parameters
from .nn.ops import bce_loss
from .nn.spec import ModelSpec
from .preprocess import resize, to_grayscale


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 100
    val_every_iters: int = 36
    seed: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    spec_path: str | None = None
    manifest_path: str | None = None
    data_dir: str = ""
    output_dir: str | None = None
    balance: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    threads: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.epochs < 0:
            raise DataError("epochs must be >= 0")
        if self.val_every_iters < 1:
            raise DataError("val_every_iters must be >= 1")


@dataclass
class ValPoint:
    epoch: int
    iteration: int
    loss: float
    accuracy: float
    train_loss: float  # mean training loss since the previous validation point


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    seconds: float


@dataclass
class TrainLog:
    iter_losses: list[tuple[int, int, float]] = field(default_factory=list)
    val_points: list[ValPoint] = field(default_factory=list)
    epochs: list[EpochStats] = field(default_factory=list)


@dataclass
class OverfitReport:
    best_epoch: int
    best_iteration: int
    best_val_loss: float
    final_accuracy_gap: float
    overfitting: bool


@dataclass
class TrainResult:
    spec: ModelSpec
    params: Parameters
    state: AdamState
    log: TrainLog
    best_val_loss: float | None
    output_dir: str | None


class ImageLoader:
    """Loads manifest images as float32 (C, H, W), resized to the model input.

    Every access is recorded; loading an image from a forbidden split (the
    test set, during training) raises immediately.
    """

    def __init__(self, manifest: DatasetManifest, target_hw: tuple[int, int], channels: int,
                 forbidden: frozenset[str] = frozenset()):
        self._paths = {r.image_id: r.image_path for r in manifest.records}
        self.target_hw = target_hw
        self.channels = channels
        self.forbidden = forbidden
        self.accessed: set[str] = set()

    def load_hwc(self, image_id: str) -> np.ndarray:
        if image_id in self.forbidden:
            raise RuntimeError(f"attempted to read held-out image {image_id!r} during training")
        self.accessed.add(image_id)
        img = load_image(self._paths[image_id]).astype(np.float32)
        if img.shape[2] != self.channels:
            if img.shape[2] == 1 and self.channels == 3:
                img = np.repeat(img, 3, axis=2)
            elif img.shape[2] == 3 and self.channels == 1:
                img = to_grayscale(img)
            else:
                raise ShapeMismatch(f"{image_id}: {img.shape[2]} channels, model expects {self.channels}")
        if img.shape[:2] != self.target_hw:
            img = resize(img, *self.target_hw)
        return img

    def load_chw(self, image_id: str) -> np.ndarray:
        return np.ascontiguousarray(self.load_hwc(image_id).transpose(2, 0, 1))


def _dropout_seed(seed: int, iteration: int) -> int:
    return (int(seed) * 0x100000001B3 + iteration) & ((1 << 64) - 1)


def evaluate_batched(spec, params, x, y, batch_size: int = 128, threshold: float = 0.5):
    """Inference-mode loss and accuracy over (N, C, H, W) arrays."""
    losses = []
    correct = 0
    scores = np.empty(len(y), dtype=np.float64)
    for lo in range(0, len(y), batch_size):
        xb = x[lo:lo + batch_size]
        probs, _ = forward(spec, params, xb, mode="infer")
        scores[lo:lo + len(probs)] = probs
    loss = bce_loss(scores, y)
    correct = int(((scores >= threshold).astype(np.int64) == np.asarray(y)).sum())
    return loss, correct / len(y), scores


def _train_loop(
    spec: ModelSpec,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray | None,
    y_val: np.ndarray | None,
    cfg: TrainConfig,
    params: Parameters,
    state: AdamState,
    start_epoch: int = 0,
    global_iter: int = 0,
    best_val_loss: float | None = None,
    log: TrainLog | None = None,
    log_writer=None,
    on_epoch_end=None,
    on_best=None,
):
    log = log if log is not None else TrainLog()
    n = len(y_train)
    window_losses: list[float] = []

    def validate(epoch: int) -> ValPoint:
        vloss, vacc, _ = evaluate_batched(spec, params, x_val, y_val, cfg.batch_size)
        train_loss = float(np.mean(window_losses)) if window_losses else float("nan")
        return ValPoint(epoch, global_iter, vloss, vacc, train_loss)

    def record_val(point: ValPoint):
        nonlocal best_val_loss
        log.val_points.append(point)
        window_losses.clear()
        if log_writer:
            log_writer("val", point.epoch, point.iteration, point.loss, point.accuracy, "")
        if best_val_loss is None or point.loss < best_val_loss:
            best_val_loss = point.loss
            if on_best:
                on_best(point, params, state)

    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.monotonic()
        perm = rng.stream(cfg.seed, rng.SHUFFLE, epoch).permutation(n)
        epoch_losses: list[float] = []
        correct = 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            global_iter += 1
            try:
                probs, cache = forward(spec, params, xb, mode="train",
                                       rng_seed=_dropout_seed(cfg.seed, global_iter))
                loss = bce_loss(probs, yb)
                if not math.isfinite(loss):
                    raise NonFiniteValue("loss is not finite")
                grads = backward(cache, yb)
            except NonFiniteValue as exc:
                raise NonFiniteLoss(f"iteration {global_iter}: {exc}") from exc
            params, state = adam_step(params, grads, state)
            epoch_losses.append(loss)
            window_losses.append(loss)
            correct += int(((probs >= 0.5).astype(np.int64) == yb).sum())
            log.iter_losses.append((epoch, global_iter, loss))
            if log_writer:
                log_writer("iter", epoch, global_iter, loss, "", "")
            if x_val is not None and global_iter % cfg.val_every_iters == 0:
                record_val(validate(epoch))
        seconds = time.monotonic() - t0
        stats = EpochStats(epoch, float(np.mean(epoch_losses)), correct / n, seconds)
        log.epochs.append(stats)
        if log_writer:
            log_writer("epoch", epoch, global_iter, stats.loss, stats.accuracy, seconds)
        if on_epoch_end:
            on_epoch_end(epoch, params, state, global_iter, best_val_loss, seconds)

    if (x_val is not None and cfg.epochs > start_epoch
            and (not log.val_points or log.val_points[-1].iteration != global_iter)):
        record_val(validate(cfg.epochs - 1))
    return params, state, log, best_val_loss, global_iter


def build_training_arrays(manifest: DatasetManifest, spec: ModelSpec, cfg: TrainConfig):
    """Materialize train/val batches from the manifest, including the
    oversampling plan for the training split when balancing is on."""
    train_ids = manifest.ids_in_split("train")
    val_ids = manifest.ids_in_split("val")
    if not train_ids:
        raise EmptySplit("manifest has no training images")
    if not val_ids:
        raise EmptySplit("manifest has no validation images")
    test_ids = frozenset(manifest.ids_in_split("test"))
    loader = ImageLoader(manifest, spec.input_hw, spec.in_channels, forbidden=test_ids)

    labels = {r.image_id: int(r.label) for r in manifest.records}
    x_train = [loader.load_chw(i) for i in train_ids]
    y_train = [labels[i] for i in train_ids]
    if cfg.balance:
        plan = balance(manifest, cfg.augment, cfg.seed)
        if cfg.output_dir:
            os.makedirs(cfg.output_dir, exist_ok=True)
            write_plan(plan, os.path.join(cfg.output_dir, "balance_plan.csv"))
        if plan:
            sources = {sid for sid, _ in plan}
            hwc = {sid: loader.load_hwc(sid) for sid in sorted(sources)}
            rendered = render_plan(hwc, cfg.augment, cfg.seed, plan, threads=cfg.threads)
            x_train.extend(np.ascontiguousarray(img.transpose(2, 0, 1)) for img in rendered)
            y_train.extend(labels[sid] for sid, _ in plan)
    x_val = np.stack([loader.load_chw(i) for i in val_ids])
    y_val = np.asarray([labels[i] for i in val_ids], dtype=np.int64)
    return np.stack(x_train), np.asarray(y_train, dtype=np.int64), x_val, y_val, loader


def run_training(
    cfg: TrainConfig,
    spec: ModelSpec | None = None,
    resume_from: str | os.PathLike | None = None,
    epoch_callback=None,
) -> TrainResult:
    """Train per the config; writes per-epoch checkpoints, best.ckpt, and a
    streamed CSV log when an output directory is configured."""
    if cfg.manifest_path is None:
        raise DataError("manifest_path is required")
    manifest = read_manifest(cfg.manifest_path, cfg.data_dir)

    start_epoch, global_iter, best_val_loss = 0, 0, None
    params = state = None
    if resume_from is not None:
        spec, params, state, epoch, extra = load_checkpoint(resume_from)
        start_epoch = epoch + 1
        global_iter = int(extra.get("global_iter", 0))
        best_val_loss = extra.get("best_val_loss")
    elif spec is None:
        if cfg.spec_path:
            with open(cfg.spec_path, "r", encoding="utf-8") as fh:
                spec = parse_spec(fh.read())
        else:
            spec = default_spec()
    if params is None:
        params = init_params(spec, cfg.seed)
        state = init_adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    x_train, y_train, x_val, y_val, loader = build_training_arrays(manifest, spec, cfg)

    out_dir = cfg.output_dir
    log_fh = None
    log_writer = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "train_log.csv"), "a" if resume_from else "w",
                      encoding="utf-8", newline="\n")
        if not resume_from:
            log_fh.write("kind,epoch,iter,loss,acc,seconds\n")

        def log_writer(kind, epoch, iteration, loss, acc, seconds):
            log_fh.write(f"{kind},{epoch},{iteration},{loss},{acc},{seconds}\n")

    def on_epoch_end(epoch, p, s, g_iter, best, seconds):
        if out_dir:
            extra = {"global_iter": g_iter, "best_val_loss": best}
            save_checkpoint(os.path.join(out_dir, f"epoch_{epoch:04d}.ckpt"),
                            spec, p, s, epoch, cfg.seed, extra)
        if epoch_callback:
            epoch_callback(epoch, seconds)

    def on_best(point, p, s):
        if out_dir:
            extra = {"global_iter": point.iteration, "best_val_loss": point.loss}
            save_checkpoint(os.path.join(out_dir, "best.ckpt"), spec, p, s, point.epoch, cfg.seed, extra)

    try:
        params, state, log, best_val_loss, global_iter = _train_loop(
            spec, x_train, y_train, x_val, y_val, cfg, params, state,
            start_epoch=start_epoch, global_iter=global_iter, best_val_loss=best_val_loss,
            log_writer=log_writer, on_epoch_end=on_epoch_end, on_best=on_best,
        )
    finally:
        if log_fh:
            log_fh.close()
    assert not (loader.accessed & loader.forbidden), "test-split images were read during training"
    return TrainResult(spec=spec, params=params, state=state, log=log,
                       best_val_loss=best_val_loss, output_dir=out_dir)


def overfit_report(log: TrainLog) -> OverfitReport:
    """Locate the best validation point and flag sustained deterioration.

    The flag fires when validation loss sits above its running minimum for
    at least 10 consecutive validation points while the smoothed training
    loss fell over the same stretch.
    """
    points = log.val_points
    if len(points) < 2:
        raise InsufficientLog(f"need >= 2 validation points, have {len(points)}")
    best = min(points, key=lambda p: p.loss)
    final_gap = 0.0
    if log.epochs:
        final_gap = log.epochs[-1].accuracy - points[-1].accuracy

    overfitting = False
    running_min = points[0].loss
    run_start: int | None = None
    for i in range(1, len(points)):
        if points[i].loss > running_min:
            if run_start is None:
                run_start = i
            run_len = i - run_start + 1
            ref = points[run_start - 1].train_loss
            if run_len >= 10 and math.isfinite(ref) and points[i].train_loss < ref:
                overfitting = True
        else:
            running_min = points[i].loss
            run_start = None
    return OverfitReport(
        best_epoch=best.epoch,
        best_iteration=best.iteration,
        best_val_loss=best.loss,
        final_accuracy_gap=final_gap,
        overfitting=overfitting,
    )


def score_manifest_split(spec, params, manifest_path, data_dir, split: str, batch_size: int = 128):
    """Deterministic inference over one split: (ids, scores, labels)."""
    manifest = read_manifest(manifest_path, data_dir)
    ids = manifest.ids_in_split(split)
    if not ids:
        raise EmptySplit(f"manifest has no images in split {split!r}")
    loader = ImageLoader(manifest, spec.input_hw, spec.in_channels)
    labels = {r.image_id: int(r.label) for r in manifest.records}
    x = np.stack([loader.load_chw(i) for i in ids])
    y = np.asarray([labels[i] for i in ids], dtype=np.int64)
    scores = np.empty(len(ids), dtype=np.float64)
    for lo in range(0, len(ids), batch_size):
        probs, _ = forward(spec, params, x[lo:lo + batch_size], mode="infer")
        scores[lo:lo + len(probs)] = probs
    return ids, scores, y


_CONFIG_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_train_config(text: str, base_dir: str = "") -> TrainConfig:
    """key=value lines mirroring TrainConfig fields; '#' starts a comment."""
    ints = {"batch_size", "epochs", "val_every_iters", "seed", "threads"}
    floats = {"lr", "beta1", "beta2", "eps"}
    paths = {"spec_path", "manifest_path", "data_dir", "output_dir"}
    values: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {line_no}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in ints:
            values[key] = int(value)
        elif key in floats:
            values[key] = float(value)
        elif key in paths:
            values[key] = os.path.join(base_dir, value) if base_dir and not os.path.isabs(value) else value
        elif key == "balance":
            values[key] = _CONFIG_BOOL[value.lower()]
        else:
            raise DataError(f"config line {line_no}: unknown key {key!r}")
    return TrainConfig(**values)
