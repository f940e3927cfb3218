"""Binary-classification evaluation: confusion counts, precision/recall/F1/
accuracy, ROC with AUC, and the epoch-timing benchmark.

AUC is computed by trapezoid over the tie-grouped ROC curve, which equals
the Mann-Whitney statistic (fraction of positive/negative pairs correctly
ordered, ties counted half); debug builds cross-assert both.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyInput, EmptyMatrix, LabelNotBinary, LengthMismatch, SingleClass


@dataclass
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    degenerate_flags: set[str] = field(default_factory=set)


@dataclass
class RocCurve:
    points: list[tuple[float, float]]     # (fpr, tpr), threshold descending
    thresholds: list[float]
    auc: float


@dataclass
class TimingReport:
    seconds_per_epoch: list[float]
    total_minutes: float
    hardware_note: str = ""


def _check_scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size != y.size:
        raise LengthMismatch(f"{s.size} scores vs {y.size} labels")
    if s.size == 0:
        raise EmptyInput("no samples to evaluate")
    if not np.isin(y, (0, 1)).all():
        raise LabelNotBinary(f"labels must be 0/1, got {np.unique(y)[:5]}")
    return s, y.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Tally predictions (positive iff score >= threshold) against labels."""
    s, y = _check_scores_labels(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Precision, recall, F1, accuracy; zero denominators yield 0.0 plus a flag."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    flags: set[str] = set()
    if cm.tp + cm.fp == 0:
        precision = 0.0
        flags.add("PrecisionUndefined")
    else:
        precision = cm.tp / (cm.tp + cm.fp)
    if cm.tp + cm.fn == 0:
        recall = 0.0
        flags.add("RecallUndefined")
    else:
        recall = cm.tp / (cm.tp + cm.fn)
    f1 = 2 * cm.tp / (2 * cm.tp + cm.fp + cm.fn) if (2 * cm.tp + cm.fp + cm.fn) else 0.0
    accuracy = (cm.tp + cm.tn) / cm.total
    return MetricsReport(precision=precision, recall=recall, f1=f1, accuracy=accuracy, degenerate_flags=flags)


def _rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    # Mann-Whitney via midranks: ties between classes get half credit
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_auc(scores, labels) -> RocCurve:
    """ROC swept over unique scores descending, trapezoid AUC."""
    s, y = _check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both a positive and a negative sample")
    order = np.argsort(-s, kind="stable")
    s_desc, y_desc = s[order], y[order]
    uniq_mask = np.append(s_desc[1:] != s_desc[:-1], True)  # last index of each tie group
    tp_cum = np.cumsum(y_desc)[uniq_mask]
    fp_cum = np.cumsum(1 - y_desc)[uniq_mask]
    tpr = np.concatenate(([0.0], tp_cum / n_pos))
    fpr = np.concatenate(([0.0], fp_cum / n_neg))
    thresholds = [float("inf")] + list(s_desc[uniq_mask])
    auc = float(np.trapezoid(tpr, fpr))
    if __debug__:
        assert abs(auc - _rank_auc(s, y)) < 1e-9, "trapezoid and rank AUC diverged"
    return RocCurve(points=list(zip(fpr.tolist(), tpr.tolist())), thresholds=thresholds, auc=auc)


def format_report(name: str, cm: ConfusionMatrix, report: MetricsReport, roc: RocCurve | None) -> str:
    """Text table mirroring the usual comparison layout, plus a machine block."""
    auc_text = f"{roc.auc * 100:.2f}" if roc is not None else "n/a"
    lines = [
        f"{'Model':<24}{'Precision':>10}{'Recall':>10}{'F1 score':>10}{'Accuracy':>10}{'AUC':>10}",
        f"{name:<24}{report.precision * 100:>10.2f}{report.recall * 100:>10.2f}"
        f"{report.f1 * 100:>10.2f}{report.accuracy * 100:>10.2f}{auc_text:>10}",
        "",
        f"tp={cm.tp}",
        f"tn={cm.tn}",
        f"fp={cm.fp}",
        f"fn={cm.fn}",
        f"precision={report.precision:.6f}",
        f"recall={report.recall:.6f}",
        f"f1={report.f1:.6f}",
        f"accuracy={report.accuracy:.6f}",
        f"auc={roc.auc:.6f}" if roc is not None else "auc=n/a",
    ]
    if report.degenerate_flags:
        lines.append("flags=" + ",".join(sorted(report.degenerate_flags)))
    return "\n".join(lines) + "\n"


def write_roc_csv(roc: RocCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("threshold,fpr,tpr\n")
        for threshold, (fpr, tpr) in zip(roc.thresholds, roc.points):
            fh.write(f"{threshold},{fpr},{tpr}\n")


def evaluate(checkpoint_path, manifest_path, data_dir, split: str = "test", batch_size: int = 128):
    """Score one split of a manifest with a saved model.

    Returns (confusion matrix, metrics report, roc curve or None, scores,
    labels, image ids); the ROC is None when the split has a single class.
    """
    from .nn.checkpoint import load_checkpoint
    from .train import score_manifest_split

    spec, params, _, _, _ = load_checkpoint(checkpoint_path)
    ids, scores, labels = score_manifest_split(spec, params, manifest_path, data_dir, split, batch_size)
    cm = confusion(scores, labels)
    report = metrics(cm)
    try:
        roc = roc_auc(scores, labels)
    except SingleClass:
        roc = None
    return cm, report, roc, scores, labels, ids


def benchmark_epoch(spec, cfg, n_epochs: int, hardware_note: str = "") -> TimingReport:
    """Time n_epochs full training epochs after one untimed warmup epoch.

    The warmup epoch absorbs dataset decode and cache effects; the monotonic
    clock times each subsequent epoch.
    """
    from .train import run_training

    if n_epochs < 1:
        raise EmptyInput("n_epochs must be >= 1")
    started = time.monotonic()
    durations: list[float] = []

    def on_epoch(epoch: int, seconds: float) -> None:
        if epoch >= 1:  # epoch 0 is warmup
            durations.append(seconds)

    cfg = replace(cfg, epochs=n_epochs + 1)
    run_training(cfg, spec=spec, epoch_callback=on_epoch)
    total_minutes = (time.monotonic() - started) / 60.0
    return TimingReport(seconds_per_epoch=durations, total_minutes=total_minutes, hardware_note=hardware_note)
