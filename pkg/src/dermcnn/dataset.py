"""HAM10000-style metadata ingestion, binary labels, quality filtering, and
stratified train/val/test splitting.

Label rule: ``nv`` is benign (0), ``mel`` is malignant (1), every other
diagnosis code is undetermined and excluded from splits.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import rng
from .errors import (
    DuplicateImageId,
    EmptyClass,
    EmptyInput,
    FractionsDoNotSumToOne,
    MissingColumn,
)
from .image import check_image
from .preprocess import PreprocessConfig, detect_reflection, to_grayscale

REQUIRED_COLUMNS = ("image_id", "lesion_id", "dx")
SPLIT_NAMES = ("train", "val", "test")


class Label(IntEnum):
    BENIGN = 0
    MALIGNANT = 1
    UNDETERMINED = -1


@dataclass
class SampleRecord:
    image_id: str
    lesion_id: str
    diagnosis_code: str
    label: Label
    image_path: str


@dataclass
class SplitConfig:
    train_frac: float = 0.7
    val_frac: float = 0.2
    test_frac: float = 0.1
    seed: int = 0

    def fractions(self) -> tuple[float, float, float]:
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise FractionsDoNotSumToOne(f"fractions must lie in (0,1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise FractionsDoNotSumToOne(f"fractions sum to {sum(fracs)!r}, expected 1")
        return fracs


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    split_of: dict[str, str] = field(default_factory=dict)

    def labeled(self) -> list[SampleRecord]:
        return [r for r in self.records if r.label != Label.UNDETERMINED]

    def ids_in_split(self, split: str) -> list[str]:
        return [r.image_id for r in self.records if self.split_of.get(r.image_id) == split]

    def by_id(self, image_id: str) -> SampleRecord:
        for r in self.records:
            if r.image_id == image_id:
                return r
        raise KeyError(image_id)


@dataclass
class QualityThresholds:
    min_sharpness: float = 1e-4
    min_contrast: float = 0.05
    max_artifact_fraction: float | None = None
    reflection: PreprocessConfig | None = None


@dataclass
class QualityReport:
    image_id: str
    kept: bool
    reject_reason: str  # none | low_contrast | blurry | artifact_heavy
    sharpness_score: float
    contrast_score: float


def encode_label(diagnosis_code: str) -> Label:
    code = diagnosis_code.strip().lower()
    if code == "nv":
        return Label.BENIGN
    if code == "mel":
        return Label.MALIGNANT
    return Label.UNDETERMINED


def parse_metadata(csv_text: str, image_dir: str | os.PathLike) -> list[SampleRecord]:
    """Parse a HAM10000 metadata CSV into records with encoded labels."""
    reader = csv.DictReader(io.StringIO(csv_text))
    if reader.fieldnames is None:
        raise EmptyInput("metadata CSV has no header row")
    for col in REQUIRED_COLUMNS:
        if col not in reader.fieldnames:
            raise MissingColumn(f"metadata CSV is missing column {col!r}")
    records: list[SampleRecord] = []
    seen: set[str] = set()
    for row in reader:
        image_id = row["image_id"].strip()
        if image_id in seen:
            raise DuplicateImageId(f"image_id {image_id!r} appears more than once")
        seen.add(image_id)
        dx = row["dx"].strip()
        records.append(
            SampleRecord(
                image_id=image_id,
                lesion_id=row["lesion_id"].strip(),
                diagnosis_code=dx,
                label=encode_label(dx),
                image_path=os.path.join(os.fspath(image_dir), image_id + ".jpg"),
            )
        )
    if not records:
        raise EmptyInput("metadata CSV has a header but no data rows")
    return records


def laplacian_variance(gray2d: np.ndarray) -> float:
    """Variance of the 4-neighbor discrete Laplacian, borders edge-replicated."""
    p = np.pad(gray2d, 1, mode="edge")
    lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * gray2d
    return float(lap.var())


def quality_filter(
    image: np.ndarray,
    thresholds: QualityThresholds | None = None,
    image_id: str = "",
) -> QualityReport:
    """Score one image and decide keep/reject.

    Sharpness is the Laplacian variance of the grayscale image; contrast is
    the q99-q1 intensity range.  Checks run in order: contrast, blur, then
    (when configured) reflection-artifact coverage.
    """
    thresholds = thresholds or QualityThresholds()
    image = check_image(image)
    gray = to_grayscale(image)
    g2 = gray[:, :, 0].astype(np.float64)
    sharpness = laplacian_variance(g2)
    q1, q99 = np.quantile(g2, [0.01, 0.99])
    contrast = float(q99 - q1)

    reason = "none"
    if contrast < thresholds.min_contrast:
        reason = "low_contrast"
    elif sharpness < thresholds.min_sharpness:
        reason = "blurry"
    elif thresholds.max_artifact_fraction is not None:
        mask = detect_reflection(gray, thresholds.reflection or PreprocessConfig())
        if mask.mean() > thresholds.max_artifact_fraction:
            reason = "artifact_heavy"
    return QualityReport(
        image_id=image_id,
        kept=reason == "none",
        reject_reason=reason,
        sharpness_score=sharpness,
        contrast_score=contrast,
    )


def _largest_remainder(exact: list[float]) -> list[int]:
    # floor each share, then hand out leftovers by descending fractional
    # part; ties go to the earlier split (train < val < test)
    base = [math.floor(e) for e in exact]
    leftovers = round(sum(exact)) - sum(base)
    order = sorted(range(len(exact)), key=lambda s: (-(exact[s] - base[s]), s))
    for s in order[:leftovers]:
        base[s] += 1
    return base


def split(manifest: DatasetManifest, cfg: SplitConfig) -> DatasetManifest:
    """Assign every benign/malignant record to train/val/test, stratified.

    Per-class counts use floor-then-distribute-remainder: remainders go to
    the splits with the largest fractional parts, constrained so per-split
    totals match the same rule applied to the whole labeled set; classes are
    processed in label order (benign before malignant).
    """
    fracs = cfg.fractions()
    by_class: dict[Label, list[str]] = {Label.BENIGN: [], Label.MALIGNANT: []}
    for record in manifest.records:
        if record.label != Label.UNDETERMINED:
            by_class[record.label].append(record.image_id)
    for label, ids in by_class.items():
        if not ids:
            raise EmptyClass(f"no {label.name.lower()} samples to split")

    total = sum(len(ids) for ids in by_class.values())
    split_targets = _largest_remainder([f * total for f in fracs])

    counts: dict[Label, list[int]] = {}
    deficits = list(split_targets)
    for label in sorted(by_class):
        exact = [f * len(by_class[label]) for f in fracs]
        base = [math.floor(e) for e in exact]
        counts[label] = base
        for s in range(3):
            deficits[s] -= base[s]
    for label in sorted(by_class):
        exact = [f * len(by_class[label]) for f in fracs]
        base = counts[label]
        extras = len(by_class[label]) - sum(base)
        preference = sorted(range(3), key=lambda s: (-(exact[s] - math.floor(exact[s])), s))
        for _ in range(extras):
            for s in preference:
                if deficits[s] > 0:
                    base[s] += 1
                    deficits[s] -= 1
                    break

    split_of: dict[str, str] = {}
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        gen = rng.stream(cfg.seed, rng.SPLIT, int(label))
        perm = gen.permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        start = 0
        for s, name in enumerate(SPLIT_NAMES):
            for image_id in shuffled[start:start + counts[label][s]]:
                split_of[image_id] = name
            start += counts[label][s]
    return DatasetManifest(records=list(manifest.records), split_of=split_of)


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """Write line-delimited records: image_id,lesion_id,dx,label,split."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in manifest.records:
            split_name = manifest.split_of.get(r.image_id, "-")
            fh.write(f"{r.image_id},{r.lesion_id},{r.diagnosis_code},{int(r.label)},{split_name}\n")


def read_manifest(path: str | os.PathLike, data_dir: str | os.PathLike = "") -> DatasetManifest:
    from .image import resolve_image_path

    records: list[SampleRecord] = []
    split_of: dict[str, str] = {}
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise EmptyInput(f"malformed manifest line: {line!r}")
            image_id, lesion_id, dx, label_str, split_name = parts
            if image_id in seen:
                raise DuplicateImageId(f"image_id {image_id!r} appears more than once")
            seen.add(image_id)
            records.append(
                SampleRecord(
                    image_id=image_id,
                    lesion_id=lesion_id,
                    diagnosis_code=dx,
                    label=Label(int(label_str)),
                    image_path=resolve_image_path(data_dir, image_id) if data_dir else image_id + ".jpg",
                )
            )
            if split_name in SPLIT_NAMES:
                split_of[image_id] = split_name
    if not records:
        raise EmptyInput(f"manifest {path} has no records")
    return DatasetManifest(records=records, split_of=split_of)


def read_exclusion_list(path: str | os.PathLike) -> set[str]:
    """One image_id per line; blank lines and '#' comments ignored."""
    excluded: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                excluded.add(line)
    return excluded


def apply_exclusions(manifest: DatasetManifest, excluded: set[str]) -> DatasetManifest:
    records = [r for r in manifest.records if r.image_id not in excluded]
    split_of = {k: v for k, v in manifest.split_of.items() if k not in excluded}
    return DatasetManifest(records=records, split_of=split_of)
