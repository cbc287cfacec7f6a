"""Image manifests, patient-disjoint splits, per-epoch undersampling and statistics.

Manifest file (comma-delimited, header row)::

    patient_id,image_path,label[,split]

``label`` is a ClassLabel name or code; the optional ``split`` column
holds ``train`` or ``test``. Video list file::

    video_id,duration_s,fps,frame_count
"""

import csv
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .core import ClassLabel
from .errors import DataError, EmptyDataset, EmptySequence

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("patient_id", "image_path", "label")
VIDEO_FIELDS = ("video_id", "duration_s", "fps", "frame_count")
DEFAULT_CAP = 500


@dataclass(frozen=True)
class ImageEntry:
    patient_id: str
    image_path: str
    label: ClassLabel
    split: str = ""

    def __post_init__(self):
        if not self.patient_id or not self.image_path:
            raise DataError("image entries need a non-empty patient_id and image_path")
        object.__setattr__(self, "label", ClassLabel.parse(self.label))


class DatasetManifest(tuple):
    """Ordered, immutable collection of ImageEntry with unique paths."""

    def __new__(cls, entries=()):
        entries = tuple(entries)
        seen = set()
        for e in entries:
            if e.image_path in seen:
                raise DataError(f"duplicate image_path in manifest: {e.image_path}")
            seen.add(e.image_path)
        return super().__new__(cls, entries)

    def __add__(self, other):
        return DatasetManifest(tuple(self) + tuple(other))

    def patients(self):
        return {e.patient_id for e in self}

    def with_split(self, name):
        return DatasetManifest(e for e in self if e.split == name)


def read_manifest(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [f for f in MANIFEST_FIELDS if f not in (reader.fieldnames or [])]
            if missing:
                raise DataError(f"{path}: manifest header lacks {', '.join(missing)}")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for lineno, row in enumerate(rows, start=2):
        try:
            entries.append(ImageEntry(row["patient_id"].strip(), row["image_path"].strip(),
                                      row["label"], (row.get("split") or "").strip()))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return DatasetManifest(entries)


def write_manifest(manifest, path):
    with_split = any(e.split for e in manifest)
    fields = MANIFEST_FIELDS + (("split",) if with_split else ())
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for e in manifest:
            row = [e.patient_id, e.image_path, e.label.name]
            w.writerow(row + [e.split] if with_split else row)


@dataclass
class SplitResult:
    train: DatasetManifest
    val: DatasetManifest
    achieved_fraction: float
    warnings: list = field(default_factory=list)


def patient_disjoint_split(manifest, train_fraction=0.8, seed=0):
    """Split by patient so that train holds about ``train_fraction`` of the images.

    Patients are visited largest first (ties in seeded random order) and
    each goes to whichever side is further below its image-count target;
    exact ties go to train. The fraction actually reached is reported.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if len(manifest) == 0:
        raise EmptyDataset("cannot split an empty manifest")
    counts = {}
    for e in manifest:
        counts[e.patient_id] = counts.get(e.patient_id, 0) + 1
    rng = np.random.default_rng(seed)
    patients = sorted(counts)
    shuffled = [patients[i] for i in rng.permutation(len(patients))]
    order = sorted(shuffled, key=lambda p: -counts[p])  # stable: keeps shuffle among equals

    total = len(manifest)
    target_train = train_fraction * total
    target_val = total - target_train
    n_train = n_val = 0
    train_patients = set()
    for p in order:
        if target_train - n_train >= target_val - n_val:
            train_patients.add(p)
            n_train += counts[p]
        else:
            n_val += counts[p]

    train = DatasetManifest(e for e in manifest if e.patient_id in train_patients)
    val = DatasetManifest(e for e in manifest if e.patient_id not in train_patients)
    warnings = []
    if len(val) == 0:
        warnings.append("validation split is empty (too few patients)")
    if len(train) == 0:
        warnings.append("training split is empty (too few patients)")
    for w in warnings:
        log.warning(w)
    return SplitResult(train, val, len(train) / total, warnings)


def epoch_undersample(train, epoch, seed=0, cap=DEFAULT_CAP):
    """Keep every brain image and a fresh random subset of at most ``cap`` NotABrain images.

    The subset depends only on (seed, epoch). Entry order is preserved.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    majority = [i for i, e in enumerate(train) if e.label is ClassLabel.NotABrain]
    rng = np.random.default_rng([int(seed), int(epoch)])
    k = min(cap, len(majority))
    keep = set(np.asarray(majority)[rng.choice(len(majority), size=k, replace=False)].tolist()) if k else set()
    return DatasetManifest(e for i, e in enumerate(train)
                           if e.label is not ClassLabel.NotABrain or i in keep)


def manifest_stats(manifest):
    """Image, patient and train-image counts per class plus brain and overall totals."""
    rows = {label.name: {"images": 0, "patients": set(), "train_images": 0} for label in ClassLabel}
    rows["FetalBrain"] = {"images": 0, "patients": set(), "train_images": 0}
    rows["Total"] = {"images": 0, "patients": set(), "train_images": 0}
    for e in manifest:
        keys = [e.label.name, "Total"] + (["FetalBrain"] if e.label.is_brain else [])
        for k in keys:
            rows[k]["images"] += 1
            rows[k]["patients"].add(e.patient_id)
            if e.split == "train":
                rows[k]["train_images"] += 1
    return {k: {"images": v["images"], "patients": len(v["patients"]),
                "train_images": v["train_images"]} for k, v in rows.items()}


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    duration: float
    fps: float
    frame_count: int

    def __post_init__(self):
        if self.duration <= 0 or self.fps <= 0:
            raise DataError(f"video {self.video_id}: duration and fps must be positive")
        if abs(self.frame_count - self.duration * self.fps) > self.fps:
            raise DataError(f"video {self.video_id}: frame_count {self.frame_count} inconsistent "
                            f"with {self.duration} s at {self.fps} fps")


def read_video_list(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [f for f in VIDEO_FIELDS if f not in (reader.fieldnames or [])]
            if missing:
                raise DataError(f"{path}: video list header lacks {', '.join(missing)}")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read video list {path}: {exc}") from exc
    try:
        return [VideoEntry(r["video_id"], float(r["duration_s"]), float(r["fps"]),
                           int(r["frame_count"])) for r in rows]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_video_list(videos, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VIDEO_FIELDS)
        for v in videos:
            w.writerow([v.video_id, repr(v.duration), repr(v.fps), v.frame_count])


def _moments(values):
    a = np.asarray(values, dtype=np.float64)
    return {"min": float(a.min()), "max": float(a.max()),
            "mean": float(a.mean()), "std": float(a.std())}


def video_stats(videos):
    """Population min/max/mean/std of duration and fps."""
    if not videos:
        raise EmptySequence("video_stats needs at least one video")
    return {"count": len(videos),
            "duration": _moments([v.duration for v in videos]),
            "fps": _moments([v.fps for v in videos])}


def round_stats(stats, digits=2):
    if isinstance(stats, dict):
        return {k: round_stats(v, digits) for k, v in stats.items()}
    if isinstance(stats, float):
        return round(stats, digits)
    return stats


def fixture_path(name):
    """Path of a bundled fixture: ``table1_manifest.csv`` or ``table2_videos.csv``."""
    return Path(str(resources.files("fetalkey") / "data" / name))
