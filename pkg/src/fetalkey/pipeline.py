"""End-to-end orchestration: frames -> classifier -> quality metric / GRU -> keyframes."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import __version__, gru
from .classifier import classify_batch, load_model
from .core import FEATURE_DIM, N_CLASSES, ClassLabel, Frame
from .errors import (DataError, EmptySequence, FormatVersionMismatch, InconsistentDimensions,
                     ModelError, NoFrames, UnreadableFile)
from .quality import (DEFAULT_WINDOW, QualitySeries, compute_quality_series,
                      quality_from_probabilities)
from .transforms import default_tta_catalogue, load_catalogue

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm", ".gif"}
RECORDS_VERSION = 1
REPORT_VERSION = 1
PAIRS_MAGIC = "fetalkey-pairs"
PAIRS_VERSION = 1


@dataclass
class PipelineConfig:
    model: str = None
    metric_input: str = None
    tta_catalogue: str = None
    window: int = DEFAULT_WINDOW
    gru_weights: str = None
    min_quality: float = 0.5
    nms_radius: int = 5
    top_k: int = 10
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.window < 0:
            raise ValueError("window must be non-negative")
        if self.nms_radius < 0:
            raise ValueError("nms_radius must be non-negative")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if not 0.0 <= self.min_quality <= 1.0:
            raise ValueError("min_quality must lie in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def require_input(self):
        if self.model is None and self.metric_input is None:
            raise ValueError("either a model or a metric-only input file is required")

    @classmethod
    def from_file(cls, path, **overrides):
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)

    def catalogue(self):
        return load_catalogue(self.tta_catalogue) if self.tta_catalogue else default_tta_catalogue()

    def echo(self):
        """Config as reported in outputs; worker count is left out so reports do not depend on it."""
        d = asdict(self)
        d.pop("workers")
        return d


# -- frames ----------------------------------------------------------------

def _to_gray(img, path):
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        return arr / (65535.0 if img.mode.startswith("I;16") else max(arr.max(), 1.0))
    if img.mode == "F":
        return np.asarray(img, dtype=np.float64)
    if img.mode != "L":
        img = img.convert("L")  # ITU-R 601 luma weighting
    return np.asarray(img, dtype=np.float64) / 255.0


def ingest_frames(source):
    """Load every image in ``source`` (sorted by file name) as a grayscale Frame."""
    source = Path(source)
    if not source.is_dir():
        raise NoFrames(f"frame directory not found: {source}")
    files = sorted(p for p in source.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise NoFrames(f"no image files in {source}")
    frames = []
    shape = None
    for path in files:
        try:
            with Image.open(path) as img:
                px = _to_gray(img, path)
        except (OSError, UnidentifiedImageError) as exc:
            raise UnreadableFile(path, str(exc)) from exc
        if shape is None:
            shape = px.shape
        elif px.shape != shape:
            raise InconsistentDimensions(
                f"{path.name} is {px.shape[1]}x{px.shape[0]}, expected {shape[1]}x{shape[0]}")
        frames.append(Frame(np.clip(px, 0.0, 1.0)))
    return frames


def save_frames(frames, directory, prefix="frame"):
    """Write frames as 8-bit PNGs (used by demos and tests)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(frames))))
    for i, f in enumerate(frames):
        img = Image.fromarray(np.round(f.pixels * 255).astype(np.uint8), mode="L")
        img.save(directory / f"{prefix}_{i:0{width}d}.png")
    return directory


# -- records -----------------------------------------------------------------

def frame_records(series, gru_quality=None):
    """One dict per frame, in the published record layout."""
    records = []
    probs = series.identity_probs
    for i in range(len(series)):
        rec = {"frame_index": i}
        if probs is not None:
            rec.update({f"p{k}": float(probs[i, k]) for k in range(N_CLASSES)})
        rec.update({f"v{k}": float(series.aggregated[i, k]) for k in range(N_CLASSES)})
        rec["stable"] = bool(series.stable_in_original[i])
        rec["quality"] = float(series.quality[i])
        rec["selected_class"] = ClassLabel(int(series.selected_class[i])).name
        if gru_quality is not None:
            rec["gru_quality"] = float(gru_quality[i])
        records.append(rec)
    return records


def write_records(records, stream):
    for rec in records:
        stream.write(json.dumps(rec) + "\n")


def read_jsonl(path):
    out = []
    try:
        with Path(path).open() as fh:
            for lineno, line in enumerate(fh, start=1):
                if line.strip():
                    try:
                        out.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return out


def probabilities_from_records(records):
    """Assemble ``(T, n, 5)`` probabilities from metric-only input records."""
    if not records:
        raise EmptySequence("metric-only input has no records")
    try:
        f_idx = np.fromiter((r["frame_index"] for r in records), dtype=np.int64, count=len(records))
        t_idx = np.fromiter((r["transform_index"] for r in records), dtype=np.int64, count=len(records))
        p = np.array([[r["p0"], r["p1"], r["p2"], r["p3"], r["p4"]] for r in records], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"metric-only record missing or malformed field: {exc}") from exc
    if f_idx.min() < 0 or t_idx.min() < 0:
        raise DataError("frame_index and transform_index must be non-negative")
    n, T = int(f_idx.max()) + 1, int(t_idx.max()) + 1
    if len(records) != n * T:
        raise DataError(f"expected {n * T} records for {n} frames x {T} transforms, got {len(records)}")
    out = np.full((T, n, N_CLASSES), np.nan)
    out[t_idx, f_idx] = p
    if np.isnan(out).any():
        raise DataError("metric-only input has duplicate or missing (frame, transform) records")
    return out


def load_metric_input(path, window):
    return quality_from_probabilities(probabilities_from_records(read_jsonl(path)), window)


# -- stages ------------------------------------------------------------------

def _handle(config, handle):
    if handle is not None:
        return handle
    if config.model is None:
        raise ModelError("no classifier model configured")
    return load_model(config.model)


def run_metric(config, frames=None, handle=None, out_stream=None):
    """Quality series for one video, from frames (with a classifier) or from metric-only input."""
    if frames is None:
        if config.metric_input is None:
            raise DataError("run_metric needs frames or a metric-only input file")
        series = load_metric_input(config.metric_input, config.window)
    else:
        series = compute_quality_series(frames, _handle(config, handle), config.catalogue(),
                                        config.window, workers=config.workers)
    if out_stream is not None:
        write_records(frame_records(series), out_stream)
    return series


def load_gru(config, model=None):
    if model is not None:
        return model
    if not config.gru_weights:
        raise ModelError("GRU scoring needs a weights file (--weights)")
    return gru.load_weights(config.gru_weights)


def run_gru_scoring(config, frames, handle=None, model=None):
    """Score frames with the recurrent head: one untransformed classifier pass, then GRU inference."""
    net = load_gru(config, model)
    _, features = classify_batch(_handle(config, handle), frames)
    return gru.forward(net, features, mode="inference")


def build_training_pairs(config, videos, handle=None):
    """(features, quality targets) per video; ``videos`` holds frame lists or frame directories."""
    handle = _handle(config, handle)
    pairs = []
    for video in videos:
        frames = ingest_frames(video) if isinstance(video, (str, Path)) else video
        series = compute_quality_series(frames, handle, config.catalogue(), config.window,
                                        workers=config.workers)
        pairs.append((series.identity_features, series.quality))
    return pairs


def save_pairs(pairs, path, names=None):
    """Text pairs file: header, then per video a block of feature rows and one target row."""
    names = names or [f"video{i:04d}" for i in range(len(pairs))]
    with Path(path).open("w") as fh:
        fh.write(f"{PAIRS_MAGIC} {PAIRS_VERSION}\n")
        fh.write(f"feature_dim {FEATURE_DIM}\n")
        fh.write(f"videos {len(pairs)}\n")
        for name, (features, targets) in zip(names, pairs):
            features = np.asarray(features, dtype=np.float64)
            fh.write(f"video {name} {len(features)}\n")
            np.savetxt(fh, features, fmt="%.17g")
            fh.write(" ".join(format(float(t), ".17g") for t in targets) + "\n")


def load_pairs(path):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read pairs file {path}: {exc}") from exc
    try:
        magic, version = lines[0].split()
        if magic != PAIRS_MAGIC:
            raise FormatVersionMismatch(f"{path} is not a {PAIRS_MAGIC} file")
        if int(version) != PAIRS_VERSION:
            raise FormatVersionMismatch(f"{path}: pairs version {version}, expected {PAIRS_VERSION}")
        dim = int(lines[1].split()[1])
        count = int(lines[2].split()[1])
        pos = 3
        pairs, names = [], []
        for _ in range(count):
            tag, name, length = lines[pos].split()
            if tag != "video":
                raise DataError(f"{path}: expected a video header at line {pos + 1}")
            length = int(length)
            feats = np.array([row.split() for row in lines[pos + 1:pos + 1 + length]], dtype=np.float64)
            targets = np.array(lines[pos + 1 + length].split(), dtype=np.float64)
            if feats.shape != (length, dim) or targets.shape != (length,):
                raise DataError(f"{path}: block for {name} is malformed")
            pairs.append((feats, targets))
            names.append(name)
            pos += length + 2
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path}: truncated or malformed pairs file ({exc})") from exc
    return pairs, names


# -- keyframe selection ----------------------------------------------------

@dataclass
class Keyframe:
    index: int
    quality: float
    selected_class: str
    source: str


@dataclass
class KeyframeReport:
    keyframes: list
    metadata: dict = field(default_factory=dict)

    def indices(self):
        return [k.index for k in self.keyframes]

    def to_dict(self):
        return {"schema_version": REPORT_VERSION,
                "keyframes": [asdict(k) for k in self.keyframes],
                "metadata": self.metadata}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def local_maxima(q):
    """Indices of strict local maxima; a flat peak reports its first index."""
    q = np.asarray(q, dtype=np.float64)
    n = len(q)
    change = np.flatnonzero(q[1:] != q[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [n])) - 1
    peaks = []
    for s, e in zip(starts, ends):
        left = q[s - 1] if s > 0 else -np.inf
        right = q[e + 1] if e + 1 < n else -np.inf
        if left < q[s] and right < q[s]:
            peaks.append(int(s))
    return peaks


def select_keyframes(quality, selected_class=None, min_quality=0.5, nms_radius=5, top_k=10,
                     source="metric"):
    """Peaks above ``min_quality``, thinned by greedy NMS, at most ``top_k``, sorted by index."""
    if isinstance(quality, QualitySeries):
        selected_class = quality.selected_class if selected_class is None else selected_class
        quality = quality.quality
    q = np.asarray(quality, dtype=np.float64)
    if q.ndim != 1 or len(q) == 0:
        raise EmptySequence("cannot select keyframes from an empty series")
    candidates = [i for i in local_maxima(q) if q[i] >= min_quality]
    candidates.sort(key=lambda i: (-q[i], i))
    kept = []
    for i in candidates:
        if len(kept) >= top_k:
            break
        if all(abs(i - j) > nms_radius for j in kept):
            kept.append(i)
    kept.sort()

    def label(i):
        if selected_class is None:
            return None
        c = selected_class[i]
        return c if isinstance(c, str) else ClassLabel(int(c)).name

    frames = [Keyframe(i, float(q[i]), label(i), source) for i in kept]
    flags = [] if frames else ["no_keyframe_above_min_quality"]
    meta = {"n_frames": len(q), "min_quality": min_quality, "nms_radius": nms_radius,
            "top_k": top_k, "flags": flags}
    return KeyframeReport(frames, meta)


def report_metadata(config, extra=None):
    meta = {"fetalkey_version": __version__, "numpy_version": np.__version__,
            "config": config.echo()}
    meta.update(extra or {})
    return meta
