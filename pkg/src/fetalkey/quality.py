"""Frame quality metric.

Pipeline per video:

1. classify every frame of every TTA copy of the video;
2. harden each probability vector (keep the winning class, zero the rest);
3. zero out frames whose class is not constant over the window
   ``[i - w, i + w]`` (clipped to the video), separately for every copy;
4. average the hardened vectors over the copies;
5. quality = top averaged entry minus the sum of the others, clamped to [0, 1].

Frames that are unstable in a copy contribute an all-zero vector to the
average instead of being dropped, so every frame keeps a quality value.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import N_CLASSES, ClassLabel, check_prob_array, check_raw_array
from .errors import EmptySequence, LengthMismatch, ShapeMismatch
from .transforms import TtaCatalogue, warp_pixels

DEFAULT_WINDOW = 5
BATCH_SIZE = 64


@dataclass(frozen=True, eq=False)
class QualitySeries:
    quality: np.ndarray             # (n,)
    selected_class: np.ndarray      # (n,) integer class codes
    stable_in_original: np.ndarray  # (n,) bool
    aggregated: np.ndarray          # (n, 5)
    identity_probs: np.ndarray = None   # (n, 5) probabilities of the untransformed video
    identity_features: np.ndarray = None  # (n, 1280), when produced from frames

    def __len__(self):
        return len(self.quality)

    def labels(self):
        return [ClassLabel(int(c)) for c in self.selected_class]


def harden(p):
    """Keep only the maximal entry (lowest index on ties), zero the rest.

    Works on a single vector or on an ``(..., 5)`` array.
    """
    p = np.asarray(p, dtype=np.float64)
    idx = np.argmax(p, axis=-1)
    out = np.zeros_like(p)
    np.put_along_axis(out, idx[..., None], np.take_along_axis(p, idx[..., None], axis=-1), axis=-1)
    return out


def stability_mask(classes, window):
    """True where every frame within ``window`` of frame i has frame i's class."""
    c = np.asarray(classes).astype(np.int64).ravel()
    n = len(c)
    if n == 0:
        raise EmptySequence("stability mask of an empty sequence")
    window = int(window)
    if window < 0:
        raise ValueError("stability window must be non-negative")
    idx = np.arange(n)
    change = np.flatnonzero(c[1:] != c[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change - 1, [n - 1]))
    run = np.repeat(np.arange(len(starts)), np.diff(np.concatenate((starts, [n]))))
    lo = np.maximum(0, idx - window)
    hi = np.minimum(n - 1, idx + window)
    return (starts[run] <= lo) & (ends[run] >= hi)


def harden_and_filter(series, window):
    p = check_prob_array(series)
    if p.ndim != 2 or len(p) == 0:
        raise EmptySequence("harden_and_filter needs a non-empty (n, 5) series")
    mask = stability_mask(np.argmax(p, axis=1), window)
    return harden(p) * mask[:, None]


def tta_aggregate(per_transform):
    """Average ``T`` sequences of raw vectors frame by frame."""
    seqs = [np.asarray(s, dtype=np.float64) for s in per_transform]
    if not seqs:
        raise LengthMismatch("tta_aggregate needs at least one sequence")
    lengths = {s.shape for s in seqs}
    if len(lengths) != 1:
        raise LengthMismatch(f"per-transform sequences differ in shape: {sorted(lengths)}")
    return np.mean(np.stack(seqs), axis=0)


def margin_quality(v):
    """Top entry minus the sum of the remaining entries, clamped to [0, 1]."""
    v = np.asarray(v, dtype=np.float64)
    top = v.max(axis=-1)
    q = top - (v.sum(axis=-1) - top)
    q = np.clip(q, 0.0, 1.0)
    return float(q) if q.ndim == 0 else q


def quality_from_probabilities(per_transform_probs, window=DEFAULT_WINDOW):
    """Run steps 2-5 on already computed probabilities.

    ``per_transform_probs`` has shape ``(T, n, 5)``; entry 0 must be the
    untransformed video.
    """
    probs = np.asarray(per_transform_probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[2] != N_CLASSES:
        raise ShapeMismatch(f"expected (T, n, {N_CLASSES}) probabilities, got {probs.shape}")
    if probs.shape[0] == 0:
        raise LengthMismatch("need at least one transform")
    if probs.shape[1] == 0:
        raise EmptySequence("video has no frames")
    check_prob_array(probs)

    filtered = [harden_and_filter(p, window) for p in probs]
    aggregated = tta_aggregate(filtered)
    check_raw_array(aggregated)
    quality = margin_quality(aggregated)
    selected = np.argmax(aggregated, axis=1)
    empty = ~np.any(aggregated > 0, axis=1)
    selected[empty] = int(ClassLabel.NotABrain)
    stable = stability_mask(np.argmax(probs[0], axis=1), window)
    return QualitySeries(quality=quality, selected_class=selected,
                         stable_in_original=stable, aggregated=aggregated,
                         identity_probs=probs[0].copy())


def classify_tta(frames, handle, catalogue, workers=1, batch_size=BATCH_SIZE):
    """Classify every (transform, frame) pair.

    Returns probabilities ``(T, n, 5)`` and the untransformed frames'
    features ``(n, 1280)``. Work is cut into fixed-size batches so the
    floating point results do not depend on ``workers``.
    """
    pixels = [np.asarray(getattr(f, "pixels", f), dtype=np.float64) for f in frames]
    n = len(pixels)
    if n == 0:
        raise EmptySequence("video has no frames")
    if len({px.shape for px in pixels}) == 1:
        pixels = np.stack(pixels)  # one warp call per batch instead of per frame
    tasks = [(t, s) for t in range(len(catalogue)) for s in range(0, n, batch_size)]

    def run(task):
        t, s = task
        spec = catalogue[t]
        chunk = pixels[s:s + batch_size]
        if isinstance(chunk, np.ndarray):
            batch = list(warp_pixels(chunk, spec))
        else:
            batch = [warp_pixels(px, spec) for px in chunk]
        return handle.predict(batch)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(task) for task in tasks]

    per_t = len(range(0, n, batch_size))
    probs = np.stack([np.concatenate([r[0] for r in results[t * per_t:(t + 1) * per_t]])
                      for t in range(len(catalogue))])
    features = np.concatenate([r[1] for r in results[:per_t]])
    return probs, features


def compute_quality_series(frames, handle, catalogue, window=DEFAULT_WINDOW, workers=1):
    """Full quality metric for a video given as a sequence of frames."""
    if not isinstance(catalogue, TtaCatalogue):
        catalogue = TtaCatalogue(catalogue)
    probs, features = classify_tta(frames, handle, catalogue, workers=workers)
    series = quality_from_probabilities(probs, window)
    return QualitySeries(quality=series.quality, selected_class=series.selected_class,
                         stable_in_original=series.stable_in_original,
                         aggregated=series.aggregated, identity_probs=series.identity_probs,
                         identity_features=features)
