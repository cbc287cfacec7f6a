"""Per-frame classifier backends.

A backend turns frames into (class probabilities, 1280-dim features).
Two are provided:

* ``OnnxClassifier`` runs an exported network through ONNX Runtime.
  Graph contract: one float32 image input laid out ``[N, C, H, W]`` with
  C in {1, 3} and static H, W, values in [0, 1]; an output named
  ``probs`` (or ``logits``) of shape ``[N, 5]`` and an output named
  ``features`` of shape ``[N, 1280]``.
* ``SyntheticClassifier`` is a cheap, seeded stand-in used by tests and
  demos. Its probabilities are a softmax of random projections of
  coarse intensity statistics (each quadrant's mean relative to the
  global mean, and the global mean itself); its features are random
  projections of a 16x16 block-mean thumbnail.

Both are safe to share between threads: the synthetic backend is pure
numpy and ``onnxruntime.InferenceSession.run`` is documented thread-safe.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import FEATURE_DIM, N_CLASSES, FeatureVector, Frame, ProbVector
from .errors import (InferenceFailure, ModelFileNotFound, ModelShapeMismatch,
                     UnsupportedFormat)

log = logging.getLogger(__name__)

SYNTHETIC_PREFIX = "synthetic:"


@dataclass(frozen=True)
class ClassifierOutput:
    probs: ProbVector
    features: FeatureVector


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def resize_bilinear(pixels, height, width):
    """Bilinear resize using pixel-centre alignment and edge clamping."""
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape
    if (h, w) == (height, width):
        return pixels
    rows = (np.arange(height) + 0.5) * (h / height) - 0.5
    cols = (np.arange(width) + 0.5) * (w / width) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = ndimage.map_coordinates(pixels, [rr, cc], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


class ModelHandle:
    """Interface shared by all backends.

    Subclasses implement ``_forward(batch)`` taking an ``(N, H, W)`` float
    array already resized to ``input_size`` and returning raw class
    outputs ``(N, 5)`` and features ``(N, 1280)``.
    """

    input_size = None  # (height, width) or None for "any"
    feature_dim = FEATURE_DIM
    n_classes = N_CLASSES
    emits_logits = False

    def prepare(self, pixels):
        if self.input_size is None:
            return np.asarray(pixels, dtype=np.float64)
        return resize_bilinear(pixels, *self.input_size)

    def predict(self, batch):
        """Classify a list of 2-D pixel arrays; returns (probs, features) arrays."""
        if len(batch) == 0:
            return np.zeros((0, N_CLASSES)), np.zeros((0, FEATURE_DIM))
        x = np.stack([self.prepare(px) for px in batch])
        try:
            raw, feats = self._forward(x)
        except InferenceFailure:
            raise
        except Exception as exc:
            raise InferenceFailure(f"{type(self).__name__} failed on a batch of "
                                   f"{len(batch)} frames: {exc}") from exc
        return self._normalise(raw), np.asarray(feats, dtype=np.float64)

    def _normalise(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        if self.emits_logits:
            return softmax(raw)
        sums = raw.sum(axis=1)
        if np.any(raw < 0) or np.any(np.abs(sums - 1.0) > 0.01):
            log.info("%s output is not normalised; applying softmax", type(self).__name__)
            return softmax(raw)
        p = np.clip(raw, 0.0, None)
        return p / p.sum(axis=1, keepdims=True)

    def _forward(self, x):
        raise NotImplementedError


class SyntheticClassifier(ModelHandle):
    input_size = (64, 64)
    emits_logits = True

    def __init__(self, seed, sharpness=30.0):
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self._class_proj = rng.normal(size=(N_CLASSES, 5)) * sharpness
        self._class_bias = rng.normal(size=N_CLASSES) * 0.5
        self._feat_proj = rng.normal(size=(FEATURE_DIM, 256)) / 16.0

    def __repr__(self):
        return f"SyntheticClassifier(seed={self.seed})"

    def _forward(self, x):
        n, h, w = x.shape
        hh, hw = h // 2, w // 2
        glob = x.mean(axis=(1, 2))
        stats = np.stack([
            x[:, :hh, :hw].mean(axis=(1, 2)) - glob,
            x[:, :hh, hw:].mean(axis=(1, 2)) - glob,
            x[:, hh:, :hw].mean(axis=(1, 2)) - glob,
            x[:, hh:, hw:].mean(axis=(1, 2)) - glob,
            glob - 0.5,
        ], axis=1)
        logits = stats @ self._class_proj.T + self._class_bias
        thumb = x.reshape(n, 16, h // 16, 16, w // 16).mean(axis=(2, 4)).reshape(n, 256)
        feats = np.tanh((thumb - 0.5) @ self._feat_proj.T)
        return logits, feats


def synthetic_classifier(seed):
    return SyntheticClassifier(seed)


class OnnxClassifier(ModelHandle):
    def __init__(self, session, path):
        self.path = str(path)
        self._session = session
        inputs = session.get_inputs()
        if len(inputs) != 1:
            raise UnsupportedFormat(f"{path}: expected one image input, found {len(inputs)}")
        inp = inputs[0]
        self._input_name = inp.name
        shape = list(inp.shape)
        if len(shape) != 4 or not all(isinstance(d, int) for d in shape[1:]):
            raise UnsupportedFormat(f"{path}: input must be [N, C, H, W] with static C, H, W; got {shape}")
        self._channels = shape[1]
        if self._channels not in (1, 3):
            raise UnsupportedFormat(f"{path}: input must have 1 or 3 channels, got {self._channels}")
        self._fixed_batch = shape[0] if isinstance(shape[0], int) else None
        self.input_size = (shape[2], shape[3])

        names = [o.name for o in session.get_outputs()]
        if "features" not in names:
            raise UnsupportedFormat(f"{path}: no output named 'features' (outputs: {names})")
        if "probs" in names:
            self._class_output = "probs"
        elif "logits" in names:
            self._class_output = "logits"
            self.emits_logits = True
        else:
            raise UnsupportedFormat(f"{path}: no output named 'probs' or 'logits' (outputs: {names})")

        try:
            raw, feats = self._forward(np.zeros((1,) + self.input_size))
        except Exception as exc:
            raise UnsupportedFormat(f"{path}: model failed a dry run ({exc})") from exc
        if raw.shape != (1, N_CLASSES):
            raise ModelShapeMismatch(f"{path}: class output has shape {raw.shape[1:]}, expected ({N_CLASSES},)")
        if feats.shape != (1, FEATURE_DIM):
            raise ModelShapeMismatch(f"{path}: feature output has shape {feats.shape[1:]}, expected ({FEATURE_DIM},)")

    def __repr__(self):
        return f"OnnxClassifier({self.path!r})"

    def _run(self, x):
        x = np.repeat(x[:, None].astype(np.float32), self._channels, axis=1)
        raw, feats = self._session.run([self._class_output, "features"], {self._input_name: x})
        return np.asarray(raw).reshape(len(x), -1), np.asarray(feats).reshape(len(x), -1)

    def _forward(self, x):
        if self._fixed_batch == len(x):
            return self._run(x)
        if self._fixed_batch is not None:
            parts = [self._run(x[i:i + 1]) for i in range(len(x))]
            return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
        return self._run(x)


def load_model(path):
    """Open a classifier.

    ``path`` is either an ONNX file or ``"synthetic:<seed>"`` for the
    seeded test backend.
    """
    text = str(path)
    if text.startswith(SYNTHETIC_PREFIX):
        try:
            return SyntheticClassifier(int(text[len(SYNTHETIC_PREFIX):]))
        except ValueError as exc:
            raise UnsupportedFormat(f"bad synthetic model spec {text!r}") from exc
    path = Path(path)
    if not path.is_file():
        raise ModelFileNotFound(f"model file not found: {path}")
    import onnxruntime as ort

    opts = ort.SessionOptions()
    opts.log_severity_level = 3
    try:
        session = ort.InferenceSession(str(path), sess_options=opts,
                                       providers=["CPUExecutionProvider"])
    except Exception as exc:
        raise UnsupportedFormat(f"{path}: not a loadable ONNX model ({exc})") from exc
    return OnnxClassifier(session, path)


def classify(handle, frame):
    probs, feats = handle.predict([frame.pixels])
    return ClassifierOutput(ProbVector(probs[0]), FeatureVector(feats[0]))


def classify_batch(handle, frames):
    """Classify many frames at once; returns ``(probs (N, 5), features (N, 1280))``."""
    return handle.predict([f.pixels if isinstance(f, Frame) else f for f in frames])
