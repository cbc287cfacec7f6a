"""Shared domain types: class labels, probability/feature vectors, frames.

All containers are frozen and hold read-only numpy arrays, so they can be
shared between worker threads without copying.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import InvalidVector, ShapeMismatch

N_CLASSES = 5
FEATURE_DIM = 1280
SUM_TOL = 1e-6


class ClassLabel(IntEnum):
    TransVentricular = 0
    TransThalamic = 1
    TransCerebellar = 2
    BrainOther = 3
    NotABrain = 4

    @property
    def is_brain(self):
        return self is not ClassLabel.NotABrain

    @classmethod
    def parse(cls, value):
        """Accept a label name (case-insensitive) or an integer code."""
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        text = str(value).strip()
        if text.lstrip("-").isdigit():
            return cls(int(text))
        key = text.replace("-", "").replace("_", "").replace(" ", "").lower()
        for member in cls:
            if member.name.lower() == key:
                return member
        raise ValueError(f"unknown class label {value!r}")


def _frozen(values, dtype=np.float64):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def check_prob_array(p, tol=SUM_TOL):
    """Validate rows of an (..., 5) array as probability vectors. Returns the array."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1:] != (N_CLASSES,):
        raise ShapeMismatch(f"expected trailing dimension {N_CLASSES}, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidVector("probabilities must be finite")
    if np.any(p < 0) or np.any(p > 1):
        raise InvalidVector("probabilities must lie in [0, 1]")
    s = p.sum(axis=-1)
    if np.any(np.abs(s - 1.0) > tol):
        worst = float(s.flat[np.argmax(np.abs(s - 1.0))])
        raise InvalidVector(f"probabilities must sum to 1 (got {worst!r})")
    return p


def check_raw_array(v, tol=SUM_TOL):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1:] != (N_CLASSES,):
        raise ShapeMismatch(f"expected trailing dimension {N_CLASSES}, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise InvalidVector("raw vector entries must be finite and non-negative")
    if np.any(v.sum(axis=-1) > 1 + tol):
        raise InvalidVector("raw vector must sum to at most 1")
    return v


@dataclass(frozen=True, eq=False)
class ProbVector:
    """Class probabilities of one frame; sums to one."""

    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _frozen(check_prob_array(self.p)))

    def __eq__(self, other):
        return isinstance(other, ProbVector) and np.array_equal(self.p, other.p)

    def __array__(self, dtype=None, copy=None):
        return self.p if dtype is None else self.p.astype(dtype)


@dataclass(frozen=True, eq=False)
class RawVector:
    """Sub-stochastic class vector produced by hardening or averaging."""

    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", _frozen(check_raw_array(self.v)))

    def __eq__(self, other):
        return isinstance(other, RawVector) and np.array_equal(self.v, other.v)

    def __array__(self, dtype=None, copy=None):
        return self.v if dtype is None else self.v.astype(dtype)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    f: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64)
        if f.shape != (FEATURE_DIM,):
            raise ShapeMismatch(f"feature vector must have length {FEATURE_DIM}, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise InvalidVector("feature vector must be finite")
        object.__setattr__(self, "f", _frozen(f))

    def __array__(self, dtype=None, copy=None):
        return self.f if dtype is None else self.f.astype(dtype)


@dataclass(frozen=True, eq=False)
class Frame:
    """A single grayscale video frame with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeMismatch(f"frame must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 1:
            raise InvalidVector("frame pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, Frame) and np.array_equal(self.pixels, other.pixels)


def quality_score(q):
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise InvalidVector(f"quality score must lie in [0, 1], got {q}")
    return q


def argmax_class(p):
    """Label of the largest entry; ties go to the lowest class code."""
    # np.argmax returns the first maximal index, which is the lowest code
    return ClassLabel(int(np.argmax(np.asarray(p, dtype=np.float64))))
