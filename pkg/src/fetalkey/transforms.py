"""Affine frame transforms for test-time augmentation and training augmentation.

Coordinates are (row, col) with rows pointing down. Rotation and scaling
act about the frame centre ((H-1)/2, (W-1)/2); positive angles rotate
the content counter-clockwise as displayed. Samples falling outside the
source are black (0) and resampling is bilinear.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import Frame
from .errors import DataError

KINDS = ("identity", "hflip", "vflip", "rotate", "translate", "scale")


@dataclass(frozen=True)
class AffineSpec:
    kind: str
    angle: float = 0.0
    dx: float = 0.0
    dy: float = 0.0
    factor: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "rotate" and not -180.0 <= self.angle <= 180.0:
            raise ValueError(f"rotation angle {self.angle} outside [-180, 180]")
        if self.kind == "translate" and (abs(self.dx) > 0.5 or abs(self.dy) > 0.5):
            raise ValueError(f"translation ({self.dx}, {self.dy}) exceeds half the frame")
        if self.kind == "scale" and not 1.0 <= self.factor <= 2.0:
            raise ValueError(f"scale factor {self.factor} outside [1, 2]")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def hflip(cls):
        return cls("hflip")

    @classmethod
    def vflip(cls):
        return cls("vflip")

    @classmethod
    def rotate(cls, angle):
        return cls("rotate", angle=float(angle))

    @classmethod
    def translate(cls, dx, dy):
        return cls("translate", dx=float(dx), dy=float(dy))

    @classmethod
    def scale(cls, factor):
        return cls("scale", factor=float(factor))

    def to_dict(self):
        if self.kind == "rotate":
            return {"kind": "rotate", "angle": self.angle}
        if self.kind == "translate":
            return {"kind": "translate", "dx": self.dx, "dy": self.dy}
        if self.kind == "scale":
            return {"kind": "scale", "factor": self.factor}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "rotate":
            return cls.rotate(d["angle"])
        if kind == "translate":
            return cls.translate(d["dx"], d["dy"])
        if kind == "scale":
            return cls.scale(d["factor"])
        return cls(kind)

    def __str__(self):
        if self.kind == "rotate":
            return f"rotate({self.angle:+g})"
        if self.kind == "translate":
            return f"translate({self.dx:+g},{self.dy:+g})"
        if self.kind == "scale":
            return f"scale({self.factor:g})"
        return self.kind


class TtaCatalogue(tuple):
    """Ordered, duplicate-free transforms; the untouched video comes first."""

    def __new__(cls, specs):
        specs = tuple(specs)
        if not specs or specs[0] != AffineSpec.identity():
            raise ValueError("a TTA catalogue must start with the identity transform")
        if len(set(specs)) != len(specs):
            raise ValueError("duplicate transforms in TTA catalogue")
        return super().__new__(cls, specs)

    def to_json(self):
        return {"format": "fetalkey-tta", "version": 1,
                "transforms": [s.to_dict() for s in self]}


def default_tta_catalogue():
    """Identity, flip, six rotations, two diagonal shifts, four zooms (14 total)."""
    specs = [AffineSpec.identity(), AffineSpec.hflip()]
    for angle in (15, 10, 5):
        specs += [AffineSpec.rotate(angle), AffineSpec.rotate(-angle)]
    specs += [AffineSpec.translate(0.10, 0.10), AffineSpec.translate(-0.10, -0.10)]
    specs += [AffineSpec.scale(f) for f in (1.05, 1.10, 1.15, 1.20)]
    return TtaCatalogue(specs)


def load_catalogue(path):
    """Read a catalogue override file (see docs/formats.md)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read TTA catalogue {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "fetalkey-tta":
        raise DataError(f"{path} is not a fetalkey-tta document")
    if doc.get("version") != 1:
        raise DataError(f"unsupported TTA catalogue version {doc.get('version')!r}")
    try:
        return TtaCatalogue(AffineSpec.from_dict(d) for d in doc["transforms"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid TTA catalogue {path}: {exc}") from exc


def save_catalogue(catalogue, path):
    Path(path).write_text(json.dumps(catalogue.to_json(), indent=2) + "\n")


def _rotation(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def _warp(pixels, forward, shift):
    """Resample so that content at src lands on forward @ (src - c) + c + shift.

    ``pixels`` is one (H, W) image or an (N, H, W) stack; a stack is warped
    in a single call with the identity on the leading axis.
    """
    h, w = pixels.shape[-2:]
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    inv = np.linalg.inv(forward)
    offset = centre - inv @ (centre + shift)
    if pixels.ndim == 3:
        full = np.eye(3)
        full[1:, 1:] = inv
        inv, offset = full, np.concatenate(([0.0], offset))
    out = ndimage.affine_transform(pixels, inv, offset=offset, order=1,
                                   mode="grid-constant", cval=0.0, prefilter=False)
    return np.clip(out, 0.0, 1.0, out=out)


def warp_pixels(pixels, spec):
    """Array-level version of apply_affine; also takes an (N, H, W) stack."""
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape[-2:]
    if spec.kind == "identity":
        return pixels.copy()
    if spec.kind == "hflip":
        return pixels[..., ::-1].copy()
    if spec.kind == "vflip":
        return pixels[..., ::-1, :].copy()
    if spec.kind == "rotate":
        return _warp(pixels, _rotation(spec.angle), np.zeros(2))
    if spec.kind == "translate":
        return _warp(pixels, np.eye(2), np.array([spec.dy * h, spec.dx * w]))
    return _warp(pixels, np.eye(2) * spec.factor, np.zeros(2))


def apply_affine(frame, spec):
    return Frame(warp_pixels(frame.pixels, spec))


def random_train_augment(frame, rng_seed):
    """Random scale/flip/shift/rotation composite, reproducible from ``rng_seed``."""
    rng = np.random.default_rng(rng_seed)
    factor = rng.uniform(0.9, 1.1)
    flip_h = rng.random() < 0.5
    flip_v = rng.random() < 0.5
    dx, dy = rng.uniform(-0.1, 0.1, size=2)
    angle = rng.uniform(-15.0, 15.0)

    h, w = frame.pixels.shape
    flips = np.diag([-1.0 if flip_v else 1.0, -1.0 if flip_h else 1.0])
    forward = _rotation(angle) @ (factor * flips)
    return Frame(_warp(frame.pixels, forward, np.array([dy * h, dx * w])))
