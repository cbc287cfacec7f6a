import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fetalkey.core import Frame
from fetalkey.errors import DataError
from fetalkey.transforms import (AffineSpec, TtaCatalogue, apply_affine, default_tta_catalogue,
                                 load_catalogue, random_train_augment, save_catalogue, warp_pixels)


def smooth_frame(size=48, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.5 + 0.2 * np.sin(2 * np.pi * (xx * rng.uniform(0.5, 1.5) + yy * rng.uniform(0.5, 1.5)))
    # fade to black towards the border so rotations lose nothing outside the frame
    r = np.hypot(xx - 0.5, yy - 0.5)
    return Frame(np.clip(img * np.clip(1.6 - 4 * r, 0, 1), 0, 1))


def test_default_catalogue_contents():
    cat = default_tta_catalogue()
    assert len(cat) == 14  # identity + flip + 6 rotations + 2 shifts + 4 zooms
    assert cat[0] == AffineSpec.identity()
    assert cat[1] == AffineSpec.hflip()
    assert sorted(s.angle for s in cat[2:8]) == [-15, -10, -5, 5, 10, 15]
    assert all(s.kind == "rotate" for s in cat[2:8])
    assert [(s.dx, s.dy) for s in cat[8:10]] == [(0.10, 0.10), (-0.10, -0.10)]
    assert [s.factor for s in cat[10:]] == [1.05, 1.10, 1.15, 1.20]
    assert len(set(cat)) == 14


def test_catalogue_invariants():
    with pytest.raises(ValueError):
        TtaCatalogue([AffineSpec.hflip()])
    with pytest.raises(ValueError):
        TtaCatalogue([AffineSpec.identity(), AffineSpec.rotate(5), AffineSpec.rotate(5)])


@pytest.mark.parametrize("bad", [
    dict(kind="rotate", angle=200), dict(kind="translate", dx=0.6), dict(kind="scale", factor=0.9),
    dict(kind="scale", factor=2.5), dict(kind="shear"),
])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        AffineSpec(**bad)


def test_identity_is_bit_exact():
    f = smooth_frame()
    assert np.array_equal(apply_affine(f, AffineSpec.identity()).pixels, f.pixels)


@pytest.mark.parametrize("spec", [AffineSpec.hflip(), AffineSpec.vflip()])
def test_flip_is_involution(spec):
    f = Frame(np.random.default_rng(3).random((7, 9)))
    assert np.array_equal(apply_affine(apply_affine(f, spec), spec).pixels, f.pixels)
    assert not np.array_equal(apply_affine(f, spec).pixels, f.pixels)


def test_translate_moves_pixel_by_quarter_frame():
    px = np.zeros((4, 4))
    px[0, 0] = 1.0
    out = apply_affine(Frame(px), AffineSpec.translate(0.25, 0.25)).pixels
    expected = np.zeros((4, 4))
    expected[1, 1] = 1.0
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_rotation_direction_and_centre():
    # a pixel right of centre goes to the top under +90 deg (counter-clockwise as displayed)
    px = np.zeros((5, 5))
    px[2, 4] = 1.0
    out = apply_affine(Frame(px), AffineSpec.rotate(90)).pixels
    assert out[0, 2] == pytest.approx(1.0)
    centre = np.zeros((5, 5))
    centre[2, 2] = 1.0
    assert apply_affine(Frame(centre), AffineSpec.rotate(37)).pixels[2, 2] == pytest.approx(1.0)


def test_scale_zooms_into_centre():
    px = np.zeros((9, 9))
    px[4, 6] = 1.0  # two pixels right of centre
    out = apply_affine(Frame(px), AffineSpec.scale(2.0)).pixels
    assert out[4, 8] == pytest.approx(1.0)
    assert out[4, 6] == pytest.approx(0.0)


def test_out_of_source_is_black():
    out = apply_affine(Frame(np.ones((10, 10))), AffineSpec.translate(0.3, 0.0)).pixels
    assert np.all(out[:, :3] == 0.0)
    assert np.all(out[:, 3:] == 1.0)


@pytest.mark.parametrize("spec", list(default_tta_catalogue()) + [AffineSpec.vflip()])
def test_shape_preserved(spec):
    f = Frame(np.random.default_rng(0).random((13, 21)))
    assert apply_affine(f, spec).pixels.shape == (13, 21)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(list(default_tta_catalogue())))
def test_range_preserved(seed, spec):
    f = Frame(np.random.default_rng(seed).random((16, 16)))
    out = apply_affine(f, spec).pixels
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("angle", [5, 10, 15])
def test_rotate_back_and_forth_is_close(angle):
    f = smooth_frame(seed=angle)
    back = apply_affine(apply_affine(f, AffineSpec.rotate(angle)), AffineSpec.rotate(-angle))
    assert np.mean(np.abs(back.pixels - f.pixels)) <= 0.02


def test_random_augment_deterministic_and_shape():
    f = smooth_frame(size=32)
    a = random_train_augment(f, 99)
    b = random_train_augment(f, 99)
    assert np.array_equal(a.pixels, b.pixels)
    assert a.pixels.shape == f.pixels.shape


def test_random_augment_seeds_differ():
    f = smooth_frame(size=32)
    same = sum(np.array_equal(random_train_augment(f, 2 * k).pixels,
                              random_train_augment(f, 2 * k + 1).pixels) for k in range(100))
    assert same == 0


def test_catalogue_file_roundtrip(tmp_path):
    path = tmp_path / "cat.json"
    save_catalogue(default_tta_catalogue(), path)
    assert load_catalogue(path) == default_tta_catalogue()
    path.write_text(json.dumps({"format": "fetalkey-tta", "version": 1,
                                "transforms": [{"kind": "rotate", "angle": 5}]}))
    with pytest.raises(DataError):
        load_catalogue(path)
    path.write_text("{not json")
    with pytest.raises(DataError):
        load_catalogue(path)


@pytest.mark.parametrize("spec", list(default_tta_catalogue()) + [AffineSpec.vflip()])
def test_stack_warp_equals_per_frame(spec):
    stack = np.random.default_rng(5).random((6, 11, 17))
    together = warp_pixels(stack, spec)
    for i, px in enumerate(stack):
        assert np.array_equal(together[i], apply_affine(Frame(px), spec).pixels)
