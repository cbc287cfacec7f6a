import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fetalkey.core import (FEATURE_DIM, ClassLabel, FeatureVector, Frame, ProbVector, RawVector,
                           argmax_class, quality_score)
from fetalkey.errors import InvalidVector, ShapeMismatch


def test_class_labels_are_five_stable_codes():
    assert [c.value for c in ClassLabel] == [0, 1, 2, 3, 4]
    assert [c.name for c in ClassLabel] == ["TransVentricular", "TransThalamic", "TransCerebellar",
                                            "BrainOther", "NotABrain"]


@pytest.mark.parametrize("text,label", [
    ("TransThalamic", ClassLabel.TransThalamic),
    ("trans-cerebellar", ClassLabel.TransCerebellar),
    ("not a brain", ClassLabel.NotABrain),
    ("3", ClassLabel.BrainOther),
    (0, ClassLabel.TransVentricular),
])
def test_label_parse(text, label):
    assert ClassLabel.parse(text) is label


@pytest.mark.parametrize("p,expected", [
    ([0.1, 0.6, 0.1, 0.1, 0.1], ClassLabel.TransThalamic),
    ([0.2, 0.2, 0.2, 0.2, 0.2], ClassLabel.TransVentricular),
    ([0.05, 0.05, 0.8, 0.05, 0.05], ClassLabel.TransCerebellar),
])
def test_argmax_class(p, expected):
    assert argmax_class(ProbVector(p)) is expected


@given(st.lists(st.floats(0.01, 1.0), min_size=5, max_size=5), st.permutations(range(5)))
def test_argmax_permutation_consistent(raw, perm):
    p = np.array(raw) / np.sum(raw)
    top = argmax_class(p)
    q = p[list(perm)]
    # entry k of q is entry perm[k] of p
    picked = argmax_class(q)
    assert p[perm[picked]] == p[top]
    if np.sum(p == p.max()) == 1:
        assert perm[picked] == top


@given(arrays(np.float64, 5, elements=st.floats(-0.5, 1.5)))
def test_probvector_rejects_invalid(v):
    valid = np.all(v >= 0) and np.all(v <= 1) and abs(v.sum() - 1) <= 1e-6
    if valid:
        assert np.array_equal(ProbVector(v).p, v)
    else:
        with pytest.raises(InvalidVector):
            ProbVector(v)


def test_probvector_is_read_only():
    pv = ProbVector([0.2] * 5)
    with pytest.raises(ValueError):
        pv.p[0] = 1.0


def test_rawvector_allows_substochastic():
    assert RawVector([0.45, 0.4, 0, 0, 0]).v.sum() == pytest.approx(0.85)
    with pytest.raises(InvalidVector):
        RawVector([0.6, 0.6, 0, 0, 0])
    with pytest.raises(InvalidVector):
        RawVector([-0.1, 0, 0, 0, 0])


def test_feature_vector_length():
    assert FeatureVector(np.zeros(FEATURE_DIM)).f.shape == (1280,)
    with pytest.raises(ShapeMismatch):
        FeatureVector(np.zeros(1279))
    with pytest.raises(InvalidVector):
        FeatureVector(np.full(FEATURE_DIM, np.nan))


def test_frame_validation():
    f = Frame(np.full((3, 4), 0.5))
    assert (f.height, f.width) == (3, 4)
    with pytest.raises(InvalidVector):
        Frame(np.full((3, 4), 1.5))
    with pytest.raises(ShapeMismatch):
        Frame(np.zeros((0, 4)))


def test_quality_score_bounds():
    assert quality_score(0.3) == 0.3
    with pytest.raises(InvalidVector):
        quality_score(1.01)
