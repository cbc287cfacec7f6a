import json

import numpy as np
import pytest

from fetalkey import gru
from fetalkey.errors import (EmptyDataset, EmptySequence, FormatVersionMismatch, LengthMismatch,
                             ShapeMismatch, WeightsFileError)
from fetalkey.gru import (GruHeadModel, GruLayerWeights, TrainConfig, backward, dropout_masks,
                          forward, gru_cell_step, load_weights, save_weights, train)
from fetalkey.synthetic import running_mean_task

from oracles import finite_difference_grads, gru_step_scalar, relative_error

# straight-line scalar transcription, input 3, hidden 2, default_rng(42)
SCALAR_REFERENCE = [0.28797401928122485, 0.12938504521157862]


def small_model(seed, hidden=4):
    return GruHeadModel.init(hidden=hidden, seed=seed)


def small_seq(seed, length=6, scale=0.05):
    rng = np.random.default_rng(seed + 1000)
    return rng.normal(0.0, scale, (length, 1280)), rng.uniform(0, 1, length)


# -- architecture --------------------------------------------------------

def test_first_layer_takes_1280_features():
    # the network architecture fixes the input width at 1280
    m = GruHeadModel.init(hidden=8)
    assert m.layer1.input_dim == 1280
    bad = GruLayerWeights.zeros(1000, 8)
    with pytest.raises(ShapeMismatch):
        GruHeadModel(bad, GruLayerWeights.zeros(8, 8), np.zeros(8))


def test_dropout_after_first_layer_is_0_1():
    assert gru.DROPOUT1 == 0.1
    assert GruHeadModel.init(hidden=8).dropout1 == 0.1


def test_dropout_after_second_layer_is_0_2():
    assert gru.DROPOUT2 == 0.2
    assert GruHeadModel.init(hidden=8).dropout2 == 0.2


def test_output_is_sigmoid():
    assert GruHeadModel.output_activation == "sigmoid"
    m = GruHeadModel.zeros(hidden=4)
    m.dense_b = 2.0
    np.testing.assert_allclose(forward(m, np.zeros((3, 1280))), 1 / (1 + np.exp(-2.0)))


def test_model_invariants():
    with pytest.raises(ShapeMismatch):
        GruHeadModel(GruLayerWeights.zeros(1280, 8), GruLayerWeights.zeros(6, 6), np.zeros(6))
    with pytest.raises(ShapeMismatch):
        GruHeadModel(GruLayerWeights.zeros(1280, 8), GruLayerWeights.zeros(8, 8), np.zeros(5))
    with pytest.raises(ValueError):
        GruHeadModel(GruLayerWeights.zeros(1280, 4), GruLayerWeights.zeros(4, 4), np.zeros(4),
                     dropout1=1.0)
    with pytest.raises(ShapeMismatch):
        GruLayerWeights(np.zeros((3, 2, 3)), np.zeros((3, 2, 3)), np.zeros((3, 2)), np.zeros((3, 2)))
    assert GruHeadModel.init().hidden_dim == 128


# -- cell and forward ----------------------------------------------------

def test_zero_cell_step():
    w = GruLayerWeights.zeros(3, 2)
    assert gru_cell_step([1.0, -2.0, 3.0], np.zeros(2), w).tolist() == [0.0, 0.0]


def test_cell_step_matches_scalar_reference():
    rng = np.random.default_rng(42)
    w = GruLayerWeights.uniform(3, 2, rng)
    x = rng.normal(size=3)
    h = rng.uniform(-1, 1, 2)
    out = gru_cell_step(x, h, w)
    np.testing.assert_allclose(out, SCALAR_REFERENCE, rtol=0, atol=1e-15)
    oracle = gru_step_scalar(x.tolist(), h.tolist(), w.W.tolist(), w.U.tolist(), w.b.tolist(), w.c.tolist())
    np.testing.assert_allclose(out, oracle, rtol=0, atol=1e-15)


def test_cell_step_bounded(rng):
    for _ in range(50):
        w = GruLayerWeights.uniform(5, 3, rng)
        out = gru_cell_step(rng.normal(size=5), np.zeros(3), w)
        assert np.all(np.abs(out) < 1)
    with pytest.raises(ShapeMismatch):
        gru_cell_step(np.zeros(4), np.zeros(3), GruLayerWeights.zeros(5, 3))


def test_zero_model_outputs_half():
    out = forward(GruHeadModel.zeros(hidden=4), np.random.default_rng(0).normal(size=(7, 1280)))
    assert out.tolist() == [0.5] * 7


def test_forward_range_and_determinism(rng):
    m = small_model(3, hidden=16)
    X = rng.normal(size=(20, 1280))
    a, b = forward(m, X), forward(m, X)
    assert np.array_equal(a, b)
    assert np.all((a > 0) & (a < 1))
    t1 = forward(m, X, mode="training", seed=5)
    assert np.array_equal(t1, forward(m, X, mode="training", seed=5))
    assert not np.array_equal(t1, a)


def test_causality(rng):
    m = small_model(4, hidden=8)
    for _ in range(10):
        X = rng.normal(size=(15, 1280))
        k = int(rng.integers(0, 14))
        Y = X.copy()
        Y[k + 1:] = rng.normal(size=Y[k + 1:].shape)
        np.testing.assert_array_equal(forward(m, X)[:k + 1], forward(m, Y)[:k + 1])
        assert not np.array_equal(forward(m, X)[k + 1:], forward(m, Y)[k + 1:])


def test_float32_inference_close():
    m = small_model(1, hidden=16)
    X = np.random.default_rng(1).normal(size=(10, 1280))
    np.testing.assert_allclose(forward(m, X, dtype=np.float32), forward(m, X), atol=1e-5)


def test_forward_errors():
    m = small_model(0)
    with pytest.raises(EmptySequence):
        forward(m, np.zeros((0, 1280)))
    with pytest.raises(ShapeMismatch):
        forward(m, np.zeros((4, 1279)))
    with pytest.raises(ValueError):
        forward(m, np.zeros((4, 1280)), mode="eval")


def test_dropout_expectation():
    # a nearly linear instance, so the average over masks tracks the mask-free output
    rng = np.random.default_rng(8)
    m = small_model(8, hidden=4)
    for arr in m.parameters().values():
        arr *= 0.2
    X = rng.normal(0, 0.2, (5, 1280))
    ref = forward(m, X)
    outs = np.array([forward(m, X, mode="training", seed=s) for s in range(10_000)])
    se = outs.std(axis=0, ddof=1) / np.sqrt(len(outs))
    assert np.all(np.abs(outs.mean(axis=0) - ref) <= 3 * se)


def test_dropout_masks_are_inverted():
    m = GruHeadModel.init(hidden=64)
    m1, m2 = dropout_masks(m, 2000, seed=0)
    assert set(np.unique(m1)) == {0.0, 1 / 0.9}
    assert set(np.unique(m2)) == {0.0, 1 / 0.8}
    assert m1.mean() == pytest.approx(1.0, abs=0.01)
    assert m2.mean() == pytest.approx(1.0, abs=0.01)


# -- loss and gradients --------------------------------------------------

def test_loss_examples(rng):
    assert gru.loss([0.3, 0.4], [0.3, 0.4]) == 0.0
    assert gru.loss([0.5] * 4, [0.0] * 4) == 0.25
    p, t = rng.random(37), rng.random(37)
    assert gru.loss(p, t) == pytest.approx(sum((a - b) ** 2 for a, b in zip(p, t)) / 37, abs=1e-12)
    with pytest.raises(LengthMismatch):
        gru.loss([0.1], [0.1, 0.2])


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    m = small_model(seed)
    X, target = small_seq(seed)
    _, grads = backward(m, X, target, seed=seed)
    m1, m2 = dropout_masks(m, len(X), seed)
    params = dict(m.parameters(), **{"dense.b": m.dense_b})
    numeric = finite_difference_grads(params, X, m1, m2, target)
    for name, g in numeric.items():
        assert relative_error(grads[name], g).max() <= 1e-5, name


def test_inference_mode_gradients(rng):
    m = small_model(11)
    X, target = small_seq(11)
    _, grads = backward(m, X, target, mode="inference")
    ones1, ones2 = np.ones((6, 4)), np.ones((6, 4))
    numeric = finite_difference_grads(dict(m.parameters(), **{"dense.b": m.dense_b}),
                                      X, ones1, ones2, target)
    assert relative_error(grads["layer2.U"], numeric["layer2.U"]).max() <= 1e-5


def test_gradient_zero_at_minimum():
    m = small_model(2)
    X = small_seq(2, length=1)[0]
    target = forward(m, X, mode="training", seed=9)
    value, grads = backward(m, X, target, seed=9)
    assert value == 0.0
    for g in grads.values():
        assert np.all(np.asarray(g) == 0.0)


def test_dense_bias_gradient_is_linear_in_residual():
    m = small_model(5)
    X = small_seq(5)[0]
    y = forward(m, X, mode="training", seed=1)
    residual = np.random.default_rng(0).normal(0, 0.1, len(y))
    _, g1 = backward(m, X, y + residual, seed=1)
    _, g2 = backward(m, X, y + 2 * residual, seed=1)
    assert g2["dense.b"] == pytest.approx(2 * g1["dense.b"], rel=1e-12)


def test_backward_length_mismatch():
    with pytest.raises(LengthMismatch):
        backward(small_model(0), np.zeros((3, 1280)), np.zeros(4), seed=0)


# -- training ------------------------------------------------------------

def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.weight_decay, cfg.max_epochs, cfg.early_stop_patience) == \
        (5e-4, 1e-5, 60, 20)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=5, early_stop_patience=6)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")


def test_sgd_without_decay_is_plain_gradient_descent():
    m = small_model(6)
    X, y = small_seq(6)
    cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0, max_epochs=1, early_stop_patience=1,
                      optimizer="sgd", seed=3)
    trained, _ = train(m, [(X, y)], [(X, y)], cfg)

    # replay the trainer's draws: a permutation of one item, then the dropout seed
    rng = np.random.default_rng(3)
    rng.permutation(1)
    _, grads = backward(m, X, y, seed=int(rng.integers(2**63)))
    for name, p in m.parameters().items():
        assert np.array_equal(trained.parameters()[name], p - 0.1 * grads[name]), name
    assert trained.dense_b == m.dense_b - 0.1 * grads["dense.b"]


def test_weight_decay_is_decoupled():
    m = small_model(6)
    X, y = small_seq(6)
    zero = {k: np.zeros_like(v) for k, v in m.parameters().items()}
    zero["dense.b"] = 0.0
    cfg = TrainConfig(learning_rate=0.1, weight_decay=0.5, optimizer="sgd")
    shrunk = m.copy()
    gru.SGD(cfg).step(shrunk, zero)
    for name, p in m.parameters().items():
        np.testing.assert_allclose(shrunk.parameters()[name], p * (1 - 0.05), rtol=1e-15)


def test_training_is_deterministic():
    data = running_mean_task(6, seed=1, min_len=5, max_len=8)
    cfg = TrainConfig(max_epochs=3, early_stop_patience=3, seed=4)
    m = small_model(0, hidden=8)
    a, ha = train(m, data[:4], data[4:], cfg)
    b, hb = train(m, data[:4], data[4:], cfg)
    assert ha.as_dict() == hb.as_dict()
    assert a.equals(b)
    assert ha.stop_reason == "max_epochs" and len(ha) == 3


def test_early_stop_on_plateau():
    m = small_model(1, hidden=8)
    data = running_mean_task(6, seed=2, min_len=5, max_len=8)
    train_set = [(x, np.ones(len(x))) for x, _ in data[:4]]
    val_set = [(x, forward(m, x)) for x, _ in data[4:]]
    cfg = TrainConfig(learning_rate=1e-2, max_epochs=30, early_stop_patience=1)
    best, hist = train(m, train_set, val_set, cfg)
    assert hist.stop_reason == "early_stop"
    assert len(hist) < 30
    assert hist.val_loss[hist.best_epoch] == min(hist.val_loss)
    assert gru.evaluate(best, val_set) == pytest.approx(min(hist.val_loss), rel=1e-12)


def test_train_rejects_empty():
    with pytest.raises(EmptyDataset):
        train(small_model(0), [], [(np.zeros((2, 1280)), np.zeros(2))], TrainConfig())


# -- persistence ---------------------------------------------------------

def test_weights_roundtrip(tmp_path):
    m = small_model(9, hidden=6)
    m.dense_b = 0.1 + 0.2  # not exactly representable in short decimal
    save_weights(m, tmp_path / "w.json")
    loaded = load_weights(tmp_path / "w.json")
    assert loaded.equals(m)
    doc = json.loads((tmp_path / "w.json").read_text())
    assert (doc["input_dim"], doc["hidden_dim"], doc["dropout1"], doc["dropout2"]) == (1280, 6, 0.1, 0.2)


def test_truncated_weights_file(tmp_path):
    path = tmp_path / "w.json"
    save_weights(small_model(0), path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises((WeightsFileError, FormatVersionMismatch)):
        load_weights(path)
    with pytest.raises(WeightsFileError):
        load_weights(tmp_path / "missing.json")


def test_wrong_version(tmp_path):
    path = tmp_path / "w.json"
    save_weights(small_model(0), path)
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatVersionMismatch):
        load_weights(path)


def test_mismatched_hidden_dims(tmp_path):
    path = tmp_path / "w.json"
    save_weights(small_model(0), path)
    doc = json.loads(path.read_text())
    doc["layers"][1]["hidden_dim"] = 5
    path.write_text(json.dumps(doc))
    with pytest.raises(ShapeMismatch):
        load_weights(path)
