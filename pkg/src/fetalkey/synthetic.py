"""Seeded synthetic data: toy ultrasound-like videos, a learnable GRU task and a tiny ONNX model.

None of this is medical data. It exists so the pipeline can be exercised
end to end without the clinical videos or a trained backbone.
"""

from pathlib import Path

import numpy as np

from .core import FEATURE_DIM, N_CLASSES, Frame


def synthetic_video(n_frames, size=64, seed=0):
    """Frames with a drifting bright blob over a speckled sector-like background."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    sector = np.clip(1.0 - 2.2 * np.hypot(xx - 0.5, yy) + 0.9, 0.0, 1.0) * (yy > 0.02)
    speckle = rng.random((size, size))
    phase = rng.uniform(0, 2 * np.pi, size=2)
    speed = rng.uniform(0.02, 0.08, size=2)
    frames = []
    for t in range(n_frames):
        cx = 0.5 + 0.3 * np.sin(phase[0] + speed[0] * t)
        cy = 0.5 + 0.3 * np.sin(phase[1] + speed[1] * t)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 0.02)
        drift = np.roll(speckle, t % size, axis=1)
        img = sector * (0.25 + 0.2 * drift) + 0.6 * blob
        frames.append(Frame(np.clip(img, 0.0, 1.0)))
    return frames


def running_mean_task(n_sequences, seed=0, min_len=20, max_len=60, noise=0.05):
    """Feature sequences whose target is sigmoid(running mean of channel 0).

    Channel 0 is drawn around a per-sequence level; the other 1279
    channels are small noise the model has to learn to ignore.
    """
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(n_sequences):
        length = int(rng.integers(min_len, max_len + 1))
        x = rng.normal(0.0, noise, size=(length, FEATURE_DIM))
        level = rng.uniform(-2.0, 2.0)
        x[:, 0] = level + rng.normal(0.0, 1.0, size=length)
        running = np.cumsum(x[:, 0]) / np.arange(1, length + 1)
        data.append((x, 1.0 / (1.0 + np.exp(-running))))
    return data


def build_reference_onnx(path, seed=0, input_size=(32, 32), n_classes=N_CLASSES,
                         feature_dim=FEATURE_DIM, class_output="probs", channels=1):
    """Write a small dense network honouring the classifier graph contract.

    image [N, C, H, W] -> flatten -> dense -> tanh = features
    features -> dense -> softmax = probs  (or raw scores named logits)

    Requires the ``onnx`` package.
    """
    import onnx
    from onnx import TensorProto, helper, numpy_helper

    h, w = input_size
    rng = np.random.default_rng(seed)
    w_feat = (rng.normal(size=(channels * h * w, feature_dim)) / np.sqrt(h * w)).astype(np.float32)
    w_cls = (rng.normal(size=(feature_dim, n_classes)) / 8.0).astype(np.float32)
    nodes = [
        helper.make_node("Flatten", ["image"], ["flat"], axis=1),
        helper.make_node("MatMul", ["flat", "w_feat"], ["pre"]),
        helper.make_node("Tanh", ["pre"], ["features"]),
        helper.make_node("MatMul", ["features", "w_cls"], ["scores"]),
    ]
    if class_output == "probs":
        nodes.append(helper.make_node("Softmax", ["scores"], ["probs"], axis=1))
    else:
        nodes.append(helper.make_node("Identity", ["scores"], [class_output]))
    graph = helper.make_graph(
        nodes, "fetalkey_reference",
        [helper.make_tensor_value_info("image", TensorProto.FLOAT, ["N", channels, h, w])],
        [helper.make_tensor_value_info(class_output, TensorProto.FLOAT, ["N", n_classes]),
         helper.make_tensor_value_info("features", TensorProto.FLOAT, ["N", feature_dim])],
        initializer=[numpy_helper.from_array(w_feat, "w_feat"), numpy_helper.from_array(w_cls, "w_cls")],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.checker.check_model(model)
    onnx.save(model, str(Path(path)))
    return Path(path)
