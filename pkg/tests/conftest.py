from pathlib import Path

import numpy as np
import pytest

from fetalkey import synthetic_classifier
from fetalkey.synthetic import build_reference_onnx, synthetic_video

DATA = Path(__file__).parent / "data"
SCHEMAS = Path(__file__).parents[1] / "src" / "fetalkey" / "schemas"


@pytest.fixture(scope="session")
def onnx_models(tmp_path_factory):
    root = tmp_path_factory.mktemp("onnx")
    return {
        "probs": build_reference_onnx(root / "probs.onnx", seed=1),
        "logits": build_reference_onnx(root / "logits.onnx", seed=2, class_output="logits"),
        "rgb": build_reference_onnx(root / "rgb.onnx", seed=3, channels=3, input_size=(24, 24)),
        "four_way": build_reference_onnx(root / "four.onnx", seed=4, n_classes=4),
        "small_features": build_reference_onnx(root / "feat.onnx", seed=5, feature_dim=512),
    }


@pytest.fixture(scope="session")
def handle():
    return synthetic_classifier(7)


@pytest.fixture(scope="session")
def video50():
    return synthetic_video(50, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
