"""Regenerate tests/data/synthetic_seed7_zeros.json (golden synthetic-classifier output)."""

import json
from pathlib import Path

import numpy as np

from fetalkey import Frame, classify, synthetic_classifier

out = classify(synthetic_classifier(7), Frame(np.zeros((64, 64))))
doc = {"probs": out.probs.p.tolist(), "features_head": out.features.f[:16].tolist(),
       "features_sum": float(out.features.f.sum())}
path = Path(__file__).resolve().parents[1] / "tests" / "data" / "synthetic_seed7_zeros.json"
path.write_text(json.dumps(doc, indent=1) + "\n")
print(path)
