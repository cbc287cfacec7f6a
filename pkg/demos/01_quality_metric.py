"""
Frame quality on a toy video
============================

Walks through the quality metric one step at a time on a synthetic
video, then checks the step-by-step numbers against the one-call API.
"""

import numpy as np

from fetalkey import synthetic_classifier
from fetalkey.classifier import classify_batch
from fetalkey.quality import (compute_quality_series, harden, harden_and_filter, margin_quality,
                              stability_mask, tta_aggregate)
from fetalkey.synthetic import synthetic_video
from fetalkey.transforms import apply_affine, default_tta_catalogue

np.set_printoptions(precision=3, suppress=True)

# A 60 frame video and the seeded stand-in classifier.
frames = synthetic_video(60, seed=4)
handle = synthetic_classifier(7)
window = 5

# %% Step 1: classify the untransformed video
probs, feats = classify_batch(handle, frames)
classes = probs.argmax(axis=1)
print("predicted classes:", "".join(str(c) for c in classes))

# %% Step 2: hardening keeps only the winning probability
print("frame 0", probs[0], "->", harden(probs[0]))

# %% Step 3: stability over +/- window frames
mask = stability_mask(classes, window)
print(f"{mask.sum()} of {len(mask)} frames are stable with w={window}")
print("stable:", "".join("#" if m else "." for m in mask))

# %% Steps 2-3 for every TTA copy, then average
catalogue = default_tta_catalogue()
per_copy = []
for spec in catalogue:
    p, _ = classify_batch(handle, [apply_affine(f, spec) for f in frames])
    per_copy.append(harden_and_filter(p, window))
    print(f"{str(spec):>26}: {int((per_copy[-1].sum(axis=1) > 0).sum()):2d} stable frames")
aggregated = tta_aggregate(per_copy)

# %% Step 5: margin of the winner over the rest, clamped to [0, 1]
quality = margin_quality(aggregated)
print("quality:", quality)

# The same thing in one call.
series = compute_quality_series(frames, handle, catalogue, window)
assert np.allclose(series.quality, quality, atol=1e-12)
best = int(np.argmax(series.quality))
print(f"best frame {best}: quality {series.quality[best]:.3f}, class {series.labels()[best].name}")
