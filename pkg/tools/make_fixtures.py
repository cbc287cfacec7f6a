"""Regenerate the bundled dataset fixtures in src/fetalkey/data/.

table1_manifest.csv
    12,400 image records whose per-class image, patient and train counts
    follow the public maternal-fetal planes dataset summary. The "Other"
    brain row lists more patients (575) than images (143); a per-image
    manifest cannot express that, so that class gets one patient per image.

table2_videos.csv
    130 video records whose duration and fps moments (population
    statistics) match the clinical video summary: duration 4-50 s,
    mean 16.42, std 7.85; fps 22-55, mean 29.67, std 3.63.

Run from the repository root:  python tools/make_fixtures.py
"""

from pathlib import Path

import numpy as np

from fetalkey.core import ClassLabel
from fetalkey.dataset import (DatasetManifest, ImageEntry, VideoEntry, video_stats,
                              write_manifest, write_video_list)

OUT = Path(__file__).resolve().parents[1] / "src" / "fetalkey" / "data"

# label: (images, train images, patient ids)
BRAIN_PATIENTS = 1082
ONLY_NOT_BRAIN = 710


def brain_pid(i):
    return f"Patient{i:05d}"


def table1_entries():
    nb_pids = ([brain_pid(i) for i in range(1021)]
               + [brain_pid(BRAIN_PATIENTS + i) for i in range(ONLY_NOT_BRAIN)])
    plan = {
        ClassLabel.TransThalamic: (1638, 873, [brain_pid(i) for i in range(909)]),
        ClassLabel.TransVentricular: (597, 231, [brain_pid(i) for i in range(636, 1082)]),
        ClassLabel.TransCerebellar: (714, 375, [brain_pid(i) for i in range(575)]),
        ClassLabel.BrainOther: (143, 77, [brain_pid(i) for i in range(143)]),
        ClassLabel.NotABrain: (9308, 5509, nb_pids),
    }
    entries = []
    for label, (n_images, n_train, pids) in plan.items():
        owners = sorted(pids[k % len(pids)] for k in range(n_images))
        for k, pid in enumerate(owners):
            split = "train" if k < n_train else "test"
            entries.append(ImageEntry(pid, f"{pid}_{label.name}_{k:05d}.png", label, split))
    return entries


def pinned_sample(rng, n, lo, hi, mean, std, draw, decimals=2):
    """n values with exact min/max and population mean/std (before rounding)."""
    total = n * mean
    sumsq = n * (std ** 2 + mean ** 2)
    m = n - 2
    mi = (total - lo - hi) / m
    vi = (sumsq - lo ** 2 - hi ** 2) / m - mi ** 2
    for _ in range(10_000):
        z = draw(rng, m)
        x = mi + np.sqrt(vi) * (z - z.mean()) / z.std()
        if x.min() > lo and x.max() < hi:
            values = np.round(np.concatenate(([lo], x, [hi])), decimals)
            return rng.permutation(values)
    raise RuntimeError("could not build a pinned sample")


def table2_videos(seed=2023):
    rng = np.random.default_rng(seed)
    durations = pinned_sample(rng, 130, 4.0, 50.0, 16.42, 7.85, lambda r, k: r.gamma(6.0, size=k))
    fps = pinned_sample(rng, 130, 22.0, 55.0, 29.67, 3.63, lambda r, k: r.normal(size=k))
    return [VideoEntry(f"video{i:03d}", float(d), float(f), int(round(d * f)))
            for i, (d, f) in enumerate(zip(durations, fps))]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    write_manifest(DatasetManifest(table1_entries()), OUT / "table1_manifest.csv")
    videos = table2_videos()
    write_video_list(videos, OUT / "table2_videos.csv")
    print(video_stats(videos))


if __name__ == "__main__":
    main()
