"""
Dataset bookkeeping
===================

Uses the bundled manifest (same class and patient counts as the public
maternal-fetal plane dataset) to show the statistics table, a
patient-disjoint split and per-epoch undersampling of NotABrain images.
"""

from fetalkey.dataset import (epoch_undersample, fixture_path, manifest_stats, patient_disjoint_split,
                              read_manifest, read_video_list, round_stats, video_stats)

manifest = read_manifest(fixture_path("table1_manifest.csv"))

print(f"{'class':18} {'patients':>8} {'images':>7} {'train':>6}")
for name, row in manifest_stats(manifest).items():
    print(f"{name:18} {row['patients']:8d} {row['images']:7d} {row['train_images']:6d}")

# %% split by patient, aiming for 80% of the images in train
split = patient_disjoint_split(manifest, 0.8, seed=0)
print("\ntrain fraction reached:", round(split.achieved_fraction, 4))
print("shared patients:", len(split.train.patients() & split.val.patients()))

# %% NotABrain is capped at 500 per epoch, with a fresh subset each time
train = manifest.with_split("train")
seen = []
for epoch in range(3):
    sample = epoch_undersample(train, epoch, seed=0)
    nab = {e.image_path for e in sample if e.label.name == "NotABrain"}
    print(f"epoch {epoch}: {len(sample)} images, {len(nab)} NotABrain,",
          f"overlap with epoch 0: {len(nab & seen[0]) if seen else len(nab)}")
    seen.append(nab)

# %% video durations
print("\nvideos:", round_stats(video_stats(read_video_list(fixture_path("table2_videos.csv")))))
