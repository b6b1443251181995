"""
Synthetic stick figures and their heatmap targets
=================================================

The training data is procedural: articulated 14-joint figures drawn on
textured backgrounds, optionally with distractor figures and occluding
blocks.  This script writes a handful to ``demos/output/figures``.
"""

from pathlib import Path

import numpy as np

from kgpose.data import (GeneratorConfig, augment, generate_dataset, render_gt_heatmaps,
                         write_dataset, write_pgm)
from kgpose.skeleton import SKELETON

out = Path(__file__).with_name("output") / "figures"

cfg = GeneratorConfig(distractors=True, occluders=True)
samples = generate_dataset(8, seed=4, config=cfg)
write_dataset(out, samples)
print("wrote", len(samples), "images and annotations.csv to", out)

# Visibility flags: 0 visible, 1 self-occluded, 2 hidden behind an occluder.
for s in samples[:4]:
    flags = "".join(str(v) for v in s.annotation.visibility)
    print(f"  {s.annotation.image_id}: visibility {flags}")

# The network regresses one Gaussian heatmap per joint plus a background
# channel, at a quarter of the input resolution.
gt = render_gt_heatmaps(samples[0].annotation, 16)
print("heatmap stack", gt.maps.shape)
for j, name in enumerate(SKELETON.joint_names[:3]):
    v, u = np.unravel_index(np.argmax(gt.maps[j]), gt.maps[j].shape)
    print(f"  {name:<10} peak at heatmap pixel ({u}, {v})")
write_pgm(out / "heatmap_head_top.pgm", gt.maps[0])
write_pgm(out / "heatmap_background.pgm", gt.maps[-1])

# Augmentation rotates, scales and flips image and joints together; a
# flip also swaps left/right labels.
rng = np.random.default_rng(0)
aug = augment(samples[0], rng)
print("augmented joints stay consistent with the warped image:", aug.image.shape)
