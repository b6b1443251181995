"""
From heatmaps to joints
=======================

Heatmaps are merged over horizontal flips and image scales, thresholded
into blobs, and then a greedy suppression across all joint channels
keeps each location from being claimed by two joints.
"""

import numpy as np

from kgpose.data import generate_dataset, render_gt_heatmaps
from kgpose.decode import PLAIN, Blob, DecodeConfig, cross_heatmap_nms, detect_blobs, heatmaps_to_pose


def gaussian(u, v, peak=1.0, size=16):
    ys, xs = np.mgrid[0:size, 0:size]
    return peak * np.exp(-((xs - u) ** 2 + (ys - v) ** 2) / 2)


# Two bumps in one map give two blobs.
blobs = detect_blobs(gaussian(3, 3) + gaussian(12, 11, 0.8))
print("blobs:", [(b.u, b.v, round(b.response, 3)) for b in blobs])

# Greedy cross-channel suppression: the strongest blob wins its channel
# and knocks out nearby blobs of every other channel.
p1, p2 = Blob(0, 5, 5, 0.9, 1), Blob(0, 12, 12, 0.8, 1)
q, p3 = Blob(1, 6, 5, 0.7, 1), Blob(1, 0, 14, 0.5, 1)
chosen = cross_heatmap_nms([[p1, p2], [q, p3]], radius=2.0)
print("assignment:", {c: (b.u, b.v) for c, b in chosen.items()})

# A wider radius does not always assign fewer joints: suppressing the
# second blob here frees two others.
quad = [[Blob(0, 10, 13, 1.0, 1)], [Blob(1, 10, 10, 0.9, 1)], [Blob(2, 8, 10, 0.8, 1)],
        [Blob(3, 12, 10, 0.7, 1)]]
for r in (2.0, 3.2):
    print(f"radius {r}: {len(cross_heatmap_nms(quad, r))} joints assigned")

# Perfect ground-truth heatmaps decode back to within a pixel.
s = generate_dataset(1, seed=5)[0]
maps = render_gt_heatmaps(s.annotation, 16).maps
for config in (PLAIN, DecodeConfig(scales=(1.0,), flip=False, nms=True)):
    est = heatmaps_to_pose(maps, config)
    vis = s.annotation.visible()
    err = np.linalg.norm(est.joints[vis] - s.annotation.joints[vis], axis=1)
    print(f"nms={config.nms}: max error {err.max():.3f} px over {vis.sum()} visible joints")
