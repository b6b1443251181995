"""
Hand-crafted limb knowledge
===========================

Each limb (pair of adjacent joints) contributes a geometric code built
from its Hough line parameters and a histogram of oriented gradients
taken along the limb.  Occluded limbs are zeroed out.
"""

import numpy as np

from kgpose.data import generate_dataset
from kgpose.knowledge import build_knowledge_vector, hog_limb_descriptor, hough_encode
from kgpose.skeleton import OBJECT_OCCLUDED, SKELETON

# A vertical limb at x = 3: the normal points along +x, so theta = 0
# and rho = 3.  Both endpoints lie exactly on the line.
code = hough_encode((3, 0), (3, 2))
print(f"theta {code.theta:.3f}  rho {code.rho:.3f}  residuals "
      f"{code.residual(3, 0):.1e} {code.residual(3, 2):.1e}")

# A horizontal intensity ramp has all gradient energy in orientation bin 0.
ramp = np.tile(np.arange(32.0), (32, 1))
print("ramp HOG", np.round(hog_limb_descriptor(ramp, (10, 10), (20, 10)), 3))

# The full knowledge vector for a generated figure.
sample = generate_dataset(1, seed=2)[0]
k = sample.knowledge
print("knowledge vector", k.data.shape, "norm", round(float(np.linalg.norm(k.data)), 6))
print("limbs kept:", int(k.limb_mask.sum()), "of", SKELETON.num_limbs)

# Hiding the left wrist removes exactly the left forearm slice.
vis = sample.annotation.visibility.copy()
vis[SKELETON.index("l_wrist")] = OBJECT_OCCLUDED
masked = build_knowledge_vector(sample.image, sample.annotation.joints, vis)
dropped = [SKELETON.joint_names[a] + "-" + SKELETON.joint_names[b]
           for m0, m1, (a, b) in zip(k.limb_mask, masked.limb_mask, SKELETON.limbs) if m0 and not m1]
print("masked limbs after hiding the left wrist:", dropped)
