"""
Scoring predictions
===================

PCK, PCKh, strict PCP and the PDJ curve on a hand-made pose, where every
number can be checked with a ruler.
"""

import numpy as np

from kgpose.metrics import EvalRecord, pck, pckh, pcp_average, pcp_strict, pdj_auc

gt = np.array([
    [50, 0], [50, 10], [30, 15], [70, 15], [20, 35], [80, 35], [0, 50], [100, 50],
    [40, 55], [60, 55], [40, 78], [60, 78], [40, 100], [60, 100],
], dtype=float)
visible = np.zeros(14, dtype=int)

# Move the left wrist 25 px: beyond 0.2 x the 100 px box, so one miss.
pred = gt.copy()
pred[6] += [25, 0]
rec = EvalRecord(pred, gt, visible)
r = pck([rec])
print(f"PCK@0.2 total {100 * r.total:.1f}%  wrists {100 * r.groups['Wri.']:.0f}%")

# PCKh measures against the 10 px head segment instead.
print(f"PCKh@0.5 total {100 * pckh([rec]).total:.1f}%")

# Strict PCP needs both endpoints within half the limb length; the
# averaged variant only needs their mean error to be.
g2 = gt.copy()
g2[0], g2[1] = [0, 0], [10, 0]
p2 = g2.copy()
p2[0] = [0, 6]
r2 = EvalRecord(p2, g2, visible)
print("head limb strict:", pcp_strict([r2]).per_item[0], " average:", pcp_average([r2]).per_item[0])

# Detection rate against the torso diameter, integrated over 0..0.5.
noisy = EvalRecord(gt + np.random.default_rng(0).normal(scale=5, size=gt.shape), gt, visible)
curve = pdj_auc([noisy])
print("PDJ at 0.1 / 0.2 / 0.5:", [round(float(curve.curve[k]), 3) for k in (10, 20, 50)],
      " AUC", round(curve.auc, 3))
