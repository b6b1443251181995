"""
Hand-written gradients, checked by finite differences
=====================================================

Every layer of the network is a numpy function paired with a backward
rule.  This script builds a tiny expression by hand, runs reverse mode,
and then compares the analytic gradients against central differences.
"""

import numpy as np

from kgpose import tensor as T
from kgpose.gradcheck import TOLERANCE, check_gradients, network_case, op_cases
from kgpose.tensor import Tensor

rng = np.random.default_rng(0)

# A 3x3 convolution followed by a relu and a squared error.  Leaves that
# need gradients are created with requires_grad=True.
x = Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2, 3, 3)), requires_grad=True)
loss = T.l2_loss(T.relu(T.conv2d(x, w)), np.zeros((4, 6, 6)))
loss.backward()
print("loss", round(loss.item(), 4))
print("dL/dw has shape", w.grad.shape, "and norm", round(float(np.linalg.norm(w.grad)), 4))

# The same graph, checked numerically.  check_gradients re-runs the
# closure with each probed coordinate nudged by +/- 1e-5 (float64).
def fn():
    return T.l2_loss(T.relu(T.conv2d(x, w)), np.zeros((4, 6, 6)))

print("relative error", f"{check_gradients(fn, [x, w], rng=rng):.2e}", "tolerance", TOLERANCE)

# Every op ships its own small test case; here is one seed of each.
for name, build in sorted(op_cases().items()):
    f, params = build(np.random.default_rng(1))
    print(f"  {name:<16} {check_gradients(f, params):.2e}")

# A deliberately broken backward rule is caught immediately.
f, params = op_cases()["conv2d"](np.random.default_rng(1))
with T.corrupt_backward("conv2d", 1.5):
    print("conv2d with a 1.5x backward bug:", f"{check_gradients(f, params):.2e}")

# Finally the whole network (two tiny stacks, both projection branches)
# on a 3x16x16 input.
print("end-to-end network, seed 0:", f"{network_case(0):.2e}")
