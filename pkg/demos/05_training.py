"""
Training with and without knowledge guidance
============================================

A short run of the default network on 16 figures.  The projection heads
only exist during training; the saved checkpoint holds the trunk alone.
Expect roughly a minute per 100 steps on one CPU core.
"""

from pathlib import Path

import numpy as np

from kgpose.config import RunConfig
from kgpose.data import generate_dataset, pixel_mean
from kgpose.experiments import evaluate_pck
from kgpose.network import FractalNet
from kgpose.projection import ProjectionHead
from kgpose.train import load_trunk, save_trunk, train_loop

out = Path(__file__).with_name("output")
out.mkdir(exist_ok=True)
STEPS = 150

run = RunConfig(augment=False, steps=STEPS)
samples = generate_dataset(16, seed=0)
mean = pixel_mean(samples)

for guided in (True, False):
    net = FractalNet(run.network(), seed=0)
    head = ProjectionHead(run.head(), seed=1)
    result = train_loop(samples, net, run.training(guidance=guided), head, mean=mean,
                        log_path=out / f"train_{'guided' if guided else 'unguided'}.csv")
    first, last = result.log[0], result.log[-1]
    score = evaluate_pck(net, samples, mean).total
    print(f"guided={guided}: l_f {first['l_f']:.1f} -> {last['l_f']:.1f}, "
          f"lambda {first['lambda']:.2f} -> {last['lambda']:.2f}, train PCK@0.2 {100 * score:.1f}%")

# Drop the heads: the trunk checkpoint reproduces the same heatmaps.
save_trunk(out / "trunk.ckpt", net)
x = (samples[0].image - mean[:, None, None])[None].astype(np.float32)
a = net.forward(x, training=False)[0][-1].data
b = load_trunk(out / "trunk.ckpt").forward(x, training=False)[0][-1].data
print("reloaded trunk is bit-identical:", a.tobytes() == b.tobytes())
