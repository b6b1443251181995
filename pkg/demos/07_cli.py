"""
The command line, end to end
============================

Generate a dataset, train briefly, predict, score and render, all via
the ``kgpose`` entry point.  A small network config keeps it quick.
"""

import subprocess
import sys
from pathlib import Path

from kgpose.config import RunConfig

out = Path(__file__).with_name("output") / "cli"
out.mkdir(parents=True, exist_ok=True)
cfg = out / "small.cfg"
cfg.write_text(RunConfig(input_size=32, heatmap_size=8, hourglass_levels=3, base_channels=8,
                         steps=60, batch_size=8, augment=False).to_text())


def kgpose(*args):
    cmd = [sys.executable, "-m", "kgpose", *map(str, args)]
    print("$ kgpose", " ".join(map(str, args)))
    proc = subprocess.run(cmd, capture_output=True, text=True)
    print(proc.stdout.strip() or proc.stderr.strip(), f"[exit {proc.returncode}]\n")
    return proc.returncode


kgpose("gen", "--out", out / "data", "--count", "24", "--seed", "1", "--size", "32")
kgpose("train", "--config", cfg, "--data", out / "data", "--out", out / "model.ckpt")
kgpose("infer", "--ckpt", out / "model.ckpt", "--data", out / "data", "--out", out / "pred.csv",
       "--flip", "--nms")
kgpose("eval", "--pred", out / "pred.csv", "--gt", out / "data" / "annotations.csv",
       "--metric", "pck")
kgpose("render", "--ckpt", out / "model.ckpt", "--image", out / "data" / "img00000.ppm",
       "--out", out / "render")
# an unknown metric is a usage error (exit 2)
kgpose("eval", "--pred", out / "pred.csv", "--gt", out / "data" / "annotations.csv",
       "--metric", "mAP")
