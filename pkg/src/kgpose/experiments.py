"""End-to-end experiments: overfitting, guided vs unguided training, test-time arms."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig
from .data import GeneratorConfig, generate_dataset, pixel_mean
from .decode import PLAIN, DecodeConfig, decode_images, net_predictor
from .metrics import EvalRecord, MetricResult, pck
from .network import FractalNet
from .projection import ProjectionHead
from .train import train_loop

ARMS = {
    "plain": PLAIN,
    "+flip": DecodeConfig(scales=(1.0,), flip=True, nms=False),
    "+scale": DecodeConfig(scales=(1.0, 0.75), flip=True, nms=False),
    "+nms": DecodeConfig(scales=(1.0, 0.75), flip=True, nms=True),
}


def evaluate_pck(net, samples, mean, config: DecodeConfig = PLAIN, threshold=0.2) -> MetricResult:
    images = np.stack([s.image for s in samples])
    estimates = decode_images(images, net_predictor(net), config, mean)
    records = [EvalRecord(e.joints, s.annotation.joints, s.annotation.visibility)
               for e, s in zip(estimates, samples)]
    return pck(records, threshold)


@dataclass
class OverfitResult:
    reached: bool
    steps: int
    seconds: float
    history: list  # (step, pck)
    net: FractalNet
    mean: np.ndarray
    samples: list


def overfit_check(count=16, max_steps=2000, check_every=50, seed=0, run: RunConfig | None = None,
                  log=None) -> OverfitResult:
    """Guided training on ``count`` figures until training-set PCK@0.2 reaches 100%."""
    run = run or RunConfig(augment=False, steps=max_steps)
    samples = generate_dataset(count, seed)
    mean = pixel_mean(samples)
    net = FractalNet(run.network(), seed=run.seed)
    head = ProjectionHead(run.head(), seed=run.head_seed)
    history = []
    start = time.perf_counter()

    def check(step, report):
        if step % check_every:
            return False
        score = evaluate_pck(net, samples, mean).total
        history.append((step, score))
        if log is not None:
            log(f"step {step:5d}  l_f {report.l_f:9.3f}  lambda {report.lam:.3f}  "
                f"train PCK@0.2 {100 * score:5.1f}%")
        return score == 1.0

    result = train_loop(samples, net, run.training(guidance=True), head, mean=mean, callback=check)
    steps = len(result.log)
    reached = bool(history) and history[-1][1] == 1.0
    return OverfitResult(reached, steps, time.perf_counter() - start, history, net, mean, samples)


@dataclass
class TrendResult:
    seeds: tuple
    steps: int
    guided: list = field(default_factory=list)
    unguided: list = field(default_factory=list)

    @property
    def delta(self):
        return float(np.mean(self.guided) - np.mean(self.unguided))

    def summary(self):
        rows = [f"seed {s}: guided {100 * g:5.1f}%  unguided {100 * u:5.1f}%"
                for s, g, u in zip(self.seeds, self.guided, self.unguided)]
        rows.append(f"mean: guided {100 * np.mean(self.guided):5.2f}%  "
                    f"unguided {100 * np.mean(self.unguided):5.2f}%  delta {100 * self.delta:+.2f}")
        return "\n".join(rows)


def trend_datasets(train_count=500, test_count=200, data_seed=1000):
    cfg = GeneratorConfig(distractors=True, occluders=True)
    return (generate_dataset(train_count, data_seed, cfg),
            generate_dataset(test_count, data_seed + train_count + 1, cfg))


def guidance_trend(steps, seeds=(0, 1, 2), train=None, test=None, run: RunConfig | None = None,
                   log=None) -> TrendResult:
    """Test PCK@0.2 for guided and unguided training at the same step budget per seed."""
    if train is None or test is None:
        train, test = trend_datasets()
    run = run or RunConfig()
    mean = pixel_mean(train)
    out = TrendResult(tuple(seeds), steps)
    for seed in seeds:
        for guided in (True, False):
            net = FractalNet(run.network(), seed=seed)
            head = ProjectionHead(run.head(), seed=seed + 100)
            cfg = replace(run.training(guidance=guided), steps=steps, seed=seed)
            train_loop(train, net, cfg, head, mean=mean)
            score = evaluate_pck(net, test, mean).total
            (out.guided if guided else out.unguided).append(score)
            if log is not None:
                log(f"seed {seed} {'guided' if guided else 'unguided':>8}: test PCK@0.2 "
                    f"{100 * score:5.1f}%")
    return out


def run_arms(net, samples, mean, arms=ARMS) -> dict:
    """PCK@0.2 of every test-time arm on ``samples``."""
    return {name: evaluate_pck(net, samples, mean, config) for name, config in arms.items()}


def arms_report(results: dict) -> str:
    lines = [f"{'arm':<8} PCK@0.2"]
    lines += [f"{name:<8} {100 * r.total:6.2f}" for name, r in results.items()]
    return "\n".join(lines)
