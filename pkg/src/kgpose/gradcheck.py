"""Finite-difference gradient checks for the tensor operations and network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic, numeric):
    """Max absolute deviation scaled by the largest numeric gradient entry."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(fn, params, rng=None, max_probes=None, step=STEP, avoid_kinks=False):
    """Compare autodiff gradients of scalar ``fn()`` with central differences.

    ``params`` are leaf tensors read by ``fn``.  When ``max_probes`` is set,
    only that many randomly chosen coordinates of each tensor are perturbed.
    With ``avoid_kinks`` a probe whose +/- perturbation flips any relu or
    max-pool branch is replaced by another coordinate, since central
    differences across a kink do not estimate the derivative.
    Returns the worst relative error over all tensors.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    with T.record_activation_pattern() as base:
        fn().backward()
    worst = 0.0
    for p in params:
        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        flat = p.data.reshape(-1)
        if max_probes is not None and flat.size > max_probes:
            candidates = list(rng.permutation(flat.size))
            want = max_probes
        else:
            candidates = list(range(flat.size))
            want = flat.size
        used, numeric = [], []
        for i in candidates:
            if len(used) == want:
                break
            orig = flat[i]
            flat[i] = orig + step
            with T.record_activation_pattern() as pat_up:
                up = fn().item()
            flat[i] = orig - step
            with T.record_activation_pattern() as pat_down:
                down = fn().item()
            flat[i] = orig
            if avoid_kinks and not (_same_pattern(base, pat_up) and _same_pattern(base, pat_down)):
                continue
            used.append(i)
            numeric.append((up - down) / (2 * step))
        if used:
            worst = max(worst, relative_error(analytic[used], np.array(numeric)))
    return worst


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def _projected(out, rng):
    """Random linear functional of ``out`` so every output entry matters."""
    w = rng.normal(size=out.shape)
    return T.l2_loss(out, np.zeros(out.shape), np.abs(w) + 0.5)


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.normal(size=shape)
    x[np.abs(x) < margin] += 4 * margin
    return x


def op_cases():
    """Named gradient-check cases, each ``rng -> (fn, params)``."""

    def conv(rng):
        x = _param(rng, 2, 3, 5, 5)
        w = _param(rng, 4, 3, 3, 3)
        b = _param(rng, 4)
        return (lambda: _projected(T.conv2d(x, w, b), np.random.default_rng(1))), [x, w, b]

    def conv_strided(rng):
        x = _param(rng, 1, 2, 8, 8)
        w = _param(rng, 3, 2, 5, 5)
        b = _param(rng, 3)
        return (lambda: _projected(T.conv2d(x, w, b, stride=2), np.random.default_rng(1))), [x, w, b]

    def conv1x1(rng):
        x = _param(rng, 3, 4, 4)
        w = _param(rng, 2, 3, 1, 1)
        b = _param(rng, 2)
        return (lambda: _projected(T.conv2d(x, w, b), np.random.default_rng(1))), [x, w, b]

    def bn(rng):
        x = _param(rng, 2, 3, 4, 4)
        g = _param(rng, 3)
        b = _param(rng, 3)
        rm, rv = np.zeros(3), np.ones(3)
        return (lambda: _projected(T.batch_norm(x, g, b, rm, rv, training=True),
                                   np.random.default_rng(1))), [x, g, b]

    def bn_eval(rng):
        x = _param(rng, 3, 4, 4)
        g = _param(rng, 3)
        b = _param(rng, 3)
        rm, rv = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
        return (lambda: _projected(T.batch_norm(x, g, b, rm, rv, training=False),
                                   np.random.default_rng(1))), [x, g, b]

    def relu(rng):
        x = Tensor(_away_from_zero(rng, (3, 4, 4)), requires_grad=True)
        return (lambda: _projected(T.relu(x), np.random.default_rng(1))), [x]

    def pool(rng):
        x = _param(rng, 2, 4, 4)
        return (lambda: _projected(T.max_pool2(x), np.random.default_rng(1))), [x]

    def upsample(rng):
        x = _param(rng, 2, 3, 3)
        return (lambda: _projected(T.upsample_nearest2(x), np.random.default_rng(1))), [x]

    def concat(rng):
        a = _param(rng, 1, 3, 3)
        b = _param(rng, 2, 3, 3)
        return (lambda: _projected(T.concat_channels(a, b), np.random.default_rng(1))), [a, b]

    def add(rng):
        a = _param(rng, 2, 3, 3)
        b = _param(rng, 2, 3, 3)
        return (lambda: _projected(T.add(a, b), np.random.default_rng(1))), [a, b]

    def fc(rng):
        x = _param(rng, 6)
        w = _param(rng, 4, 6)
        b = _param(rng, 4)
        return (lambda: _projected(T.fully_connected(x, w, b), np.random.default_rng(1))), [x, w, b]

    def fc_batch(rng):
        x = _param(rng, 3, 6)
        w = _param(rng, 4, 6)
        b = _param(rng, 4)
        return (lambda: _projected(T.fully_connected(x, w, b), np.random.default_rng(1))), [x, w, b]

    def flat(rng):
        x = _param(rng, 2, 3, 3)
        return (lambda: _projected(T.flatten(x), np.random.default_rng(1))), [x]

    def l2(rng):
        x = _param(rng, 2, 5)
        t = rng.normal(size=(2, 5))
        w = rng.uniform(0.5, 20, size=(2, 5))
        return (lambda: T.l2_loss(x, t, w)), [x]

    def sqnorm(rng):
        a = _param(rng, 3, 2)
        b = _param(rng, 4)
        return (lambda: T.square_norm([a, b])), [a, b]

    def scale(rng):
        x = _param(rng, 4)
        return (lambda: _projected(T.scale(x, -0.7), np.random.default_rng(1))), [x]

    return {
        "conv2d": conv,
        "conv2d_stride2": conv_strided,
        "conv2d_1x1": conv1x1,
        "batch_norm": bn,
        "batch_norm_eval": bn_eval,
        "relu": relu,
        "max_pool2": pool,
        "upsample_nearest2": upsample,
        "concat": concat,
        "add": add,
        "fully_connected": fc,
        "fully_connected_batch": fc_batch,
        "flatten": flat,
        "l2_loss": l2,
        "square_norm": sqnorm,
        "scale": scale,
    }


@dataclass
class GradcheckResult:
    name: str
    max_error: float
    seeds: int

    @property
    def passed(self):
        return self.max_error < TOLERANCE


def run_op_suite(seeds=20, base_seed=0):
    results = []
    for name, build in op_cases().items():
        worst = 0.0
        for s in range(seeds):
            rng = np.random.default_rng(base_seed + s)
            fn, params = build(rng)
            worst = max(worst, check_gradients(fn, params))
        results.append(GradcheckResult(name, worst, seeds))
    return results


def tiny_network_config():
    """Smallest network that still has two stacks and a two-level hourglass."""
    from .network import NetworkConfig

    return NetworkConfig(input_size=16, heatmap_size=4, num_stacks=2, hourglass_levels=2,
                         base_channels=4)


def network_case(seed, tensors=8, probes=4):
    """End-to-end check on a 3x16x16 input: heatmap plus projection loss.

    The input and a random subset of ``tensors`` parameter tensors are
    probed at ``probes`` coordinates each.
    """
    from .network import FractalNet
    from .projection import HeadConfig, ProjectionHead, compute_losses

    rng = np.random.default_rng(seed)
    cfg = tiny_network_config()
    net = FractalNet(cfg, seed=seed, dtype=np.float64)
    head = ProjectionHead(HeadConfig.for_network(cfg), seed=seed + 1, dtype=np.float64)
    image = Tensor(rng.normal(size=(2, 3, 16, 16)), requires_grad=True)
    gt = rng.uniform(size=(2, cfg.num_heatmaps, 4, 4))
    weights = rng.uniform(0.5, 2.0, size=gt.shape)

    class _Knowledge:
        def __init__(self):
            self.geo = rng.normal(size=224)
            self.edge = rng.normal(size=head.config.edge_dim)

        def geometric_target(self, dim):
            return self.geo

        def edges(self):
            return self.edge

    knowledge = [_Knowledge(), _Knowledge()]
    names = sorted(net.params)
    chosen = [names[i] for i in rng.choice(len(names), tensors, replace=False)]
    params = [image] + [net.params[n] for n in chosen] + [head.params["head.geo.fc.w"]]

    def fn():
        total, _, _ = compute_losses(net, head, image, gt, weights, knowledge, 0.3)
        return total

    return check_gradients(fn, params, rng=rng, max_probes=probes, avoid_kinks=True)


def run_network_suite(seeds=20, base_seed=0):
    worst = max(network_case(base_seed + s) for s in range(seeds))
    return GradcheckResult("network_end_to_end", worst, seeds)
