"""Training-only knowledge projection heads and the combined training objective.

Two branches map network outputs onto the knowledge vector:

* geometric: final-stage heatmaps -> 1x1 conv (8 ch) -> FC -> 224 values
* edge: tapped trunk features -> 1x1 conv (C/2) -> 1x1 conv (C/4) -> FC -> E

Both branches are linear; they exist only to shape the trunk's gradients
and are never part of an inference graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, InvariantViolation
from .knowledge import HOG_BINS, KNOWLEDGE_DIM
from .network import FractalNet, ParamStore
from .skeleton import SKELETON
from .tensor import Tensor

BRANCH_WEIGHT = 0.05
GEO_CHANNELS = 8


@dataclass(frozen=True)
class HeadConfig:
    num_heatmaps: int = 15
    heatmap_size: int = 16
    tap_channels: int = 64
    geo_dim: int = KNOWLEDGE_DIM
    edge_dim: int = SKELETON.num_limbs * HOG_BINS
    beta: float = 1e-4
    branch_weight: float = BRANCH_WEIGHT

    def __post_init__(self):
        if self.tap_channels % 4:
            raise ConfigError("edge branch needs tap channels divisible by 4")

    @classmethod
    def for_network(cls, net_config, **kw):
        return cls(num_heatmaps=net_config.num_heatmaps, heatmap_size=net_config.heatmap_size,
                   tap_channels=net_config.channels, **kw)


class ProjectionHead:
    """Parameters of both branches: 3 conv layers and 2 fully-connected layers."""

    def __init__(self, config: HeadConfig, seed=1, dtype=np.float32):
        self.config = config
        self.store = ParamStore(np.random.default_rng(seed), dtype)
        c = config
        hw = c.heatmap_size ** 2
        self.store.conv("head.geo.conv", GEO_CHANNELS, c.num_heatmaps, 1, init="xavier")
        self.store.fc("head.geo.fc", c.geo_dim, GEO_CHANNELS * hw)
        self.store.conv("head.edge.conv1", c.tap_channels // 2, c.tap_channels, 1, init="xavier")
        self.store.conv("head.edge.conv2", c.tap_channels // 4, c.tap_channels // 2, 1, init="xavier")
        self.store.fc("head.edge.fc", c.edge_dim, (c.tap_channels // 4) * hw)
        self.store.frozen = True

    @property
    def params(self):
        return self.store.params

    def layer_inventory(self):
        names = {k.rsplit(".", 1)[0] for k in self.params}
        return {
            "conv": sorted(n for n in names if ".conv" in n),
            "fc": sorted(n for n in names if n.endswith(".fc")),
        }

    def regularizer(self):
        return T.square_norm(self.params.values())


def _check_spatial(x, channels, size, what):
    if x.ndim not in (3, 4) or x.shape[-3:] != (channels, size, size):
        raise DimensionError(f"{what}: expected [.., {channels}, {size}, {size}], got {x.shape}")


def geometric_branch_forward(heatmaps: Tensor, head: ProjectionHead) -> Tensor:
    c = head.config
    _check_spatial(heatmaps, c.num_heatmaps, c.heatmap_size, "geometric branch")
    p = head.params
    y = T.conv2d(heatmaps, p["head.geo.conv.w"], p["head.geo.conv.b"])
    return T.fully_connected(T.flatten(y), p["head.geo.fc.w"], p["head.geo.fc.b"])


def edge_branch_forward(tap: Tensor, head: ProjectionHead) -> Tensor:
    c = head.config
    _check_spatial(tap, c.tap_channels, c.heatmap_size, "edge branch")
    p = head.params
    y = T.conv2d(tap, p["head.edge.conv1.w"], p["head.edge.conv1.b"])
    y = T.conv2d(y, p["head.edge.conv2.w"], p["head.edge.conv2.b"])
    return T.fully_connected(T.flatten(y), p["head.edge.fc.w"], p["head.edge.fc.b"])


def knowledge_targets(knowledge, geo_dim=KNOWLEDGE_DIM):
    """Stack geometric and edge targets for a KnowledgeVector or a list of them."""
    if not isinstance(knowledge, (list, tuple)):
        return knowledge.geometric_target(geo_dim), knowledge.edges()
    geo = np.stack([k.geometric_target(geo_dim) for k in knowledge])
    edge = np.stack([k.edges() for k in knowledge])
    return geo, edge


@dataclass
class ProjectionTerms:
    geo: Tensor
    edge: Tensor
    reg: Tensor
    total: Tensor


def projection_loss(pred_geo: Tensor, pred_edge: Tensor, knowledge, head: ProjectionHead,
                    return_terms=False):
    """Knowledge-projection loss: weighted squared errors plus beta * ||W||^2.

    Batched predictions are averaged over the batch; the regularizer is not.
    """
    c = head.config
    k_geo, k_edge = knowledge_targets(knowledge, c.geo_dim)
    if k_geo.shape != pred_geo.shape or k_edge.shape != pred_edge.shape:
        raise DimensionError(
            f"knowledge layout {k_geo.shape}/{k_edge.shape} does not match branch outputs "
            f"{pred_geo.shape}/{pred_edge.shape}")
    n = pred_geo.shape[0] if pred_geo.ndim == 2 else 1
    geo = T.scale(T.l2_loss(pred_geo, k_geo), c.branch_weight / n)
    edge = T.scale(T.l2_loss(pred_edge, k_edge), c.branch_weight / n)
    reg = T.scale(head.regularizer(), c.beta)
    total = T.add(T.add(geo, edge), reg)
    if return_terms:
        return ProjectionTerms(geo, edge, reg, total)
    return total


def heatmap_loss(pred_stages, gt, weights) -> Tensor:
    """Weighted squared heatmap error summed over stages, joints and pixels.

    Batched inputs are averaged over the batch.
    """
    gt = np.asarray(gt)
    total = None
    for pred in pred_stages:
        if pred.shape != gt.shape:
            raise DimensionError(f"stage output {pred.shape} vs ground truth {gt.shape}")
        term = T.l2_loss(pred, gt, weights)
        total = term if total is None else T.add(total, term)
    n = gt.shape[0] if gt.ndim == 4 else 1
    return T.scale(total, 1.0 / n) if n != 1 else total


def joint_objective(l_f, l_kp, lam):
    """``lam * l_kp + (1 - lam) * l_f`` for tensors or plain numbers."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    if isinstance(l_f, Tensor):
        return T.add(T.scale(l_kp, lam), T.scale(l_f, 1.0 - lam))
    return lam * l_kp + (1.0 - lam) * l_f


@dataclass(frozen=True)
class LambdaSchedule:
    lambda0: float = 0.5
    lambda_min: float = 0.01
    decay_epochs: int = 10

    def __call__(self, epoch):
        if epoch < 0:
            raise ConfigError("epoch must be >= 0")
        if self.decay_epochs <= 0 or epoch >= self.decay_epochs:
            return self.lambda_min
        frac = epoch / self.decay_epochs
        return self.lambda0 + (self.lambda_min - self.lambda0) * frac


def lambda_schedule(epoch, lambda0=0.5, lambda_min=0.01, decay_epochs=10):
    return LambdaSchedule(lambda0, lambda_min, decay_epochs)(epoch)


@dataclass
class LossReport:
    l_f: float
    l_kp: float
    lam: float
    total: float
    geo: float = 0.0
    edge: float = 0.0
    reg: float = 0.0

    def recomputed_total(self):
        return self.lam * self.l_kp + (1.0 - self.lam) * self.l_f


def compute_losses(net: FractalNet, head: ProjectionHead | None, images, gt, weights, knowledge,
                   lam, training=True):
    """Forward pass and all loss terms; returns ``(total_tensor, report, heatmaps)``.

    With ``head=None`` (unguided training) the objective is ``l_f`` alone.
    """
    heatmaps, tap = net.forward(images, training=training)
    l_f = heatmap_loss(heatmaps, gt, weights)
    if head is None:
        report = LossReport(l_f.item(), 0.0, 0.0, l_f.item())
        return l_f, report, heatmaps
    terms = projection_loss(geometric_branch_forward(heatmaps[-1], head),
                            edge_branch_forward(tap, head), knowledge, head, return_terms=True)
    total = joint_objective(l_f, terms.total, lam)
    report = LossReport(l_f.item(), terms.total.item(), lam, total.item(),
                        terms.geo.item(), terms.edge.item(), terms.reg.item())
    return total, report, heatmaps


def verify_injected_gradient(net: FractalNet, head: ProjectionHead, images, gt, weights, knowledge,
                             lam, tol=1e-10, layers=None):
    """Check that the guidance update at the injection layers is ``-lam * dL_KP/dW``.

    The objective is evaluated with the heatmap loss held constant, so the
    injection-layer gradient comes from the projection term alone; it must
    equal ``lam`` times the gradient of the projection loss on its own.
    Returns the largest absolute deviation between the two descent updates.
    """
    layers = layers or net.injection_layers()
    saved = {k: v.copy() for k, v in net.store.buffers.items()}

    def grads(build):
        net.store.zero_grad()
        head.store.zero_grad()
        for k, v in saved.items():
            net.store.buffers[k][...] = v
        build().backward()
        return {name: (net.params[name].grad if net.params[name].grad is not None
                       else np.zeros_like(net.params[name].data)) for name in layers}

    def kp_only():
        heatmaps, tap = net.forward(images, training=True)
        return projection_loss(geometric_branch_forward(heatmaps[-1], head),
                               edge_branch_forward(tap, head), knowledge, head)

    def combined():
        heatmaps, tap = net.forward(images, training=True)
        l_f = T.stop_gradient(heatmap_loss(heatmaps, gt, weights))
        l_kp = projection_loss(geometric_branch_forward(heatmaps[-1], head),
                               edge_branch_forward(tap, head), knowledge, head)
        return joint_objective(l_f, l_kp, lam)

    g_kp = grads(kp_only)
    g_all = grads(combined)
    for k, v in saved.items():
        net.store.buffers[k][...] = v
    net.store.zero_grad()
    head.store.zero_grad()
    deviation = max(float(np.abs(-g_all[n] - (-lam * g_kp[n])).max()) for n in layers)
    if deviation > tol:
        raise InvariantViolation(f"injected gradient deviates by {deviation:.3e} (> {tol:g})")
    return deviation
