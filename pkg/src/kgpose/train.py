"""Mini-batch RMSprop training with optional knowledge guidance."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import augment, make_batch, pixel_mean
from .errors import ConfigError, NonFiniteError
from .network import FractalNet, NetworkConfig
from .projection import LambdaSchedule, ProjectionHead, compute_losses

LOG_COLUMNS = ("step", "epoch", "l_f", "l_kp", "lambda", "total", "learning_rate")


@dataclass
class RMSprop:
    """``v = d v + (1 - d) g^2``; ``w -= lr g / (sqrt(v) + eps)``."""

    lr: float = 2.5e-4
    decay: float = 0.99
    eps: float = 1e-8
    state: dict = field(default_factory=dict)

    def step(self, params):
        for name, p in params.items():
            if p.grad is None:
                continue
            v = self.state.get(name)
            if v is None:
                v = self.state[name] = np.zeros_like(p.data)
            g = p.grad.astype(p.data.dtype, copy=False)
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            p.data -= (self.lr * g / (np.sqrt(v) + self.eps)).astype(p.data.dtype, copy=False)


@dataclass
class PlateauSchedule:
    """Halve the learning rate after ``patience`` epochs without relative improvement."""

    patience: int = 5
    min_delta: float = 1e-4
    factor: float = 0.5
    floor: float = 1e-6
    best: float = math.inf
    bad_epochs: int = 0

    def update(self, loss, lr):
        if loss < self.best * (1.0 - self.min_delta):
            self.best = loss
            self.bad_epochs = 0
            return lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.bad_epochs = 0
            return max(lr * self.factor, self.floor)
        return lr


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 16
    lr: float = 2.5e-4
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    plateau_patience: int = 5
    plateau_delta: float = 1e-4
    lr_floor: float = 1e-6
    lambda0: float = 0.5
    lambda_min: float = 0.01
    decay_epochs: int = 0  # 0: decay over the first half of training
    guidance: bool = True
    augment: bool = False
    sigma: float = 1.0
    seed: int = 0
    head_seed: int = 1

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if not 0 <= self.lambda_min <= self.lambda0 <= 1:
            raise ConfigError("need 0 <= lambda_min <= lambda0 <= 1")

    def epochs(self, dataset_size):
        per_epoch = math.ceil(dataset_size / self.batch_size)
        return math.ceil(self.steps / per_epoch) if self.steps else 0

    def schedule(self, dataset_size):
        if not self.guidance:
            return LambdaSchedule(0.0, 0.0, 0)
        decay = self.decay_epochs or max(1, self.epochs(dataset_size) // 2)
        return LambdaSchedule(self.lambda0, self.lambda_min, decay)


@dataclass
class TrainResult:
    net: FractalNet
    head: ProjectionHead | None
    log: list
    stopped_early: bool = False

    @property
    def last(self) -> dict:
        return self.log[-1] if self.log else {}


def _dump_state(path, net, head, report, step):
    state = dict(net.store.state())
    if head is not None:
        state.update(head.store.state())
    meta = {"step": str(step)}
    if report is not None:
        meta.update({k: repr(v) for k, v in asdict(report).items()})
    save_checkpoint(path, state, meta)


def train_loop(samples, net: FractalNet, config: TrainConfig, head: ProjectionHead | None = None,
               mean=None, log_path=None, checkpoint_dir=None, callback=None,
               val_samples=None, dump_path=None) -> TrainResult:
    """Train ``net`` (and ``head`` when guided) for ``config.steps`` mini-batch steps.

    Each epoch visits the samples in a seeded random order.  With
    ``head=None`` only the heatmap loss is trained; ``guidance=False`` keeps
    the head attached for reporting but fixes lambda at 0.
    ``callback(step, report)`` may return True to stop early.  The
    plateau schedule watches the mean heatmap loss on ``val_samples``, or
    on the training batches of the epoch when none are given.
    """
    samples = list(samples)
    if not samples:
        raise ConfigError("training needs a nonempty dataset")
    mean = pixel_mean(samples) if mean is None else np.asarray(mean)
    size = net.config.heatmap_size
    dtype = net.store.dtype
    rng = np.random.default_rng(config.seed)
    opt = RMSprop(config.lr, config.rms_decay, config.rms_eps)
    plateau = PlateauSchedule(config.plateau_patience, config.plateau_delta, 0.5, config.lr_floor)
    lam_of = config.schedule(len(samples))
    params = dict(net.params)
    if head is not None:
        params.update(head.params)

    log_file = writer = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    log = []
    step = 0
    epoch = 0
    stopped = False
    try:
        while step < config.steps and not stopped:
            order = rng.permutation(len(samples))
            lam = lam_of(epoch)
            epoch_losses = []
            for k in range(0, len(order), config.batch_size):
                if step >= config.steps:
                    break
                chosen = [samples[i] for i in order[k:k + config.batch_size]]
                if config.augment:
                    chosen = [augment(s, rng) for s in chosen]
                batch = make_batch(chosen, mean, size, config.sigma, dtype)
                for p in params.values():
                    p.zero_grad()
                report = None
                try:
                    total, report, _ = compute_losses(net, head, batch.images, batch.gt,
                                                      batch.weights, batch.knowledge, lam)
                    if not np.isfinite(report.total):
                        raise NonFiniteError(f"loss {report.total}")
                    total.backward()
                except NonFiniteError as exc:
                    if dump_path is None and checkpoint_dir is not None:
                        dump_path = os.path.join(checkpoint_dir, "nonfinite_dump.ckpt")
                    if dump_path is not None:
                        _dump_state(dump_path, net, head, report, step)
                    raise NonFiniteError(
                        f"non-finite value at step {step} (epoch {epoch}): {exc}") from exc
                opt.step(params)
                step += 1
                row = {"step": step, "epoch": epoch, "l_f": report.l_f, "l_kp": report.l_kp,
                       "lambda": report.lam, "total": report.total, "learning_rate": opt.lr}
                log.append(row)
                if writer is not None:
                    writer.writerow([row[c] if isinstance(row[c], int) else repr(float(row[c]))
                                     for c in LOG_COLUMNS])
                epoch_losses.append(report.l_f)
                if callback is not None and callback(step, report):
                    stopped = True
                    break
            val = (validation_loss(net, val_samples, mean, config.sigma)
                   if val_samples else float(np.mean(epoch_losses)))
            opt.lr = plateau.update(val, opt.lr)
            if checkpoint_dir is not None:
                save_trunk(os.path.join(checkpoint_dir, f"epoch{epoch:04d}.ckpt"), net,
                           {"epoch": str(epoch), "step": str(step)})
                if head is not None:
                    save_checkpoint(os.path.join(checkpoint_dir, f"epoch{epoch:04d}.head.ckpt"),
                                    head.store.state(), {"epoch": str(epoch)})
            epoch += 1
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(net, head, log, stopped)


def validation_loss(net, samples, mean, sigma=1.0, batch_size=32):
    losses = []
    for k in range(0, len(samples), batch_size):
        batch = make_batch(samples[k:k + batch_size], mean, net.config.heatmap_size, sigma,
                           net.store.dtype)
        _, report, _ = compute_losses(net, None, batch.images, batch.gt, batch.weights, None, 0.0,
                                      training=False)
        losses.append(report.l_f * len(batch.images))
    return float(np.sum(losses) / len(samples))


def save_trunk(path, net: FractalNet, extra=None):
    """Inference checkpoint: trunk parameters and BN statistics only."""
    save_checkpoint(path, net.store.state(), {**net.config.to_metadata(), **(extra or {})})


def load_trunk(path) -> FractalNet:
    state, meta = load_checkpoint(path)
    net = FractalNet(NetworkConfig.from_metadata(meta))
    net.store.load_state(state, strict=True)
    return net

