"""Flat ``key = value`` run configuration with ``#`` comments."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .decode import DecodeConfig
from .errors import ConfigError
from .network import NetworkConfig
from .projection import HeadConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    # network
    input_size: int = 64
    heatmap_size: int = 16
    num_joints: int = 14
    num_stacks: int = 2
    hourglass_levels: int = 4
    base_channels: int = 32
    edge_branch_tap: int = 3
    # training
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
    decay_epochs: int = 0
    beta: float = 1e-4
    augment: bool = True
    sigma: float = 1.0
    seed: int = 0
    head_seed: int = 1
    # decoding
    scales: tuple = (1.0, 0.75)
    flip: bool = True
    nms: bool = True
    nms_threshold: float = 0.5
    nms_radius: float = 2.0

    def network(self) -> NetworkConfig:
        return NetworkConfig(self.input_size, self.heatmap_size, self.num_joints, self.num_stacks,
                             self.hourglass_levels, self.base_channels, self.edge_branch_tap)

    def training(self, guidance=True) -> TrainConfig:
        return TrainConfig(self.steps, self.batch_size, self.lr, self.rms_decay, self.rms_eps,
                           self.plateau_patience, self.plateau_delta, self.lr_floor, self.lambda0,
                           self.lambda_min, self.decay_epochs, guidance, self.augment, self.sigma,
                           self.seed, self.head_seed)

    def head(self) -> HeadConfig:
        return HeadConfig.for_network(self.network(), beta=self.beta)

    def decoding(self) -> DecodeConfig:
        return DecodeConfig(tuple(self.scales), self.flip, self.nms, self.nms_threshold,
                            floor=DecodeConfig.floor, radius=self.nms_radius)

    def to_text(self):
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return repr(value)


def _parse_bool(text):
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse(kind, text):
    if kind is bool or kind == "bool":
        return _parse_bool(text)
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    if kind is tuple or kind == "tuple":
        return tuple(float(v) for v in text.split(",") if v.strip())
    raise TypeError(kind)


def parse_config(text, base: RunConfig | None = None) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse(known[key], value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    cfg = dataclasses.replace(base or RunConfig(), **values)
    try:
        cfg.network()
        cfg.training()
        cfg.head()
    except ConfigError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
