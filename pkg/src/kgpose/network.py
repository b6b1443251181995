"""Fractal hourglass network built from inception-resnet modules.

Parameters live in a :class:`ParamStore` keyed by dotted names.  Layers ask
the store for their parameters by name; the first forward pass through an
empty store creates them (deterministically, in execution order), later
passes only read them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 64
    heatmap_size: int = 16
    num_joints: int = 14
    num_stacks: int = 2
    hourglass_levels: int = 4
    base_channels: int = 32
    edge_branch_tap: int = 3

    def __post_init__(self):
        if self.input_size != 4 * self.heatmap_size:
            raise ConfigError("input_size must equal 4 x heatmap_size")
        if self.hourglass_levels < 1:
            raise ConfigError("hourglass_levels must be >= 1")
        if self.heatmap_size % 2 ** (self.hourglass_levels - 1):
            raise ConfigError("heatmap_size must be divisible by 2**(hourglass_levels - 1)")
        if self.num_stacks < 1 or self.num_joints < 1 or self.base_channels < 1:
            raise ConfigError("num_stacks, num_joints and base_channels must be positive")
        if not 1 <= self.edge_branch_tap <= self.num_modules:
            raise ConfigError(f"edge_branch_tap must be in 1..{self.num_modules}")

    @property
    def channels(self):
        """Trunk width: base width doubled by the stem."""
        return 2 * self.base_channels

    @property
    def num_heatmaps(self):
        return self.num_joints + 1

    @property
    def num_modules(self):
        """Inception-resnet modules in execution order (stem has three)."""
        return 3 + self.num_stacks * self.hourglass_levels

    def to_metadata(self):
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_metadata(cls, meta):
        kwargs = {}
        for f in fields(cls):
            if f.name not in meta:
                raise ConfigError(f"checkpoint metadata lacks '{f.name}'")
            kwargs[f.name] = int(meta[f.name])
        return cls(**kwargs)


class ParamStore:
    """Named parameters plus batch-norm running statistics."""

    def __init__(self, rng=None, dtype=np.float64):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.frozen = False

    def _new(self, name, value):
        if self.frozen:
            raise KeyError(f"unknown parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def get(self, name, shape, init):
        t = self.params.get(name)
        if t is None:
            if init == "he":
                fan_in = int(np.prod(shape[1:]))
                value = self.rng.normal(scale=math.sqrt(2.0 / fan_in), size=shape)
            elif init == "xavier":
                fan_in = int(np.prod(shape[1:]))
                value = self.rng.normal(scale=math.sqrt(1.0 / fan_in), size=shape)
            elif init == "ones":
                value = np.ones(shape)
            else:
                value = np.zeros(shape)
            t = self._new(name, value)
        elif t.shape != tuple(shape):
            raise DimensionError(f"parameter {name!r} has shape {t.shape}, layer needs {tuple(shape)}")
        return t

    def conv(self, name, c_out, c_in, k, bias=True, init="he"):
        w = self.get(f"{name}.w", (c_out, c_in, k, k), init)
        b = self.get(f"{name}.b", (c_out,), "zeros") if bias else None
        return w, b

    def fc(self, name, m, n):
        return self.get(f"{name}.w", (m, n), "xavier"), self.get(f"{name}.b", (m,), "zeros")

    def bn(self, name, c):
        gamma = self.get(f"{name}.gamma", (c,), "ones")
        beta = self.get(f"{name}.beta", (c,), "zeros")
        mean_key, var_key = f"{name}.running_mean", f"{name}.running_var"
        if mean_key not in self.buffers:
            if self.frozen:
                raise KeyError(f"unknown buffer {mean_key!r}")
            self.buffers[mean_key] = np.zeros(c, dtype=self.dtype)
            self.buffers[var_key] = np.ones(c, dtype=self.dtype)
        return gamma, beta, self.buffers[mean_key], self.buffers[var_key]

    def state(self):
        """Flat name -> array mapping of parameters and buffers."""
        out = {k: t.data for k, t in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state(self, state, strict=True):
        for k, t in self.params.items():
            if k in state:
                t.data = np.array(state[k], dtype=self.dtype).reshape(t.shape)
            elif strict:
                raise KeyError(f"missing parameter {k!r}")
        for k, buf in self.buffers.items():
            if k in state:
                buf[...] = state[k]
            elif strict:
                raise KeyError(f"missing buffer {k!r}")

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def count(self):
        return sum(t.size for t in self.params.values())


def conv_bn(x, store, name, c_in, c_out, k, training, stride=1, activate=True):
    w, _ = store.conv(f"{name}.conv", c_out, c_in, k, bias=False)
    y = T.conv2d(x, w, None, padding=(k - 1) // 2, stride=stride)
    gamma, beta, rm, rv = store.bn(f"{name}.bn", c_out)
    y = T.batch_norm(y, gamma, beta, rm, rv, training=training)
    return T.relu(y) if activate else y


def inception_resnet_forward(x: Tensor, store: ParamStore, name: str, c_in: int, c_out: int,
                             training=True) -> Tensor:
    """Two parallel conv branches, concatenated, mixed by a 1x1 conv, plus a shortcut.

    Branch one is a 1x1 conv, branch two a 1x1 conv followed by a 3x3 conv;
    each produces ``c_out // 2`` channels.  The shortcut is the identity when
    ``c_in == c_out`` and a 1x1 projection otherwise.
    """
    channel_axis = x.ndim - 3
    if x.shape[channel_axis] != c_in:
        raise DimensionError(f"{name}: expected {c_in} input channels, got {x.shape[channel_axis]}")
    if c_out % 2:
        raise DimensionError(f"{name}: c_out must be even")
    half = c_out // 2
    a = conv_bn(x, store, f"{name}.b1", c_in, half, 1, training)
    b = conv_bn(x, store, f"{name}.b2a", c_in, half, 1, training)
    b = conv_bn(b, store, f"{name}.b2b", half, half, 3, training)
    mixed = conv_bn(T.concat_channels(a, b), store, f"{name}.mix", c_out, c_out, 1, training,
                    activate=False)
    if c_in == c_out:
        shortcut = x
    else:
        w, bias = store.conv(f"{name}.proj", c_out, c_in, 1)
        shortcut = T.conv2d(x, w, bias)
    return T.relu(T.add(mixed, shortcut))


def hourglass_forward(x: Tensor, level: int, store: ParamStore, name: str, channels: int,
                      training=True, on_module=None) -> Tensor:
    """Recursive hourglass; level 1 is a single inception-resnet module.

    ``on_module(name, output)`` is called after every inception-resnet module
    in execution order.
    """
    h, w = x.shape[-2:]
    if level < 1:
        raise DimensionError("hourglass level must be >= 1")
    if h % 2 ** (level - 1) or w % 2 ** (level - 1):
        raise DimensionError(f"{h}x{w} input not divisible by 2**{level - 1}")

    def module(inp, mname):
        out = inception_resnet_forward(inp, store, mname, channels, channels, training)
        if on_module is not None:
            on_module(mname, out)
        return out

    if level == 1:
        return module(x, f"{name}.l1")
    upper = module(x, f"{name}.l{level}.up")
    lower = T.max_pool2(x)
    lower = hourglass_forward(lower, level - 1, store, name, channels, training, on_module)
    return T.add(upper, T.upsample_nearest2(lower))


class FractalNet:
    """Stacked hourglass network emitting ``num_joints + 1`` heatmaps per stack."""

    def __init__(self, config: NetworkConfig, seed=0, dtype=np.float32):
        self.config = config
        self.store = ParamStore(np.random.default_rng(seed), dtype)
        c = config
        self.forward(np.zeros((1, 3, c.input_size, c.input_size), dtype=dtype), training=False)
        self.store.frozen = True
        self._module_names = None

    @property
    def params(self):
        return self.store.params

    def parameter_count(self):
        return self.store.count()

    def module_names(self):
        """Inception-resnet module names in execution order."""
        if self._module_names is None:
            names = []
            c = self.config
            self.forward(np.zeros((1, 3, c.input_size, c.input_size), dtype=self.store.dtype),
                         training=False, on_module=lambda n, _: names.append(n))
            self._module_names = names
        return self._module_names

    def injection_layers(self):
        """Weights through which the projection losses first enter the trunk."""
        tap = self.module_names()[self.config.edge_branch_tap - 1]
        last = self.config.num_stacks - 1
        return [f"stack{last}.heat.w", f"{tap}.mix.conv.w"]

    def forward(self, image, training=True, on_module=None):
        """Run the network.

        ``image`` is ``[3,S,S]`` or ``[N,3,S,S]`` (array or Tensor).  Returns
        ``(heatmaps, tap)``: one ``[.., J+1, h, h]`` tensor per stack and the
        output of the configured inception-resnet module.
        """
        c = self.config
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.store.dtype))
        if x.ndim not in (3, 4) or x.shape[-3:] != (3, c.input_size, c.input_size):
            raise DimensionError(f"expected input [.., 3, {c.input_size}, {c.input_size}], got {x.shape}")
        store = self.store
        ch = c.channels
        count = [0]
        tap = [None]

        def seen(name, out):
            count[0] += 1
            if count[0] == c.edge_branch_tap:
                tap[0] = out
            if on_module is not None:
                on_module(name, out)

        def module(inp, name, c_in, c_out):
            out = inception_resnet_forward(inp, store, name, c_in, c_out, training)
            seen(name, out)
            return out

        x = conv_bn(x, store, "stem", 3, c.base_channels, 7, training, stride=2)
        x = module(x, "stem.ir1", c.base_channels, ch)
        x = T.max_pool2(x)
        x = module(x, "stem.ir2", ch, ch)
        x = module(x, "stem.ir3", ch, ch)

        heatmaps = []
        for s in range(c.num_stacks):
            y = hourglass_forward(x, c.hourglass_levels, store, f"stack{s}.hg", ch, training, seen)
            y = conv_bn(y, store, f"stack{s}.lin", ch, ch, 1, training)
            w, b = store.conv(f"stack{s}.heat", c.num_heatmaps, ch, 1, init="xavier")
            heat = T.conv2d(y, w, b)
            heatmaps.append(heat)
            if s < c.num_stacks - 1:
                wf, bf = store.conv(f"stack{s}.remap_feat", ch, ch, 1, init="xavier")
                wh, bh = store.conv(f"stack{s}.remap_heat", ch, c.num_heatmaps, 1, init="xavier")
                x = T.add(x, T.add(T.conv2d(y, wf, bf), T.conv2d(heat, wh, bh)))
        return heatmaps, tap[0]
