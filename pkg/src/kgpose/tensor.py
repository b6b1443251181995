"""Dense tensors with reverse-mode automatic differentiation.

Only the operations needed by the fractal hourglass network and its
projection heads are provided.  Spatial operations accept either a single
``[C, H, W]`` tensor or a batch ``[N, C, H, W]``; the batch axis is carried
through unchanged.

Every operation records its parents and a backward rule on the output tensor.
``Tensor.backward`` replays the recorded operations in reverse creation order,
which is a valid reverse topological order and makes gradient summation
order independent of how the graph is traversed.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

from .errors import DimensionError, NonFiniteError

__all__ = [
    "Tensor",
    "add",
    "batch_norm",
    "concat_channels",
    "conv2d",
    "corrupt_backward",
    "flatten",
    "fully_connected",
    "l2_loss",
    "max_pool2",
    "record_activation_pattern",
    "relu",
    "scale",
    "square_norm",
    "stop_gradient",
    "upsample_nearest2",
]

_ids = itertools.count()

# op name -> factor applied to every gradient that op emits (fault injection)
_GRAD_FAULTS: dict[str, float] = {}


@contextlib.contextmanager
def corrupt_backward(op: str, factor: float = 1.5):
    """Scale the gradients produced by ``op``'s backward rule inside the block.

    Test harness hook used to prove the gradient checks catch a broken rule.
    """
    _GRAD_FAULTS[op] = factor
    try:
        yield
    finally:
        _GRAD_FAULTS.pop(op, None)


# when a list, relu masks and max-pool argmax choices are appended to it
_PATTERN_LOG: list | None = None


@contextlib.contextmanager
def record_activation_pattern():
    """Collect the piecewise-linear branch taken by every relu / max-pool call.

    Finite-difference probes use this to detect when a perturbation moves
    an activation across a kink.
    """
    global _PATTERN_LOG
    log, _PATTERN_LOG = _PATTERN_LOG, []
    try:
        yield _PATTERN_LOG
    finally:
        _PATTERN_LOG = log


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {where}")


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        return x.data
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional array that can take part in gradient computation.

    Leaf tensors with ``requires_grad=True`` accumulate gradients in
    ``grad`` across calls to :meth:`backward`; intermediate gradients are
    discarded after each pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_id", "_op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._id = next(_ids)
        self._op = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{op})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def tape(self):
        """Recorded nodes reachable from this tensor, in creation order."""
        seen = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in seen or not node.requires_grad:
                continue
            seen[node._id] = node
            stack.extend(node._parents)
        return [seen[k] for k in sorted(seen)]

    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        grads = {self._id: np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(self.tape()):
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            factor = _GRAD_FAULTS.get(node._op)
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if factor is not None:
                    pg = pg * factor
                _check_finite(pg, f"backward of {node._op}")
                prev = grads.get(parent._id)
                grads[parent._id] = pg if prev is None else prev + pg


def _record(op, data, parents, backward):
    _check_finite(data, op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _batched(x):
    """View a [C,H,W] array as [1,C,H,W]; returns (array, was_unbatched)."""
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected [C,H,W] or [N,C,H,W], got shape {x.shape}")


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)


# ---------------------------------------------------------------- convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding=None, stride=1) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``padding`` defaults to ``(k - 1) // 2`` so odd kernels at stride 1 keep
    the spatial size.
    """
    xd, unbatched = _batched(x.data)
    w = weight.data
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"kernel must be [C_out, C_in, k, k], got {w.shape}")
    c_out, c_in, k, _ = w.shape
    if xd.shape[1] != c_in:
        raise DimensionError(f"input has {xd.shape[1]} channels, kernel expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"bias must have shape ({c_out},), got {bias.shape}")
    if padding is None:
        if k % 2 == 0:
            raise DimensionError("same padding needs an odd kernel size")
        padding = (k - 1) // 2
    n, _, h, wd = xd.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError("kernel larger than padded input")

    if k == 1 and padding == 0 and stride == 1:
        out = np.einsum("nchw,oc->nohw", xd, w[:, :, 0, 0], optimize=True)
        cols = None
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
        # [N, Ho, Wo, C, k, k] contiguous im2col buffer
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
        out = (cols.reshape(n * ho * wo, -1) @ w.reshape(c_out, -1).T).reshape(n, ho, wo, c_out)
        out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=xd.dtype)

    def backward(g):
        g4 = g[None] if unbatched else g
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        if cols is None:
            gw = np.einsum("nohw,nchw->oc", g4, xd, optimize=True)[:, :, None, None]
            gx = np.einsum("nohw,oc->nchw", g4, w[:, :, 0, 0], optimize=True)
        else:
            gflat = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
            gw = (gflat.T @ cols.reshape(n * ho * wo, -1)).reshape(w.shape)
            gx = None
            if x.requires_grad:
                gcols = (gflat @ w.reshape(c_out, -1)).reshape(n, ho, wo, c_in, k, k)
                gxp = np.zeros((n, c_in, h + 2 * padding, wd + 2 * padding), dtype=xd.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                            gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                        )
                gx = gxp[:, :, padding : padding + h, padding : padding + wd]
        if gx is not None and unbatched:
            gx = gx[0]
        return gx, gw, gb

    out_data = out[0] if unbatched else out
    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv2d", out_data, parents, backward)


# ------------------------------------------------------------- normalization


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
               training=True, momentum=0.9, eps=1e-5) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    In training mode ``running_mean``/``running_var`` (numpy arrays) are
    updated in place as ``momentum * running + (1 - momentum) * batch``.
    """
    xd, unbatched = _batched(x.data)
    n, c, h, w = xd.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm parameters must have shape ({c},)")
    if h * w == 0:
        raise DimensionError("batch_norm over an empty spatial extent")
    axes = (0, 2, 3)
    if training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = np.asarray(running_mean, dtype=xd.dtype)
        var = np.asarray(running_var, dtype=xd.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    out = out.astype(xd.dtype, copy=False)
    m = n * h * w

    def backward(g):
        g4 = g[None] if unbatched else g
        ggamma = (g4 * xhat).sum(axis=axes)
        gbeta = g4.sum(axis=axes)
        gx = None
        if x.requires_grad:
            gxhat = g4 * gamma.data[None, :, None, None]
            if training:
                gx = (inv_std[None, :, None, None] / m) * (
                    m * gxhat
                    - gxhat.sum(axis=axes)[None, :, None, None]
                    - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None, None]
                )
            else:
                gx = gxhat * inv_std[None, :, None, None]
            if unbatched:
                gx = gx[0]
        return gx, ggamma, gbeta

    return _record("batch_norm", out[0] if unbatched else out, (x, gamma, beta), backward)


# ---------------------------------------------------------------- elementwise


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _PATTERN_LOG is not None:
        _PATTERN_LOG.append(mask)
    return _record("relu", x.data * mask, (x,), lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add needs identical shapes, got {a.shape} and {b.shape}")
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", x.data * x.data.dtype.type(c), (x,), lambda g: (g * c,))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis, ``a`` first."""
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise DimensionError("concat_channels needs two [C,H,W] or two [N,C,H,W] tensors")
    ax = a.ndim - 3
    if a.shape[:ax] != b.shape[:ax] or a.shape[ax + 1:] != b.shape[ax + 1:]:
        raise DimensionError(f"concat_channels spatial mismatch: {a.shape} vs {b.shape}")
    c1 = a.shape[ax]
    out = np.concatenate([a.data, b.data], axis=ax)

    def backward(g):
        if ax == 0:
            return g[:c1], g[c1:]
        return g[:, :c1], g[:, c1:]

    return _record("concat", out, (a, b), backward)


# -------------------------------------------------------------- resampling


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; gradient routed to the first maximal cell."""
    xd, unbatched = _batched(x.data)
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise DimensionError(f"max_pool2 needs even spatial size, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    quads = xd.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = quads.argmax(axis=-1)[..., None]
    if _PATTERN_LOG is not None:
        _PATTERN_LOG.append(idx)
    out = np.take_along_axis(quads, idx, axis=-1)[..., 0]

    def backward(g):
        g4 = g[None] if unbatched else g
        gq = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(gq, idx, g4[..., None], axis=-1)
        gx = gq.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx[0] if unbatched else gx,)

    return _record("max_pool2", out[0] if unbatched else out, (x,), backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        s = g.shape
        return (g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1)),)

    return _record("upsample_nearest2", out, (x,), backward)


# ------------------------------------------------------------- dense layers


def flatten(x: Tensor, batched=None) -> Tensor:
    """[C,H,W] -> [C*H*W]; [N,C,H,W] -> [N, C*H*W]."""
    if batched is None:
        batched = x.ndim == 4
    shape = x.shape
    out = x.data.reshape(shape[0], -1) if batched else x.data.reshape(-1)
    return _record("flatten", out, (x,), lambda g: (g.reshape(shape),))


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``weight @ x + bias`` for a vector or a batch of row vectors."""
    w = weight.data
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"fully_connected: input {x.shape} vs weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise DimensionError(f"bias must have shape ({w.shape[0]},), got {bias.shape}")
    out = x.data @ w.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ w if x.requires_grad else None
        gw = np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data
        gb = (g if g.ndim == 1 else g.sum(axis=0)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record("fully_connected", out, parents, backward)


# -------------------------------------------------------------------- losses


def l2_loss(pred: Tensor, target, weights=None) -> Tensor:
    """``sum(weights * (pred - target)**2)``; target and weights are constants."""
    t = _as_array(target, pred.dtype)
    if t.shape != pred.shape:
        raise DimensionError(f"l2_loss shape mismatch: {pred.shape} vs {t.shape}")
    wt = None
    if weights is not None:
        wt = _as_array(weights, pred.dtype)
        if wt.shape != pred.shape:
            raise DimensionError(f"l2_loss weight shape {wt.shape} vs {pred.shape}")
    r = pred.data - t
    wr = r if wt is None else wt * r
    out = np.asarray((wr * r).sum(), dtype=pred.dtype)
    return _record("l2_loss", out, (pred,), lambda g: (2.0 * g * wr,))


def square_norm(params) -> Tensor:
    """Sum of squared entries over a list of tensors, as one scalar."""
    params = list(params)
    dt = params[0].dtype
    out = np.asarray(sum(float((p.data.astype(np.float64) ** 2).sum()) for p in params), dtype=dt)
    return _record("square_norm", out, params, lambda g: tuple(2.0 * g * p.data for p in params))
