"""Test-time heatmap merging, blob detection and cross-heatmap NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import STRIDE, affine_about_center, heatmap_to_image, warp_image
from .errors import DimensionError
from .skeleton import SKELETON, Skeleton

_EIGHT = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class DecodeConfig:
    scales: tuple = (1.0, 0.75)
    flip: bool = True
    nms: bool = True
    threshold: float = 0.5  # fraction of the map maximum
    floor: float = 0.05  # maps whose maximum is below this yield no blobs
    radius: float = 2.0  # suppression radius, heatmap pixels
    subpixel: bool = True


PLAIN = DecodeConfig(scales=(1.0,), flip=False, nms=False)


@dataclass(frozen=True)
class Blob:
    channel: int
    u: int
    v: int
    response: float
    support: int

    def sort_key(self):
        return (-self.response, self.channel, self.v, self.u)


@dataclass
class PoseEstimate:
    joints: np.ndarray  # [J, 2] input-image pixels
    confidence: np.ndarray  # [J]
    from_blob: np.ndarray  # [J] False where the argmax fallback was used


# ------------------------------------------------------------------ merging


def flip_merge(h, h_flipped, mirror):
    """Average ``h`` with the un-mirrored, channel-swapped ``h_flipped``.

    ``mirror`` is the channel permutation (background maps to itself).
    """
    h = np.asarray(h)
    h_flipped = np.asarray(h_flipped)
    if h.shape != h_flipped.shape:
        raise DimensionError(f"flip_merge shape mismatch: {h.shape} vs {h_flipped.shape}")
    restored = h_flipped[..., ::-1][..., list(mirror), :, :] if h.ndim == 4 else \
        h_flipped[:, :, ::-1][list(mirror)]
    return 0.5 * (h + restored)


def rescale_to_base(maps, scale):
    """Map heatmaps computed on an image zoomed by ``scale`` back to the base frame."""
    if scale == 1.0:
        return np.asarray(maps, dtype=np.float64)
    size = maps.shape[-1]
    a, b = affine_about_center(size, 0.0, scale)
    # base(u) = scaled(c + s (u - c)); warp_image applies the inverse of its map
    inv = np.linalg.inv(a)
    return warp_image(np.asarray(maps, dtype=np.float64), inv, -inv @ b)


def multiscale_merge(sets):
    """Average heatmap sets given as ``[(scale, maps), ...]`` in the base frame."""
    if not sets:
        raise ValueError("multiscale_merge needs at least one heatmap set")
    return np.mean([rescale_to_base(m, s) for s, m in sets], axis=0)


# ------------------------------------------------------------------ blobs and NMS


def detect_blobs(heatmap, threshold=0.5, floor=0.05, channel=0):
    """8-connected components of pixels at or above ``threshold * max``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    m = np.asarray(heatmap, dtype=np.float64)
    peak = m.max()
    if peak <= floor:
        return []
    labels, n = ndimage.label(m >= threshold * peak, structure=_EIGHT)
    blobs = []
    for k in range(1, n + 1):
        masked = np.where(labels == k, m, -np.inf)
        flat = int(np.argmax(masked))
        v, u = divmod(flat, m.shape[1])
        blobs.append(Blob(channel, u, v, float(m[v, u]), int((labels == k).sum())))
    return blobs


def cross_heatmap_nms(blobs, radius=2.0):
    """Greedy suppression over (u, v, channel); returns ``{channel: Blob}``.

    The strongest surviving blob claims its channel; every other blob of that
    channel, and every blob of any channel within ``radius`` of it, is
    removed.  Ties go to the lower channel, then the lower (v, u).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pool = sorted((b for group in blobs for b in group), key=Blob.sort_key)
    chosen = {}
    while pool:
        best = pool[0]
        chosen[best.channel] = best
        pool = [b for b in pool[1:]
                if b.channel != best.channel and math.hypot(b.u - best.u, b.v - best.v) > radius]
    return chosen


def _refine(m, u, v):
    """Sub-pixel peak offset from a parabola through the log of neighbouring values."""
    def axis_offset(lo, mid, hi):
        if min(lo, mid, hi) <= 0:
            return 0.0
        a, b, c = math.log(lo), math.log(mid), math.log(hi)
        den = a - 2 * b + c
        if den >= 0:
            return 0.0
        return float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))

    h, w = m.shape
    du = axis_offset(m[v, u - 1], m[v, u], m[v, u + 1]) if 0 < u < w - 1 else 0.0
    dv = axis_offset(m[v - 1, u], m[v, u], m[v + 1, u]) if 0 < v < h - 1 else 0.0
    return u + du, v + dv


def heatmaps_to_pose(maps, config: DecodeConfig = DecodeConfig(), stride=STRIDE) -> PoseEstimate:
    """Turn merged ``[J+1, h, w]`` heatmaps into joint coordinates."""
    maps = np.asarray(maps, dtype=np.float64)
    n = maps.shape[0] - 1
    chosen = {}
    if config.nms:
        blobs = [detect_blobs(maps[c], config.threshold, config.floor, c) for c in range(n)]
        chosen = cross_heatmap_nms(blobs, config.radius)
    uv = np.zeros((n, 2))
    conf = np.zeros(n)
    from_blob = np.zeros(n, dtype=bool)
    for c in range(n):
        if c in chosen:
            u, v, conf[c] = chosen[c].u, chosen[c].v, chosen[c].response
            from_blob[c] = True
        else:
            v, u = np.unravel_index(int(np.argmax(maps[c])), maps[c].shape)
            conf[c] = maps[c, v, u]
        uv[c] = _refine(maps[c], u, v) if config.subpixel else (u, v)
    return PoseEstimate(heatmap_to_image(uv, stride), conf, from_blob)


# ------------------------------------------------------------------ full pipeline


def net_predictor(net, batch_size=32):
    """Callable mapping normalized ``[N,3,S,S]`` images to final-stage heatmaps."""
    def predict(images):
        outs = []
        for k in range(0, len(images), batch_size):
            heatmaps, _ = net.forward(images[k:k + batch_size], training=False)
            outs.append(heatmaps[-1].data.astype(np.float64))
        return np.concatenate(outs)
    return predict


def merged_heatmaps(images, predict, config: DecodeConfig = DecodeConfig(), mean=None,
                       skeleton: Skeleton = SKELETON):
    """Merged heatmaps for a stack of raw images ``[N,3,S,S]`` in [0,1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    n, _, size, _ = images.shape
    if mean is not None:
        images = images - np.asarray(mean)[None, :, None, None]
    variants = []
    for s in config.scales:
        if s == 1.0:
            scaled = images
        else:
            a, b = affine_about_center(size, 0.0, s)
            scaled = np.stack([warp_image(img, a, b) for img in images])
        variants.append((s, False, scaled))
        if config.flip:
            variants.append((s, True, scaled[:, :, :, ::-1]))
    stacked = np.concatenate([v[2] for v in variants])
    out = predict(stacked)
    maps = out.reshape(len(variants), n, *out.shape[1:])
    mirror = skeleton.channel_mirror()
    merged = []
    for i in range(n):
        per_scale = []
        k = 0
        for s in config.scales:
            m = maps[k, i]
            k += 1
            if config.flip:
                m = flip_merge(m, maps[k, i], mirror)
                k += 1
            per_scale.append((s, m))
        merged.append(multiscale_merge(per_scale))
    return np.stack(merged)


def decode_images(images, predict, config: DecodeConfig = DecodeConfig(), mean=None,
                  skeleton: Skeleton = SKELETON):
    merged = merged_heatmaps(images, predict, config, mean, skeleton)
    return [heatmaps_to_pose(m, config) for m in merged]


def decode_pose(image, predict, config: DecodeConfig = DecodeConfig(), mean=None,
                skeleton: Skeleton = SKELETON) -> PoseEstimate:
    return decode_images(np.asarray(image)[None], predict, config, mean, skeleton)[0]
