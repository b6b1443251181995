"""Hand-crafted limb knowledge: Hough line codes, joint geometry and limb HOG.

The knowledge vector holds, for every limb in skeleton order, an 8-value
geometric slice followed by an 8-bin HOG slice, zero padded to a fixed
dimension and L2 normalized.  Limbs with an occluded endpoint are zeroed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLimbError, DimensionError
from .skeleton import SKELETON, VISIBLE, Skeleton

GEO_DIM = 8
HOG_BINS = 8
HOG_EPS = 1e-5
KNOWLEDGE_DIM = 224


@dataclass(frozen=True)
class LimbHoughCode:
    theta: float
    rho: float

    def residual(self, x, y):
        return x * math.cos(self.theta) + y * math.sin(self.theta) - self.rho


def hough_encode(joint_i, joint_j) -> LimbHoughCode:
    """Normal-form line through two joints, theta in (-pi, pi]."""
    xi, yi = map(float, joint_i)
    xj, yj = map(float, joint_j)
    if xi == xj and yi == yj:
        raise DegenerateLimbError(f"coincident joints at ({xi}, {yi})")
    theta = math.atan2(xi - xj, yj - yi)
    if theta <= -math.pi:
        theta = math.pi
    rho = xj * math.cos(theta) + yj * math.sin(theta)
    return LimbHoughCode(theta, rho)


def limb_geometric_feature(joint_i, joint_j, visible_i, visible_j, image_size):
    """``[cos t, sin t, rho/diag, xi/S, yi/S, xj/S, yj/S, visible/2]``.

    Coincident endpoints give a zero line code (the slice is otherwise
    well defined).
    """
    s = float(image_size)
    try:
        code = hough_encode(joint_i, joint_j)
        line = [math.cos(code.theta), math.sin(code.theta), code.rho / math.hypot(s, s)]
    except DegenerateLimbError:
        line = [0.0, 0.0, 0.0]
    visible = int(bool(visible_i)) + int(bool(visible_j))
    feat = line + [joint_i[0] / s, joint_i[1] / s, joint_j[0] / s, joint_j[1] / s, visible / 2.0]
    return np.array(feat, dtype=np.float64)


def image_gradients(gray):
    """Gradients with [-1 0 1] along x and [1 0 -1]^T along y, replicate border."""
    p = np.pad(gray, 1, mode="edge")
    ix = p[1:-1, 2:] - p[1:-1, :-2]
    iy = p[:-2, 1:-1] - p[2:, 1:-1]
    return ix, iy


def limb_region(joint_i, joint_j, image_size, width=None):
    """Bounding box (y0, y1, x0, x1), end exclusive, of the dilated limb segment."""
    (xi, yi), (xj, yj) = joint_i, joint_j
    if width is None:
        width = max(3.0, 0.2 * math.hypot(xi - xj, yi - yj))
    x0 = max(0, int(math.floor(min(xi, xj) - width)))
    x1 = min(image_size, int(math.ceil(max(xi, xj) + width)) + 1)
    y0 = max(0, int(math.floor(min(yi, yj) - width)))
    y1 = min(image_size, int(math.ceil(max(yi, yj) + width)) + 1)
    if x0 >= x1 or y0 >= y1:
        raise DegenerateLimbError("limb region is empty after clamping to the image")
    return y0, y1, x0, x1


def hog_histogram(gray_region_ix, gray_region_iy, bins=HOG_BINS):
    """Magnitude-weighted histogram of unsigned orientations in [0, pi)."""
    mag = np.hypot(gray_region_ix, gray_region_iy)
    phi = np.mod(np.arctan2(gray_region_iy, gray_region_ix), np.pi)
    idx = np.minimum((phi / (np.pi / bins)).astype(int), bins - 1)
    return np.bincount(idx.ravel(), weights=mag.ravel(), minlength=bins)


def l2_block_normalize(v, eps=HOG_EPS):
    v = np.asarray(v, dtype=np.float64)
    return v / math.sqrt(float(v @ v) + eps * eps)


def hog_limb_descriptor(image, joint_i, joint_j, width=None, gradients=None):
    """Normalized 8-bin HOG over the limb's dilated bounding box.

    ``image`` is ``[3,S,S]`` or ``[S,S]``.  Precomputed ``(ix, iy)`` can be
    passed to share work across limbs of one image.
    """
    img = np.asarray(image, dtype=np.float64)
    gray = img.mean(axis=0) if img.ndim == 3 else img
    ix, iy = gradients if gradients is not None else image_gradients(gray)
    y0, y1, x0, x1 = limb_region(joint_i, joint_j, gray.shape[-1], width)
    v = hog_histogram(ix[y0:y1, x0:x1], iy[y0:y1, x0:x1])
    return l2_block_normalize(v)


@dataclass
class KnowledgeVector:
    data: np.ndarray
    limb_mask: np.ndarray  # True where the limb slice is kept
    num_limbs: int

    @property
    def per_limb(self):
        return GEO_DIM + HOG_BINS

    def limb_slice(self, k):
        return slice(k * self.per_limb, (k + 1) * self.per_limb)

    def geometric(self):
        """Geometric slices of every limb, concatenated."""
        body = self.data[: self.num_limbs * self.per_limb].reshape(self.num_limbs, self.per_limb)
        return body[:, :GEO_DIM].reshape(-1)

    def edges(self):
        """HOG slices of every limb, concatenated."""
        body = self.data[: self.num_limbs * self.per_limb].reshape(self.num_limbs, self.per_limb)
        return body[:, GEO_DIM:].reshape(-1)

    def geometric_target(self, dim=KNOWLEDGE_DIM):
        """Geometric slices zero padded to the geometric branch width."""
        geo = self.geometric()
        if geo.size > dim:
            raise DimensionError(f"{geo.size} geometric values exceed branch width {dim}")
        out = np.zeros(dim)
        out[: geo.size] = geo
        return out


def build_knowledge_vector(image, joints, visibility, skeleton: Skeleton = SKELETON,
                           dim=KNOWLEDGE_DIM) -> KnowledgeVector:
    joints = np.asarray(joints, dtype=np.float64)
    visibility = np.asarray(visibility)
    if joints.shape != (skeleton.num_joints, 2) or visibility.shape != (skeleton.num_joints,):
        raise DimensionError(
            f"annotation has {joints.shape[0]} joints, skeleton expects {skeleton.num_joints}")
    per_limb = GEO_DIM + HOG_BINS
    if skeleton.num_limbs * per_limb > dim:
        raise DimensionError(f"knowledge dimension {dim} too small for {skeleton.num_limbs} limbs")
    img = np.asarray(image, dtype=np.float64)
    size = img.shape[-1]
    gray = img.mean(axis=0)
    grads = image_gradients(gray)
    data = np.zeros(dim)
    mask = np.zeros(skeleton.num_limbs, dtype=bool)
    for k, (i, j) in enumerate(skeleton.limbs):
        if visibility[i] != VISIBLE or visibility[j] != VISIBLE:
            continue
        mask[k] = True
        geo = limb_geometric_feature(joints[i], joints[j], True, True, size)
        hog = hog_limb_descriptor(gray, joints[i], joints[j], gradients=grads)
        data[k * per_limb: k * per_limb + GEO_DIM] = geo
        data[k * per_limb + GEO_DIM: (k + 1) * per_limb] = hog
    norm = np.linalg.norm(data)
    if norm > 0:
        data /= norm
    return KnowledgeVector(data, mask, skeleton.num_limbs)
