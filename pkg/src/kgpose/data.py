"""Synthetic stick-figure data, annotation I/O, augmentation and heatmap targets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ParseError
from .knowledge import KnowledgeVector, build_knowledge_vector
from .skeleton import OBJECT_OCCLUDED, SELF_OCCLUDED, SKELETON, VISIBLE, Skeleton

STRIDE = 4
FOREGROUND_WEIGHT = 20.0
FOREGROUND_THRESHOLD = 0.1


@dataclass
class PoseAnnotation:
    joints: np.ndarray  # [J, 2] (x, y) pixels
    visibility: np.ndarray  # [J] 0 visible, 1 self-occluded, 2 object-occluded
    image_id: str = ""

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=np.int64)

    def visible(self):
        return self.visibility == VISIBLE

    def copy(self):
        return PoseAnnotation(self.joints.copy(), self.visibility.copy(), self.image_id)


@dataclass
class Sample:
    image: np.ndarray  # [3, S, S] in [0, 1]
    annotation: PoseAnnotation
    knowledge: KnowledgeVector | None = None


@dataclass
class GtHeatmaps:
    maps: np.ndarray  # [J+1, h, h]
    sigma: float


# ------------------------------------------------------------------ rendering


def _grid(size):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return xs, ys


def _segment_distance(xs, ys, a, b):
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    length2 = dx * dx + dy * dy
    if length2 == 0:
        return np.hypot(xs - ax, ys - ay)
    t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / length2, 0.0, 1.0)
    return np.hypot(xs - (ax + t * dx), ys - (ay + t * dy))


def segment_coverage(xs, ys, a, b, thickness):
    """Anti-aliased coverage of a thick segment."""
    return np.clip(thickness / 2 + 0.5 - _segment_distance(xs, ys, a, b), 0.0, 1.0)


def disk_coverage(xs, ys, center, radius):
    return np.clip(radius + 0.5 - np.hypot(xs - center[0], ys - center[1]), 0.0, 1.0)


def polygon_coverage(xs, ys, corners):
    """Anti-aliased coverage of a convex polygon (corners in either winding)."""
    corners = np.asarray(corners, dtype=np.float64)
    area = 0.0
    for k in range(len(corners)):
        (x0, y0), (x1, y1) = corners[k], corners[(k + 1) % len(corners)]
        area += x0 * y1 - x1 * y0
    sign = 1.0 if area > 0 else -1.0
    inside = np.full(xs.shape, np.inf)
    for k in range(len(corners)):
        (x0, y0), (x1, y1) = corners[k], corners[(k + 1) % len(corners)]
        ex, ey = x1 - x0, y1 - y0
        norm = math.hypot(ex, ey) or 1.0
        d = sign * ((xs - x0) * ey - (ys - y0) * ex) / norm
        inside = np.minimum(inside, -d)
    return np.clip(0.5 + inside, 0.0, 1.0)


def _point_in_convex(point, corners):
    x, y = point
    signs = []
    for k in range(len(corners)):
        (x0, y0), (x1, y1) = corners[k], corners[(k + 1) % len(corners)]
        signs.append((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0))
    return all(s > 0 for s in signs) or all(s < 0 for s in signs)


def _paint(image, coverage, color):
    cov = coverage[None]
    image *= 1.0 - cov
    image += cov * np.asarray(color, dtype=np.float64)[:, None, None]


# ------------------------------------------------------------------ figures


@dataclass(frozen=True)
class GeneratorConfig:
    image_size: int = 64
    distractors: bool = False
    occluders: bool = False
    distractor_prob: float = 0.6
    occluder_prob: float = 0.6
    max_rotation: float = 45.0  # degrees, whole figure
    center_jitter: float = 13.0  # pixels


# bone lengths as fractions of the figure height
_BONES = {
    "head": 0.13, "shoulder": 0.085, "upper_arm": 0.16, "forearm": 0.15,
    "torso": 0.30, "hip": 0.055, "thigh": 0.22, "shin": 0.21,
}


def _rot(v, angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def sample_pose(rng, height, skeleton: Skeleton = SKELETON):
    """Random articulated pose in a body frame (y down, facing the viewer).

    The subject's left side is at +x before the global rotation, so the
    right shoulder appears on the image left for an upright figure.
    """
    j = {n: i for i, n in enumerate(skeleton.joint_names)}
    pts = np.zeros((skeleton.num_joints, 2))
    b = {k: v * height for k, v in _BONES.items()}
    up = np.array([0.0, -1.0])
    down = -up
    lean = math.radians(rng.uniform(-15, 15))
    torso_dir = _rot(up, lean)
    side = _rot(np.array([1.0, 0.0]), lean)
    pelvis = np.zeros(2)
    neck = pelvis + b["torso"] * torso_dir
    pts[j["neck"]] = neck
    pts[j["head_top"]] = neck + b["head"] * _rot(torso_dir, math.radians(rng.uniform(-25, 25)))
    for s, sgn in (("l", 1.0), ("r", -1.0)):
        shoulder = neck + sgn * b["shoulder"] * side + 0.02 * height * down
        hip = pelvis + sgn * b["hip"] * side
        pts[j[f"{s}_shoulder"]] = shoulder
        pts[j[f"{s}_hip"]] = hip
        # abduction measured from hanging straight down, positive = outward
        arm = _rot(_rot(down, lean), -sgn * math.radians(rng.uniform(-40, 170)))
        elbow = shoulder + b["upper_arm"] * arm
        fore = _rot(arm, -sgn * math.radians(rng.uniform(-150, 20)))
        pts[j[f"{s}_elbow"]] = elbow
        pts[j[f"{s}_wrist"]] = elbow + b["forearm"] * fore
        leg = _rot(_rot(down, lean), -sgn * math.radians(rng.uniform(-25, 70)))
        knee = hip + b["thigh"] * leg
        shin = _rot(leg, sgn * math.radians(rng.uniform(-10, 110)) * (1 if rng.random() < 0.5 else -0.3))
        pts[j[f"{s}_knee"]] = knee
        pts[j[f"{s}_ankle"]] = knee + b["shin"] * shin
    return pts


def _texture(rng, size):
    base = rng.uniform(0.0, 1.0, size=3)
    coarse = rng.normal(size=(3, 5, 5))
    field_ = ndimage.zoom(coarse, (1, size / 5, size / 5), order=1)[:, :size, :size]
    img = base[:, None, None] + 0.12 * field_ + 0.03 * rng.normal(size=(3, size, size))
    return np.clip(img, 0.0, 1.0)


def _contrasting_color(rng, background_mean):
    for _ in range(20):
        c = rng.uniform(0.0, 1.0, size=3)
        if np.abs(c - background_mean).mean() > 0.35:
            return c
    return 1.0 - background_mean


def draw_figure(image, joints, rng, skeleton: Skeleton = SKELETON, thickness=None):
    """Paint a stick figure; returns indices of joints hidden behind the torso."""
    size = image.shape[-1]
    xs, ys = _grid(size)
    j = {n: i for i, n in enumerate(skeleton.joint_names)}
    height = np.ptp(joints[:, 1]) + np.ptp(joints[:, 0])
    th = thickness or max(2.0, 0.05 * height)
    body = _contrasting_color(rng, image.mean(axis=(1, 2)))
    joint_color = np.clip(body + rng.choice([-0.3, 0.3]), 0, 1)
    torso = [joints[j["l_shoulder"]], joints[j["r_shoulder"]], joints[j["r_hip"]], joints[j["l_hip"]]]
    arm_limbs = {
        s: [(j[f"{s}_shoulder"], j[f"{s}_elbow"]), (j[f"{s}_elbow"], j[f"{s}_wrist"])] for s in "lr"
    }
    behind = {s: rng.random() < 0.3 for s in "lr"}
    other = [lb for lb in skeleton.limbs if not any(lb in v for v in arm_limbs.values())]

    def limbs(seq):
        for a, b in seq:
            _paint(image, segment_coverage(xs, ys, joints[a], joints[b], th), body)

    def dots(idx):
        for i in idx:
            _paint(image, disk_coverage(xs, ys, joints[i], th * 0.55), joint_color)

    hidden = []
    for s in "lr":
        if behind[s]:
            limbs(arm_limbs[s])
            dots([j[f"{s}_elbow"], j[f"{s}_wrist"]])
    limbs(other)
    _paint(image, polygon_coverage(xs, ys, torso), body * 0.85)
    _paint(image, disk_coverage(xs, ys, 0.5 * (joints[j["head_top"]] + joints[j["neck"]]),
                                0.35 * np.linalg.norm(joints[j["head_top"]] - joints[j["neck"]])), body)
    for s in "lr":
        if behind[s]:
            for n in ("elbow", "wrist"):
                if _point_in_convex(joints[j[f"{s}_{n}"]], torso):
                    hidden.append(j[f"{s}_{n}"])
        else:
            limbs(arm_limbs[s])
    behind_joints = {j[f"{s}_{n}"] for s in "lr" if behind[s] for n in ("elbow", "wrist")}
    dots([i for i in range(skeleton.num_joints) if i not in behind_joints])
    return hidden


def _place(pose, size, rng, jitter):
    lo, hi = pose.min(axis=0), pose.max(axis=0)
    center = (size - 1) / 2.0 + rng.uniform(-jitter, jitter, size=2)
    return pose - (lo + hi) / 2.0 + center


def generate_stick_figure(seed, config: GeneratorConfig = GeneratorConfig(),
                          skeleton: Skeleton = SKELETON, occluder_boxes=None, image_id=""):
    """Render one synthetic sample.

    The target figure is centred in the crop.  Optional distractor figures
    are unlabeled; optional occluder rectangles mark covered joints as
    object-occluded.  ``occluder_boxes`` (x0, y0, x1, y1) forces specific
    occluders in addition to random ones.  Images are quantized to 8 bits.
    """
    rng = np.random.default_rng(seed)
    size = config.image_size
    image = _texture(rng, size)
    height = size * rng.uniform(0.55, 0.8)
    pose = sample_pose(rng, height, skeleton)
    rot = math.radians(rng.uniform(-config.max_rotation, config.max_rotation))
    pose = np.array([_rot(p, rot) for p in pose])
    pose = _place(pose, size, rng, config.center_jitter)

    if config.distractors and rng.random() < config.distractor_prob:
        other = sample_pose(rng, size * rng.uniform(0.5, 0.8), skeleton)
        other = np.array([_rot(p, math.radians(rng.uniform(-40, 40))) for p in other])
        shift = rng.choice([-1.0, 1.0]) * rng.uniform(0.35, 0.6) * size
        other = _place(other, size, rng, 4.0) + np.array([shift, rng.uniform(-6, 6)])
        draw_figure(image, other, rng, skeleton)

    visibility = np.full(skeleton.num_joints, VISIBLE)
    hidden = draw_figure(image, pose, rng, skeleton)
    visibility[hidden] = SELF_OCCLUDED

    boxes = [tuple(b) for b in (occluder_boxes or [])]
    if config.occluders and rng.random() < config.occluder_prob:
        for _ in range(rng.integers(1, 3)):
            target = pose[rng.integers(skeleton.num_joints)]
            w, h = rng.uniform(8, 18, size=2)
            x0, y0 = target + rng.uniform(-0.7, -0.3, size=2) * np.array([w, h])
            boxes.append((x0, y0, x0 + w, y0 + h))
    xs, ys = _grid(size)
    for x0, y0, x1, y1 in boxes:
        color = rng.uniform(0, 1, size=3)
        mask = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
        _paint(image, mask.astype(np.float64), color)
        covered = ((pose[:, 0] >= x0) & (pose[:, 0] <= x1) & (pose[:, 1] >= y0) & (pose[:, 1] <= y1))
        visibility[covered] = OBJECT_OCCLUDED

    out = _out_of_bounds(pose, size)
    visibility[out] = OBJECT_OCCLUDED
    image = np.round(np.clip(image, 0, 1) * 255.0) / 255.0
    ann = PoseAnnotation(pose, visibility, image_id)
    return Sample(image, ann, build_knowledge_vector(image, ann.joints, ann.visibility, skeleton))


def _out_of_bounds(joints, size):
    return ((joints < 0) | (joints > size - 1)).any(axis=1)


def generate_dataset(count, seed, config: GeneratorConfig = GeneratorConfig()):
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [generate_stick_figure(s, config, image_id=f"img{i:05d}") for i, s in enumerate(seeds)]


# ------------------------------------------------------------------ augmentation


@dataclass(frozen=True)
class AugmentParams:
    rotation: float = 0.0  # degrees
    flip: bool = False
    scale: float = 1.0
    jitter: tuple = (1.0, 1.0, 1.0)

    @classmethod
    def draw(cls, rng):
        return cls(rotation=float(rng.uniform(-30, 30)), flip=bool(rng.random() < 0.5),
                   scale=float(rng.uniform(0.75, 1.25)),
                   jitter=tuple(float(v) for v in rng.uniform(0.8, 1.2, size=3)))


def affine_about_center(size, rotation_deg, scale):
    """2x2 matrix and offset mapping (x, y) -> c + s R (p - c)."""
    t = math.radians(rotation_deg)
    a = scale * np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    c = np.full(2, (size - 1) / 2.0)
    return a, c - a @ c


def warp_image(image, matrix, offset, order=1):
    """Resample ``image`` [C,H,W] so that output(p') = input(A^-1 (p' - b)), p in (x, y)."""
    inv = np.linalg.inv(matrix)
    inv_off = -inv @ offset
    m_yx = inv[::-1, ::-1]
    off_yx = inv_off[::-1]
    return np.stack([ndimage.affine_transform(ch, m_yx, offset=off_yx, order=order, mode="constant",
                                              cval=0.0) for ch in image])


def flip_annotation(ann: PoseAnnotation, size, skeleton: Skeleton = SKELETON):
    perm = list(skeleton.mirror)
    joints = ann.joints[perm].copy()
    joints[:, 0] = size - 1 - joints[:, 0]
    return PoseAnnotation(joints, ann.visibility[perm].copy(), ann.image_id)


def augment(sample: Sample, rng=None, params: AugmentParams | None = None,
            skeleton: Skeleton = SKELETON) -> Sample:
    """Rotate, rescale, optionally flip and colour-jitter a sample.

    Joints follow the same affine map; joints that leave the image become
    object-occluded.  The knowledge vector is recomputed from the result.
    """
    if params is None:
        params = AugmentParams.draw(rng)
    size = sample.image.shape[-1]
    a, b = affine_about_center(size, params.rotation, params.scale)
    image = sample.image
    if params.rotation != 0.0 or params.scale != 1.0:
        image = warp_image(image, a, b)
    joints = sample.annotation.joints @ a.T + b
    ann = PoseAnnotation(joints, sample.annotation.visibility.copy(), sample.annotation.image_id)
    if params.flip:
        image = image[:, :, ::-1]
        ann = flip_annotation(ann, size, skeleton)
    image = np.clip(image * np.asarray(params.jitter)[:, None, None], 0.0, 1.0)
    ann.visibility[_out_of_bounds(ann.joints, size)] = OBJECT_OCCLUDED
    image = np.ascontiguousarray(image)
    return Sample(image, ann, build_knowledge_vector(image, ann.joints, ann.visibility, skeleton))


# ------------------------------------------------------------------ heatmaps


def image_to_heatmap(xy, stride=STRIDE):
    """Input-image pixel coordinates -> heatmap pixel coordinates (pixel centres)."""
    return (np.asarray(xy, dtype=np.float64) - (stride - 1) / 2.0) / stride


def heatmap_to_image(uv, stride=STRIDE):
    return np.asarray(uv, dtype=np.float64) * stride + (stride - 1) / 2.0


def render_gt_heatmaps(ann: PoseAnnotation, size, sigma=1.0, stride=STRIDE) -> GtHeatmaps:
    """Gaussian peaks at visible joints plus a background channel."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = len(ann.joints)
    maps = np.zeros((n + 1, size, size))
    xs, ys = _grid(size)
    centers = image_to_heatmap(ann.joints, stride)
    for k in range(n):
        if ann.visibility[k] != VISIBLE:
            continue
        u, v = centers[k]
        maps[k] = np.exp(-((xs - u) ** 2 + (ys - v) ** 2) / (2.0 * sigma * sigma))
    maps[n] = np.clip(1.0 - maps[:n].max(axis=0), 0.0, 1.0)
    return GtHeatmaps(maps, sigma)


def pixel_weights(gt: GtHeatmaps, foreground=FOREGROUND_WEIGHT, threshold=FOREGROUND_THRESHOLD):
    return np.where(gt.maps > threshold, foreground, 1.0)


# ------------------------------------------------------------------ file formats


def write_ppm(path, image):
    """Write a [3,H,W] float image in [0,1] as binary P6."""
    arr = np.round(np.clip(np.asarray(image), 0, 1) * 255.0).astype(np.uint8)
    h, w = arr.shape[1:]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + arr.transpose(1, 2, 0).tobytes())


def write_pgm(path, gray):
    """Write a [H,W] array as binary P5, scaled so the maximum maps to 255."""
    g = np.asarray(gray, dtype=np.float64)
    lo, hi = g.min(), g.max()
    scaled = (g - lo) / (hi - lo) if hi > lo else np.zeros_like(g)
    arr = np.round(scaled * 255.0).astype(np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + arr.tobytes())


def _read_netpbm(path, magic):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != magic:
        raise ParseError(f"{path}: expected {magic.decode()} header, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 supported")
    return data[pos + 1:], w, h


def read_ppm(path):
    body, w, h = _read_netpbm(path, b"P6")
    arr = np.frombuffer(body[: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path):
    body, w, h = _read_netpbm(path, b"P5")
    return np.frombuffer(body[: w * h], dtype=np.uint8).reshape(h, w)


def _fmt(v):
    return repr(float(v))


def annotation_header(num_joints=SKELETON.num_joints):
    cols = ["image"]
    for k in range(num_joints):
        cols += [f"j{k}x", f"j{k}y", f"j{k}v"]
    return cols


def save_annotations(path, records):
    """``records`` is a list of (image name, PoseAnnotation)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(annotation_header(len(records[0][1].joints) if records else SKELETON.num_joints))
        for name, ann in records:
            row = [name]
            for (x, y), v in zip(ann.joints, ann.visibility):
                row += [_fmt(x), _fmt(y), str(int(v))]
            w.writerow(row)


def load_annotations(path, num_joints=SKELETON.num_joints, check_images=True):
    """Parse an annotation CSV; image paths are resolved against its directory."""
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != annotation_header(num_joints):
            raise ParseError("unexpected header", line=1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1 + 3 * num_joints:
                raise ParseError(
                    f"row for {row[0]!r} has {(len(row) - 1) / 3:g} joints, expected {num_joints}",
                    line=line)
            try:
                vals = np.array([float(v) for v in row[1:]]).reshape(num_joints, 3)
            except ValueError as exc:
                raise ParseError(f"row for {row[0]!r}: {exc}", line=line) from None
            vis = vals[:, 2]
            if not np.all(np.isin(vis, (VISIBLE, SELF_OCCLUDED, OBJECT_OCCLUDED))):
                raise ParseError(f"row for {row[0]!r}: visibility must be 0, 1 or 2", line=line)
            image_path = path.parent / row[0]
            if check_images and not image_path.exists():
                raise FileNotFoundError(f"missing image {image_path}")
            records.append((image_path, PoseAnnotation(vals[:, :2], vis.astype(np.int64),
                                                       Path(row[0]).stem)))
    return records


def write_dataset(directory, samples):
    """Write PPM images, annotations.csv and the per-channel pixel mean."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        name = f"{s.annotation.image_id}.ppm"
        write_ppm(directory / name, s.image)
        records.append((name, s.annotation))
    save_annotations(directory / "annotations.csv", records)
    mean = np.mean([s.image.mean(axis=(1, 2)) for s in samples], axis=0)
    (directory / "mean.txt").write_text(" ".join(_fmt(m) for m in mean) + "\n")


def read_dataset(directory, skeleton: Skeleton = SKELETON):
    directory = Path(directory)
    samples = []
    for image_path, ann in load_annotations(directory / "annotations.csv", skeleton.num_joints):
        img = read_ppm(image_path)
        samples.append(Sample(img, ann, build_knowledge_vector(img, ann.joints, ann.visibility, skeleton)))
    return samples


def read_mean(directory):
    p = Path(directory) / "mean.txt"
    if not p.exists():
        return None
    return np.array([float(v) for v in p.read_text().split()])


def pixel_mean(samples):
    return np.mean([s.image.mean(axis=(1, 2)) for s in samples], axis=0)


@dataclass
class Batch:
    images: np.ndarray  # [N,3,S,S], mean-subtracted
    gt: np.ndarray  # [N,J+1,h,h]
    weights: np.ndarray
    knowledge: list = field(default_factory=list)


def make_batch(samples, mean, heatmap_size, sigma=1.0, dtype=np.float32):
    images = np.stack([s.image - np.asarray(mean)[:, None, None] for s in samples]).astype(dtype)
    gts = [render_gt_heatmaps(s.annotation, heatmap_size, sigma) for s in samples]
    gt = np.stack([g.maps for g in gts]).astype(dtype)
    weights = np.stack([pixel_weights(g) for g in gts]).astype(dtype)
    return Batch(images, gt, weights, [s.knowledge for s in samples])


def with_image(sample: Sample, image) -> Sample:
    return replace(sample, image=image)
