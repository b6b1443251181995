"""Pose evaluation: PCK, PCKh, strict PCP and PDJ with its AUC.

A joint counts as correct when its error is strictly below the threshold
radius; a zero error is always correct, so a perfect prediction scores at
every threshold including 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .skeleton import JOINT_GROUPS, LIMB_CLASSES, SKELETON, VISIBLE, Skeleton

AUC_THRESHOLDS = np.round(np.arange(0, 51) * 0.01, 2)


class EmptyInputError(ValueError):
    """A metric was asked to evaluate no records."""


@dataclass
class EvalRecord:
    pred: np.ndarray  # [J, 2]
    gt: np.ndarray  # [J, 2]
    visibility: np.ndarray  # [J]

    def __post_init__(self):
        self.pred = np.asarray(self.pred, dtype=np.float64)
        self.gt = np.asarray(self.gt, dtype=np.float64)
        self.visibility = np.asarray(self.visibility)


@dataclass
class MetricResult:
    name: str
    threshold: float
    per_item: np.ndarray  # rate per joint (or per limb), nan when nothing counted
    counts: np.ndarray  # evaluated items per joint (or limb)
    hits: np.ndarray
    groups: dict = field(default_factory=dict)
    excluded: int = 0

    @property
    def total(self):
        n = self.counts.sum()
        return float(self.hits.sum() / n) if n else float("nan")


def _correct(dist, radius):
    return (dist < radius) | (dist == 0)


def _records(records):
    records = list(records)
    if not records:
        raise EmptyInputError("no records to evaluate")
    return records


def _joint_metric(name, records, threshold, normalizer, include_occluded, skeleton):
    records = _records(records)
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    j = skeleton.num_joints
    hits = np.zeros(j)
    counts = np.zeros(j)
    excluded = 0
    for r in records:
        norm = normalizer(r)
        if not norm > 0:
            excluded += 1
            continue
        use = np.ones(j, dtype=bool) if include_occluded else r.visibility == VISIBLE
        dist = np.linalg.norm(r.pred - r.gt, axis=1)
        hits += use & _correct(dist, threshold * norm)
        counts += use
    return _finish(name, threshold, hits, counts, excluded, JOINT_GROUPS)


def _finish(name, threshold, hits, counts, excluded, groups):
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
    grouped = {}
    for g, idx in groups.items():
        n = counts[list(idx)].sum()
        grouped[g] = float(hits[list(idx)].sum() / n) if n else float("nan")
    return MetricResult(name, threshold, per, counts, hits, grouped, excluded)


def bbox_max_side(gt):
    return float(max(np.ptp(gt[:, 0]), np.ptp(gt[:, 1])))


def head_length(gt, skeleton: Skeleton = SKELETON):
    return float(np.linalg.norm(gt[skeleton.index("head_top")] - gt[skeleton.index("neck")]))


def torso_diameter(gt, skeleton: Skeleton = SKELETON):
    return float(np.linalg.norm(gt[skeleton.index("l_shoulder")] - gt[skeleton.index("r_hip")]))


def pck(records, threshold=0.2, include_occluded=False, skeleton: Skeleton = SKELETON):
    """Radius is ``threshold`` times the longer side of the ground-truth joint box."""
    return _joint_metric("PCK", records, threshold, lambda r: bbox_max_side(r.gt),
                         include_occluded, skeleton)


def pckh(records, threshold=0.5, include_occluded=False, skeleton: Skeleton = SKELETON):
    """Radius is ``threshold`` times the head_top-neck segment length."""
    return _joint_metric("PCKh", records, threshold, lambda r: head_length(r.gt, skeleton),
                         include_occluded, skeleton)


def pdj(records, threshold, include_occluded=False, skeleton: Skeleton = SKELETON):
    return _joint_metric("PDJ", records, threshold, lambda r: torso_diameter(r.gt, skeleton),
                         include_occluded, skeleton)


def _pcp(name, records, threshold, rule, include_occluded, skeleton):
    records = _records(records)
    n = skeleton.num_limbs
    hits = np.zeros(n)
    counts = np.zeros(n)
    excluded = 0
    for r in records:
        for k, (a, b) in enumerate(skeleton.limbs):
            if not include_occluded and (r.visibility[a] != VISIBLE or r.visibility[b] != VISIBLE):
                continue
            length = float(np.linalg.norm(r.gt[a] - r.gt[b]))
            if not length > 0:
                excluded += 1
                continue
            da = float(np.linalg.norm(r.pred[a] - r.gt[a]))
            db = float(np.linalg.norm(r.pred[b] - r.gt[b]))
            hits[k] += rule(da, db, threshold * length)
            counts[k] += 1
    return _finish(name, threshold, hits, counts, excluded, LIMB_CLASSES)


def pcp_strict(records, threshold=0.5, include_occluded=False, skeleton: Skeleton = SKELETON):
    """A limb is correct only if both endpoints are within ``threshold`` x its length."""
    return _pcp("PCP", records, threshold,
                lambda da, db, rad: bool(_correct(da, rad) and _correct(db, rad)),
                include_occluded, skeleton)


def pcp_average(records, threshold=0.5, include_occluded=False, skeleton: Skeleton = SKELETON):
    """Looser variant: the mean endpoint error must be within the radius."""
    return _pcp("PCP-avg", records, threshold,
                lambda da, db, rad: bool(_correct(0.5 * (da + db), rad)),
                include_occluded, skeleton)


@dataclass
class AucResult:
    thresholds: np.ndarray
    curve: np.ndarray
    auc: float
    excluded: int


def pdj_auc(records, thresholds=AUC_THRESHOLDS, include_occluded=False,
            skeleton: Skeleton = SKELETON) -> AucResult:
    """Detection-rate curve normalized by torso diameter and its trapezoidal area."""
    records = _records(records)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    j = skeleton.num_joints
    curve = np.zeros(len(thresholds))
    excluded = 0
    total = 0
    for r in records:
        norm = torso_diameter(r.gt, skeleton)
        if not norm > 0:
            excluded += 1
            continue
        use = np.ones(j, dtype=bool) if include_occluded else r.visibility == VISIBLE
        dist = np.linalg.norm(r.pred - r.gt, axis=1)[use]
        total += dist.size
        for k, t in enumerate(thresholds):
            curve[k] += _correct(dist, t * norm).sum()
    curve = curve / total if total else np.full(len(thresholds), np.nan)
    span = thresholds[-1] - thresholds[0]
    area = float(np.sum(0.5 * (curve[1:] + curve[:-1]) * np.diff(thresholds)) / span)
    return AucResult(thresholds, curve, area, excluded)


# ------------------------------------------------------------------ reports

JOINT_COLUMNS = list(JOINT_GROUPS) + ["Total"]
LIMB_COLUMNS = list(LIMB_CLASSES) + ["Total"]


def report_row(result: MetricResult):
    return {**{k: 100.0 * v for k, v in result.groups.items()}, "Total": 100.0 * result.total}


def write_report(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(result, AucResult):
            w.writerow(["threshold", "rate"])
            for t, c in zip(result.thresholds, result.curve):
                w.writerow([f"{t:.2f}", f"{100.0 * c:.2f}"])
            w.writerow(["AUC", f"{100.0 * result.auc:.2f}"])
            return
        row = report_row(result)
        cols = LIMB_COLUMNS if result.name.startswith("PCP") else JOINT_COLUMNS
        w.writerow(["Metric"] + cols)
        w.writerow([f"{result.name}@{result.threshold:g}"] + [f"{row[c]:.1f}" for c in cols])
