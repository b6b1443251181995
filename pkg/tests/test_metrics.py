import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgpose.metrics import (AUC_THRESHOLDS, JOINT_COLUMNS, LIMB_COLUMNS, EmptyInputError,
                            EvalRecord, pck, pckh, pcp_average, pcp_strict, pdj, pdj_auc,
                            write_report)
from kgpose.skeleton import SELF_OCCLUDED, SKELETON, VISIBLE

J = SKELETON.num_joints


def square_pose():
    """GT spanning a 100x100 box, head segment of length 10."""
    gt = np.array([
        [50, 0], [50, 10], [30, 15], [70, 15], [20, 35], [80, 35], [0, 50], [100, 50],
        [40, 55], [60, 55], [40, 78], [60, 78], [40, 100], [60, 100],
    ], dtype=float)
    return gt


def record(pred, gt, visibility=None):
    return EvalRecord(pred, gt, np.zeros(J, int) if visibility is None else visibility)


def random_records(rng, n=5, noise=8.0):
    out = []
    for _ in range(n):
        gt = rng.uniform(0, 64, size=(J, 2))
        pred = gt + rng.normal(scale=noise, size=(J, 2))
        vis = rng.choice([VISIBLE, VISIBLE, SELF_OCCLUDED], size=J)
        out.append(EvalRecord(pred, gt, vis))
    return out


# ------------------------------------------------------------------ fixtures with known answers


def test_pck_two_joint_example():
    gt = square_pose()
    pred = gt.copy()
    pred[6] += [10, 0]
    pred[7] += [0, 25]
    vis = np.full(J, SELF_OCCLUDED)
    vis[[6, 7]] = VISIBLE
    result = pck([record(pred, gt, vis)])
    assert result.total == 0.5
    assert result.groups["Wri."] == 0.5
    assert np.isnan(result.groups["Head"])


def test_pck_boundary_is_incorrect():
    gt = square_pose()
    pred = gt.copy()
    pred[3] += [0, 20]  # exactly 0.2 * 100
    assert pck([record(pred, gt)]).per_item[3] == 0.0


@pytest.mark.parametrize("offset,expected", [(4.0, 1.0), (6.0, 0.0)])
def test_pckh_head_normalized(offset, expected):
    gt = square_pose()
    pred = gt.copy()
    pred[10] += [offset, 0]
    assert pckh([record(pred, gt)]).per_item[10] == expected


def test_pckh_recount_oracle():
    rng = np.random.default_rng(7)
    records = random_records(rng, n=20)
    hits = np.zeros(J)
    counts = np.zeros(J)
    for r in records:
        head = np.hypot(*(r.gt[0] - r.gt[1]))
        for j in range(J):
            if r.visibility[j] != VISIBLE:
                continue
            counts[j] += 1
            d = np.hypot(*(r.pred[j] - r.gt[j]))
            hits[j] += d < 0.5 * head or d == 0
    result = pckh(records)
    np.testing.assert_array_equal(result.hits, hits)
    np.testing.assert_array_equal(result.counts, counts)
    assert result.total == pytest.approx(hits.sum() / counts.sum(), abs=1e-15)


def test_pcp_strict_and_average_examples():
    gt = square_pose()
    gt[0], gt[1] = [0, 0], [10, 0]
    shifted = gt.copy()
    shifted[0], shifted[1] = [0, 4], [10, 4]
    assert pcp_strict([record(shifted, gt)]).per_item[0] == 1.0
    lopsided = gt.copy()
    lopsided[0] = [0, 6]
    assert pcp_strict([record(lopsided, gt)]).per_item[0] == 0.0
    assert pcp_average([record(lopsided, gt)]).per_item[0] == 1.0


def test_pcp_skips_limbs_with_hidden_endpoint():
    gt = square_pose()
    vis = np.zeros(J, int)
    vis[6] = SELF_OCCLUDED
    result = pcp_strict([record(gt, gt, vis)])
    assert result.counts[5] == 0
    assert result.counts.sum() == SKELETON.num_limbs - 1
    assert pcp_strict([record(gt, gt, vis)], include_occluded=True).counts[5] == 1


def test_zero_length_normalizer_excluded():
    gt = square_pose()
    gt[1] = gt[0]
    result = pckh([record(gt, gt)])
    assert result.excluded == 1
    assert np.isnan(result.total)


def test_perfect_prediction_auc_is_one():
    gt = square_pose()
    res = pdj_auc([record(gt, gt)])
    assert res.curve[0] == 1.0
    assert res.auc == pytest.approx(1.0, abs=1e-12)


def test_far_prediction_auc_is_zero():
    gt = square_pose()
    res = pdj_auc([record(gt + 1000.0, gt)])
    assert res.auc == 0.0


def test_auc_trapezoid_oracle():
    records = random_records(np.random.default_rng(3), n=10, noise=6.0)
    res = pdj_auc(records)
    dists, radii = [], []
    for r in records:
        torso = np.hypot(*(r.gt[2] - r.gt[9]))
        for j in np.flatnonzero(r.visibility == VISIBLE):
            dists.append(np.hypot(*(r.pred[j] - r.gt[j])))
            radii.append(torso)
    dists, radii = np.array(dists), np.array(radii)
    curve = np.array([np.mean((dists < t * radii) | (dists == 0)) for t in AUC_THRESHOLDS])
    np.testing.assert_allclose(res.curve, curve, atol=1e-15)
    area = sum(0.01 * 0.5 * (curve[k] + curve[k + 1]) for k in range(50)) / 0.5
    assert abs(res.auc - area) < 1e-12


# ------------------------------------------------------------------ properties


@given(st.integers(0, 10_000), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_pck_monotone_in_threshold(seed, t1, t2):
    records = random_records(np.random.default_rng(seed))
    lo, hi = sorted((t1, t2))
    assert pck(records, lo).total <= pck(records, hi).total


@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 2.0, 8.0]))
def test_metrics_scale_invariant(seed, s):
    records = random_records(np.random.default_rng(seed))
    scaled = [EvalRecord(r.pred * s, r.gt * s, r.visibility) for r in records]
    assert pck(scaled).total == pck(records).total
    assert pckh(scaled).total == pckh(records).total
    assert pcp_strict(scaled).total == pcp_strict(records).total


@given(st.integers(0, 10_000))
def test_strict_pcp_never_exceeds_average(seed):
    records = random_records(np.random.default_rng(seed))
    strict, avg = pcp_strict(records), pcp_average(records)
    assert np.all(strict.hits <= avg.hits)


@given(st.integers(0, 10_000))
def test_rates_are_fractions(seed):
    records = random_records(np.random.default_rng(seed))
    for result in (pck(records), pckh(records), pcp_strict(records), pdj(records, 0.2)):
        per = result.per_item[~np.isnan(result.per_item)]
        assert np.all((per >= 0) & (per <= 1))
        assert 0.0 <= result.total <= 1.0


# ------------------------------------------------------------------ errors and reports


@pytest.mark.parametrize("metric", [pck, pckh, pcp_strict, pdj_auc])
def test_empty_input(metric):
    with pytest.raises(EmptyInputError):
        metric([])


def test_nonpositive_threshold():
    with pytest.raises(ValueError):
        pck([record(square_pose(), square_pose())], 0.0)


def test_report_csv(tmp_path):
    gt = square_pose()
    pred = gt.copy()
    pred[0] += [50, 0]
    path = tmp_path / "r.csv"
    write_report(path, pck([record(pred, gt)]))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["Metric"] + JOINT_COLUMNS
    assert rows[1][0] == "PCK@0.2"
    assert rows[1][1] == "50.0"
    assert rows[1][-1] == f"{100 * 13 / 14:.1f}"


def test_pcp_report_uses_limb_columns(tmp_path):
    gt = square_pose()
    path = tmp_path / "p.csv"
    write_report(path, pcp_strict([record(gt, gt)]))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["Metric"] + LIMB_COLUMNS
    assert rows[1][1:] == ["100.0"] * len(LIMB_COLUMNS)


def test_auc_report(tmp_path):
    gt = square_pose()
    path = tmp_path / "a.csv"
    write_report(path, pdj_auc([record(gt, gt)]))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["threshold", "rate"]
    assert len(rows) == 1 + len(AUC_THRESHOLDS) + 1
    assert rows[-1] == ["AUC", "100.00"]
