import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from kgpose.errors import DegenerateLimbError
from kgpose.knowledge import (GEO_DIM, HOG_BINS, KNOWLEDGE_DIM, build_knowledge_vector,
                              hog_histogram, hog_limb_descriptor, hough_encode, image_gradients,
                              l2_block_normalize, limb_geometric_feature)
from kgpose.skeleton import OBJECT_OCCLUDED, SELF_OCCLUDED, SKELETON

coord = st.floats(-200, 200, allow_nan=False)


@pytest.mark.parametrize("i,j,theta,rho", [
    ((3, 0), (3, 2), 0.0, 3.0),
    ((2, 1), (0, 1), math.pi / 2, 1.0),
    ((1, 0), (0, 1), math.pi / 4, math.sqrt(2) / 2),
])
def test_hough_examples(i, j, theta, rho):
    code = hough_encode(i, j)
    assert code.theta == pytest.approx(theta, abs=1e-12)
    assert code.rho == pytest.approx(rho, abs=1e-12)


def test_hough_degenerate():
    with pytest.raises(DegenerateLimbError):
        hough_encode((4, 4), (4, 4))


@given(coord, coord, coord, coord)
def test_hough_endpoints_lie_on_line(xi, yi, xj, yj):
    assume(math.hypot(xi - xj, yi - yj) > 1e-3)
    code = hough_encode((xi, yi), (xj, yj))
    assert -math.pi < code.theta <= math.pi
    assert abs(code.residual(xi, yi)) < 1e-9
    assert abs(code.residual(xj, yj)) < 1e-9


@given(coord, coord, coord, coord, st.floats(-50, 50), st.floats(-50, 50))
def test_hough_translation_covariance(xi, yi, xj, yj, dx, dy):
    assume(math.hypot(xi - xj, yi - yj) > 1e-3)
    a = hough_encode((xi, yi), (xj, yj))
    b = hough_encode((xi + dx, yi + dy), (xj + dx, yj + dy))
    assert abs(math.remainder(b.theta - a.theta, 2 * math.pi)) < 1e-9
    assert abs(b.rho - a.rho - (dx * math.cos(a.theta) + dy * math.sin(a.theta))) < 1e-9


def test_geometric_feature_vertical_limb():
    f = limb_geometric_feature((3, 0), (3, 2), True, True, 64)
    np.testing.assert_allclose(f[:3], [1.0, 0.0, 3 / math.sqrt(8192)], atol=1e-15)
    np.testing.assert_allclose(f[3:7], [3 / 64, 0, 3 / 64, 2 / 64])
    assert f[7] == 1.0


def test_geometric_feature_visible_count():
    assert limb_geometric_feature((0, 0), (5, 5), True, False, 64)[7] == 0.5
    assert limb_geometric_feature((0, 0), (5, 5), False, False, 64)[7] == 0.0


# ------------------------------------------------------------------ HOG


def test_constant_image_gives_zero_descriptor():
    d = hog_limb_descriptor(np.full((3, 32, 32), 0.4), (10, 10), (20, 20))
    np.testing.assert_array_equal(d, 0.0)


def test_horizontal_ramp_interior():
    xs = np.tile(np.arange(16.0), (16, 1))
    ix, iy = image_gradients(xs)
    np.testing.assert_array_equal(ix[:, 1:-1], 2.0)
    np.testing.assert_array_equal(iy, 0.0)
    h = hog_histogram(ix[4:10, 4:10], iy[4:10, 4:10])
    assert h[0] == pytest.approx(2.0 * 36, abs=1e-9)
    np.testing.assert_array_equal(h[1:], 0.0)
    d = hog_limb_descriptor(xs, (6, 6), (9, 6), width=2)
    assert abs(d[0] - 1.0) < 1e-9
    np.testing.assert_array_equal(d[1:], 0.0)


def test_rotated_ramp_moves_dominant_bin_by_four():
    ramp = np.tile(np.arange(16.0), (16, 1))
    rotated = np.rot90(ramp)
    d0 = hog_limb_descriptor(ramp, (5, 5), (10, 10), width=1)
    d1 = hog_limb_descriptor(rotated, (5, 5), (10, 10), width=1)
    assert (np.argmax(d1) - np.argmax(d0)) % 8 == 4


def test_block_normalization_example():
    f = l2_block_normalize([3, 4, 0, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(f[:2], [0.6, 0.8], atol=1e-9)
    assert np.linalg.norm(f) <= 1.0


@given(st.lists(st.floats(0, 1e3), min_size=8, max_size=8))
def test_normalized_norm_at_most_one(v):
    assert np.linalg.norm(l2_block_normalize(v)) <= 1.0 + 1e-12


def test_histogram_orientation_is_unsigned():
    h1 = hog_histogram(np.array([[1.0]]), np.array([[1.0]]))
    h2 = hog_histogram(np.array([[-1.0]]), np.array([[-1.0]]))
    np.testing.assert_array_equal(h1, h2)
    assert np.argmax(h1) == 2  # 45 degrees


# ------------------------------------------------------------------ knowledge vector


def _pose(rng):
    joints = rng.uniform(8, 56, size=(SKELETON.num_joints, 2))
    return joints, np.zeros(SKELETON.num_joints, dtype=int)


def test_layout_length_and_padding(samples64):
    s = samples64[0]
    k = s.knowledge
    assert k.data.shape == (KNOWLEDGE_DIM,)
    assert SKELETON.num_limbs * (GEO_DIM + HOG_BINS) == 208
    np.testing.assert_array_equal(k.data[208:], 0.0)
    assert k.geometric().shape == (104,) and k.edges().shape == (104,)
    assert np.linalg.norm(k.data) == pytest.approx(1.0)


def test_all_occluded_gives_zero_vector(rng):
    joints, _ = _pose(rng)
    vis = np.full(SKELETON.num_joints, SELF_OCCLUDED)
    k = build_knowledge_vector(rng.uniform(size=(3, 64, 64)), joints, vis)
    np.testing.assert_array_equal(k.data, 0.0)


@pytest.mark.parametrize("joint", range(SKELETON.num_joints))
def test_occluding_a_joint_zeroes_exactly_its_limbs(joint):
    rng = np.random.default_rng(joint)
    image = rng.uniform(size=(3, 64, 64))
    joints, vis = _pose(rng)
    full = build_knowledge_vector(image, joints, vis)
    vis2 = vis.copy()
    vis2[joint] = OBJECT_OCCLUDED
    masked = build_knowledge_vector(image, joints, vis2)
    touched = {k for k, (a, b) in enumerate(SKELETON.limbs) if joint in (a, b)}
    keep = np.ones(KNOWLEDGE_DIM)
    for k in touched:
        keep[full.limb_slice(k)] = 0.0
    expected = full.data * keep
    expected /= np.linalg.norm(expected)
    for k in touched:
        np.testing.assert_array_equal(masked.data[full.limb_slice(k)], 0.0)
    np.testing.assert_allclose(masked.data, expected, rtol=1e-12, atol=1e-15)
    assert masked.limb_mask.tolist() == [k not in touched for k in range(SKELETON.num_limbs)]


def test_vector_matches_straight_line_reference(samples64):
    s = samples64[1]
    img = s.image.mean(axis=0)
    p = np.pad(img, 1, mode="edge")
    ix = p[1:-1, 2:] - p[1:-1, :-2]
    iy = p[:-2, 1:-1] - p[2:, 1:-1]
    ref = np.zeros(224)
    for k, (a, b) in enumerate(SKELETON.limbs):
        if s.annotation.visibility[a] or s.annotation.visibility[b]:
            continue
        (xa, ya), (xb, yb) = s.annotation.joints[a], s.annotation.joints[b]
        th = math.atan2(xa - xb, yb - ya)
        rho = xb * math.cos(th) + yb * math.sin(th)
        geo = [math.cos(th), math.sin(th), rho / math.hypot(64, 64), xa / 64, ya / 64, xb / 64,
               yb / 64, 1.0]
        w = max(3.0, 0.2 * math.hypot(xa - xb, ya - yb))
        x0, x1 = max(0, math.floor(min(xa, xb) - w)), min(64, math.ceil(max(xa, xb) + w) + 1)
        y0, y1 = max(0, math.floor(min(ya, yb) - w)), min(64, math.ceil(max(ya, yb) + w) + 1)
        hist = np.zeros(8)
        for yy in range(y0, y1):
            for xx in range(x0, x1):
                g = math.hypot(ix[yy, xx], iy[yy, xx])
                phi = math.atan2(iy[yy, xx], ix[yy, xx]) % math.pi
                hist[min(int(phi / (math.pi / 8)), 7)] += g
        hist /= math.sqrt(hist @ hist + 1e-10)
        ref[16 * k: 16 * k + 8] = geo
        ref[16 * k + 8: 16 * k + 16] = hist
    ref /= np.linalg.norm(ref)
    np.testing.assert_allclose(s.knowledge.data, ref, atol=1e-12)
