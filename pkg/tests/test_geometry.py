import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zsdet.geometry import (MAX_LOG_SCALE, Box, decode_offsets, encode_offsets, from_corners, iou,
                            nms, pairwise_iou, to_corners)


def test_iou_examples():
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 1, 1), (5, 5, 1, 1)) == 0.0
    # unit squares shifted by half a width: inter 0.5, union 1.5
    assert iou((0.5, 0.5, 1, 1), (1.0, 0.5, 1, 1)) == pytest.approx(1 / 3, abs=1e-12)


def test_touching_boxes_do_not_overlap():
    assert iou((0, 0, 2, 2), (2, 0, 2, 2)) == 0.0


def test_corner_round_trip():
    b = np.array([[3.0, 4.0, 2.0, 6.0]])
    np.testing.assert_allclose(to_corners(b), [[2, 1, 4, 7]])
    np.testing.assert_allclose(from_corners(to_corners(b)), b)


def test_box_validate():
    Box(0, 0, 1, 1).validate()
    with pytest.raises(ValueError):
        Box(0, 0, 0, 1).validate()
    with pytest.raises(ValueError):
        Box(np.nan, 0, 1, 1).validate()


def test_encode_examples():
    np.testing.assert_array_equal(encode_offsets([0, 0, 10, 10], [0, 0, 10, 10]), [0, 0, 0, 0])
    assert encode_offsets([0, 0, 10, 10], [0, 0, 10 * np.e, 10])[2] == pytest.approx(1.0)
    assert encode_offsets([0, 0, 10, 10], [2, 0, 10, 10])[0] == pytest.approx(0.2)


def test_decode_examples():
    np.testing.assert_array_equal(decode_offsets([1, 2, 3, 4], [0, 0, 0, 0]), [1, 2, 3, 4])
    assert decode_offsets([0, 0, 10, 10], [0.2, 0, 0, 0])[0] == pytest.approx(2.0)


def test_decode_clips_log_scale():
    out = decode_offsets([0, 0, 1, 1], [0, 0, 50, -50])
    assert out[2] == pytest.approx(np.exp(MAX_LOG_SCALE))
    assert out[3] == pytest.approx(np.exp(-MAX_LOG_SCALE))


_coord = st.floats(-1e3, 1e3, allow_nan=False)
_size = st.floats(0.5, 500, allow_nan=False)
_box = st.tuples(_coord, _coord, _size, _size)


@settings(max_examples=200, deadline=None)
@given(_box, _box)
def test_iou_is_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert v == pytest.approx(iou(b, a), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(_box)
def test_self_iou_is_one(a):
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


def test_round_trip_many_pairs():
    rng = np.random.default_rng(11)
    p = np.column_stack([rng.uniform(-100, 100, (10_000, 2)), rng.uniform(1, 50, (10_000, 2))])
    # keep the true scale change inside the decode clip window
    g = np.column_stack([p[:, :2] + rng.normal(0, 5, (10_000, 2)),
                         p[:, 2:] * np.exp(rng.uniform(-3, 3, (10_000, 2)))])
    back = decode_offsets(p, encode_offsets(p, g))
    assert np.max(np.abs(back - g)) < 1e-9


def test_pairwise_iou_shape():
    assert pairwise_iou(np.zeros((3, 4)) + [0, 0, 1, 1], np.zeros((2, 4)) + [0, 0, 1, 1]).shape == (3, 2)


def test_nms_examples():
    assert list(nms([[0, 0, 1, 1]], [0.3], 0.5)) == [0]
    assert list(nms([[0, 0, 2, 2], [0, 0, 2, 2]], [0.8, 0.9], 0.5)) == [1]
    assert list(nms([[0, 0, 2, 2], [0, 0, 2, 2]], [0.8, 0.9], 1.0)) == [1, 0]


def test_nms_boundary_is_strict():
    # IoU exactly 1/3: kept at threshold 1/3, suppressed just below it
    boxes = [[0.5, 0.5, 1, 1], [1.0, 0.5, 1, 1]]
    thr = iou(*boxes)
    assert len(nms(boxes, [0.9, 0.8], thr)) == 2
    assert len(nms(boxes, [0.9, 0.8], thr - 1e-9)) == 1


def test_nms_ties_prefer_lower_index():
    assert list(nms([[0, 0, 2, 2], [0, 0, 2, 2]], [0.5, 0.5], 0.5)) == [0]


def test_nms_empty_and_errors():
    assert nms(np.zeros((0, 4)), np.zeros(0), 0.5).size == 0
    with pytest.raises(ValueError):
        nms([[0, 0, 1, 1]], [0.1, 0.2], 0.5)
    with pytest.raises(ValueError):
        nms([[0, 0, 1, 1]], [np.nan], 0.5)


def _brute_nms(boxes, scores, thr):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    keep = []
    for i in order:
        if all(iou(boxes[i], boxes[k]) <= thr for k in keep):
            keep.append(i)
    return keep


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.floats(0.05, 0.95))
def test_nms_matches_brute_force_and_keeps_low_overlap(seed, n, thr):
    rng = np.random.default_rng(seed)
    boxes = np.column_stack([rng.uniform(0, 20, (n, 2)), rng.uniform(2, 10, (n, 2))])
    scores = rng.choice([0.1, 0.5, 0.9], size=n) if seed % 2 else rng.random(n)
    keep = list(nms(boxes, scores, thr))
    assert keep == _brute_nms(boxes, scores, thr)
    ious = pairwise_iou(boxes[keep], boxes[keep])
    np.fill_diagonal(ious, 0)
    assert np.all(ious <= thr)
