import numpy as np
import pytest

from fcnet.geometry import Box, clip, contains, intersection, intersection_area, iou


def test_box_properties():
    b = Box(2, 3, 10, 15)
    assert (b.w, b.h, b.area) == (8, 12, 96)
    assert b.as_list() == [2, 3, 10, 15]
    assert Box.from_list([2, 3, 10, 15]) == b


@pytest.mark.parametrize("quad", [(0, 0, 0, 5), (3, 1, 2, 4), (0, 7, 4, 7)])
def test_empty_box_rejected(quad):
    with pytest.raises(ValueError):
        Box(*quad)


def test_iou_hand_values():
    a = Box(0, 0, 4, 4)
    assert iou(a, Box(0, 0, 4, 4)) == 1.0
    assert iou(a, Box(4, 4, 8, 8)) == 0.0
    assert iou(a, Box(2, 0, 6, 4)) == pytest.approx(8 / 24)  # 1/3
    assert iou(a, Box(0, 2, 4, 6)) == pytest.approx(1 / 3)


def test_iou_symmetric_random(rng):
    for _ in range(200):
        x0, y0 = rng.integers(0, 20, 2)
        a = Box(int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15)))
        x0, y0 = rng.integers(0, 20, 2)
        b = Box(int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15)))
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0
        inter = intersection(a, b)
        if inter is None:
            assert intersection_area(a, b) == 0
        else:
            assert inter.area == intersection_area(a, b)
            assert contains(a, inter) and contains(b, inter)


def test_intersection_disjoint_and_nested():
    assert intersection(Box(0, 0, 2, 2), Box(5, 5, 7, 7)) is None
    assert intersection(Box(0, 0, 10, 10), Box(2, 3, 5, 6)) == Box(2, 3, 5, 6)


def test_clip():
    assert clip(Box(-3, -2, 5, 4), 10, 10) == Box(0, 0, 5, 4)
    assert clip(Box(8, 8, 14, 12), 10, 10) == Box(8, 8, 10, 10)
    assert clip(Box(12, 0, 15, 5), 10, 10) is None


def test_contains():
    outer = Box(0, 0, 10, 10)
    assert contains(outer, Box(0, 0, 10, 10))
    assert contains(outer, Box(3, 4, 5, 6))
    assert not contains(Box(3, 4, 5, 6), outer)
