from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aide.geometry import Region, bounding_region, iou, region_from_floats, vertical_halves


def boxes(max_coord=500):
    coords = st.integers(min_value=0, max_value=max_coord)
    return st.builds(
        lambda x0, y0, w, h: Region(x0, y0, x0 + w, y0 + h),
        coords,
        coords,
        st.integers(min_value=0, max_value=max_coord),
        st.integers(min_value=0, max_value=max_coord),
    )


def test_region_validation():
    with pytest.raises(ValueError):
        Region(-1, 0, 5, 5)
    with pytest.raises(ValueError):
        Region(5, 0, 3, 5)
    r = Region(1, 2, 5, 10)
    assert r.width == 4 and r.height == 8 and r.area == 32
    assert r.center == (3.0, 6.0)


def test_contains_and_intersects():
    outer = Region(0, 0, 100, 100)
    inner = Region(10, 10, 20, 20)
    assert outer.contains(inner) and not inner.contains(outer)
    assert outer.intersects(inner)
    assert Region(0, 0, 10, 10).intersects(Region(10, 10, 20, 20))  # touching edges
    assert not Region(0, 0, 10, 10).intersects(Region(11, 11, 20, 20))


def test_iou_basics():
    a = Region(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, Region(20, 20, 30, 30)) == 0.0
    b = Region(5, 0, 15, 10)
    assert iou(a, b) == pytest.approx(50 / 150)
    degenerate = Region(3, 3, 3, 3)
    assert iou(degenerate, degenerate) == 1.0
    assert iou(degenerate, Region(3, 3, 4, 4)) == 0.0


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    left, right = iou(a, b), iou(b, a)
    assert left == right
    assert 0.0 <= left <= 1.0


def test_clip_and_pad():
    r = Region(90, 90, 120, 130)
    assert r.clip(100, 100) == Region(90, 90, 100, 100)
    padded = Region(10, 10, 30, 30).pad(0.05, 100, 100)
    assert padded == Region(9, 9, 31, 31)
    assert Region(0, 0, 100, 100).pad(0.5, 100, 100) == Region(0, 0, 100, 100)


def test_region_from_floats_orders_and_clamps():
    assert region_from_floats(5.6, -2.0, 1.2, 3.4) == Region(1, 0, 6, 3)


def test_bounding_region():
    rect = bounding_region([Region(5, 5, 10, 10), Region(0, 8, 7, 20)])
    assert rect == Region(0, 5, 10, 20)
    with pytest.raises(ValueError):
        bounding_region([])


def test_vertical_halves():
    lower, upper = vertical_halves(Region(0, 0, 100, 200))
    assert lower == Region(0, 100, 100, 200)
    assert upper == Region(0, 0, 100, 100)
    tiny = Region(4, 4, 5, 5)
    assert vertical_halves(tiny) == (tiny, tiny)


@given(boxes())
def test_halves_contained(box):
    lower, upper = vertical_halves(box)
    assert box.contains(lower) and box.contains(upper)
