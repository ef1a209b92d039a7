import math

import numpy as np
import pytest
from conftest import boxes, grid_iou, random_box
from hypothesis import given, settings

from iaml.geometry import (BBox, InvalidBoxError, Point, RawBBox, center, clamp_boxes, contains,
                           iou, iou_many, validate)


def test_iou_identity():
    b = BBox(0.1, 0.2, 0.4, 0.7)
    assert iou(b, b) == 1.0


def test_iou_disjoint():
    assert iou(BBox(0, 0, 0.4, 0.4), BBox(0.5, 0.5, 1, 1)) == 0.0


def test_iou_quarter_overlap_is_one_seventh():
    a, b = BBox(0, 0, 0.5, 0.5), BBox(0.25, 0.25, 0.75, 0.75)
    assert iou(a, b) == pytest.approx(1 / 7, abs=1e-15)
    assert abs(grid_iou(a, b) - iou(a, b)) < 1e-3


def test_iou_touching_edges_is_zero():
    assert iou(BBox(0, 0, 0.5, 1), BBox(0.5, 0, 1, 1)) == 0.0


def _lattice_box(rng, n=1000):
    x0, x1 = np.sort(rng.choice(n + 1, size=2, replace=False)) / n
    y0, y1 = np.sort(rng.choice(n + 1, size=2, replace=False)) / n
    return BBox(x0, y0, x1, y1)


def test_grid_oracle_on_lattice_pairs():
    # a 1000x1000 raster measures lattice-aligned boxes exactly
    rng = np.random.default_rng(7)
    worst, overlapping = 0.0, 0
    for _ in range(1000):
        a, b = _lattice_box(rng), _lattice_box(rng)
        overlapping += iou(a, b) > 0
        worst = max(worst, abs(iou(a, b) - grid_iou(a, b, 1000)))
    assert overlapping > 300
    assert worst <= 2e-3


def test_fine_grid_oracle_on_random_pairs():
    # off-lattice edges move by up to half a cell, so use a finer raster
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        a, b = random_box(rng), random_box(rng)
        worst = max(worst, abs(iou(a, b) - grid_iou(a, b, 100_000)))
    assert worst <= 2e-3


@settings(max_examples=300)
@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@settings(max_examples=300)
@given(boxes(), boxes())
def test_iou_one_only_for_equal_boxes(a, b):
    if a != b:
        assert iou(a, b) < 1.0 or np.allclose(a.as_array(), b.as_array(), atol=1e-12)


@settings(max_examples=200)
@given(boxes(), boxes())
def test_iou_many_matches_scalar(a, b):
    assert iou_many(a, b.as_array()[None])[0] == pytest.approx(iou(a, b), abs=1e-12)


def test_validate_clamps_low():
    assert validate(RawBBox(-0.1, 0.2, 0.5, 0.6)) == BBox(0.0, 0.2, 0.5, 0.6)


def test_validate_clamps_high():
    assert validate(RawBBox(0.3, 0.3, 1.4, 1.4)) == BBox(0.3, 0.3, 1.0, 1.0)


def test_validate_rejects_inverted():
    with pytest.raises(InvalidBoxError):
        validate(RawBBox(0.5, 0.2, 0.4, 0.6))


def test_validate_rejects_collapsed_by_clamping():
    with pytest.raises(InvalidBoxError):
        validate(RawBBox(1.1, 0.2, 1.3, 0.6))


@pytest.mark.parametrize("coords", [(0.2, 0.2, 0.2, 0.5), (0, 0, 1.2, 1), (0.5, 0.1, 0.4, 0.3),
                                    (math.nan, 0, 1, 1), (0, 0, math.inf, 1)])
def test_bbox_invariants(coords):
    with pytest.raises(InvalidBoxError):
        BBox(*coords)


def test_clamp_boxes_mask_agrees_with_validate():
    rng = np.random.default_rng(3)
    raw = rng.uniform(-0.3, 1.3, size=(2000, 4))
    clamped, ok = clamp_boxes(raw)
    for row, c, v in zip(raw, clamped, ok):
        if v:
            assert validate(RawBBox(*row)).as_array() == pytest.approx(c)
        else:
            with pytest.raises(InvalidBoxError):
                validate(RawBBox(*row))


def test_center_examples():
    assert center(BBox(0, 0, 1, 1)) == Point(0.5, 0.5)
    c = center(BBox(0.2, 0.4, 0.4, 0.8))
    assert (c.x, c.y) == pytest.approx((0.3, 0.6))


@settings(max_examples=200)
@given(boxes())
def test_center_is_midpoint_and_contained(b):
    c = center(b)
    assert c.x == pytest.approx(b.x_min + b.width / 2)
    assert c.y == pytest.approx(b.y_min + b.height / 2)
    assert contains(b, c)


def test_contains_examples():
    b = BBox(0.4, 0.4, 0.6, 0.6)
    assert contains(b, Point(0.5, 0.5))
    assert not contains(b, Point(0.39, 0.5))


def test_contains_closed_boundary():
    b = BBox(0.4, 0.4, 0.6, 0.6)
    assert contains(b, Point(0.4, 0.6))
    assert contains(b, Point(0.6, 0.4))


def test_point_outside_unit_square_rejected():
    with pytest.raises(ValueError):
        Point(1.01, 0.5)
