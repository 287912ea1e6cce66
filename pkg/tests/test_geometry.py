import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from losnav.geometry import (
    DegenerateBearing,
    InvalidAngle,
    NonFiniteCoordinate,
    Pose2D,
    Vec2,
    bearing,
    distance,
    wrap_angle,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
coord = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
points = st.builds(Vec2, coord, coord)


def brute_wrap(theta):
    # add or subtract full turns until the value lands in (-pi, pi]
    while theta > math.pi:
        theta -= 2 * math.pi
    while theta <= -math.pi:
        theta += 2 * math.pi
    return theta


@pytest.mark.parametrize("theta, expected", [
    (0.0, 0.0),
    (3 * math.pi, math.pi),
    (-7 * math.pi / 2, math.pi / 2),
    (math.pi, math.pi),
    (-math.pi, math.pi),
    (2 * math.pi, 0.0),
])
def test_wrap_angle_examples(theta, expected):
    assert wrap_angle(theta) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_wrap_angle_rejects_non_finite(bad):
    with pytest.raises(InvalidAngle):
        wrap_angle(bad)


@given(finite)
def test_wrap_range_and_idempotence(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert wrap_angle(w) == w


@given(st.floats(-50, 50, allow_nan=False), st.integers(-10, 10))
def test_wrap_periodic(theta, k):
    a = wrap_angle(theta + 2 * math.pi * k)
    b = wrap_angle(theta)
    # both sides of the branch cut are the same angle
    assert abs(wrap_angle(a - b)) < 1e-9


@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_matches_brute_force(theta):
    assert abs(wrap_angle(wrap_angle(theta) - brute_wrap(theta))) < 1e-12


@pytest.mark.parametrize("pose, target, expected", [
    (Pose2D.at(0, 0, 0), Vec2(5, 5), math.pi / 4),
    (Pose2D.at(0, 0, math.pi / 2), Vec2(0, 3), 0.0),
    (Pose2D.at(1, 1, math.pi), Vec2(0, 1), 0.0),
])
def test_bearing_examples(pose, target, expected):
    assert bearing(pose, target) == pytest.approx(expected, abs=1e-12)


def test_bearing_degenerate():
    with pytest.raises(DegenerateBearing):
        bearing(Pose2D.at(1, 2, 0), Vec2(1, 2))
    with pytest.raises(DegenerateBearing):
        bearing(Pose2D.at(1, 2, 0), Vec2(1 + 1e-10, 2))


@given(points, st.floats(-math.pi, math.pi), points, points)
def test_bearing_translation_invariant(p, h, t, shift):
    if distance(p, t) < 1e-3:
        return
    a = bearing(Pose2D(p, h), t)
    b = bearing(Pose2D(p + shift, h), t + shift)
    assert abs(wrap_angle(a - b)) < 1e-9


@given(points, st.floats(-math.pi, math.pi), points, st.floats(-math.pi, math.pi))
def test_bearing_rotation_equivariant(p, h, t, phi):
    if distance(p, t) < 1e-3:
        return
    a = bearing(Pose2D(p, h), t)
    b = bearing(Pose2D(p.rotated(phi), h + phi), t.rotated(phi))
    assert abs(wrap_angle(a - b)) < 1e-9


@pytest.mark.parametrize("a, b, expected", [
    (Vec2(0, 0), Vec2(0, 0), 0.0),
    (Vec2(0, 0), Vec2(3, 4), 5.0),
    (Vec2(0, 0), Vec2(5, 5), math.sqrt(50)),
])
def test_distance_examples(a, b, expected):
    assert distance(a, b) == pytest.approx(expected, abs=1e-12)


@given(points, points, points)
def test_distance_metric(a, b, c):
    assert distance(a, b) >= 0
    assert distance(a, b) == distance(b, a)
    assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-9


def test_vec2_rejects_non_finite():
    with pytest.raises(NonFiniteCoordinate):
        Vec2(math.nan, 0)
    with pytest.raises(NonFiniteCoordinate):
        Vec2(0, math.inf)


def test_pose_heading_stored_wrapped():
    assert Pose2D.at(0, 0, 3 * math.pi).heading == pytest.approx(math.pi)
    assert Pose2D.at(0, 0, -math.pi).heading == math.pi
