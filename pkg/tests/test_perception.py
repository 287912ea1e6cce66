import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from losnav.geometry import Pose2D, Vec2
from losnav.perception import (
    CameraConfig,
    DegenerateProjection,
    Detection,
    ImagePoint,
    InvalidDistance,
    ObjectKind,
    Perception,
    ProximityConfig,
    Zone,
    ZoneConfig,
    build_report,
    classify_bbox,
    classify_zone,
    project_to_image,
    proximity_gate,
)
from losnav.world import Device, Disc, Rect, WorldModel, line_of_sight

ARENA = Rect(Vec2(-10, -10), Vec2(10, 10), "bounds")


def world(obstacles=(), devices=(), pose=Pose2D.at(0, 0, 0)):
    return WorldModel(ARENA, pose, 0.25, list(obstacles), list(devices))


# ---------------------------------------------------------------- projection

def test_projection_examples():
    cam = CameraConfig()
    mrp = Pose2D.at(0, 0, 0)
    assert project_to_image(mrp, Vec2(2, 0), cam).u == 0.5
    edge = Vec2(2 * math.cos(cam.horizontal_fov / 2), 2 * math.sin(cam.horizontal_fov / 2))
    p = project_to_image(mrp, edge, cam)
    assert p is not None and p.u == pytest.approx(0.0, abs=1e-12)
    quarter = -cam.horizontal_fov / 4
    p = project_to_image(mrp, Vec2(2 * math.cos(quarter), 2 * math.sin(quarter)), cam)
    assert p.u == pytest.approx(0.75)


def test_projection_out_of_view_and_degenerate():
    mrp = Pose2D.at(0, 0, 0)
    assert project_to_image(mrp, Vec2(-1, 0)) is None
    assert project_to_image(mrp, Vec2(0.1, 1)) is None  # 84 degrees off axis
    with pytest.raises(DegenerateProjection):
        project_to_image(mrp, Vec2(0, 0))


def pixel_u(rel_bearing, fov, width=1201):
    # brute-force pixel model: columns spaced uniformly in angle, left edge = +fov/2
    col = min(range(width), key=lambda c: abs((fov / 2 - c * fov / (width - 1)) - rel_bearing))
    return col / (width - 1)


@given(st.floats(-1.0, 1.0))
def test_projection_u_matches_pixel_model(rel):
    cam = CameraConfig()
    p = project_to_image(Pose2D.at(1, 1, 0.4), Vec2(1 + 3 * math.cos(0.4 + rel), 1 + 3 * math.sin(0.4 + rel)), cam)
    assert p.u == pytest.approx(pixel_u(rel, cam.horizontal_fov), abs=1.0 / 1200)


@given(st.floats(0.05, 20))
def test_projection_v_in_lower_half(d):
    cam = CameraConfig()
    p = project_to_image(Pose2D.at(0, 0, 0), Vec2(d, 0), cam)
    # ground closer than the bottom edge of the frustum is out of view
    near = cam.mount_height / math.tan(cam.vertical_fov / 2)
    if d < near * (1 - 1e-9):
        assert p is None
    elif d > near * (1 + 1e-9):
        assert 0.5 < p.v <= 1.0


# ---------------------------------------------------------------- zones

def reference_zone(u, v):
    """Independent restatement of the partition."""
    if v < 0.25:
        return "ignored"
    if 0.25 <= u <= 0.75:
        return "front"
    return "left" if u < 0.25 else "right"


@pytest.mark.parametrize("u, v, zone", [
    (0.5, 0.5, Zone.FRONT),
    (0.10, 0.5, Zone.LEFT),
    (0.90, 0.5, Zone.RIGHT),
    (0.5, 0.10, Zone.IGNORED),
    (0.25, 0.5, Zone.FRONT),
    (0.75, 0.5, Zone.FRONT),
    (0.5, 0.25, Zone.FRONT),
])
def test_classify_zone_examples(u, v, zone):
    assert classify_zone(ImagePoint(u, v)) is zone


def test_zone_grid_matches_reference_and_area():
    counts = {z: 0 for z in Zone}
    for i in range(101):
        for j in range(101):
            u, v = i / 100, j / 100
            z = classify_zone(ImagePoint(u, v), ZoneConfig())
            assert z.value == reference_zone(u, v)
            counts[z] += 1
    n = 101 * 101
    row = 101 / n
    assert abs(counts[Zone.FRONT] / n - 0.375) <= row
    assert abs(counts[Zone.LEFT] / n - 0.1875) <= row
    assert abs(counts[Zone.RIGHT] / n - 0.1875) <= row
    assert abs(counts[Zone.IGNORED] / n - 0.25) <= row


@pytest.mark.parametrize("kwargs", [dict(side_margin=0.5), dict(side_margin=0.0), dict(height_fraction=0.0),
                                    dict(height_fraction=1.1)])
def test_zone_config_invariants(kwargs):
    with pytest.raises(ValueError):
        ZoneConfig(**kwargs)


# ---------------------------------------------------------------- gate

def test_proximity_examples():
    cfg = ProximityConfig()
    assert proximity_gate(ObjectKind.OBSTACLE, 0.4, cfg)
    assert proximity_gate(ObjectKind.OBSTACLE, 1.0, cfg)
    assert not proximity_gate(ObjectKind.DEVICE, 3.0, cfg)
    assert proximity_gate(ObjectKind.DEVICE, 2.0, cfg)
    with pytest.raises(InvalidDistance):
        proximity_gate(ObjectKind.OBSTACLE, -0.1, cfg)


@given(st.sampled_from(list(ObjectKind)), st.floats(0, 10), st.floats(0, 1))
def test_proximity_monotone(kind, d, frac):
    if proximity_gate(kind, d):
        assert proximity_gate(kind, d * frac)


def test_detection_invariant():
    with pytest.raises(ValueError):
        Detection(ObjectKind.OBSTACLE, Zone.FRONT, None, True, "x")


def test_classify_bbox_uses_bottom_center():
    det = classify_bbox(ObjectKind.OBSTACLE, (0.4, 0.1, 0.6, 0.8), 0.6, "box")
    assert det.zone is Zone.FRONT and det.close
    det = classify_bbox(ObjectKind.DEVICE, (0.0, 0.3, 0.2, 0.9), 3.5, "p")
    assert det.zone is Zone.LEFT and not det.close
    det = classify_bbox(ObjectKind.OBSTACLE, (0.4, 0.0, 0.6, 0.2), None, "sky")
    assert det.zone is Zone.IGNORED and not det.close
    with pytest.raises(ValueError):
        classify_bbox(ObjectKind.OBSTACLE, (0.6, 0.0, 0.4, 0.2), None, "bad")


# ---------------------------------------------------------------- reports

def test_build_report_examples():
    assert build_report(world()).detections == ()

    rep = build_report(world([Disc(Vec2(1.0, 0), 0.5, "o1")]))
    assert rep.detections == (Detection(ObjectKind.OBSTACLE, Zone.FRONT, 0.5, True, "o1"),)

    hidden = world([Disc(Vec2(2.5, 2.5), 0.5, "o1")], [Device("dev", Vec2(5, 5))], Pose2D.at(0, 0, math.pi / 4))
    rep = build_report(hidden)
    assert [d.source_id for d in rep.detections] == ["o1"]


def test_build_report_zones_kinds_and_order():
    w = world([Disc(Vec2(2, -2), 0.3, "b"), Disc(Vec2(2, 2), 0.3, "a")], [Device("c", Vec2(1.5, 0))])
    rep = build_report(w, seq=4, timestamp_ms=800)
    assert (rep.seq, rep.timestamp_ms) == (4, 800)
    assert [(d.source_id, d.kind, d.zone, d.close) for d in rep.detections] == [
        ("a", ObjectKind.OBSTACLE, Zone.LEFT, False),
        ("b", ObjectKind.OBSTACLE, Zone.RIGHT, False),
        ("c", ObjectKind.DEVICE, Zone.FRONT, True),
    ]


def test_build_report_rect_partially_in_view():
    # the nearest point is out of view; a visible edge sample is reported
    r = Rect(Vec2(-0.5, 0.6), Vec2(2.0, 1.0), "wall")
    rep = build_report(world([r]))
    assert len(rep.detections) == 1
    d = rep.detections[0]
    assert d.zone is Zone.LEFT and d.est_distance > 0.6


def test_build_report_uses_given_pose():
    w = world([Disc(Vec2(-2, 0), 0.5, "behind")])
    assert build_report(w).detections == ()
    rep = build_report(w, pose=Pose2D.at(0, 0, math.pi))
    assert rep.detections[0].zone is Zone.FRONT


def test_reported_objects_are_visible():
    import random

    rng = random.Random(5)
    for _ in range(200):
        obs = [Disc(Vec2(rng.uniform(-6, 6), rng.uniform(-6, 6)), rng.uniform(0.2, 0.8), f"o{i}")
               for i in range(4)]
        obs = [o for o in obs if o.surface_distance(Vec2(0, 0)) > 0.3]
        devs = [Device(f"d{i}", Vec2(rng.uniform(-6, 6), rng.uniform(-6, 6))) for i in range(3)]
        devs = [d for d in devs if not any(o.contains(d.position) for o in obs)]
        w = world(obs, devs, Pose2D.at(0, 0, rng.uniform(-math.pi, math.pi)))
        for det in build_report(w).detections:
            if det.kind is ObjectKind.DEVICE:
                dev = next(d for d in devs if d.id == det.source_id)
                assert line_of_sight(Vec2(0, 0), dev.position, w)


def test_perception_seq_increases():
    p = Perception()
    w = world()
    seqs = [p.report(w, 0).seq for _ in range(5)]
    assert seqs == [0, 1, 2, 3, 4]
