from losnav.geometry import Pose2D, Vec2
from losnav.reachability import free_mask, reachable
from losnav.world import Disc, Rect, WorldModel

BOUNDS = Rect(Vec2(0, 0), Vec2(6, 6), "bounds")


def world(obstacles):
    return WorldModel(BOUNDS, Pose2D.at(1, 1, 0), 0.25, list(obstacles))


def test_empty_arena_is_connected():
    assert reachable(world([]), Vec2(1, 1), Vec2(5, 5), 0.35)


def test_wall_gap_depends_on_clearance():
    # a full-height wall with a 1 m gap at the top
    w = world([Rect(Vec2(2.9, 0), Vec2(3.1, 5), "wall")])
    assert reachable(w, Vec2(1, 1), Vec2(5, 1), 0.35)
    assert not reachable(w, Vec2(1, 1), Vec2(5, 1), 0.6)


def test_closed_box_is_unreachable():
    box = [Rect(Vec2(2, 2), Vec2(4, 2.2), "s"), Rect(Vec2(2, 3.8), Vec2(4, 4), "n"),
           Rect(Vec2(2, 2.2), Vec2(2.2, 3.8), "w"), Rect(Vec2(3.8, 2.2), Vec2(4, 3.8), "e")]
    assert not reachable(world(box), Vec2(1, 1), Vec2(3, 3), 0.35)
    # inside to inside is fine
    assert reachable(world(box), Vec2(2.8, 2.8), Vec2(3.2, 3.2), 0.35)


def test_goal_in_obstacle_or_too_close_to_wall():
    w = world([Disc(Vec2(4, 4), 0.5, "d")])
    assert not reachable(w, Vec2(1, 1), Vec2(4, 4), 0.35)
    assert not reachable(w, Vec2(1, 1), Vec2(5.9, 1), 0.35)


def test_free_mask_respects_clearance():
    free, xs, ys = free_mask(world([Disc(Vec2(3, 3), 1.0, "d")]), 0.5, 0.1)
    assert free.shape == (len(xs), len(ys)) == (60, 60)
    i, j = int((3.05 - 0.05) / 0.1), int((3.05 - 0.05) / 0.1)
    assert not free[i, j]
    assert not free[0, 0]  # 5 cm from two walls
    assert free[10, 10]
