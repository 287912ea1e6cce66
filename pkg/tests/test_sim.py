import math

import pytest

from losnav.controller import MoveResult
from losnav.geometry import Vec2, distance
from losnav.plotting import render_plot
from losnav.sim import (
    BUNDLED,
    ROW_FIELDS,
    ScenarioError,
    ScenarioInvalid,
    SimConfig,
    TrajectoryLog,
    load_scenario,
    parse_scenario,
    resolve_scenario_path,
    run,
)
from losnav.world import Disc, Rect


def test_bundled_fig11c():
    scn = load_scenario("fig11c.scn")
    assert scn.targets == [Vec2(5, 5), Vec2(0, 0)]
    assert len(scn.world.obstacles) == 1 and isinstance(scn.world.obstacles[0], Rect)
    assert resolve_scenario_path("fig11c.scn") == BUNDLED / "fig11c.scn"


def test_empty_world_loads():
    scn = load_scenario(BUNDLED / "empty_5_5.scn")
    assert scn.world.obstacles == []


def test_target_outside_bounds():
    with pytest.raises(ScenarioInvalid):
        parse_scenario("bounds 0 0 5 5\nmrp 1 1 0 0.25\ntarget 6 1\n")


@pytest.mark.parametrize("text, line", [
    ("bounds 0 0 5 5\nblob 1 2\n", 2),
    ("bounds 0 0 5 5\ndisc 1 2\n", 2),
    ("# c\nbounds 0 0 5 x\n", 2),
    ("bounds 0 0 5 5\nset control.nope 1\n", 0),
    ("bounds 0 0 5 5\nset robot.speed 1\n", 2),
    ("bounds 0 0 5 5\ndisc 1 1 -1\n", 2),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text, "t.scn")
    assert err.value.line == line
    assert "t.scn" in str(err.value)


def test_missing_bounds_and_invalid_start():
    with pytest.raises(ScenarioError):
        parse_scenario("mrp 0 0 0 0.25\n")
    with pytest.raises(ScenarioInvalid):
        parse_scenario("bounds -5 -5 5 5\nmrp 0 0 0 0.25\ndisc 0.3 0 0.2\n")
    with pytest.raises(ScenarioInvalid):
        parse_scenario("bounds -5 -5 5 5\nset control.default_speed 5\n")
    with pytest.raises(ScenarioInvalid):
        parse_scenario("bounds -5 -5 5 5\nset control.arrival_tolerance 3\n")


def test_parse_full_format():
    scn = parse_scenario(
        "label demo  # trailing comment\n"
        "bounds -2 -2 8 8\n"
        "mrp 1 1 90deg 0.3\n"
        "disc 3 3 0.5\n"
        "rect 5 0 6 1\n"
        "device alice 7 7\n"
        "target 6 6\n"
        "set control.avoid_angle 45deg\n"
        "set sim.vision off\n"
        "set sim.dt 0.1\n"
        "seed 9\n")
    assert scn.label == "demo"
    assert scn.world.mrp.heading == pytest.approx(math.pi / 2)
    assert scn.world.mrp_radius == 0.3
    assert [o.id for o in scn.world.obstacles] == ["obs01", "obs02"]
    assert isinstance(scn.world.obstacles[0], Disc)
    assert scn.world.devices[0].id == "alice"
    assert scn.control.avoid_angle == pytest.approx(math.pi / 4)
    assert scn.sim.vision is False
    assert scn.sim.dt == scn.control.dt == 0.1
    assert scn.seed == 9


def test_sim_config_vision_ticks():
    assert SimConfig().vision_ticks == 4
    assert SimConfig(dt=0.1).vision_ticks == 2


def test_run_empty_world():
    log = run(load_scenario("empty_5_5.scn"))
    assert log.outcomes == [(Vec2(5, 5), MoveResult.ARRIVED)]
    assert distance(log.rows[-1].pose.position, Vec2(5, 5)) <= 0.1
    assert log.path_length() <= 1.02 * math.sqrt(50)
    ts = [r.t for r in log.rows]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert ts[1] == pytest.approx(0.05)


def test_run_fig11c():
    log = run(load_scenario("fig11c.scn"))
    assert log.all_arrived
    assert "Failed" not in log.event_kinds()
    assert log.min_clearance() > 0


def test_run_deterministic():
    scn = load_scenario("fig11c.scn")
    a, b = run(scn), run(scn)
    assert a.trajectory_csv() == b.trajectory_csv()
    assert a.events_csv() == b.events_csv()


def test_noise_and_loss_follow_seed():
    text = ("bounds -1.5 -1.5 6.5 6.5\nmrp 0 0 0 0.25\nrect 2 2 3 3\ntarget 5 5\n"
            "set sensor.noise 0.02\nset sim.report_loss 0.5\n")
    a = run(parse_scenario(text + "seed 1\n"))
    b = run(parse_scenario(text + "seed 1\n"))
    c = run(parse_scenario(text + "seed 2\n"))
    assert a.trajectory_csv() == b.trajectory_csv()
    assert a.trajectory_csv() != c.trajectory_csv()


def test_collision_is_logged_not_hidden():
    # blind sensors and a coarse step drive the body into the disc
    scn = parse_scenario("bounds -1 -1 3 1\nmrp 0 0 0 0.25\ndisc 1.2 0 0.3\ntarget 2.5 0\n"
                         "set sim.dt 1.0\nset sim.vision off\nset control.default_speed 1.0\n"
                         "set control.front_stop_distance 0.01\nset control.side_stop_distance 0.01\n")
    log = run(scn)
    failed = [e for e in log.events if e.kind == "Failed"]
    assert failed and "collision" in failed[0].detail
    assert not log.all_arrived


def test_csv_layout_and_read_back(tmp_path):
    log = run(load_scenario("serve_device.scn"))
    traj, events = log.write(tmp_path)
    header = traj.read_text().splitlines()[0]
    assert header.split(",") == ROW_FIELDS
    assert events.read_text().splitlines()[0] == "t,kind,detail"
    back = TrajectoryLog.read(traj, events)
    assert len(back.rows) == len(log.rows)
    assert back.event_kinds() == log.event_kinds()
    assert back.mode_transitions() == log.mode_transitions()
    assert back.rows[-1].los_to_active_device


def test_render_plot_deterministic(tmp_path):
    scn = load_scenario("fig11c.scn")
    log = run(scn)
    a = render_plot(log, scn)
    b = render_plot(log, scn, tmp_path / "p.svg")
    assert a == b == (tmp_path / "p.svg").read_bytes()
    assert a.startswith(b"<?xml") and b"<svg" in a


def test_render_plot_single_row():
    scn = load_scenario("empty_5_5.scn")
    log = TrajectoryLog(rows=run(scn).rows[:1])
    svg = render_plot(log, scn)
    assert b"<svg" in svg
    with pytest.raises(ValueError):
        render_plot(TrajectoryLog(), scn)
