"""Go-to-goal control with reactive, right-first obstacle avoidance.

The controller is written as blocking procedures (``rotate``, ``forward``,
``stop``, ``avoid``, ``send_to``) that advance time one control tick at a
time through a :class:`RobotInterface`. The same code drives the in-process
simulator (virtual time) and the UDP-backed robot (lock-step or wall clock).
"""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from .geometry import Pose2D, Vec2, distance, wrap_angle, world_bearing
from .perception import DetectionReport, ObjectKind, Zone
from .protocol import Telemetry
from .world import STOP, Rect, VelocityCommand


class TelemetryLost(RuntimeError):
    pass


class Cancelled(RuntimeError):
    """Raised inside a running procedure when the owner aborts it."""


class Mode(str, enum.Enum):
    IDLE = "Idle"
    ROTATING = "Rotating"
    MOVING_FORWARD = "MovingForward"
    AVOIDING = "Avoiding"
    ARRIVED = "Arrived"
    FAILED = "Failed"


class MoveResult(str, enum.Enum):
    COMPLETED = "Completed"
    OBSTACLE_DETECTED = "ObstacleDetected"
    UNREACHABLE = "Unreachable"
    DEGENERATE_TARGET = "DegenerateTarget"
    ARRIVED = "Arrived"


@dataclass(frozen=True)
class ControlConfig:
    default_speed: float = 0.3
    forward_interval: float = 2.0
    avoid_angle: float = math.radians(30.0)
    rotation_speed: float = 0.8
    arrival_tolerance: float = 0.1
    heading_tolerance: float = 0.02
    max_avoid_iterations: int = 64
    max_send_to_recursions: int = 16
    front_stop_distance: float = 0.5
    # lateral ultrasonic guard against grazing contacts the front checks miss
    side_stop_distance: float = 0.4
    dt: float = 0.05
    telemetry_timeout: float = 0.5
    # wait after a rotation for a camera frame taken at the new heading
    report_settle: float = 0.25
    # "right": keep turning clockwise; "alternate": -a, +a, -2a, +2a, ...
    avoid_sweep: str = "alternate"
    # the avoid leg grows by one interval every this many send_to recursions
    avoid_stretch_every: int = 2

    def __post_init__(self) -> None:
        for name in ("default_speed", "forward_interval", "avoid_angle", "rotation_speed",
                     "arrival_tolerance", "heading_tolerance", "max_avoid_iterations",
                     "max_send_to_recursions", "front_stop_distance", "side_stop_distance",
                     "dt", "telemetry_timeout", "avoid_stretch_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.avoid_angle < math.pi:
            raise ValueError("avoid_angle must be below pi")
        if self.report_settle < 0:
            raise ValueError("report_settle must be non-negative")
        if self.avoid_sweep not in ("right", "alternate"):
            raise ValueError("avoid_sweep must be 'right' or 'alternate'")

    @property
    def forward_budget(self) -> int:
        """Upper bound on forward intervals spent by one ``send_to``."""
        return self.max_send_to_recursions * (self.max_avoid_iterations + 1)


@dataclass
class ControllerState:
    mode: Mode = Mode.IDLE
    target: Optional[Vec2] = None
    recursion_depth: int = 0
    avoid_depth: int = 0
    forward_calls: int = 0
    reason: str = ""

    def describe(self) -> str:
        mode = f"Failed{{{self.reason}}}" if self.mode is Mode.FAILED else self.mode.value
        tgt = "-" if self.target is None else f"({self.target.x:.3f}, {self.target.y:.3f})"
        return (f"mode={mode} target={tgt} recursion_depth={self.recursion_depth} "
                f"avoid_depth={self.avoid_depth}")


class RobotInterface(Protocol):
    def send_command(self, cmd: VelocityCommand) -> None: ...

    def latest_telemetry(self) -> Optional[Telemetry]: ...

    def latest_report(self) -> Optional[DetectionReport]: ...

    def tick(self) -> None:
        """Let one control period elapse with the last command applied."""

    def now_ms(self) -> int: ...


EventSink = Callable[[str, str], None]


class Controller:
    """State machine driving one MRP toward targets."""

    def __init__(self, io: RobotInterface, cfg: ControlConfig = ControlConfig(),
                 bounds: Optional[Rect] = None, on_event: Optional[EventSink] = None):
        self.io = io
        self.cfg = cfg
        self.bounds = bounds
        self.state = ControllerState()
        self.on_event = on_event
        self.report: Optional[DetectionReport] = None
        self.last_report_seq = -1
        self.stale_reports = 0
        self.front_blocked = False
        self.side_blocked = False
        self.cancel = threading.Event()
        self.on_tick: Optional[Callable[[], None]] = None

    # ------------------------------------------------------------ plumbing

    def _emit(self, kind: str, detail: str = "") -> None:
        if self.on_event is not None:
            self.on_event(kind, detail)

    def _set_mode(self, mode: Mode) -> None:
        self.state.mode = mode

    def telemetry(self) -> Telemetry:
        tel = self.io.latest_telemetry()
        if tel is None:
            raise TelemetryLost("no telemetry received")
        age = self.io.now_ms() - tel.timestamp_ms
        if age > self.cfg.telemetry_timeout * 1000.0:
            raise TelemetryLost(f"telemetry is {age} ms old")
        return tel

    def pose(self) -> Pose2D:
        return self.telemetry().pose

    def _send(self, cmd: VelocityCommand) -> None:
        self.io.send_command(cmd)

    def _tick(self) -> None:
        if self.cancel.is_set():
            raise Cancelled()
        self.io.tick()
        rep = self.io.latest_report()
        if rep is not None:
            self.on_detection_report(rep)
        self._refresh()
        if self.on_tick is not None:
            self.on_tick()

    def on_detection_report(self, report: DetectionReport) -> bool:
        """Cache a report; returns False when it was dropped as stale."""
        if report.seq < self.last_report_seq:
            self.stale_reports += 1
            return False
        if report.seq == self.last_report_seq and report == self.report:
            return True
        self.report = report
        self.last_report_seq = report.seq
        self._refresh()
        return True

    def _refresh(self) -> None:
        """Cross-reference vision with ultrasonic ranges (OR fusion)."""
        vision = self.report is not None and any(
            d.kind is ObjectKind.OBSTACLE and d.zone is Zone.FRONT and d.close
            for d in self.report.detections)
        tel = self.io.latest_telemetry()
        if tel is None:
            self.front_blocked = vision
            self.side_blocked = False
            return
        us = tel.ultrasonic
        self.front_blocked = vision or us.front < self.cfg.front_stop_distance
        self.side_blocked = min(us.left, us.right) < self.cfg.side_stop_distance

    @property
    def path_blocked(self) -> bool:
        return self.front_blocked or self.side_blocked

    def _settle(self, since_ms: int) -> None:
        for _ in range(int(math.ceil(self.cfg.report_settle / self.cfg.dt - 1e-9))):
            if self.report is not None and self.report.timestamp_ms >= since_ms:
                return
            self._tick()

    # ------------------------------------------------------------ primitives

    def stop(self) -> None:
        self._send(STOP)

    def rotate(self, target_heading: float) -> MoveResult:
        """Turn in place toward ``target_heading`` along the shorter arc."""
        self._set_mode(Mode.ROTATING)
        target_heading = wrap_angle(target_heading)
        step = self.cfg.rotation_speed * self.cfg.dt
        limit = int(math.ceil(2 * math.pi / step)) + 10
        turned = False
        for _ in range(limit):
            err = wrap_angle(target_heading - self.pose().heading)
            if abs(err) <= self.cfg.heading_tolerance:
                break
            # antipodal tie (err == pi) turns counter-clockwise
            self._send(VelocityCommand(0.0, math.copysign(self.cfg.rotation_speed, err)))
            turned = True
            self._tick()
        if turned:
            self.stop()
        return MoveResult.COMPLETED

    def forward(self, speed: float, duration: float) -> MoveResult:
        """Drive straight for ``duration`` seconds unless the path is blocked."""
        if duration < 0:
            raise ValueError("duration must be non-negative")
        self._set_mode(Mode.MOVING_FORWARD)
        self.state.forward_calls += 1
        ticks = int(math.ceil(duration / self.cfg.dt - 1e-9))
        self._refresh()
        for _ in range(ticks):
            if self.path_blocked:
                self.stop()
                return MoveResult.OBSTACLE_DETECTED
            self._send(VelocityCommand(speed, 0.0))
            self._tick()
        self.stop()
        return MoveResult.COMPLETED

    def _turn_and_settle(self, heading: float) -> None:
        start_ms = self.io.now_ms()
        self.rotate(heading)
        if self.io.now_ms() != start_ms:
            self._settle(self.io.now_ms())

    def _sweep_offsets(self):
        """Headings to try, relative to the heading at the start of a sweep.

        ``right`` keeps turning clockwise; ``alternate`` tries -a, +a, -2a,
        +2a and so on, so the first rotation is still clockwise.
        """
        a = self.cfg.avoid_angle
        k = 1
        while True:
            yield -k * a
            if self.cfg.avoid_sweep == "alternate" and k * a < math.pi - 1e-9:
                yield k * a
            k += 1

    def avoid(self) -> MoveResult:
        """Rotate in fixed steps, right first, until the front clears, then advance.

        A forward move that is cut short by another obstacle starts a new
        sweep from the current heading; every rotation counts toward
        ``max_avoid_iterations``.
        """
        self._emit("AvoidStart", f"depth={self.state.recursion_depth}")
        self.state.avoid_depth = 0
        while True:
            base = self.pose().heading
            for offset in self._sweep_offsets():
                if self.state.avoid_depth >= self.cfg.max_avoid_iterations:
                    self.stop()
                    return MoveResult.UNREACHABLE
                self.state.avoid_depth += 1
                self._set_mode(Mode.AVOIDING)
                self._turn_and_settle(base + offset)
                self._set_mode(Mode.AVOIDING)
                self._refresh()
                if not self.path_blocked:
                    break
            # longer detours once repeated avoids fail to get past an obstacle
            stretch = 1 + self.state.recursion_depth // self.cfg.avoid_stretch_every
            result = self.forward(self.cfg.default_speed, self.cfg.forward_interval * stretch)
            self._set_mode(Mode.AVOIDING)
            if result is MoveResult.COMPLETED:
                self._emit("AvoidEnd", f"iterations={self.state.avoid_depth}")
                return MoveResult.COMPLETED
            self._emit("ObstacleDetected", "during avoid")

    def _fail(self, reason: str) -> MoveResult:
        self.stop()
        self.state.mode = Mode.FAILED
        self.state.reason = reason
        self._emit("Failed", reason)
        return MoveResult.UNREACHABLE

    def send_to(self, target: Vec2) -> MoveResult:
        """Drive to ``target``; returns ARRIVED or UNREACHABLE."""
        cfg = self.cfg
        st = self.state
        st.target = target
        st.recursion_depth = 0
        st.avoid_depth = 0
        st.forward_calls = 0
        st.reason = ""
        if self.bounds is not None and not (
                self.bounds.min.x <= target.x <= self.bounds.max.x
                and self.bounds.min.y <= target.y <= self.bounds.max.y):
            return self._fail("target outside arena")
        while True:
            pose = self.pose()
            remaining = distance(pose.position, target)
            if remaining <= cfg.arrival_tolerance:
                st.mode = Mode.ARRIVED
                self._emit("Arrived", f"error={remaining:.4f}")
                return MoveResult.ARRIVED
            if st.forward_calls >= cfg.forward_budget:
                return self._fail("forward budget exhausted")
            self._turn_and_settle(world_bearing(pose.position, target))
            remaining = distance(self.pose().position, target)
            duration = min(cfg.forward_interval, remaining / cfg.default_speed)
            result = self.forward(cfg.default_speed, duration)
            if result is MoveResult.OBSTACLE_DETECTED:
                self._emit("ObstacleDetected", f"front_blocked={self.front_blocked} side_blocked={self.side_blocked}")
                if self.avoid() is MoveResult.UNREACHABLE:
                    return self._fail("avoid iterations exhausted")
            elif duration == cfg.forward_interval or \
                    distance(self.pose().position, target) <= cfg.arrival_tolerance:
                continue
            # re-planning after an avoid or an off-target final leg
            if st.recursion_depth >= cfg.max_send_to_recursions:
                return self._fail("send_to recursion limit")
            st.recursion_depth += 1
