"""Deterministic virtual-time simulation binding world, perception and control.

Scenario files are line oriented::

    # back-and-forth around a square obstacle
    label fig11c
    bounds -1.5 -1.5 6.5 6.5
    mrp 0 0 0 0.25
    rect 2 2 3 3
    device alice 6 6
    target 5 5
    target 0 0
    set control.avoid_angle 30deg
    seed 7
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .controller import Cancelled, ControlConfig, Controller, MoveResult, TelemetryLost
from .geometry import Pose2D, Vec2, distance
from .perception import CameraConfig, Detection, DetectionReport, Perception, ProximityConfig, ZoneConfig
from .protocol import Telemetry, quantize
from .world import (
    STOP,
    Device,
    Disc,
    MotionLimits,
    Rect,
    SensorConfig,
    VelocityCommand,
    WorldModel,
    check_collision,
    clearance,
    line_of_sight,
    step_kinematics,
    ultrasonic_read,
)


class ScenarioError(ValueError):
    """Unparseable scenario line."""

    def __init__(self, message: str, line: int = 0, source: str = "<scenario>"):
        super().__init__(f"{source}:{line}: {message}" if line else f"{source}: {message}")
        self.line = line


class ScenarioInvalid(ValueError):
    """Scenario parsed but breaks an invariant."""


class CollisionError(RuntimeError):
    pass


class SimTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    vision_period: float = 0.2
    vision: bool = True
    report_loss: float = 0.0
    max_time: float = 7200.0

    @property
    def vision_ticks(self) -> int:
        return max(1, round(self.vision_period / self.dt))


@dataclass
class Scenario:
    world: WorldModel
    targets: list[Vec2] = field(default_factory=list)
    control: ControlConfig = ControlConfig()
    zones: ZoneConfig = ZoneConfig()
    proximity: ProximityConfig = ProximityConfig()
    camera: CameraConfig = CameraConfig()
    sensor: SensorConfig = SensorConfig()
    limits: MotionLimits = MotionLimits()
    sim: SimConfig = SimConfig()
    seed: int = 0
    label: str = ""

    def validate(self) -> None:
        try:
            self.world.validate()
        except ValueError as exc:
            raise ScenarioInvalid(str(exc)) from None
        b = self.world.bounds
        for t in self.targets:
            if not (b.min.x <= t.x <= b.max.x and b.min.y <= t.y <= b.max.y):
                raise ScenarioInvalid(f"target ({t.x}, {t.y}) outside arena bounds")
        if not self.control.arrival_tolerance < self.proximity.device_serve_distance:
            raise ScenarioInvalid("arrival_tolerance must be below device_serve_distance")
        if self.control.default_speed > self.limits.v_max or self.control.rotation_speed > self.limits.omega_max:
            raise ScenarioInvalid("controller speeds exceed motion limits")
        if not 0.0 <= self.sim.report_loss <= 1.0:
            raise ScenarioInvalid("sim.report_loss must lie in [0, 1]")

    def with_overrides(self, seed: Optional[int] = None, dt: Optional[float] = None) -> Scenario:
        scn = dataclasses.replace(self, world=dataclasses.replace(self.world))
        if seed is not None:
            scn.seed = seed
        if dt is not None:
            scn.sim = dataclasses.replace(scn.sim, dt=dt)
            scn.control = dataclasses.replace(scn.control, dt=dt)
        return scn


_SECTIONS = {
    "control": "control", "zones": "zones", "proximity": "proximity",
    "camera": "camera", "sensor": "sensor", "limits": "limits", "sim": "sim",
}


def _number(text: str) -> float:
    if text.endswith("deg"):
        return math.radians(float(text[:-3]))
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text}")
    return value


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    bounds: Optional[Rect] = None
    mrp = Pose2D.at(0.0, 0.0, 0.0)
    radius = 0.25
    obstacles: list = []
    devices: list[Device] = []
    targets: list[Vec2] = []
    overrides: dict[str, dict[str, object]] = {k: {} for k in _SECTIONS}
    seed = 0
    label = Path(source).stem if source != "<scenario>" else ""

    expected = {"bounds": 4, "mrp": 4, "disc": 3, "rect": 4, "device": 3, "target": 2, "set": 2, "seed": 1}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *args = line.split()
        if word == "label":
            label = " ".join(args)
            continue
        if word not in expected:
            raise ScenarioError(f"unknown directive {word!r}", lineno, source)
        if len(args) != expected[word]:
            raise ScenarioError(f"{word} takes {expected[word]} fields, got {len(args)}", lineno, source)
        try:
            if word == "set":
                key, value = args
                section, _, name = key.partition(".")
                if section not in _SECTIONS or not name:
                    raise ScenarioError(f"unknown config key {key!r}", lineno, source)
                overrides[section][name] = value
            elif word == "seed":
                seed = int(args[0])
            elif word == "device":
                devices.append(Device(args[0], Vec2(_number(args[1]), _number(args[2]))))
            else:
                nums = [_number(a) for a in args]
                if word == "bounds":
                    bounds = Rect(Vec2(nums[0], nums[1]), Vec2(nums[2], nums[3]), "bounds")
                elif word == "mrp":
                    mrp = Pose2D.at(nums[0], nums[1], nums[2])
                    radius = nums[3]
                elif word == "disc":
                    obstacles.append(Disc(Vec2(nums[0], nums[1]), nums[2], f"obs{len(obstacles) + 1:02d}"))
                elif word == "rect":
                    obstacles.append(Rect(Vec2(nums[0], nums[1]), Vec2(nums[2], nums[3]), f"obs{len(obstacles) + 1:02d}"))
                elif word == "target":
                    targets.append(Vec2(nums[0], nums[1]))
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError(f"{word}: {exc}", lineno, source) from None
    if bounds is None:
        raise ScenarioError("missing 'bounds' line", 0, source)

    scn = Scenario(WorldModel(bounds, mrp, radius, obstacles, devices), targets, seed=seed, label=label)
    for section, values in overrides.items():
        if not values:
            continue
        current = getattr(scn, section)
        known = {f.name: f for f in dataclasses.fields(current)}
        kwargs: dict[str, object] = {}
        for name, value in values.items():
            if name not in known:
                raise ScenarioError(f"unknown config key {section}.{name!r}", 0, source)
            default = getattr(current, name)
            try:
                if isinstance(default, str):
                    kwargs[name] = str(value)
                elif isinstance(default, bool):
                    kwargs[name] = str(value).lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    kwargs[name] = int(str(value))
                else:
                    kwargs[name] = _number(str(value))
            except ValueError as exc:
                raise ScenarioError(f"{section}.{name}: {exc}", 0, source) from None
        try:
            setattr(scn, section, dataclasses.replace(current, **kwargs))
        except ValueError as exc:
            raise ScenarioInvalid(f"{section}: {exc}") from None
    if scn.sim.dt != scn.control.dt:
        # one clock: the simulation step is the control tick
        scn.control = dataclasses.replace(scn.control, dt=scn.sim.dt)
    scn.validate()
    return scn


BUNDLED = Path(__file__).parent / "scenarios"


def resolve_scenario_path(path: Union[str, Path]) -> Path:
    """``path`` itself, or the bundled scenario with the same file name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = BUNDLED / p.name
    if bundled.exists():
        return bundled
    raise FileNotFoundError(str(path))


def load_scenario(path: Union[str, Path]) -> Scenario:
    p = resolve_scenario_path(path)
    return parse_scenario(p.read_text(encoding="utf-8"), str(p))


# ---------------------------------------------------------------- logging

ROW_FIELDS = ["t", "x", "y", "theta", "v", "omega", "us_left", "us_front", "us_right",
              "mode", "front_blocked", "los_to_active_device", "clearance"]
EVENT_FIELDS = ["t", "kind", "detail"]
EVENT_KINDS = ("ObstacleDetected", "AvoidStart", "AvoidEnd", "Arrived", "Failed")


@dataclass(frozen=True)
class LogRow:
    t: float
    pose: Pose2D
    velocity: VelocityCommand
    ultrasonic: tuple[float, float, float]
    mode: str
    front_blocked: bool
    los_to_active_device: bool
    clearance: float


@dataclass(frozen=True)
class LogEvent:
    t: float
    kind: str
    detail: str = ""


def _fmt(x: float) -> str:
    return format(x, ".9g")


@dataclass
class TrajectoryLog:
    rows: list[LogRow] = field(default_factory=list)
    events: list[LogEvent] = field(default_factory=list)
    outcomes: list[tuple[Vec2, MoveResult]] = field(default_factory=list)

    @property
    def all_arrived(self) -> bool:
        return bool(self.outcomes) and all(r is MoveResult.ARRIVED for _, r in self.outcomes) \
            and not any(e.kind == "Failed" for e in self.events)

    def event_kinds(self) -> list[str]:
        return [e.kind for e in self.events]

    def mode_transitions(self) -> list[str]:
        modes: list[str] = []
        for r in self.rows:
            if not modes or modes[-1] != r.mode:
                modes.append(r.mode)
        return modes

    def path_length(self) -> float:
        return sum(distance(a.pose.position, b.pose.position) for a, b in zip(self.rows, self.rows[1:]))

    def min_clearance(self) -> float:
        return min((r.clearance for r in self.rows), default=math.inf)

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in self.rows:
            w.writerow([_fmt(r.t), _fmt(r.pose.x), _fmt(r.pose.y), _fmt(r.pose.heading),
                        _fmt(r.velocity.linear), _fmt(r.velocity.angular),
                        *(_fmt(u) for u in r.ultrasonic), r.mode,
                        int(r.front_blocked), int(r.los_to_active_device), _fmt(r.clearance)])
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVENT_FIELDS)
        for e in self.events:
            w.writerow([_fmt(e.t), e.kind, e.detail])
        return buf.getvalue()

    def write(self, out_dir: Union[str, Path]) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        traj, ev = out / "trajectory.csv", out / "events.csv"
        traj.write_text(self.trajectory_csv(), encoding="utf-8")
        ev.write_text(self.events_csv(), encoding="utf-8")
        return traj, ev

    @classmethod
    def read(cls, trajectory: Union[str, Path], events: Optional[Union[str, Path]] = None) -> TrajectoryLog:
        log = cls()
        with open(trajectory, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                log.rows.append(LogRow(
                    float(rec["t"]), Pose2D.at(float(rec["x"]), float(rec["y"]), float(rec["theta"])),
                    VelocityCommand(float(rec["v"]), float(rec["omega"])),
                    (float(rec["us_left"]), float(rec["us_front"]), float(rec["us_right"])),
                    rec["mode"], rec["front_blocked"] == "1", rec["los_to_active_device"] == "1",
                    float(rec["clearance"])))
        if events is not None:
            with open(events, newline="", encoding="utf-8") as fh:
                for rec in csv.DictReader(fh):
                    log.events.append(LogEvent(float(rec["t"]), rec["kind"], rec["detail"]))
        return log


# ---------------------------------------------------------------- runner

def quantized_telemetry(tel: Telemetry) -> Telemetry:
    """Telemetry exactly as it reads after a trip through the codec."""
    q = quantize
    return Telemetry(
        tel.seq, tel.timestamp_ms,
        Pose2D.at(q(tel.pose.x), q(tel.pose.y), q(tel.pose.heading)),
        VelocityCommand(q(tel.velocity.linear), q(tel.velocity.angular)),
        tuple(q(a) for a in tel.imu),
        type(tel.ultrasonic)(q(tel.ultrasonic.left), q(tel.ultrasonic.front), q(tel.ultrasonic.right)),
    )


def quantized_report(rep: DetectionReport) -> DetectionReport:
    return DetectionReport(rep.seq, rep.timestamp_ms, tuple(
        dataclasses.replace(d, est_distance=None if d.est_distance is None else quantize(d.est_distance))
        for d in rep.detections))


def quantized_command(cmd: VelocityCommand) -> VelocityCommand:
    return VelocityCommand(quantize(cmd.linear), quantize(cmd.angular))


def make_telemetry(world: WorldModel, scn: Scenario, seq: int, cmd: VelocityCommand,
                   rng: Optional[random.Random] = None) -> Telemetry:
    us = ultrasonic_read(world, scn.sensor, rng)
    pose = world.mrp
    tel = Telemetry(seq, round(seq * scn.sim.dt * 1000), pose, cmd, (pose.heading, 0.0, 0.0), us)
    return quantized_telemetry(tel)


def active_device(world: WorldModel, target: Optional[Vec2]) -> Optional[Device]:
    if not world.devices:
        return None
    ref = world.mrp.position if target is None else target
    return min(world.devices, key=lambda d: (distance(ref, d.position), d.id))


class SimRobot:
    """In-process robot, camera and clock for one scenario.

    Every tick applies the held command for ``dt`` seconds, refreshes
    telemetry and, on vision ticks, produces a detection report. Telemetry,
    reports and commands are quantized exactly as the wire format would
    quantize them, so the split-process run sees identical numbers.
    """

    def __init__(self, scn: Scenario, world: Optional[WorldModel] = None):
        self.scn = scn
        self.world = world if world is not None else dataclasses.replace(scn.world)
        self.k = 0
        self.cmd = STOP
        self.commands: list[VelocityCommand] = []
        self.noise_rng = random.Random(f"{scn.seed}:sensor")
        self.loss_rng = random.Random(f"{scn.seed}:loss")
        self.perception = Perception(scn.camera, scn.zones, scn.proximity)
        self.manual_report: Optional[DetectionReport] = None
        self.report: Optional[DetectionReport] = None
        self.reports_sent = 0
        self.reports_dropped = 0
        self.telemetry = make_telemetry(self.world, scn, 0, STOP, self.noise_rng)
        self._maybe_report()

    @property
    def t(self) -> float:
        return self.k * self.scn.sim.dt

    def now_ms(self) -> int:
        return round(self.k * self.scn.sim.dt * 1000)

    def send_command(self, cmd: VelocityCommand) -> None:
        self.cmd = quantized_command(cmd)
        self.commands.append(self.cmd)

    def latest_telemetry(self) -> Telemetry:
        return self.telemetry

    def latest_report(self) -> Optional[DetectionReport]:
        if self.manual_report is not None and (self.report is None or self.manual_report.seq >= self.report.seq):
            return self.manual_report
        return self.report

    def inject_report(self, report: DetectionReport) -> None:
        self.manual_report = report

    def _maybe_report(self) -> None:
        if not self.scn.sim.vision or self.k % self.scn.sim.vision_ticks:
            return
        rep = self.perception.report(self.world, self.now_ms(), pose=self.telemetry.pose)
        self.reports_sent += 1
        if self.scn.sim.report_loss > 0 and self.loss_rng.random() < self.scn.sim.report_loss:
            self.reports_dropped += 1
            return
        self.report = quantized_report(rep)

    def tick(self) -> None:
        if self.t >= self.scn.sim.max_time:
            raise SimTimeout(f"simulated time exceeded {self.scn.sim.max_time} s")
        self.world.mrp = step_kinematics(self.world.mrp, self.cmd, self.scn.sim.dt, self.scn.limits)
        self.k += 1
        if check_collision(self.world):
            raise CollisionError(f"collision at ({self.world.mrp.x:.3f}, {self.world.mrp.y:.3f})")
        self.telemetry = make_telemetry(self.world, self.scn, self.k, self.cmd, self.noise_rng)
        self._maybe_report()


class Recorder:
    """Collects rows and events for a controller bound to a SimRobot."""

    def __init__(self, robot: SimRobot):
        self.robot = robot
        self.log = TrajectoryLog()
        self.controller: Optional[Controller] = None

    def event(self, kind: str, detail: str = "") -> None:
        self.log.events.append(LogEvent(self.robot.t, kind, detail))

    def row(self) -> None:
        ctl = self.controller
        world = self.robot.world
        tel = self.robot.telemetry
        dev = active_device(world, ctl.state.target if ctl else None)
        los = dev is not None and line_of_sight(world.mrp.position, dev.position, world)
        us = tel.ultrasonic
        self.log.rows.append(LogRow(
            self.robot.t, world.mrp, self.robot.cmd, (us.left, us.front, us.right),
            ctl.state.mode.value if ctl else "Idle", bool(ctl and ctl.front_blocked), los,
            clearance(world)))


def build(scn: Scenario) -> tuple[SimRobot, Controller, Recorder]:
    robot = SimRobot(scn)
    rec = Recorder(robot)
    ctl = Controller(robot, scn.control, bounds=scn.world.bounds, on_event=rec.event)
    rec.controller = ctl
    ctl.on_tick = rec.row
    first = robot.latest_report()
    if first is not None:
        ctl.on_detection_report(first)
    return robot, ctl, rec


def run(scn: Scenario) -> TrajectoryLog:
    """Execute ``send_to`` for every target in order; bit-reproducible."""
    robot, ctl, rec = build(scn)
    rec.row()
    for target in scn.targets:
        try:
            result = ctl.send_to(target)
        except CollisionError as exc:
            rec.event("Failed", f"collision: {exc}")
            rec.log.outcomes.append((target, MoveResult.UNREACHABLE))
            break
        except (TelemetryLost, SimTimeout, Cancelled) as exc:
            rec.event("Failed", f"{type(exc).__name__}: {exc}")
            rec.log.outcomes.append((target, MoveResult.UNREACHABLE))
            break
        rec.log.outcomes.append((target, result))
    return rec.log
