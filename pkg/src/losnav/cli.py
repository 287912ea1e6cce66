"""Command line entry point: run scenarios, replay logs, REPL and UDP roles.

Exit codes: 0 all targets arrived, 1 unreachable or failed, 2 input error,
3 environment error (ports, filesystem).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import signal
import sys
import threading
import time
from pathlib import Path
from typing import Optional, Sequence, TextIO

from . import protocol
from .controller import Cancelled, Controller, MoveResult, TelemetryLost
from .geometry import Vec2, distance
from .perception import Detection, DetectionReport, ObjectKind, Perception, Zone, proximity_gate
from .protocol import (
    DecodeError,
    Endpoint,
    EndpointError,
    TargetRequest,
    Telemetry,
    WireMessage,
    decode,
    encode,
)
from .sim import (
    LogEvent,
    LogRow,
    Scenario,
    ScenarioError,
    ScenarioInvalid,
    SimRobot,
    TrajectoryLog,
    active_device,
    build,
    load_scenario,
    quantized_command,
    quantized_report,
    run,
)
from .world import STOP, VelocityCommand, clearance, line_of_sight

log = logging.getLogger("losnav")

EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_ENV = 0, 1, 2, 3


class InputError(Exception):
    pass


def _load(path: str, seed: Optional[int] = None, dt: Optional[float] = None) -> Scenario:
    try:
        scn = load_scenario(path)
        if seed is not None or dt is not None:
            if dt is not None and not dt > 0:
                raise InputError("--dt must be positive")
            scn = scn.with_overrides(seed=seed, dt=dt)
            scn.validate()
        return scn
    except FileNotFoundError:
        raise InputError(f"scenario not found: {path}") from None
    except (ScenarioError, ScenarioInvalid) as exc:
        raise InputError(str(exc)) from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def summary(log_: TrajectoryLog, scn: Scenario) -> str:
    lines = []
    last = log_.rows[-1] if log_.rows else None
    for target, result in log_.outcomes:
        lines.append(f"target ({target.x:g}, {target.y:g}): {result.value}")
    if last is not None and scn.targets:
        goal = log_.outcomes[-1][0] if log_.outcomes else scn.targets[-1]
        lines.append(f"final error: {distance(last.pose.position, goal):.4f} m")
    lines.append(f"path length: {log_.path_length():.4f} m")
    lines.append(f"min clearance: {log_.min_clearance():.4f} m")
    if scn.world.devices and last is not None:
        lines.append(f"line of sight to active device: {'yes' if last.los_to_active_device else 'no'}")
    for e in log_.events:
        if e.kind == "Failed":
            lines.append(f"failed at t={e.t:.2f}: {e.detail}")
    return "\n".join(lines)


def _write_outputs(log_: TrajectoryLog, scn: Scenario, out: str, plot: bool) -> list[Path]:
    paths = list(log_.write(out))
    if plot:
        from .plotting import render_plot

        p = Path(out) / "plot.svg"
        render_plot(log_, scn, p)
        paths.append(p)
    return paths


# ---------------------------------------------------------------- run / plot

def cmd_run(args: argparse.Namespace) -> int:
    scn = _load(args.scenario, args.seed, args.dt)
    result = run(scn)
    try:
        paths = _write_outputs(result, scn, args.out, args.plot)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_ENV
    print(summary(result, scn))
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK if result.all_arrived else EXIT_FAILED


def cmd_plot(args: argparse.Namespace) -> int:
    scn = _load(args.scenario)
    traj = Path(args.trajectory)
    events = Path(args.events) if args.events else traj.with_name("events.csv")
    try:
        log_ = TrajectoryLog.read(traj, events if events.exists() else None)
    except FileNotFoundError as exc:
        raise InputError(f"log not found: {exc.filename}") from None
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed log {traj}: {exc}") from None
    if not log_.rows:
        raise InputError(f"{traj} has no rows")
    from .plotting import render_plot

    out = Path(args.output) if args.output else traj.with_name("plot.svg")
    try:
        render_plot(log_, scn, out, title=args.title)
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_ENV
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------- REPL

REPL_HELP = """commands:
  target X Y                       drive to (X, Y)
  obstacle front|left|right [DIST] inject an obstacle detection (default 0.4 m)
  clear                            inject an empty detection report
  state                            print controller state and pose
  wait SECONDS                     let simulated time advance
  help                             this text
  quit                             leave"""


class GatedRobot:
    """SimRobot whose clock only advances when the REPL grants ticks."""

    def __init__(self, robot: SimRobot, real_time: bool = False):
        self.robot = robot
        self.real_time = real_time
        self.cond = threading.Condition()
        self.budget = 0
        self.busy = False
        self.closed = False

    def __getattr__(self, name):
        return getattr(self.robot, name)

    def grant(self, ticks: int) -> None:
        with self.cond:
            self.budget += ticks
            self.cond.notify_all()

    def tick(self) -> None:
        if self.real_time:
            time.sleep(self.robot.scn.sim.dt)
        else:
            with self.cond:
                self.cond.wait_for(lambda: self.budget > 0 or self.closed)
                if self.closed:
                    raise Cancelled()
                self.budget -= 1
                self.cond.notify_all()
        self.robot.tick()

    def drain(self, timeout: float = 30.0) -> None:
        """Block until granted ticks are used up or the controller is idle."""
        with self.cond:
            self.cond.wait_for(lambda: self.budget == 0 or not self.busy or self.closed, timeout)
            self.budget = 0

    def close(self) -> None:
        with self.cond:
            self.closed = True
            self.cond.notify_all()


class Repl:
    """Line-command session bound to an in-process simulation or a UDP control."""

    def __init__(self, scn: Scenario, out: TextIO, real_time: bool = False,
                 control_addr: Optional[tuple[str, int]] = None):
        self.scn = scn
        self.out = out
        self.control_addr = control_addr
        self.manual_seq = 0
        self.endpoint: Optional[Endpoint] = None
        self.robot: Optional[GatedRobot] = None
        self.ctl: Optional[Controller] = None
        if control_addr is not None:
            self.endpoint = Endpoint("repl", ("127.0.0.1", 0))
            return
        sim_robot, ctl, rec = build(scn)
        self.robot = GatedRobot(sim_robot, real_time)
        ctl.io = self.robot
        ctl.on_event = self._event
        self.rec = rec
        self.ctl = ctl
        self.targets: list[Vec2] = []
        self.wake = threading.Condition()
        self.worker = threading.Thread(target=self._drive, name="controller", daemon=True)
        self.worker.start()

    def _event(self, kind: str, detail: str = "") -> None:
        self.rec.event(kind, detail)
        print(f"[t={self.robot.robot.t:.2f}] {kind} {detail}".rstrip(), file=self.out)

    def _drive(self) -> None:
        while True:
            with self.wake:
                self.wake.wait_for(lambda: self.targets or self.robot.closed)
                if self.robot.closed:
                    return
                target = self.targets.pop(0)
            try:
                self.ctl.send_to(target)
            except Cancelled:
                return
            except Exception as exc:  # surfaced to the operator, session continues
                self._event("Failed", f"{type(exc).__name__}: {exc}")
            finally:
                with self.wake, self.robot.cond:
                    self.robot.busy = bool(self.targets)
                    self.robot.cond.notify_all()

    # each injection goes through the codec, the same path as a camera report
    def _roundtrip(self, msg: WireMessage) -> WireMessage:
        data = encode(msg)
        if self.endpoint is not None:
            self.endpoint.send_raw(data, self.control_addr)
        return decode(data)

    def _report(self, detections: tuple[Detection, ...]) -> None:
        if self.robot is not None:
            # sit at or above the camera sequence so the controller takes it
            seq = max(self.manual_seq, self.robot.robot.perception.seq)
            ts = self.robot.robot.now_ms()
        else:
            seq, ts = self.manual_seq, 0
        self.manual_seq = seq + 1
        rep = quantized_report(DetectionReport(seq, ts, detections))
        decoded = self._roundtrip(WireMessage.wrap(rep)).payload
        if self.robot is not None:
            self.robot.robot.inject_report(decoded)

    def execute(self, line: str) -> bool:
        """Run one command; returns False when the session should end."""
        words = line.split()
        if not words:
            return True
        cmd, args = words[0].lower(), words[1:]
        try:
            if cmd in ("quit", "exit"):
                return False
            if cmd == "help":
                print(REPL_HELP, file=self.out)
            elif cmd == "target":
                if len(args) != 2:
                    raise InputError("usage: target X Y")
                x, y = (float(a) for a in args)
                msg = self._roundtrip(WireMessage.wrap(TargetRequest(x, y), seq=self.manual_seq))
                if self.ctl is not None:
                    with self.wake, self.robot.cond:
                        self.targets.append(Vec2(msg.payload.x, msg.payload.y))
                        self.robot.busy = True
                        self.wake.notify_all()
                print(f"target ({x:g}, {y:g}) queued", file=self.out)
            elif cmd == "obstacle":
                if len(args) not in (1, 2) or args[0] not in ("front", "left", "right"):
                    raise InputError("usage: obstacle front|left|right [DIST]")
                dist = float(args[1]) if len(args) == 2 else 0.4
                close = proximity_gate(ObjectKind.OBSTACLE, dist, self.scn.proximity)
                self._report((Detection(ObjectKind.OBSTACLE, Zone(args[0]), dist, close, "manual"),))
                print(f"obstacle {args[0]} at {dist:g} m injected (close={close})", file=self.out)
            elif cmd == "clear":
                self._report(())
                print("detections cleared", file=self.out)
            elif cmd == "state":
                print(self.state(), file=self.out)
            elif cmd == "wait":
                if len(args) != 1:
                    raise InputError("usage: wait SECONDS")
                seconds = float(args[0])
                if not seconds >= 0:
                    raise InputError("wait needs a non-negative duration")
                if self.robot is None:
                    time.sleep(seconds)
                elif self.robot.real_time:
                    time.sleep(seconds)
                else:
                    self.robot.grant(math.ceil(seconds / self.scn.sim.dt - 1e-9))
                    self.robot.drain()
            else:
                raise InputError(f"unknown command {cmd!r}; type 'help'")
        except (InputError, ValueError, DecodeError) as exc:
            print(f"error: {exc}", file=self.out)
        return True

    def state(self) -> str:
        if self.ctl is None:
            return "remote control session (state lives in the control process)"
        pose = self.robot.robot.world.mrp
        return (f"t={self.robot.robot.t:.2f} {self.ctl.state.describe()} "
                f"pose=({pose.x:.3f}, {pose.y:.3f}, {pose.heading:.3f}) front_blocked={self.ctl.front_blocked}")

    def close(self) -> None:
        if self.robot is not None:
            self.ctl.cancel.set()
            self.robot.close()
            with self.wake:
                self.wake.notify_all()
            self.worker.join(timeout=2.0)
        if self.endpoint is not None:
            self.endpoint.close()


def _repl_scenario(path: Optional[str]) -> Scenario:
    if path:
        scn = _load(path)
    else:
        from .sim import parse_scenario

        scn = parse_scenario("bounds -10 -10 10 10\nmrp 0 0 0 0.25\n", "repl")
    # manual injection replaces the camera unless asked otherwise
    return scn


def cmd_repl(args: argparse.Namespace) -> int:
    scn = _repl_scenario(args.scenario)
    if not args.vision:
        scn = dataclasses.replace(scn, sim=dataclasses.replace(scn.sim, vision=False))
    control = protocol.parse_addr(args.control_addr) if args.control_addr else None
    try:
        repl = Repl(scn, sys.stdout, real_time=args.real_time, control_addr=control)
    except EndpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    interactive = sys.stdin.isatty()
    try:
        while True:
            if interactive:
                print("losnav> ", end="", flush=True)
            line = sys.stdin.readline()
            if not line or not repl.execute(line):
                break
    except KeyboardInterrupt:
        pass
    finally:
        repl.close()
    return EXIT_OK


# ---------------------------------------------------------------- UDP roles

class _Stop:
    """Flag flipped by SIGINT/SIGTERM so long-running roles exit cleanly."""

    def __init__(self) -> None:
        self.event = threading.Event()
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: self.event.set())

    def __bool__(self) -> bool:
        return self.event.is_set()


def _addrs(args: argparse.Namespace) -> dict[str, tuple[str, int]]:
    out = {}
    for role in ("control", "vision", "robot"):
        flag = getattr(args, f"{role}_addr")
        out[role] = protocol.parse_addr(flag) if flag else protocol.default_addr(role)
    return out


def serve_robot(scn: Scenario, addrs: dict, stop: _Stop, idle_exit: float = 0.0) -> int:
    """World and body: applies command k, answers with telemetry k."""
    robot = SimRobot(dataclasses.replace(scn, sim=dataclasses.replace(scn.sim, vision=False)))
    with Endpoint("robot", addrs["robot"]) as ep:
        last_seen = time.monotonic()
        while not stop:
            tel = robot.telemetry
            data = encode(WireMessage.wrap(tel))
            ep.send_raw(data, addrs["control"])
            ep.send_raw(data, addrs["vision"])
            msg = ep.wait_for("command", robot.k + 1, 0.2)
            if msg is None:
                if idle_exit and time.monotonic() - last_seen > idle_exit:
                    break
                continue
            last_seen = time.monotonic()
            robot.send_command(msg.payload)
            try:
                robot.tick()
            except Exception as exc:
                log.error("robot halted: %s", exc)
                ep.send_raw(encode(WireMessage.wrap(robot.telemetry)), addrs["control"])
                return EXIT_FAILED
    return EXIT_OK


def serve_vision(scn: Scenario, addrs: dict, stop: _Stop, idle_exit: float = 0.0) -> int:
    """Camera: one report per vision tick, built from the telemetry pose."""
    import random

    perception = Perception(scn.camera, scn.zones, scn.proximity)
    loss = random.Random(f"{scn.seed}:loss")
    world = dataclasses.replace(scn.world)
    ticks = scn.sim.vision_ticks
    done = -1
    sent: Optional[WireMessage] = None
    with Endpoint("vision", addrs["vision"], max_range=scn.sensor.max_range) as ep:
        last_seen = time.monotonic()
        while not stop:
            msg = ep.wait_for("telemetry", done + 1, 0.2)
            if msg is None:
                # the control socket may have come up after our last send
                if sent is not None:
                    ep.send(sent, addrs["control"])
                if idle_exit and time.monotonic() - last_seen > idle_exit:
                    break
                continue
            last_seen = time.monotonic()
            tel: Telemetry = msg.payload
            done = tel.seq
            if tel.seq % ticks:
                continue
            rep = perception.report(world, tel.timestamp_ms, pose=tel.pose)
            if scn.sim.report_loss > 0 and loss.random() < scn.sim.report_loss:
                continue
            sent = WireMessage.wrap(rep)
            ep.send(sent, addrs["control"])
    return EXIT_OK


class UdpRobot:
    """Controller side of the lock-step link.

    ``tick`` sends the held command as command k+1 and blocks for telemetry
    k+1 and, on vision ticks, for the matching report.
    """

    def __init__(self, scn: Scenario, ep: Endpoint, addrs: dict, stop: _Stop,
                 real_time: bool = False, reply_timeout: float = 2.0, startup_timeout: float = 5.0):
        self.scn = scn
        self.ep = ep
        self.addrs = addrs
        self.stop = stop
        self.real_time = real_time
        self.reply_timeout = reply_timeout
        self.startup_timeout = startup_timeout
        self.k = 0
        self.cmd = STOP
        self.vision_live = scn.sim.vision
        self.wait_reports = scn.sim.vision and scn.sim.report_loss == 0
        self._deadline = time.monotonic()

    def now_ms(self) -> int:
        return round(self.k * self.scn.sim.dt * 1000)

    @property
    def t(self) -> float:
        return self.k * self.scn.sim.dt

    def send_command(self, cmd: VelocityCommand) -> None:
        self.cmd = quantized_command(cmd)

    def latest_telemetry(self) -> Optional[Telemetry]:
        msg = self.ep.latest("telemetry")
        return None if msg is None else msg.payload

    def latest_report(self) -> Optional[DetectionReport]:
        msg = self.ep.latest("detection_report")
        return None if msg is None else msg.payload

    def _await_report(self, timeout: Optional[float] = None) -> None:
        if not (self.wait_reports and self.k % self.scn.sim.vision_ticks == 0):
            return
        # without camera traffic the controller carries on with ultrasonic ranges
        if timeout is None:
            timeout = self.reply_timeout if self.vision_live else 0.0
        end = time.monotonic() + timeout
        while True:
            rep = self.latest_report()
            if rep is not None and rep.timestamp_ms >= self.now_ms():
                self.vision_live = True
                return
            if time.monotonic() >= end:
                if self.vision_live:
                    log.warning("no detection report for t=%.2f; continuing on ultrasonic ranges", self.t)
                self.vision_live = False
                return
            time.sleep(0.0005)

    def start(self) -> None:
        while not self.stop:
            if self.ep.wait_for("telemetry", 0, 0.2) is not None:
                break
        if self.stop:
            raise Cancelled()
        # the vision process may still be starting up
        self._await_report(self.startup_timeout)

    def tick(self) -> None:
        if self.stop:
            raise Cancelled()
        if self.real_time:
            self._deadline += self.scn.sim.dt
            time.sleep(max(0.0, self._deadline - time.monotonic()))
        k = self.k + 1
        msg = WireMessage.wrap(self.cmd, seq=k, timestamp_ms=round(k * self.scn.sim.dt * 1000))
        for _ in range(max(1, int(self.reply_timeout / 0.2))):
            self.ep.send(msg, self.addrs["robot"])
            if self.ep.wait_for("telemetry", k, 0.2) is not None:
                break
            if self.stop:
                raise Cancelled()
        else:
            raise TelemetryLost(f"no telemetry for step {k}")
        self.k = k
        self._await_report()


def serve_control(scn: Scenario, addrs: dict, stop: _Stop, out: Optional[str], plot: bool,
                  real_time: bool = False, listen: bool = False) -> int:
    with Endpoint("control", addrs["control"], max_range=scn.sensor.max_range) as ep:
        io = UdpRobot(scn, ep, addrs, stop, real_time)
        trajectory = TrajectoryLog()

        def event(kind: str, detail: str = "") -> None:
            trajectory.events.append(LogEvent(io.t, kind, detail))
            print(f"[t={io.t:.2f}] {kind} {detail}".rstrip(), flush=True)

        ctl = Controller(io, scn.control, bounds=scn.world.bounds, on_event=event)
        world = dataclasses.replace(scn.world)

        def row() -> None:
            tel = io.latest_telemetry()
            world.mrp = tel.pose
            dev = active_device(world, ctl.state.target)
            los = dev is not None and line_of_sight(world.mrp.position, dev.position, world)
            us = tel.ultrasonic
            trajectory.rows.append(LogRow(io.t, tel.pose, io.cmd, (us.left, us.front, us.right),
                                          ctl.state.mode.value, ctl.front_blocked, los, clearance(world)))

        ctl.on_tick = row
        try:
            io.start()
        except Cancelled:
            return EXIT_OK
        first = io.latest_report()
        if first is not None:
            ctl.on_detection_report(first)
        row()

        def targets():
            yield from scn.targets
            while listen and not stop:
                try:
                    req = ep.targets.get(timeout=0.2)
                except Exception:
                    continue
                yield Vec2(req.x, req.y)

        for target in targets():
            try:
                result = ctl.send_to(target)
            except Cancelled:
                break
            except TelemetryLost as exc:
                event("Failed", f"TelemetryLost: {exc}")
                trajectory.outcomes.append((target, MoveResult.UNREACHABLE))
                break
            trajectory.outcomes.append((target, result))
        if out:
            try:
                _write_outputs(trajectory, scn, out, plot)
            except OSError as exc:
                print(f"error: cannot write output: {exc}", file=sys.stderr)
                return EXIT_ENV
        if trajectory.rows:
            print(summary(trajectory, scn), flush=True)
        return EXIT_OK if trajectory.all_arrived else EXIT_FAILED


def cmd_serve(args: argparse.Namespace) -> int:
    scn = _load(args.scenario, args.seed, args.dt)
    addrs = _addrs(args)
    stop = _Stop()
    try:
        if args.role == "robot":
            return serve_robot(scn, addrs, stop, args.idle_exit)
        if args.role == "vision":
            return serve_vision(scn, addrs, stop, args.idle_exit)
        return serve_control(scn, addrs, stop, args.out, args.plot, args.real_time, args.listen)
    except EndpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="losnav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario in virtual time")
    r.add_argument("scenario")
    r.add_argument("--plot", action="store_true", help="also write plot.svg")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--seed", type=int)
    r.add_argument("--dt", type=float)
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="render trajectory.csv (and events.csv) to SVG")
    pl.add_argument("trajectory")
    pl.add_argument("--scenario", required=True)
    pl.add_argument("--events", help="events CSV (default: next to the trajectory)")
    pl.add_argument("--output", "-o", help="SVG path (default: plot.svg next to the trajectory)")
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)

    rp = sub.add_parser("repl", help="interactive target and vision injection")
    rp.add_argument("--scenario", help="world to drive in (default: empty 20 m arena)")
    rp.add_argument("--vision", action="store_true", help="keep the simulated camera running")
    rp.add_argument("--real-time", action="store_true", help="advance the clock with wall time")
    rp.add_argument("--control-addr", help="send to a UDP control process instead of simulating")
    rp.set_defaults(func=cmd_repl)

    sv = sub.add_parser("serve", help="run one UDP role of the split-process setup")
    sv.add_argument("role", choices=["robot", "vision", "control"])
    sv.add_argument("--scenario", required=True)
    sv.add_argument("--seed", type=int)
    sv.add_argument("--dt", type=float)
    sv.add_argument("--out", help="control role: write logs here")
    sv.add_argument("--plot", action="store_true")
    sv.add_argument("--real-time", action="store_true", help="control role: pace ticks with wall time")
    sv.add_argument("--listen", action="store_true",
                    help="control role: keep serving target requests after the scenario targets")
    sv.add_argument("--idle-exit", type=float, default=0.0,
                    help="robot/vision roles: exit after this many idle seconds (0 = never)")
    for role in ("vision", "control", "robot"):
        sv.add_argument(f"--{role}-addr", help=f"HOST:PORT (env {protocol.ENV_ADDRS[role]})")
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        # address parsing and similar flag problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
