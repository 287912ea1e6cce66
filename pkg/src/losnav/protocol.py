"""Canonical text wire format and UDP transport between modules.

One datagram carries one JSON object with sorted keys, no whitespace and
floats rendered with at most 9 significant digits, e.g.::

    {"payload":{"angular":0,"linear":0.3},"seq":4,"timestamp_ms":200,"type":"command"}

The format is deterministic: re-encoding a decoded datagram reproduces it
byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
import os
import queue
import socket
import threading
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from .geometry import Pose2D
from .perception import Detection, DetectionReport, ObjectKind, Zone
from .world import UltrasonicReading, VelocityCommand

log = logging.getLogger(__name__)

MAX_DATAGRAM = 1400
FLOAT_DIGITS = 9

DEFAULT_PORTS = {"control": 47000, "vision": 47001, "robot": 47002, "target": 47003}
ENV_ADDRS = {"control": "LOSNAV_CONTROL_ADDR", "vision": "LOSNAV_VISION_ADDR", "robot": "LOSNAV_ROBOT_ADDR"}


class MessageTooLarge(ValueError):
    pass


class DecodeError(ValueError):
    """Rejected datagram; ``reason`` is ``malformed``, ``invalid`` or ``unknown_type``."""

    def __init__(self, reason: str, detail: str):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


class EndpointError(OSError):
    pass


@dataclass(frozen=True)
class Telemetry:
    seq: int
    timestamp_ms: int
    pose: Pose2D
    velocity: VelocityCommand
    imu: tuple[float, float, float]  # yaw, pitch, roll
    ultrasonic: UltrasonicReading


@dataclass(frozen=True)
class TargetRequest:
    x: float
    y: float


Payload = Union[Telemetry, DetectionReport, VelocityCommand, TargetRequest]

MESSAGE_TYPES = ("command", "detection_report", "target_request", "telemetry")


@dataclass(frozen=True)
class WireMessage:
    type: str
    seq: int
    timestamp_ms: int
    payload: Any = field(compare=True)

    @classmethod
    def wrap(cls, obj: Payload, seq: int = 0, timestamp_ms: int = 0) -> WireMessage:
        """Envelope ``obj``; telemetry and reports carry their own seq/time."""
        if isinstance(obj, Telemetry):
            return cls("telemetry", obj.seq, obj.timestamp_ms, obj)
        if isinstance(obj, DetectionReport):
            return cls("detection_report", obj.seq, obj.timestamp_ms, obj)
        if isinstance(obj, VelocityCommand):
            return cls("command", seq, timestamp_ms, obj)
        if isinstance(obj, TargetRequest):
            return cls("target_request", seq, timestamp_ms, obj)
        raise TypeError(f"cannot wrap {type(obj).__name__}")


def quantize(x: float) -> float:
    """The float a value turns into after one trip over the wire."""
    return float(format(x, f".{FLOAT_DIGITS}g"))


# ---------------------------------------------------------------- encoding

def _render(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite number {value}")
        text = format(value, f".{FLOAT_DIGITS}g")
        return "0" if text == "-0" else text
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_render(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(f"{_render(k)}:{_render(value[k])}" for k in sorted(value)) + "}"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _payload_fields(msg: WireMessage) -> dict:
    p = msg.payload
    if msg.type == "telemetry":
        return {
            "pose": {"x": p.pose.x, "y": p.pose.y, "theta": p.pose.heading},
            "velocity": {"v": p.velocity.linear, "omega": p.velocity.angular},
            "imu": {"yaw": p.imu[0], "pitch": p.imu[1], "roll": p.imu[2]},
            "ultrasonic": {"left": p.ultrasonic.left, "front": p.ultrasonic.front, "right": p.ultrasonic.right},
        }
    if msg.type == "detection_report":
        return {"detections": [
            {"kind": d.kind.value, "zone": d.zone.value,
             "est_distance": None if d.est_distance is None else float(d.est_distance),
             "close": d.close, "source_id": d.source_id}
            for d in p.detections
        ]}
    if msg.type == "command":
        return {"linear": float(p.linear), "angular": float(p.angular)}
    if msg.type == "target_request":
        return {"x": float(p.x), "y": float(p.y)}
    raise ValueError(f"unknown message type {msg.type!r}")


def encode(msg: WireMessage) -> bytes:
    if msg.type not in MESSAGE_TYPES:
        raise ValueError(f"unknown message type {msg.type!r}")
    _check_payload(msg.type, msg.payload)
    doc = {"type": msg.type, "seq": int(msg.seq), "timestamp_ms": int(msg.timestamp_ms),
           "payload": _payload_fields(msg)}
    data = _render(doc).encode("utf-8")
    if len(data) > MAX_DATAGRAM:
        raise MessageTooLarge(f"{len(data)} bytes exceeds {MAX_DATAGRAM}")
    return data


# ---------------------------------------------------------------- decoding

def _reject_constant(name: str) -> Any:
    raise DecodeError("malformed", f"non-finite literal {name}")


def _obj(value: Any, keys: set[str], where: str) -> dict:
    if not isinstance(value, dict):
        raise DecodeError("invalid", f"{where} must be an object")
    got = set(value)
    if got != keys:
        missing, extra = sorted(keys - got), sorted(got - keys)
        raise DecodeError("invalid", f"{where}: missing {missing} unknown {extra}")
    return value


def _num(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DecodeError("invalid", f"{where} must be a number")
    return float(value)


def _count(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise DecodeError("invalid", f"{where} must be a non-negative integer")
    return value


def _angle(value: Any, where: str) -> float:
    a = _num(value, where)
    if not -math.pi < a <= math.pi:
        raise DecodeError("invalid", f"{where}={a} not wrapped to (-pi, pi]")
    return a


def _range(value: Any, where: str, max_range: Optional[float]) -> float:
    r = _num(value, where)
    if r < 0 or (max_range is not None and r > max_range):
        raise DecodeError("invalid", f"{where}={r} outside sensor range")
    return r


def _decode_payload(kind: str, seq: int, ts: int, p: Any, max_range: Optional[float]) -> Payload:
    if kind == "telemetry":
        p = _obj(p, {"pose", "velocity", "imu", "ultrasonic"}, "payload")
        pose = _obj(p["pose"], {"x", "y", "theta"}, "pose")
        vel = _obj(p["velocity"], {"v", "omega"}, "velocity")
        imu = _obj(p["imu"], {"yaw", "pitch", "roll"}, "imu")
        us = _obj(p["ultrasonic"], {"left", "front", "right"}, "ultrasonic")
        return Telemetry(
            seq, ts,
            Pose2D.at(_num(pose["x"], "pose.x"), _num(pose["y"], "pose.y"), _angle(pose["theta"], "pose.theta")),
            VelocityCommand(_num(vel["v"], "velocity.v"), _num(vel["omega"], "velocity.omega")),
            (_angle(imu["yaw"], "imu.yaw"), _angle(imu["pitch"], "imu.pitch"), _angle(imu["roll"], "imu.roll")),
            UltrasonicReading(*(_range(us[k], f"ultrasonic.{k}", max_range) for k in ("left", "front", "right"))),
        )
    if kind == "detection_report":
        p = _obj(p, {"detections"}, "payload")
        if not isinstance(p["detections"], list):
            raise DecodeError("invalid", "detections must be a list")
        dets = []
        for i, d in enumerate(p["detections"]):
            d = _obj(d, {"kind", "zone", "est_distance", "close", "source_id"}, f"detections[{i}]")
            try:
                obj_kind, zone = ObjectKind(d["kind"]), Zone(d["zone"])
            except ValueError as exc:
                raise DecodeError("invalid", f"detections[{i}]: {exc}") from None
            dist = None if d["est_distance"] is None else _range(d["est_distance"], "est_distance", None)
            if not isinstance(d["close"], bool) or not isinstance(d["source_id"], str):
                raise DecodeError("invalid", f"detections[{i}]: bad close/source_id")
            if d["close"] and dist is None:
                raise DecodeError("invalid", f"detections[{i}]: close without distance")
            dets.append(Detection(obj_kind, zone, dist, d["close"], d["source_id"]))
        return DetectionReport(seq, ts, tuple(dets))
    if kind == "command":
        p = _obj(p, {"linear", "angular"}, "payload")
        return VelocityCommand(_num(p["linear"], "linear"), _num(p["angular"], "angular"))
    p = _obj(p, {"x", "y"}, "payload")
    return TargetRequest(_num(p["x"], "x"), _num(p["y"], "y"))


def decode(data: bytes, max_range: Optional[float] = None) -> WireMessage:
    """Strict inverse of :func:`encode`; raises :class:`DecodeError`."""
    if len(data) > MAX_DATAGRAM:
        raise DecodeError("malformed", f"datagram of {len(data)} bytes")
    try:
        doc = json.loads(data.decode("utf-8"), parse_constant=_reject_constant)
    except DecodeError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError("malformed", str(exc)) from None
    if not isinstance(doc, dict):
        raise DecodeError("malformed", "top level must be an object")
    kind = doc.get("type")
    if kind not in MESSAGE_TYPES:
        raise DecodeError("unknown_type", f"type {kind!r}")
    doc = _obj(doc, {"type", "seq", "timestamp_ms", "payload"}, "envelope")
    seq = _count(doc["seq"], "seq")
    ts = _count(doc["timestamp_ms"], "timestamp_ms")
    try:
        payload = _decode_payload(kind, seq, ts, doc["payload"], max_range)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError("invalid", str(exc)) from None
    return WireMessage(kind, seq, ts, payload)


def _check_payload(kind: str, p: Any) -> None:
    expected = {"telemetry": Telemetry, "detection_report": DetectionReport,
                "command": VelocityCommand, "target_request": TargetRequest}[kind]
    if not isinstance(p, expected):
        raise TypeError(f"{kind} payload must be {expected.__name__}")


# ---------------------------------------------------------------- transport

def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def default_addr(role: str) -> tuple[str, int]:
    """Address of ``role``, honouring the LOSNAV_*_ADDR overrides."""
    env = ENV_ADDRS.get(role)
    if env and os.environ.get(env):
        return parse_addr(os.environ[env])
    return "127.0.0.1", DEFAULT_PORTS[role]


class Endpoint:
    """One UDP socket with a receive thread and latest-value inboxes.

    Telemetry, detection reports and commands keep only the newest message
    per type (older seq numbers are dropped). Target requests are queued so
    none is lost to a newer one.
    """

    def __init__(self, role: str, bind: tuple[str, int], max_range: Optional[float] = None):
        self.role = role
        self.max_range = max_range
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind(bind)
        except OSError as exc:
            self.sock.close()
            raise EndpointError(f"{role}: cannot bind {bind[0]}:{bind[1]}: {exc}") from exc
        self.sock.settimeout(0.05)
        self.address = self.sock.getsockname()
        self.received = 0
        self.decode_failures = 0
        self.stale_dropped = 0
        self.targets: queue.Queue[TargetRequest] = queue.Queue()
        self._latest: dict[str, WireMessage] = {}
        self._cond = threading.Condition()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name=f"udp-{role}", daemon=True)
        self._thread.start()

    def send(self, msg: WireMessage, addr: tuple[str, int]) -> None:
        self.sock.sendto(encode(msg), addr)

    def send_raw(self, data: bytes, addr: tuple[str, int]) -> None:
        self.sock.sendto(data, addr)

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                data, _ = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            self.deliver(data)

    def deliver(self, data: bytes) -> None:
        try:
            msg = decode(data, self.max_range)
        except DecodeError as exc:
            self.decode_failures += 1
            log.debug("%s dropped datagram: %s", self.role, exc)
            return
        with self._cond:
            self.received += 1
            if msg.type == "target_request":
                self.targets.put(msg.payload)
            else:
                current = self._latest.get(msg.type)
                if current is not None and msg.seq < current.seq:
                    self.stale_dropped += 1
                    return
                self._latest[msg.type] = msg
            self._cond.notify_all()

    def latest(self, kind: str) -> Optional[WireMessage]:
        with self._cond:
            return self._latest.get(kind)

    def wait_for(self, kind: str, min_seq: int, timeout: float) -> Optional[WireMessage]:
        """Block until a ``kind`` message with seq >= ``min_seq`` arrives."""
        with self._cond:
            ok = self._cond.wait_for(
                lambda: (m := self._latest.get(kind)) is not None and m.seq >= min_seq, timeout)
            return self._latest.get(kind) if ok else None

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)
        self.sock.close()

    def __enter__(self) -> Endpoint:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
