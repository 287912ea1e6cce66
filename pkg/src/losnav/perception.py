"""Synthetic vision: image projection, zone partition and proximity gating.

Detections are produced from ground truth instead of a neural detector.
Externally produced bounding boxes go through :func:`classify_bbox`, which
uses the same zone and gate rules as the synthetic path.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

from .geometry import COINCIDENT_EPS, Pose2D, Vec2, bearing, distance
from .world import Disc, WorldModel, ray_cast


class DegenerateProjection(ValueError):
    pass


class InvalidDistance(ValueError):
    pass


class Zone(str, enum.Enum):
    LEFT = "left"
    FRONT = "front"
    RIGHT = "right"
    IGNORED = "ignored"


class ObjectKind(str, enum.Enum):
    OBSTACLE = "obstacle"
    DEVICE = "device"


@dataclass(frozen=True)
class ZoneConfig:
    side_margin: float = 0.25
    height_fraction: float = 0.75

    def __post_init__(self) -> None:
        if not (0.0 < self.side_margin < 0.5 and 0.0 < self.height_fraction <= 1.0):
            raise ValueError(f"invalid zone config {self}")


@dataclass(frozen=True)
class CameraConfig:
    horizontal_fov: float = math.radians(120.0)
    vertical_fov: float = math.radians(90.0)
    mount_height: float = 0.25

    def __post_init__(self) -> None:
        for fov in (self.horizontal_fov, self.vertical_fov):
            if not 0.0 < fov < math.pi:
                raise ValueError(f"field of view {fov} outside (0, pi)")
        if not self.mount_height > 0:
            raise ValueError("mount_height must be positive")


@dataclass(frozen=True)
class ProximityConfig:
    obstacle_threshold: float = 1.0
    device_serve_distance: float = 2.0

    def __post_init__(self) -> None:
        if not (self.obstacle_threshold > 0 and self.device_serve_distance > 0):
            raise ValueError("proximity thresholds must be positive")


@dataclass(frozen=True)
class ImagePoint:
    """Normalized image coordinates: u=0 left edge, v=0 top edge."""

    u: float
    v: float


@dataclass(frozen=True)
class Detection:
    kind: ObjectKind
    zone: Zone
    est_distance: Optional[float]
    close: bool
    source_id: str

    def __post_init__(self) -> None:
        if self.close and self.est_distance is None:
            raise ValueError("a close detection needs an estimated distance")


@dataclass(frozen=True)
class DetectionReport:
    seq: int
    timestamp_ms: int
    detections: tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", tuple(self.detections))


def project_to_image(mrp: Pose2D, point: Vec2, cam: CameraConfig = CameraConfig()) -> Optional[ImagePoint]:
    """Project a ground-plane point into the camera; ``None`` when out of view.

    ``u`` is linear in the relative bearing (CCW positive maps to the left);
    ``v`` is linear in the depression angle from a camera at mount height.
    """
    d = distance(mrp.position, point)
    if d < COINCIDENT_EPS:
        raise DegenerateProjection(f"point {point} coincides with the camera")
    rel = bearing(mrp, point)
    if abs(rel) > cam.horizontal_fov / 2:
        return None
    u = 0.5 - rel / cam.horizontal_fov
    v = 0.5 + math.atan2(cam.mount_height, d) / cam.vertical_fov
    if not 0.0 <= v <= 1.0:
        return None
    return ImagePoint(min(max(u, 0.0), 1.0), v)


def classify_zone(p: ImagePoint, zones: ZoneConfig = ZoneConfig()) -> Zone:
    # top band is discarded; ties on the side margins go to FRONT
    if p.v < 1.0 - zones.height_fraction:
        return Zone.IGNORED
    if p.u < zones.side_margin:
        return Zone.LEFT
    if p.u > 1.0 - zones.side_margin:
        return Zone.RIGHT
    return Zone.FRONT


def proximity_gate(kind: ObjectKind, est_distance: float, cfg: ProximityConfig = ProximityConfig()) -> bool:
    if est_distance < 0 or math.isnan(est_distance):
        raise InvalidDistance(f"distance must be non-negative, got {est_distance}")
    if kind is ObjectKind.OBSTACLE:
        return est_distance <= cfg.obstacle_threshold
    return est_distance <= cfg.device_serve_distance


def classify_bbox(
    kind: ObjectKind,
    bbox: tuple[float, float, float, float],
    est_distance: Optional[float],
    source_id: str,
    zones: ZoneConfig = ZoneConfig(),
    prox: ProximityConfig = ProximityConfig(),
) -> Detection:
    """Classify an externally detected bounding box ``(u0, v0, u1, v1)``.

    The box is located by its bottom-center point, where the object meets
    the ground.
    """
    u0, v0, u1, v1 = bbox
    if not (0.0 <= u0 <= u1 <= 1.0 and 0.0 <= v0 <= v1 <= 1.0):
        raise ValueError(f"bounding box {bbox} is not a normalized box")
    zone = classify_zone(ImagePoint(0.5 * (u0 + u1), v1), zones)
    close = est_distance is not None and proximity_gate(kind, est_distance, prox)
    return Detection(kind, zone, est_distance, close, source_id)


def _visible(mrp: Pose2D, point: Vec2, world: WorldModel) -> bool:
    d = distance(mrp.position, point)
    direction = math.atan2(point.y - mrp.y, point.x - mrp.x)
    hit = ray_cast(mrp.position, direction, d + 1e-6, world)
    return hit is None or hit >= d - 1e-6


def _observe(mrp: Pose2D, candidates: list[Vec2], world: WorldModel, cam: CameraConfig) -> Optional[tuple[Vec2, ImagePoint]]:
    """Nearest candidate point that is in view and unoccluded."""
    ranked = sorted(candidates, key=lambda p: (distance(mrp.position, p), p.x, p.y))
    for p in ranked:
        if distance(mrp.position, p) < COINCIDENT_EPS:
            continue
        img = project_to_image(mrp, p, cam)
        if img is not None and _visible(mrp, p, world):
            return p, img
    return None


def build_report(
    world: WorldModel,
    cam: CameraConfig = CameraConfig(),
    zones: ZoneConfig = ZoneConfig(),
    prox: ProximityConfig = ProximityConfig(),
    seq: int = 0,
    timestamp_ms: int = 0,
    pose: Optional[Pose2D] = None,
    sample_spacing: float = 0.05,
) -> DetectionReport:
    """Ground-truth detection report for one camera frame.

    ``pose`` overrides the MRP pose in ``world`` (the vision process only
    knows the pose reported in telemetry).
    """
    mrp = world.mrp if pose is None else pose
    detections = []
    for obs in world.obstacles:
        nearest = obs.nearest_point(mrp.position)
        seen = _observe(mrp, [nearest], world, cam)
        if seen is None:
            extra = obs.boundary_samples(sample_spacing)
            if not isinstance(obs, Disc):
                extra += obs.corners()
            seen = _observe(mrp, extra, world, cam)
        if seen is None:
            continue
        point, img = seen
        zone = classify_zone(img, zones)
        if zone is Zone.IGNORED:
            continue
        d = distance(mrp.position, point)
        detections.append(Detection(ObjectKind.OBSTACLE, zone, d, proximity_gate(ObjectKind.OBSTACLE, d, prox), obs.id))
    for dev in world.devices:
        if distance(mrp.position, dev.position) < COINCIDENT_EPS:
            continue
        seen = _observe(mrp, [dev.position], world, cam)
        if seen is None:
            continue
        zone = classify_zone(seen[1], zones)
        if zone is Zone.IGNORED:
            continue
        d = distance(mrp.position, dev.position)
        detections.append(Detection(ObjectKind.DEVICE, zone, d, proximity_gate(ObjectKind.DEVICE, d, prox), dev.id))
    detections.sort(key=lambda det: (det.source_id, det.kind.value))
    return DetectionReport(seq, timestamp_ms, tuple(detections))


class Perception:
    """Owns the sequence counter of one vision source."""

    def __init__(self, cam: CameraConfig = CameraConfig(), zones: ZoneConfig = ZoneConfig(),
                 prox: ProximityConfig = ProximityConfig()):
        self.cam = cam
        self.zones = zones
        self.prox = prox
        self.seq = 0

    def report(self, world: WorldModel, timestamp_ms: int, pose: Optional[Pose2D] = None) -> DetectionReport:
        rep = build_report(world, self.cam, self.zones, self.prox, self.seq, timestamp_ms, pose)
        self.seq += 1
        return rep

