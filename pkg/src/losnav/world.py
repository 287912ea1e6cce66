"""Static environment, range sensing, unicycle motion and LoS queries."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional, Union

from .geometry import Pose2D, Vec2, distance, wrap_angle

# hits closer than this are treated as the ray starting on the surface
_T_EPS = 1e-12
# open-set margin for LoS: touching a boundary does not block
_LOS_EPS = 1e-9


class OriginOccluded(ValueError):
    pass


class CommandOutOfRange(ValueError):
    pass


class InvalidObstacle(ValueError):
    pass


@dataclass(frozen=True)
class Disc:
    center: Vec2
    radius: float
    id: str = ""

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise InvalidObstacle(f"disc radius must be positive, got {self.radius}")

    def contains(self, p: Vec2, margin: float = 0.0) -> bool:
        return distance(p, self.center) < self.radius + margin

    def nearest_point(self, p: Vec2) -> Vec2:
        d = distance(p, self.center)
        if d < 1e-12:
            return Vec2(self.center.x + self.radius, self.center.y)
        return self.center + (p - self.center).scale(self.radius / d)

    def surface_distance(self, p: Vec2) -> float:
        """Signed distance to the boundary (negative inside)."""
        return distance(p, self.center) - self.radius

    def boundary_samples(self, spacing: float) -> list[Vec2]:
        n = max(16, int(math.ceil(2 * math.pi * self.radius / spacing)))
        return [self.center + Vec2.polar(self.radius, 2 * math.pi * k / n) for k in range(n)]


@dataclass(frozen=True)
class Rect:
    min: Vec2
    max: Vec2
    id: str = ""

    def __post_init__(self) -> None:
        if not (self.min.x < self.max.x and self.min.y < self.max.y):
            raise InvalidObstacle(f"rect min {self.min} must be strictly below max {self.max}")

    @property
    def center(self) -> Vec2:
        return Vec2(0.5 * (self.min.x + self.max.x), 0.5 * (self.min.y + self.max.y))

    def contains(self, p: Vec2, margin: float = 0.0) -> bool:
        return self.surface_distance(p) < margin

    def nearest_point(self, p: Vec2) -> Vec2:
        return Vec2(min(max(p.x, self.min.x), self.max.x), min(max(p.y, self.min.y), self.max.y))

    def surface_distance(self, p: Vec2) -> float:
        dx = max(self.min.x - p.x, 0.0, p.x - self.max.x)
        dy = max(self.min.y - p.y, 0.0, p.y - self.max.y)
        if dx > 0.0 or dy > 0.0:
            return math.hypot(dx, dy)
        # inside: negative distance to the closest edge
        return -min(p.x - self.min.x, self.max.x - p.x, p.y - self.min.y, self.max.y - p.y)

    def corners(self) -> list[Vec2]:
        return [self.min, Vec2(self.max.x, self.min.y), self.max, Vec2(self.min.x, self.max.y)]

    def boundary_samples(self, spacing: float) -> list[Vec2]:
        pts: list[Vec2] = []
        cs = self.corners()
        for a, b in zip(cs, cs[1:] + cs[:1]):
            n = max(1, int(math.ceil(distance(a, b) / spacing)))
            pts.extend(a + (b - a).scale(k / n) for k in range(n))
        return pts


Obstacle = Union[Disc, Rect]


@dataclass(frozen=True)
class Device:
    id: str
    position: Vec2


@dataclass
class WorldModel:
    bounds: Rect
    mrp: Pose2D = field(default_factory=lambda: Pose2D.at(0.0, 0.0, 0.0))
    mrp_radius: float = 0.25
    obstacles: list[Obstacle] = field(default_factory=list)
    devices: list[Device] = field(default_factory=list)
    solid_walls: bool = True

    def validate(self) -> None:
        """Raise ValueError when the initial configuration breaks an invariant."""
        if not self.mrp_radius > 0:
            raise ValueError("mrp_radius must be positive")
        for dev in self.devices:
            for obs in self.obstacles:
                if obs.contains(dev.position):
                    raise ValueError(f"device {dev.id!r} lies inside obstacle {obs.id!r}")
        if check_collision(self):
            raise ValueError("MRP body starts in collision or outside the arena")


@dataclass(frozen=True)
class SensorConfig:
    max_range: float = 4.0
    left_offset: float = math.radians(60.0)
    right_offset: float = math.radians(60.0)
    noise: float = 0.0  # uniform amplitude, meters


@dataclass(frozen=True)
class MotionLimits:
    v_max: float = 1.0
    omega_max: float = 2.0


@dataclass(frozen=True)
class VelocityCommand:
    linear: float = 0.0
    angular: float = 0.0


STOP = VelocityCommand(0.0, 0.0)


@dataclass(frozen=True)
class UltrasonicReading:
    left: float
    front: float
    right: float


def _ray_disc(o: Vec2, d: Vec2, disc: Disc) -> Optional[float]:
    ox, oy = o.x - disc.center.x, o.y - disc.center.y
    c = ox * ox + oy * oy - disc.radius * disc.radius
    if c < -_T_EPS:
        raise OriginOccluded(f"ray origin {o} inside disc {disc.id!r}")
    b = ox * d.x + oy * d.y
    disc_ = b * b - c
    if disc_ < 0.0:
        return None
    t = -b - math.sqrt(disc_)
    return t if t > _T_EPS else None


def _slab(o: Vec2, d: Vec2, lo: Vec2, hi: Vec2) -> tuple[float, float]:
    """Parameter interval [t0, t1] where the line o + t d lies in the box."""
    t0, t1 = -math.inf, math.inf
    for oc, dc, l, h in ((o.x, d.x, lo.x, hi.x), (o.y, d.y, lo.y, hi.y)):
        if abs(dc) < 1e-300:
            if oc < l or oc > h:
                return math.inf, -math.inf
            continue
        a, b = (l - oc) / dc, (h - oc) / dc
        if a > b:
            a, b = b, a
        t0, t1 = max(t0, a), min(t1, b)
    return t0, t1


def _ray_rect(o: Vec2, d: Vec2, rect: Rect) -> Optional[float]:
    if rect.min.x < o.x < rect.max.x and rect.min.y < o.y < rect.max.y:
        raise OriginOccluded(f"ray origin {o} inside rect {rect.id!r}")
    t0, t1 = _slab(o, d, rect.min, rect.max)
    if t0 > t1 or t0 <= _T_EPS:
        return None
    return t0


def _ray_walls(o: Vec2, d: Vec2, bounds: Rect) -> Optional[float]:
    if not (bounds.min.x <= o.x <= bounds.max.x and bounds.min.y <= o.y <= bounds.max.y):
        return None
    t = math.inf
    for oc, dc, l, h in ((o.x, d.x, bounds.min.x, bounds.max.x), (o.y, d.y, bounds.min.y, bounds.max.y)):
        if dc > 0:
            t = min(t, (h - oc) / dc)
        elif dc < 0:
            t = min(t, (l - oc) / dc)
    return t if _T_EPS < t < math.inf else None


def ray_cast(origin: Vec2, direction: float, max_range: float, world: WorldModel) -> Optional[float]:
    """Distance to the first obstacle (or solid wall) along a ray.

    Returns ``None`` when nothing is hit within ``max_range``.
    """
    if not max_range > 0:
        raise ValueError("max_range must be positive")
    d = Vec2(math.cos(direction), math.sin(direction))
    best = math.inf
    for obs in world.obstacles:
        t = _ray_disc(origin, d, obs) if isinstance(obs, Disc) else _ray_rect(origin, d, obs)
        if t is not None and t < best:
            best = t
    if world.solid_walls:
        t = _ray_walls(origin, d, world.bounds)
        if t is not None and t < best:
            best = t
    return best if best <= max_range else None


def ultrasonic_read(
    world: WorldModel, config: SensorConfig = SensorConfig(), rng: Optional[random.Random] = None
) -> UltrasonicReading:
    """Left, front and right ranges from the MRP center, saturated at max_range."""
    pose = world.mrp
    values = []
    for offset in (config.left_offset, 0.0, -config.right_offset):
        hit = ray_cast(pose.position, wrap_angle(pose.heading + offset), config.max_range, world)
        r = config.max_range if hit is None else hit
        if config.noise > 0.0 and rng is not None:
            r = min(max(r + rng.uniform(-config.noise, config.noise), 0.0), config.max_range)
        values.append(r)
    return UltrasonicReading(*values)


def step_kinematics(
    pose: Pose2D, cmd: VelocityCommand, dt: float, limits: MotionLimits = MotionLimits()
) -> Pose2D:
    """Advance a unicycle by ``dt`` using the midpoint heading."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if abs(cmd.linear) > limits.v_max or abs(cmd.angular) > limits.omega_max:
        raise CommandOutOfRange(f"{cmd} exceeds limits {limits}")
    if cmd.angular == 0.0:
        heading = pose.heading
        mid = heading
    else:
        heading = wrap_angle(pose.heading + cmd.angular * dt)
        mid = pose.heading + 0.5 * cmd.angular * dt
    if cmd.linear == 0.0:
        return Pose2D(pose.position, heading)
    step = cmd.linear * dt
    return Pose2D(Vec2(pose.x + step * math.cos(mid), pose.y + step * math.sin(mid)), heading)


def clearance(world: WorldModel, position: Optional[Vec2] = None) -> float:
    """Gap between the MRP body circle and the closest obstacle or wall.

    Negative values mean penetration.
    """
    p = world.mrp.position if position is None else position
    gap = math.inf
    for obs in world.obstacles:
        gap = min(gap, obs.surface_distance(p))
    b = world.bounds
    gap = min(gap, p.x - b.min.x, b.max.x - p.x, p.y - b.min.y, b.max.y - p.y)
    return gap - world.mrp_radius


def check_collision(world: WorldModel) -> bool:
    return clearance(world) < 0.0


def _segment_point_distance(a: Vec2, b: Vec2, p: Vec2) -> float:
    ab = b - a
    denom = ab.dot(ab)
    t = 0.0 if denom == 0.0 else min(max((p - a).dot(ab) / denom, 0.0), 1.0)
    return distance(a + ab.scale(t), p)


def line_of_sight(a: Vec2, b: Vec2, world: WorldModel) -> bool:
    """True when the open segment between ``a`` and ``b`` misses every obstacle."""
    for obs in world.obstacles:
        if isinstance(obs, Disc):
            if _segment_point_distance(a, b, obs.center) < obs.radius - _LOS_EPS:
                return False
        else:
            lo = Vec2(obs.min.x + _LOS_EPS, obs.min.y + _LOS_EPS)
            hi = Vec2(obs.max.x - _LOS_EPS, obs.max.y - _LOS_EPS)
            # Liang-Barsky clip of the segment against the shrunken box
            t0, t1 = _slab(a, b - a, lo, hi)
            if max(t0, 0.0) < min(t1, 1.0):
                return False
    return True
