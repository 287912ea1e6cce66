"""Planar vectors, poses and angle helpers.

Angles are counter-clockwise positive with 0 along the world +x axis and are
always stored wrapped into the half-open interval (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi
# below any arrival tolerance; guards atan2 at coincident points
COINCIDENT_EPS = 1e-9


class InvalidAngle(ValueError):
    pass


class DegenerateBearing(ValueError):
    pass


class NonFiniteCoordinate(ValueError):
    pass


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise NonFiniteCoordinate(f"non-finite vector ({self.x}, {self.y})")

    def __add__(self, other: Vec2) -> Vec2:
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Vec2) -> Vec2:
        return Vec2(self.x - other.x, self.y - other.y)

    def scale(self, k: float) -> Vec2:
        return Vec2(self.x * k, self.y * k)

    def dot(self, other: Vec2) -> float:
        return self.x * other.x + self.y * other.y

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def rotated(self, phi: float) -> Vec2:
        c, s = math.cos(phi), math.sin(phi)
        return Vec2(c * self.x - s * self.y, s * self.x + c * self.y)

    @staticmethod
    def polar(r: float, theta: float) -> Vec2:
        return Vec2(r * math.cos(theta), r * math.sin(theta))


@dataclass(frozen=True)
class Pose2D:
    """Robot position (meters) and heading (radians, wrapped on construction)."""

    position: Vec2
    heading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @classmethod
    def at(cls, x: float, y: float, heading: float = 0.0) -> Pose2D:
        return cls(Vec2(x, y), heading)

    @property
    def x(self) -> float:
        return self.position.x

    @property
    def y(self) -> float:
        return self.position.y


def wrap_angle(theta: float) -> float:
    """Map ``theta`` to its unique representative in (-pi, pi]."""
    if not math.isfinite(theta):
        raise InvalidAngle(f"cannot wrap non-finite angle {theta!r}")
    if -math.pi < theta <= math.pi:
        return float(theta)
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    result = wrapped - math.pi
    # sub-ulp residues can round onto the excluded endpoint
    return math.pi if result <= -math.pi else result


def distance(a: Vec2, b: Vec2) -> float:
    return math.hypot(b.x - a.x, b.y - a.y)


def world_bearing(a: Vec2, b: Vec2) -> float:
    """Absolute direction of ``b`` seen from ``a``."""
    if distance(a, b) < COINCIDENT_EPS:
        raise DegenerateBearing(f"target {b} coincides with {a}")
    return math.atan2(b.y - a.y, b.x - a.x)


def bearing(origin: Pose2D, target: Vec2) -> float:
    """Heading change needed for ``origin`` to face ``target``."""
    return wrap_angle(world_bearing(origin.position, target) - origin.heading)
