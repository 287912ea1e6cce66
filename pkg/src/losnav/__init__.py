"""Obstacle-aware positioning of a mobile communications cell in a 2D arena.

A simulated unicycle robot drives to targets, avoids obstacles reported by
a zone-based camera model and three ultrasonic rays, and keeps line of sight
to wireless devices. The same controller runs in virtual time or split over
UDP into robot, vision and control processes.
"""

from .controller import ControlConfig, Controller, Mode, MoveResult
from .geometry import Pose2D, Vec2, bearing, distance, wrap_angle
from .sim import Scenario, TrajectoryLog, load_scenario, parse_scenario, run
from .world import Device, Disc, Rect, WorldModel, line_of_sight, ray_cast

__all__ = [
    "ControlConfig", "Controller", "Mode", "MoveResult",
    "Pose2D", "Vec2", "bearing", "distance", "wrap_angle",
    "Scenario", "TrajectoryLog", "load_scenario", "parse_scenario", "run",
    "Device", "Disc", "Rect", "WorldModel", "line_of_sight", "ray_cast",
]

__version__ = "0.1.0"
