"""Grid-search reachability oracle, independent of the controller.

The arena is rasterized at a fixed resolution; a cell is free when a circle
of the requested clearance radius centred on it touches no obstacle and no
wall. Reachability is breadth-first search over the 8-connected free cells.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .geometry import Vec2
from .world import Disc, WorldModel


def free_mask(world: WorldModel, clearance: float, resolution: float = 0.05) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boolean free-space grid plus the x and y cell-centre coordinates."""
    b = world.bounds
    xs = np.arange(b.min.x + resolution / 2, b.max.x, resolution)
    ys = np.arange(b.min.y + resolution / 2, b.max.y, resolution)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    gap = np.minimum.reduce([X - b.min.x, b.max.x - X, Y - b.min.y, b.max.y - Y])
    for obs in world.obstacles:
        if isinstance(obs, Disc):
            d = np.hypot(X - obs.center.x, Y - obs.center.y) - obs.radius
        else:
            dx = np.maximum.reduce([obs.min.x - X, np.zeros_like(X), X - obs.max.x])
            dy = np.maximum.reduce([obs.min.y - Y, np.zeros_like(Y), Y - obs.max.y])
            d = np.hypot(dx, dy)
            inside = (dx == 0) & (dy == 0)
            d[inside] = -1.0
        gap = np.minimum(gap, d)
    return gap >= clearance, xs, ys


def _cell(xs: np.ndarray, ys: np.ndarray, p: Vec2) -> tuple[int, int]:
    return int(np.argmin(np.abs(xs - p.x))), int(np.argmin(np.abs(ys - p.y)))


def reachable(world: WorldModel, start: Vec2, goal: Vec2, clearance: float,
              resolution: float = 0.05) -> bool:
    """True when a path of the given clearance joins ``start`` and ``goal``."""
    free, xs, ys = free_mask(world, clearance, resolution)
    s, g = _cell(xs, ys, start), _cell(xs, ys, goal)
    if not (free[s] and free[g]):
        return False
    seen = np.zeros_like(free)
    seen[s] = True
    queue = deque([s])
    nx, ny = free.shape
    steps = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    while queue:
        i, j = queue.popleft()
        if (i, j) == g:
            return True
        for di, dj in steps:
            a, c = i + di, j + dj
            if 0 <= a < nx and 0 <= c < ny and free[a, c] and not seen[a, c]:
                seen[a, c] = True
                queue.append((a, c))
    return False
